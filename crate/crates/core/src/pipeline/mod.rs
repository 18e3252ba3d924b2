//! Configuration-driven pipeline: simulate, scan, score, fit, randomization
//! inference and report, with CSV ingestion for external data.

mod config;
mod export;
mod ingest;
mod run;

pub use config::{
    InputConfig, PanelConfig, PcaConfig, PipelineConfig, ReportConfig, RiBlock, ScoreScale, ScoringConfig,
    ScoringMethod, SimulationConfig,
};
pub use export::{
    binned_scatter, birth_order_means, fmt_real, write_binned_scatter, write_birth_order_means, write_cohort,
    write_fit, write_genotypes, write_ri_histogram, write_ri_summary, write_scores, write_weights, GroupMean,
    ScatterBin,
};
pub use ingest::{
    ingest_table, read_cohort, read_genotypes, read_scores, read_weights, Ingested, Schema, TableData,
    COHORT_REQUIRED,
};
pub use run::{run_pipeline, run_stages, RunManifest, Stage, StageRecord, MANIFEST_FILE, PARTIAL_MARKER};
