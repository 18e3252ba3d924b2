use rand::Rng;
use rand_distr::StandardNormal;

use sibgxe::genoscore::{
    compute_pcs, inject_reliability, run_scan, split_scan, Genotypes, MeasurementModel, WeightSource,
};
use sibgxe::rng::substream;

fn random_genotypes(n: usize, freqs: &[f64], seed: u64) -> Genotypes {
    let mut rng = substream(seed, "geno", 0);
    let mut data = Vec::with_capacity(n * freqs.len());
    for _ in 0..n {
        for &p in freqs {
            data.push(u8::from(rng.random::<f64>() < p) + u8::from(rng.random::<f64>() < p));
        }
    }
    Genotypes::new(
        (0..n).map(|i| format!("i{i}")).collect(),
        (0..freqs.len()).map(|j| format!("s{j}")).collect(),
        data,
    )
    .unwrap()
}

#[test]
fn scan_weights_are_unbiased() {
    let freqs = [0.3, 0.5, 0.15];
    let beta = 0.4;
    let reps = 300;
    let mut causal = Vec::with_capacity(reps);
    let mut null = Vec::with_capacity(reps);
    for r in 0..reps {
        let g = random_genotypes(500, &freqs, r as u64);
        let mut rng = substream(r as u64, "scan-noise", 0);
        let y: Vec<f64> = (0..500).map(|i| beta * g.get(i, 0) as f64 + rng.sample::<f64, _>(StandardNormal)).collect();
        let w = run_scan(&g, &y).unwrap();
        assert_eq!(w.source, WeightSource::Full);
        causal.push(w.weights[0]);
        null.push(w.weights[1]);
    }
    for (draws, truth) in [(&causal, beta), (&null, 0.0)] {
        let m = draws.iter().sum::<f64>() / reps as f64;
        let sd = (draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
        let se = sd / (reps as f64).sqrt();
        assert!((m - truth).abs() < 3.0 * se, "mean {m}, truth {truth}, se {se}");
    }
}

#[test]
fn split_halves_match_scans_of_the_halves() {
    let g = random_genotypes(301, &[0.2, 0.4, 0.45, 0.1], 7);
    let mut rng = substream(7, "split-y", 0);
    let y: Vec<f64> = (0..301).map(|_| rng.sample(StandardNormal)).collect();
    let split = split_scan(&g, &y, 11).unwrap();
    assert_eq!(split.half_a.len(), 151);
    assert_eq!(split.half_b.len(), 150);
    let mut all: Vec<usize> = split.half_a.iter().chain(&split.half_b).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..301).collect::<Vec<_>>());
    for (half, ws) in [(&split.half_a, &split.a), (&split.half_b, &split.b)] {
        let sub_y: Vec<f64> = half.iter().map(|&i| y[i]).collect();
        let direct = run_scan(&g.subset_rows(half), &sub_y).unwrap();
        assert_eq!(direct.weights, ws.weights);
        assert_eq!(direct.standard_errors, ws.standard_errors);
    }
    assert_eq!(split_scan(&g, &y, 11).unwrap(), split);
}

#[test]
fn injected_reliability_is_recovered_from_two_draws() {
    let freqs: Vec<f64> = (0..400).map(|j| 0.05 + 0.4 * (j as f64 / 400.0)).collect();
    let g = random_genotypes(4000, &freqs, 3);
    let mut rng = substream(3, "truth", 0);
    let truth: Vec<f64> = (0..4000).map(|_| rng.sample(StandardNormal)).collect();
    let lambda = 0.7;
    let a = inject_reliability(&g, &truth, lambda, 3, "a").unwrap();
    let b = inject_reliability(&g, &truth, lambda, 3, "b").unwrap();

    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
    };
    let err: Vec<f64> = a.iter().zip(&truth).map(|(x, t)| x - t).collect();
    let ratio = var(&err) / var(&truth);
    assert!((ratio - (1.0 - lambda) / lambda).abs() < 1e-10, "{ratio}");

    let mm = MeasurementModel::from_split_scores(&a, &b).unwrap();
    assert!((mm.reliability - lambda).abs() < 0.05, "{}", mm.reliability);
    assert_eq!(inject_reliability(&g, &truth, 1.0, 3, "a").unwrap(), truth);
    assert!(inject_reliability(&g, &truth, 0.0, 3, "a").is_err());
}

#[test]
fn first_component_recovers_planted_structure() {
    let n_snps = 500;
    let n = 400;
    let mut rng = substream(21, "pops", 0);
    let base: Vec<f64> = (0..n_snps).map(|_| 0.2 + 0.6 * rng.random::<f64>()).collect();
    let shift: Vec<f64> = (0..n_snps).map(|_| if rng.random::<bool>() { 0.15 } else { -0.15 }).collect();
    let mut data = Vec::with_capacity(n * n_snps);
    let mut label = Vec::with_capacity(n);
    for i in 0..n {
        let pop = (i % 2) as f64;
        label.push(pop);
        for j in 0..n_snps {
            let p = base[j] + if pop > 0.0 { shift[j] } else { -shift[j] };
            data.push(u8::from(rng.random::<f64>() < p) + u8::from(rng.random::<f64>() < p));
        }
    }
    let g = Genotypes::new(
        (0..n).map(|i| format!("i{i}")).collect(),
        (0..n_snps).map(|j| format!("s{j}")).collect(),
        data,
    )
    .unwrap();
    let pcs = compute_pcs(&g, 2).unwrap();
    let pc1: Vec<f64> = pcs.scores.column(0).iter().copied().collect();
    let corr = correlation(&pc1, &label);
    assert!(corr.abs() > 0.99, "corr {corr}");
    assert!(pcs.eigenvalues[0] >= pcs.eigenvalues[1]);
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
