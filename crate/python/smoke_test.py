"""Smoke test for the sibgxe Python extension.

Build first, e.g. `pip install --no-build-isolation ./crates/python`, then run
`python python/smoke_test.py`.
"""

import json
import math
import tempfile
from pathlib import Path

import sibgxe


def main() -> None:
    table, genotypes = sibgxe.simulate_cohort(300, n_snps=40, seed=7)
    n = len(table["individual_id"])
    assert len(genotypes) == n and len(genotypes[0]) == 40

    weights, ses = sibgxe.scan(genotypes, table["educ_years"])
    assert len(weights) == 40 and all(s >= 0 for s in ses)
    pgs = sibgxe.standardize(sibgxe.score(genotypes, weights))
    assert abs(sum(pgs) / n) < 1e-9

    truth = table["pgs"]
    table["pgs_a"] = sibgxe.inject_reliability(genotypes, truth, 0.7, seed=1, tag="a")
    table["pgs_b"] = sibgxe.inject_reliability(genotypes, truth, 0.7, seed=1, tag="b")

    within = sibgxe.fit_model(table, scope="within_family", interaction=True)
    assert within["terms"][:3] == ["firstborn", "pgs", "firstborn_x_pgs"]
    assert within["n_obs"] + within["n_dropped_singletons"] == n

    iv = sibgxe.fit_model(table, estimator="oriv", controls=["sex"])
    assert "pgs" in iv["terms"] and iv["cragg_donald"] > 10

    const = [1.0] * n
    fit = sibgxe.ols([("const", const), ("pgs", truth)], table["educ_years"])
    assert fit["terms"] == ["const", "pgs"] and math.isfinite(fit["std_errors"][1])

    codes: dict = {}
    families = [codes.setdefault(f, len(codes)) for f in table["family_id"]]
    direct = sibgxe.oriv(table["educ_years"], table["pgs_a"], table["pgs_b"], families)
    assert direct["terms"] == ["pgs"]

    ri = sibgxe.randomization_test(table, n_permutations=50, seed=3)
    assert 1 / 51 <= ri["exact_p"] <= 1

    assert sibgxe.classify_relatedness(0.25, 0.002) == "full_sibling"
    assert sibgxe.isced_years("college_or_university") == 20

    with tempfile.TemporaryDirectory() as tmp:
        config = Path(tmp) / "run.toml"
        config.write_text(
            "seed = 1\n[simulation]\ndiscovery_size = 500\n"
            "[simulation.panel]\nn_snps = 20\n[simulation.cohort]\nn_families = 150\n"
            '[[models]]\nid = "w"\nscope = "within_family"\ninteraction = true\n'
        )
        manifest = json.loads(sibgxe.run_pipeline(str(config), str(Path(tmp) / "out")))
        assert "fit_w.csv" in manifest["outputs"]
        back = sibgxe.read_cohort(str(Path(tmp) / "out" / "cohort.csv"))
        assert len(back["individual_id"]) == manifest["stages"][0]["rows"]

    print("sibgxe smoke test passed")


if __name__ == "__main__":
    main()
