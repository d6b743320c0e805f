#!/usr/bin/env python3
"""Smoke test for the seqret_py extension module.

Builds nothing itself: expects `cargo build -p seqret-py` (or --release)
to have produced libseqret_py.so, which is copied next to a temp dir and
imported as `seqret_py`.
"""
import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module(tmp: Path):
    for profile in ("release", "debug"):
        so = ROOT / "target" / profile / "libseqret_py.so"
        if so.exists():
            shutil.copy(so, tmp / "seqret_py.so")
            sys.path.insert(0, str(tmp))
            import seqret_py  # noqa: PLC0415

            return seqret_py
    raise SystemExit("libseqret_py.so not found; run `cargo build -p seqret-py` first")


def main() -> None:
    with tempfile.TemporaryDirectory() as td:
        tmp = Path(td)
        m = load_module(tmp)

        # population generation with planted truth
        csv_path = tmp / "pop.csv"
        truth = m.generate("fixture", 1500, 11, csv_path, 0.0, tmp / "truth.json")
        assert csv_path.exists()
        assert truth["stage1"]["n_alternatives"] == 3
        assert json.loads((tmp / "truth.json").read_text())["selection_strength"] == 0.0

        # ingestion validation on the generated file
        report = m.validate(csv_path)
        assert report["n_retained"] == 1500, report

        # full pipeline from a config, artifacts + manifest round trip
        config = {
            "synth": {"preset": "fixture", "n": 2500, "seed": 5},
            "out_dir": str(tmp / "out"),
            "min_count": 30,
            "baseline_bachelor": 1,
            "baseline_career": [1, 0],
            "x_numeric": ["hs_grade_std", "gender", "parent_graduate"],
            "factors": [],
            "n_fields": 3,
            "bootstrap": {"n_iter": 8, "seed": 1},
            "transforms": ["identity", "min"],
            "decompose_keys": ["gender"],
        }
        cfg_path = tmp / "config.json"
        cfg_path.write_text(json.dumps(config))
        manifest = m.run(cfg_path)
        for artifact in ("returns.csv", "bootstrap.csv", "simulation.csv", "shares.csv"):
            assert artifact in manifest["files"], sorted(manifest["files"])
        rows = m.read_returns(tmp / "out")
        assert rows and {"outcome", "career", "alpha", "alpha_tilde"} <= set(rows[0])

        # stage gating stops early
        partial = m.run(cfg_path, tmp / "partial", "stage1")
        assert "stage1_model.json" in partial["files"]
        assert "returns.csv" not in partial["files"]

        # direct choice-model fit on a hand-made binary logit
        import random

        rng = random.Random(4)
        design = [[1.0, x / 10.0] for x in range(-20, 20)]
        choices = [
            1 if rng.random() < 1.0 / (1.0 + math.exp(-(0.2 + 1.5 * row[1]))) else 0
            for row in design
        ]
        fit = m.fit_choice_model(design, ["const", "x"], choices, 2)
        assert fit["converged"]
        assert len(fit["coefficients"]) == 2
        assert fit["coefficients"][1] > 0.0  # increasing in x
        assert all(math.isfinite(s) for s in fit["se"])

    print("smoke test passed")


if __name__ == "__main__":
    main()
