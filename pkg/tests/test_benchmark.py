import json

import numpy as np
import pytest

from adaptive_tickets.analysis import CollapseCurve
from adaptive_tickets.benchmark import BenchmarkSpec, collapse_verdict, head_slice, run_benchmark
from adaptive_tickets.inr import InrConfig
from adaptive_tickets.tensor import init_params

FAST = dict(per_class=30, dim=4, hidden=(8, 8), steps=20, epochs=3, lr=1e-2, batch_size=16)


class TestSpec:
    def test_needs_three_seeds(self):
        with pytest.raises(ValueError, match="seeds"):
            BenchmarkSpec(seeds=(0, 1))

    def test_sweep_increasing(self):
        with pytest.raises(ValueError):
            BenchmarkSpec(sparsities=(0.7, 0.5))

    def test_methods(self):
        with pytest.raises(ValueError):
            BenchmarkSpec(methods=("imp-single",))
        with pytest.raises(ValueError):
            BenchmarkSpec(task="speech")


def test_one_seed_one_level_gives_one_row_per_method():
    r = run_benchmark(BenchmarkSpec(seeds=(0,), min_seeds=1, **FAST))
    assert [row["method"] for row in r.rows] == ["rtl", "imp-single", "imp-multi"]
    assert len(r.summary()) == 3
    assert "specialization@0.75" in r.verdicts()


def test_budget_audit():
    spec = BenchmarkSpec(seeds=(0,), min_seeds=1, **FAST)
    r = run_benchmark(spec)
    a = r.audit[0]
    assert a["pass"]
    assert a["imp_multi_updates"] == a["rtl_updates"]
    assert a["imp_single_epochs"] == 2 * spec.epochs
    # the single network sees each training sample once per epoch over twice
    # the epochs; detectors see their positives plus as many negatives
    assert a["imp_single_presentations"] == a["rtl_presentations"]


def test_shared_initialization():
    full = init_params([4, 8, 8, 4], 3)
    det = head_slice(full)
    assert det.shapes[-1] == (1, 8)
    for a, b in zip(det.weights[:-1], full.weights[:-1]):
        assert np.array_equal(a, b)
    assert np.array_equal(det.weights[-1][0], full.weights[-1][0])


def test_sweep_builds_curves_and_collapse_verdict():
    spec = BenchmarkSpec(seeds=(0,), min_seeds=1, sparsities=(0.3, 0.6, 0.9),
                         methods=("rtl",), **FAST)
    r = run_benchmark(spec)
    assert sorted(r.curves) == [0]
    assert r.curves[0].metric.shape == (3, 4)
    v = r.verdicts()["collapse"]
    assert set(v["per_seed"][0]) == {"collapsed", "flag", "first_drop", "pass"}


def test_report_serialises():
    r = run_benchmark(BenchmarkSpec(seeds=(0,), min_seeds=1, **FAST))
    doc = json.loads(r.to_json())
    assert doc["metric"] == "balanced_accuracy"
    assert r.rows_csv().splitlines()[0].startswith("seed,sparsity,method,metric")


def test_deterministic():
    spec = BenchmarkSpec(seeds=(1,), min_seeds=1, **FAST)
    assert run_benchmark(spec).rows_csv() == run_benchmark(spec).rows_csv()


def test_inr_fixture_small():
    cfg = InrConfig(hidden=(6, 6), num_bands=2, steps=10, epochs=2, batch_size=32)
    spec = BenchmarkSpec(task="inr-fixture", seeds=(0,), min_seeds=1, sparsities=(0.3,),
                         image_size=8, prune_count=40, inr=cfg)
    r = run_benchmark(spec)
    assert [row["method"] for row in r.rows] == ["rtl", "imp-single", "imp-multi"]
    assert r.audit[0]["pass"]
    assert "psnr_gap@0.3" in r.verdicts()
    assert json.loads(r.to_json())["metric"] == "psnr_db"


class TestCollapseVerdict:
    def curve(self, acc, jac):
        s = [0.5, 0.7, 0.8, 0.9, 0.95, 0.98]
        return CollapseCurve(s, np.array(acc)[:, None], np.array(jac)[:, None], [0])

    def test_early_warning_passes(self):
        c = self.curve([0.95, 0.95, 0.94, 0.85, 0.7, 0.5], [0.6, 0.6, 0.62, 0.8, 0.9, 1.0])
        v = collapse_verdict(c, 0.15)
        assert v["flag"] == 0.8 and v["first_drop"] == 0.9 and v["pass"]

    def test_late_flag_fails(self):
        c = self.curve([0.95, 0.8, 0.7, 0.6, 0.5, 0.5], [0.6, 0.6, 0.6, 0.6, 0.6, 1.0])
        v = collapse_verdict(c, 0.15)
        assert v["flag"] == 0.95 and v["first_drop"] == 0.7 and not v["pass"]

    def test_no_collapse_fails(self):
        c = self.curve([0.9] * 6, [0.6, 0.6, 0.62, 0.8, 0.9, 1.0])
        assert not collapse_verdict(c, 0.15)["pass"]
