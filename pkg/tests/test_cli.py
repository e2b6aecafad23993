import csv
import io
import json

import numpy as np
import pytest

from adaptive_tickets.cli import DEFAULTS, ConfigError, load_config, main
from adaptive_tickets.datasets import dataset_to_csv, gen_gaussian_clusters, load_pixmap
from adaptive_tickets.masking import MaskSet

SMALL = {
    "data": {"classes": 3, "per_class": 20, "dim": 4},
    "model": {"hidden": [8, 8]},
    "schedule": {"target_sparsity": 0.6, "value": 0.3},
    "extraction": {"steps": 10, "batch_size": 8, "lr": 1e-2},
    "retraining": {"epochs": 2, "batch_size": 8, "lr": 1e-2},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


def run(config, out, *args, seed=0):
    return main([args[0], "--config", str(config), "--seed", str(seed), "--out", str(out), *args[1:]])


def pipeline(config, out, arm=None):
    extra = ["--baseline", arm] if arm else []
    for cmd in ("extract", "retrain", "eval"):
        assert run(config, out, cmd, *extra) == 0


def snapshot(out):
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


class TestConfig:
    def test_defaults(self):
        cfg = load_config(None)
        assert cfg == DEFAULTS and cfg is not DEFAULTS

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"data": {"bogus": 1}}))
        with pytest.raises(ConfigError, match="'data.bogus'"):
            load_config(str(path))

    def test_override(self):
        cfg = load_config(None, ["retraining.epochs=7", "model.hidden=[4,4]"])
        assert cfg["retraining"]["epochs"] == 7 and cfg["model"]["hidden"] == [4, 4]

    def test_bad_override(self):
        with pytest.raises(ConfigError):
            load_config(None, ["retraining.epochs"])


class TestExitCodes:
    def test_missing_seed(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["gen-data", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_config_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"nonsense": 1}))
        assert run(bad, tmp_path / "o", "gen-data") == 2
        assert "nonsense" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert run(tmp_path / "absent.json", tmp_path / "o", "gen-data") == 2

    def test_missing_artifact(self, config, tmp_path, capsys):
        assert run(config, tmp_path / "o", "extract") == 3
        assert "train.csv" in capsys.readouterr().err

    def test_missing_masks(self, config, tmp_path, capsys):
        out = tmp_path / "o"
        assert run(config, out, "gen-data") == 0
        assert run(config, out, "retrain") == 3
        assert "masks.json" in capsys.readouterr().err

    def test_nan_exit(self, config, tmp_path):
        out = tmp_path / "o"
        assert run(config, out, "gen-data") == 0
        assert run(config, out, "extract") == 0
        assert run(config, out, "retrain", "--set", "retraining.lr=1e300") == 4

    def test_shape_mismatch(self, config, tmp_path):
        out = tmp_path / "o"
        assert run(config, out, "gen-data") == 0
        assert run(config, out, "extract") == 0
        assert run(config, out, "extract", "--set", "model.hidden=[5]") == 2


class TestPipeline:
    def test_gen_data(self, config, tmp_path):
        out = tmp_path / "o"
        assert run(config, out, "gen-data") == 0
        rows = (out / "train.csv").read_text().splitlines() + (out / "test.csv").read_text().splitlines()
        assert len(rows) - 2 == 3 * 20
        assert json.loads((out / "mapping.json").read_text()) == {"0": 0, "1": 1, "2": 2}
        assert json.loads((out / "config.gen-data.json").read_text())["seed"] == 0

    def test_fixture_source(self, tmp_path):
        out = tmp_path / "o"
        assert main(["gen-data", "--seed", "1", "--out", str(out), "--set", "data.source=\"fixture\""]) == 0
        assert load_pixmap(out / "image.ppm").channels == 3
        assert load_pixmap(out / "regions.pgm").channels == 1

    def test_csv_source_with_cluster_mapping(self, tmp_path):
        data = gen_gaussian_clusters(8, 5, 3, 0.2, 0)
        (tmp_path / "d.csv").write_text(dataset_to_csv(data))
        (tmp_path / "m.json").write_text(json.dumps({str(c): c // 4 for c in range(8)}))
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"data": {"source": "csv", "csv": str(tmp_path / "d.csv"),
                                            "mapping": str(tmp_path / "m.json")}}))
        out = tmp_path / "o"
        assert run(cfg, out, "gen-data") == 0
        assert json.loads((out / "mapping.json").read_text()) == {str(c): c // 4 for c in range(8)}

    def test_zero_sparsity_gives_all_ones(self, config, tmp_path):
        out = tmp_path / "o"
        assert run(config, out, "gen-data") == 0
        assert run(config, out, "extract", "--set", "schedule.target_sparsity=0") == 0
        masks = MaskSet.load(out / "rtl" / "masks.json")
        assert all(m.count() == m.total for m in masks)

    def test_three_arm_table(self, config, tmp_path):
        out = tmp_path / "o"
        assert run(config, out, "gen-data") == 0
        for arm in (None, "imp-single", "imp-multi"):
            pipeline(config, out, arm)
        table = list(csv.DictReader(io.StringIO((out / "table.csv").read_text())))
        assert [r["method"] for r in table] == ["rtl", "imp-single", "imp-multi"]
        assert len(MaskSet.load(out / "imp-single" / "masks.json")) == 1
        assert (out / "imp-multi" / "params_2.bin").is_file()
        multi = json.loads((out / "imp-multi" / "metrics.json").read_text())
        rtl = json.loads((out / "rtl" / "metrics.json").read_text())
        assert rtl["params"] < multi["params"]

    def test_byte_identical_rerun(self, config, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            assert run(config, out, "gen-data", seed=3) == 0
            pipeline(config, out)
            assert run(config, out, "analyze", seed=3) == 0
        assert snapshot(outs[0]) == snapshot(outs[1])

    def test_different_seed_differs(self, config, tmp_path):
        assert run(config, tmp_path / "a", "gen-data", seed=1) == 0
        assert run(config, tmp_path / "b", "gen-data", seed=2) == 0
        assert (tmp_path / "a" / "train.csv").read_bytes() != (tmp_path / "b" / "train.csv").read_bytes()

    def test_analyze_with_snapshots_and_semantics(self, config, tmp_path):
        out = tmp_path / "o"
        assert run(config, out, "gen-data") == 0
        assert run(config, out, "extract", "--set", "extraction.checkpoints=[0.2,0.4,0.6]") == 0
        pipeline(config, out)
        sim = (out / "rtl" / "analysis" / "similarity_layer2.csv")
        assert run(config, out, "analyze") == 0
        # feed the deep-layer similarity back in as the semantic matrix
        assert run(config, out, "analyze", "--set", f"analysis.semantic=\"{sim}\"") == 0
        summary = json.loads((out / "rtl" / "analysis" / "summary.json").read_text())
        assert summary["collapse_levels"] == [0.2, 0.4, 0.6]
        assert summary["alignment"]["2"] == pytest.approx(1.0)
        assert (out / "rtl" / "analysis" / "collapse.csv").is_file()

    def test_analyze_single_mask(self, config, tmp_path):
        out = tmp_path / "o"
        assert run(config, out, "gen-data") == 0
        assert run(config, out, "extract", "--baseline", "imp-single") == 0
        assert run(config, out, "analyze", "--baseline", "imp-single") == 0
        dest = out / "imp-single" / "analysis"
        assert (dest / "similarity_global.csv").read_text().splitlines()[1:] == ["1.0"]
        assert json.loads((dest / "summary.json").read_text())["collapse_flag"] is None


@pytest.mark.parametrize("baseline", [None, "imp-multi"])
def test_inr_command(tmp_path, baseline):
    out = tmp_path / "o"
    sets = ["--set", "data.source=\"fixture\"", "--set", "data.image_size=8"]
    assert main(["gen-data", "--seed", "0", "--out", str(out), *sets]) == 0
    small = ["--set", "inr.hidden=[6,6]", "--set", "inr.num_bands=2", "--set", "inr.steps=5",
             "--set", "inr.epochs=2", "--set", "inr.prune_count=30", "--set", "inr.sparsities=[0.2,0.4]"]
    extra = ["--baseline", baseline] if baseline else []
    assert main(["inr", "--seed", "0", "--out", str(out), *small, *extra]) == 0
    name = baseline or "imp-single"
    lines = (out / "inr" / f"curve_{name}.csv").read_text().splitlines()
    assert lines[0].startswith("sparsity,psnr_rtl,psnr_baseline,psnr_region_0")
    assert len(lines) == 3
    assert (out / "inr" / "recon_rtl_0.4.ppm").is_file()
    assert (out / "inr" / f"recon_{name}_0.2.ppm").is_file()
    values = np.array([float(v) for v in lines[1].split(",")])
    assert np.all(np.isfinite(values))


def test_inr_missing_image(tmp_path):
    assert main(["inr", "--seed", "0", "--out", str(tmp_path)]) == 3
