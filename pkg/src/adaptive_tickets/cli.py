"""Command-line pipeline: gen-data, extract, retrain, eval, inr, analyze.

Every command reads a JSON config (optional, merged over defaults), takes a
mandatory ``--seed`` and works inside one ``--out`` directory. Artifacts of
the routed-ticket arm live in ``OUT/rtl``; ``--baseline imp-single`` and
``--baseline imp-multi`` use ``OUT/imp-single`` and ``OUT/imp-multi``.

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 NaN detected.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    CollapseCurve,
    detect_collapse,
    load_semantic_matrix,
    matrix_to_csv,
    mean_similarity_to_others,
    semantic_alignment,
    similarity_matrix,
)
from .benchmark import head_slice
from .datasets import (
    FormatError,
    LabeledDataset,
    RegionMap,
    dataset_from_csv,
    dataset_to_csv,
    gen_gaussian_clusters,
    identity_mapping,
    load_mapping,
    load_pixmap,
    load_regions,
    mapping_to_json,
    partition_by_label,
    save_pixmap,
    save_regions,
    stratified_split,
    two_region_fixture,
)
from .evaluation import count_params, evaluate_routed, metrics_from_logits, multihead_logits, table_csv
from .extraction import ExtractionConfig, extract_tickets
from .fileio import atomic_write_text
from .inr import InrConfig, coordinate_task, psnr, reconstruct, region_psnr
from .masking import MaskSet, PruneSchedule, sparsity_of
from .retraining import RetrainConfig, balance_batches, independent_retrain, joint_retrain
from .tasks import detector_task, multihead_task
from .tensor import ParamSet, ShapeError, init_params, read_params, write_params

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NAN = 0, 2, 3, 4
ARMS = ("rtl", "imp-single", "imp-multi")

DEFAULTS: dict = {
    "data": {
        "source": "synthetic",  # synthetic | csv | fixture
        "classes": 4,
        "per_class": 200,
        "dim": 8,
        "spread": 0.25,
        "test_fraction": 0.25,
        "csv": None,
        "mapping": None,
        "image_size": 16,
    },
    "model": {"hidden": [32, 32], "activation": "relu"},
    "schedule": {"target_sparsity": 0.75, "mode": "fraction", "value": 0.2},
    "extraction": {"steps": 1000, "batch_size": 32, "lr": 1e-4, "checkpoints": []},
    "retraining": {
        "epochs": 50,
        "batch_size": 32,
        "lr": 1e-4,
        "moments": "shared",
        "single_epoch_factor": 2,
    },
    "analysis": {"tau": 0.15, "mode": "spike", "floor": 0.05, "anchor": "start", "semantic": None},
    "inr": {
        "image": None,
        "regions": None,
        "min_region": 4,
        "hidden": [12, 12, 12, 12],
        "num_bands": 8,
        "steps": 2000,
        "epochs": 2000,
        "lr": 0.01,
        "batch_size": 256,
        "prune_count": 64,
        "sparsities": [0.5],
        "convention": "corner",
        "moments": "shared",
    },
}


class ConfigError(Exception):
    pass


class MissingArtifact(Exception):
    pass


class NumericError(Exception):
    pass


# -- config ---------------------------------------------------------------


def _merge(base: dict, update: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown config key '{where}{key}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}{key}' must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def _parse_override(item: str) -> dict:
    if "=" not in item:
        raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node: dict = {}
    cursor = node
    parts = key.split(".")
    for part in parts[:-1]:
        cursor[part] = {}
        cursor = cursor[part]
    cursor[parts[-1]] = value
    return node


def load_config(path: str | None, overrides: list[str] = ()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: top level must be an object")
        doc.pop("seed", None)  # the command line seed always wins
        cfg = _merge(cfg, doc)
    for item in overrides:
        cfg = _merge(cfg, _parse_override(item))
    return cfg


def _schedule(cfg: dict) -> PruneSchedule:
    s = cfg["schedule"]
    return PruneSchedule(float(s["target_sparsity"]), s["mode"], s["value"])


def _extraction(cfg: dict, seed: int, schedule: PruneSchedule) -> ExtractionConfig:
    e = cfg["extraction"]
    return ExtractionConfig(int(e["steps"]), schedule, seed, int(e["batch_size"]), float(e["lr"]),
                            cfg["model"]["activation"], tuple(float(c) for c in e["checkpoints"]))


def _retrain(cfg: dict, seed: int, arm: str) -> RetrainConfig:
    r = cfg["retraining"]
    epochs = int(r["epochs"]) * (int(r["single_epoch_factor"]) if arm == "imp-single" else 1)
    return RetrainConfig(epochs, float(r["lr"]), int(r["batch_size"]), seed,
                         cfg["model"]["activation"], moments=r["moments"])


def _inr_config(cfg: dict, seed: int) -> InrConfig:
    c = cfg["inr"]
    return InrConfig(tuple(int(h) for h in c["hidden"]), int(c["num_bands"]), int(c["steps"]),
                     int(c["epochs"]), float(c["lr"]), int(c["batch_size"]), seed,
                     c["convention"], c["moments"])


# -- artifacts --------------------------------------------------------------


def _need(path: Path) -> Path:
    if not path.is_file():
        raise MissingArtifact(f"missing artifact: expected {path}")
    return path


def _finite(what: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(np.asarray(a, dtype=np.float64))):
            raise NumericError(f"NaN or infinity detected in {what}")


def _finite_params(what: str, params: ParamSet) -> None:
    _finite(what, *params.weights, *params.biases)


def _load_split(out: Path, name: str) -> LabeledDataset:
    return dataset_from_csv(_need(out / f"{name}.csv").read_text())


def _mapping(out: Path) -> dict[int, int]:
    return load_mapping(_need(out / "mapping.json"))


def _widths(cfg: dict, dim: int, classes: int) -> list[int]:
    return [dim, *[int(h) for h in cfg["model"]["hidden"]], classes]


def _arm_init(out: Path, arm: str) -> ParamSet:
    full = read_params(_need(out / "init.bin"))
    return full if arm == "imp-single" else head_slice(full)


def _arm_task(arm: str, train: LabeledDataset, mapping: dict[int, int]):
    part = partition_by_label(train, mapping)
    if arm == "imp-single":
        return multihead_task(train.features, part), part
    return detector_task(train.features, part), part


def _arm_params_paths(arm_dir: Path, masks: MaskSet, arm: str) -> list[Path]:
    if arm == "imp-multi":
        return [arm_dir / f"params_{k}.bin" for k in range(len(masks))]
    return [arm_dir / "params.bin"]


def _level_name(s: float) -> str:
    return f"{s:.4f}".rstrip("0").rstrip(".")


# -- commands ---------------------------------------------------------------


def cmd_gen_data(cfg: dict, seed: int, out: Path) -> None:
    d = cfg["data"]
    if d["source"] == "fixture":
        image, regions = two_region_fixture(int(d["image_size"]), seed)
        save_pixmap(image, out / "image.ppm")
        save_regions(regions, out / "regions.pgm")
        return
    if d["source"] == "synthetic":
        data = gen_gaussian_clusters(int(d["classes"]), int(d["per_class"]), int(d["dim"]),
                                     float(d["spread"]), seed)
    elif d["source"] == "csv":
        if not d["csv"]:
            raise ConfigError("data.csv must name a CSV file when data.source is 'csv'")
        data = dataset_from_csv(_need(Path(d["csv"])).read_text())
    else:
        raise ConfigError(f"unknown data.source {d['source']!r}")
    mapping = load_mapping(_need(Path(d["mapping"]))) if d["mapping"] else identity_mapping(data.class_count)
    train, test = stratified_split(data, float(d["test_fraction"]), seed)
    partition_by_label(train, mapping)  # reject mappings that leave a subset empty
    atomic_write_text(out / "train.csv", dataset_to_csv(train))
    atomic_write_text(out / "test.csv", dataset_to_csv(test))
    atomic_write_text(out / "mapping.json", mapping_to_json(mapping))


def cmd_extract(cfg: dict, seed: int, out: Path, arm: str) -> None:
    train, mapping = _load_split(out, "train"), _mapping(out)
    init_path = out / "init.bin"
    classes = len(set(mapping.values()))
    if init_path.is_file():
        full = read_params(init_path)
        if full.widths != _widths(cfg, train.dim, classes):
            raise ShapeError(f"{init_path} has widths {full.widths}, config implies "
                             f"{_widths(cfg, train.dim, classes)}")
    else:
        # one draw per seed; detector arms use its first output row
        full = init_params(_widths(cfg, train.dim, classes), seed)
        write_params(full, init_path)
    init = full if arm == "imp-single" else head_slice(full)
    task, _ = _arm_task(arm, train, mapping)
    masks, trace = extract_tickets(init, task, _extraction(cfg, seed, _schedule(cfg)))
    arm_dir = out / arm
    masks.save(arm_dir / "masks.json")
    atomic_write_text(arm_dir / "extraction.csv", trace.to_csv())
    for level, snap in sorted(trace.snapshots.items()):
        snap.save(arm_dir / "snapshots" / f"masks_{_level_name(level)}.json")


def _train_arm(init: ParamSet, masks: MaskSet, task, part, cfg: dict, seed: int, arm: str):
    rcfg = _retrain(cfg, seed, arm)
    plan = balance_batches(task.partition if arm == "imp-single" else part,
                           rcfg.batch_size, seed)
    with np.errstate(all="ignore"):
        if arm == "imp-multi":
            models, trace = independent_retrain(init, masks, plan, task, rcfg)
        else:
            theta, trace = joint_retrain(init, masks, plan, task, rcfg)
            models = [theta]
    _finite("retraining loss", [r[2] for r in trace.rows])
    for m in models:
        _finite_params("retrained parameters", m)
    return models, trace


def cmd_retrain(cfg: dict, seed: int, out: Path, arm: str) -> None:
    train, mapping = _load_split(out, "train"), _mapping(out)
    arm_dir = out / arm
    masks = MaskSet.load(_need(arm_dir / "masks.json"))
    init = _arm_init(out, arm)
    task, part = _arm_task(arm, train, mapping)
    models, trace = _train_arm(init, masks, task, part, cfg, seed, arm)
    for path, params in zip(_arm_params_paths(arm_dir, masks, arm), models):
        write_params(params, path)
    atomic_write_text(arm_dir / "retrain.csv", trace.to_csv())


def _evaluate(arm: str, models: list[ParamSet], masks: MaskSet, test: LabeledDataset,
              mapping: dict[int, int], activation: str):
    with np.errstate(all="ignore"):
        if arm == "imp-single":
            part = partition_by_label(test, mapping)
            logits = multihead_logits(models[0], masks[0], test.features, activation)
            _finite("test logits", logits)
            report = metrics_from_logits(logits, part.membership(len(test)), part.subset_ids)
        else:
            params = models[0] if arm == "rtl" else models
            report = evaluate_routed(params, masks, test.features, test.labels, mapping, activation)
    return report


def cmd_eval(cfg: dict, seed: int, out: Path, arm: str) -> None:
    test, mapping = _load_split(out, "test"), _mapping(out)
    arm_dir = out / arm
    masks = MaskSet.load(_need(arm_dir / "masks.json"))
    models = [read_params(_need(p)) for p in _arm_params_paths(arm_dir, masks, arm)]
    for m in models:
        masks[0].check_params(m)
    report = _evaluate(arm, models, masks, test, mapping, cfg["model"]["activation"])
    dense = sum(b.size for b in models[0].biases)
    counts = count_params(masks, dense)
    report.params = counts.separate_total if arm == "imp-multi" else counts.union_total
    _finite("metrics", report.balanced_accuracy, report.precision, report.recall)
    report.notes = {"method": arm, "sparsity": float(np.mean([sparsity_of(m) for m in masks]))}
    atomic_write_text(arm_dir / "metrics.json", report.to_json())
    rows = []
    for name in ARMS:
        path = out / name / "metrics.json"
        if path.is_file():
            doc = json.loads(path.read_text())
            rows.append({"method": name, "sparsity": doc["notes"]["sparsity"],
                         "balanced_accuracy": doc["macro"]["balanced_accuracy"],
                         "precision": doc["macro"]["precision"],
                         "recall": doc["macro"]["recall"], "params": doc["params"]})
    atomic_write_text(out / "table.csv", table_csv(rows))


def cmd_analyze(cfg: dict, seed: int, out: Path, arm: str) -> None:
    a = cfg["analysis"]
    arm_dir = out / arm
    masks = MaskSet.load(_need(arm_dir / "masks.json"))
    ids = masks.subset_ids
    dest = arm_dir / "analysis"
    atomic_write_text(dest / "similarity_global.csv", matrix_to_csv(ids, similarity_matrix(masks)))
    for layer in range(len(masks.shapes)):
        atomic_write_text(dest / f"similarity_layer{layer}.csv",
                          matrix_to_csv(ids, similarity_matrix(masks, layer)))
    summary: dict = {"subset_ids": ids, "tau": a["tau"], "mode": a["mode"], "collapse_flag": None}

    snaps = sorted((arm_dir / "snapshots").glob("masks_*.json"))
    if len(masks) > 1 and len(snaps) >= 3:
        train, test, mapping = _load_split(out, "train"), _load_split(out, "test"), _mapping(out)
        init = _arm_init(out, arm)
        task, part = _arm_task(arm, train, mapping)
        levels, metric, jac = [], [], []
        for path in sorted(snaps, key=lambda p: float(p.stem.split("_", 1)[1])):
            snap = MaskSet.load(path)
            models, _ = _train_arm(init, snap, task, part, cfg, seed, arm)
            report = _evaluate(arm, models, snap, test, mapping, cfg["model"]["activation"])
            levels.append(float(path.stem.split("_", 1)[1]))
            metric.append(report.balanced_accuracy)
            jac.append(mean_similarity_to_others(similarity_matrix(snap)))
        curve = CollapseCurve(levels, metric, jac, ids)
        _finite("collapse curve", curve.metric, curve.mean_jaccard)
        atomic_write_text(dest / "collapse.csv", curve.to_csv())
        summary["collapse_flag"] = detect_collapse(levels, curve.overall_jaccard(), float(a["tau"]),
                                                   a["mode"], float(a["floor"]), a["anchor"])
        summary["collapse_levels"] = levels

    if a["semantic"]:
        sem_ids, sem = load_semantic_matrix(_need(Path(a["semantic"])))
        if sem_ids != list(ids):
            raise ShapeError(f"semantic matrix ids {sem_ids} do not match mask ids {list(ids)}")
        scopes = ["global", *range(len(masks.shapes))]
        alignment = {str(s): semantic_alignment(masks, sem, s) for s in scopes}
        atomic_write_text(dest / "alignment.json", json.dumps(alignment, indent=1, sort_keys=True))
        summary["alignment"] = alignment
    atomic_write_text(dest / "summary.json", json.dumps(summary, indent=1, sort_keys=True))


def cmd_inr(cfg: dict, seed: int, out: Path, arm: str) -> None:
    c = cfg["inr"]
    image = load_pixmap(_need(Path(c["image"]) if c["image"] else out / "image.ppm"))
    regions = load_regions(_need(Path(c["regions"]) if c["regions"] else out / "regions.pgm"),
                           int(c["min_region"]))
    if regions.shape != (image.height, image.width):
        raise ShapeError(f"region map {regions.shape} does not match image "
                         f"{(image.height, image.width)}")
    icfg = _inr_config(cfg, seed)
    levels = sorted(float(s) for s in c["sparsities"])
    init = init_params(icfg.widths(image.channels), seed)
    dest = out / "inr"
    write_params(init, dest / "init.bin")
    schedule = PruneSchedule(max(levels), "count", int(c["prune_count"]))
    ecfg = ExtractionConfig(icfg.steps, schedule, seed, icfg.batch_size, icfg.lr, checkpoints=tuple(levels))
    rcfg = RetrainConfig(icfg.epochs, icfg.lr, icfg.batch_size, seed, moments=icfg.moments)

    baseline = "imp-single" if arm == "rtl" else arm
    arms = {"rtl": regions}
    if baseline == "imp-single":
        arms["imp-single"] = RegionMap.uniform(*regions.shape)
    fitted = {}
    for name, rmap in arms.items():
        task = coordinate_task(image, rmap, icfg)
        final, trace = extract_tickets(init, task, ecfg)
        plan = balance_batches(task.partition, icfg.batch_size, seed)
        fitted[name] = (rmap, task, final, trace, plan)
        atomic_write_text(dest / f"extraction_{name}.csv", trace.to_csv())

    header = ["sparsity", "psnr_rtl", "psnr_baseline"]
    header += [f"psnr_region_{r}" for r in range(regions.region_count)]
    header += [f"jaccard_region_{r}" for r in range(regions.region_count)]
    lines = [",".join(header)]
    for s in levels:
        tag = _level_name(s)
        rmap, task, final, trace, plan = fitted["rtl"]
        masks = trace.snapshots.get(s, final)
        with np.errstate(all="ignore"):
            theta, _ = joint_retrain(init, masks, plan, task, rcfg)
        _finite_params("INR parameters", theta)
        recon = reconstruct(theta, masks, rmap, icfg.encoder, icfg.convention)
        p_rtl = psnr(recon, image)
        per_region = region_psnr(recon, image, rmap)
        jac = (mean_similarity_to_others(similarity_matrix(masks)) if len(masks) > 1
               else np.ones(1))
        masks.save(dest / f"masks_rtl_{tag}.json")
        write_params(theta, dest / f"params_rtl_{tag}.bin")
        save_pixmap(recon, dest / f"recon_rtl_{tag}.ppm")

        if baseline == "imp-single":
            brmap, btask, bfinal, btrace, bplan = fitted["imp-single"]
            bmasks = btrace.snapshots.get(s, bfinal)
            with np.errstate(all="ignore"):
                btheta, _ = joint_retrain(init, bmasks, bplan, btask, rcfg)
            _finite_params("INR parameters", btheta)
            brecon = reconstruct(btheta, bmasks, brmap, icfg.encoder, icfg.convention)
            bmasks.save(dest / f"masks_imp-single_{tag}.json")
        else:
            with np.errstate(all="ignore"):
                models, _ = independent_retrain(init, masks, plan, task, rcfg)
            for m in models:
                _finite_params("INR parameters", m)
            brecon = reconstruct(models, masks, rmap, icfg.encoder, icfg.convention)
        save_pixmap(brecon, dest / f"recon_{baseline}_{tag}.ppm")
        p_base = psnr(brecon, image)
        _finite("PSNR", p_rtl, p_base)
        row = [s, p_rtl, p_base, *[per_region[r] for r in range(regions.region_count)], *jac]
        lines.append(",".join(repr(float(v)) for v in row))
    atomic_write_text(dest / f"curve_{baseline}.csv", "\n".join(lines) + "\n")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "extract": cmd_extract,
    "retrain": cmd_retrain,
    "eval": cmd_eval,
    "inr": cmd_inr,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive-tickets", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config merged over the built-in defaults")
        p.add_argument("--seed", type=int, required=True, help="master seed (mandatory)")
        p.add_argument("--out", default="out", help="run directory (default: out)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key, e.g. retraining.epochs=10")
        if name != "gen-data":
            p.add_argument("--baseline", choices=["imp-single", "imp-multi"],
                           help="run a comparison arm instead of routed tickets")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        cfg = load_config(args.config, args.set)
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "gen-data":
            cmd_gen_data(cfg, args.seed, out)
        else:
            COMMANDS[args.command](cfg, args.seed, out, args.baseline or "rtl")
        atomic_write_text(out / f"config.{args.command}.json",
                          json.dumps({"seed": args.seed, **cfg}, indent=1, sort_keys=True))
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN
    except (ConfigError, FormatError, ShapeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
