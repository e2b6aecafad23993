"""Desk-scale comparisons of routed tickets against the two IMP baselines.

Each seed draws one initialization that every method starts from. The
classification task compares one-vs-rest detectors (routed tickets and
independent copies) against a single multi-head network; the image task
compares per-region masks against one mask for the whole image.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .analysis import CollapseCurve, detect_collapse, mean_similarity_to_others, similarity_matrix
from .datasets import (
    RegionMap,
    gen_gaussian_clusters,
    identity_mapping,
    partition_by_label,
    stratified_split,
    two_region_fixture,
)
from .evaluation import count_params, evaluate_routed, metrics_from_logits, multihead_logits
from .extraction import ExtractionConfig, extract_tickets
from .inr import InrConfig, coordinate_task, psnr, reconstruct
from .masking import PruneSchedule
from .retraining import RetrainConfig, balance_batches, independent_retrain, joint_retrain
from .tasks import detector_task, multihead_task
from .tensor import ParamSet, init_params

TASKS = ("synthetic-classification", "inr-fixture")
METHODS = ("rtl", "imp-single", "imp-multi")


@dataclass(frozen=True)
class BenchmarkSpec:
    task: str = "synthetic-classification"
    sparsities: tuple[float, ...] = (0.75,)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    methods: tuple[str, ...] = METHODS
    min_seeds: int = 3
    # margins
    ba_margin: float = 0.03
    param_ratio: float = 0.5
    psnr_margin: float = 0.5
    tau: float = 0.15
    collapse_drop: float = 0.10
    warning_drop: float = 0.05
    collapse_seeds: int = 3
    # synthetic classification
    classes: int = 4
    per_class: int = 200
    dim: int = 8
    spread: float = 0.25
    test_fraction: float = 0.25
    hidden: tuple[int, ...] = (32, 32)
    steps: int = 1000
    epochs: int = 50
    lr: float = 1e-4
    batch_size: int = 32
    prune_fraction: float = 0.2
    single_epoch_factor: int = 2
    moments: str = "shared"
    # image fixture
    image_size: int = 16
    prune_count: int = 64
    inr: InrConfig = InrConfig()

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown benchmark task {self.task!r}")
        if len(self.seeds) < self.min_seeds:
            raise ValueError(f"need at least {self.min_seeds} seeds, got {len(self.seeds)}")
        if not self.sparsities or np.any(np.diff(self.sparsities) <= 0):
            raise ValueError("sparsity sweep must be non-empty and strictly increasing")
        unknown = set(self.methods) - set(METHODS)
        if unknown or "rtl" not in self.methods:
            raise ValueError(f"methods must include rtl and come from {METHODS}")


@dataclass
class BenchmarkReport:
    spec: BenchmarkSpec
    rows: list[dict] = field(default_factory=list)
    curves: dict[int, CollapseCurve] = field(default_factory=dict)
    audit: list[dict] = field(default_factory=list)
    seconds: float = 0.0

    def values(self, method: str, sparsity: float, key: str = "metric") -> np.ndarray:
        return np.array([r[key] for r in self.rows
                         if r["method"] == method and r["sparsity"] == sparsity])

    def summary(self) -> list[dict]:
        out = []
        for s in self.spec.sparsities:
            for method in self.spec.methods:
                v = self.values(method, s)
                p = self.values(method, s, "params")
                out.append({"method": method, "sparsity": s, "mean": float(v.mean()),
                            "min": float(v.min()), "max": float(v.max()),
                            "params_mean": float(p.mean())})
        return out

    def verdicts(self) -> dict:
        spec = self.spec
        out: dict = {}
        if spec.task == "synthetic-classification":
            if "imp-single" in spec.methods and "imp-multi" in spec.methods:
                for s in spec.sparsities:
                    gap = self.values("rtl", s).mean() - self.values("imp-single", s).mean()
                    ratio = (self.values("rtl", s, "params").mean()
                             / self.values("imp-multi", s, "params").mean())
                    out[f"specialization@{s:g}"] = {
                        "gap": float(gap), "param_ratio": float(ratio),
                        "pass": bool(gap >= spec.ba_margin and ratio <= spec.param_ratio),
                    }
            if len(spec.sparsities) >= 3:
                per_seed = {seed: collapse_verdict(c, spec.tau, spec.collapse_drop, spec.warning_drop)
                            for seed, c in self.curves.items()}
                hits = sum(v["pass"] for v in per_seed.values())
                out["collapse"] = {"per_seed": per_seed, "passing_seeds": hits,
                                   "pass": hits >= spec.collapse_seeds}
        elif "imp-single" in spec.methods:
            for s in spec.sparsities:
                gap = self.values("rtl", s).mean() - self.values("imp-single", s).mean()
                out[f"psnr_gap@{s:g}"] = {"gap": float(gap), "pass": bool(gap >= spec.psnr_margin)}
        out["budget"] = {"pass": all(a["pass"] for a in self.audit)}
        return out

    def rows_csv(self) -> str:
        buf = io.StringIO()
        cols = ["seed", "sparsity", "method", "metric", "precision", "recall", "params",
                "updates", "epochs", "mean_jaccard"]
        writer = csv.DictWriter(buf, cols, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({c: r.get(c, "") for c in cols})
        return buf.getvalue()

    def to_dict(self) -> dict:
        spec = asdict(self.spec)
        return {
            "spec": spec,
            "metric": "balanced_accuracy" if self.spec.task == TASKS[0] else "psnr_db",
            "summary": self.summary(),
            "verdicts": self.verdicts(),
            "audit": self.audit,
            "seconds": self.seconds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def collapse_verdict(curve: CollapseCurve, tau: float, collapse_drop: float = 0.10,
                     warning_drop: float = 0.05) -> dict:
    """Early-warning check on one seed: accuracy must have collapsed by the
    last level, and the similarity flag must come no later than the first
    level that has dropped ``warning_drop`` below the sweep peak."""
    s = curve.sparsities
    acc = curve.overall_metric()
    peak_at = int(np.argmax(acc))
    peak = float(acc[peak_at])
    collapsed = bool(acc[-1] <= peak - collapse_drop)
    first = next((float(s[i]) for i in range(peak_at, s.size) if acc[i] <= peak - warning_drop), None)
    flag = detect_collapse(s, curve.overall_jaccard(), tau)
    ok = collapsed and flag is not None and first is not None and flag <= first
    return {"collapsed": collapsed, "flag": flag, "first_drop": first, "pass": bool(ok)}


def head_slice(params: ParamSet, rows: int = 1) -> ParamSet:
    """Same hidden layers, first ``rows`` output units only (shared init)."""
    w, b = params.weights, params.biases
    return ParamSet(w[:-1] + [w[-1][:rows]], b[:-1] + [b[-1][:rows]])


def _presentations(trace_updates: list[int], per_update: list[int]) -> int:
    return int(sum(u * p for u, p in zip(trace_updates, per_update)))


def _classification_seed(spec: BenchmarkSpec, seed: int, report: BenchmarkReport) -> None:
    data = gen_gaussian_clusters(spec.classes, spec.per_class, spec.dim, spec.spread, seed)
    train, test = stratified_split(data, spec.test_fraction, seed)
    mapping = identity_mapping(spec.classes)
    part = partition_by_label(train, mapping)
    full = init_params([spec.dim, *spec.hidden, spec.classes], seed)
    detector_init = head_slice(full)
    levels = list(spec.sparsities)
    schedule = PruneSchedule(max(levels), "fraction", spec.prune_fraction)
    ecfg = ExtractionConfig(spec.steps, schedule, seed, spec.batch_size, spec.lr, checkpoints=tuple(levels))
    rcfg = RetrainConfig(spec.epochs, spec.lr, spec.batch_size, seed, moments=spec.moments)

    det = detector_task(train.features, part)
    final, trace = extract_tickets(detector_init, det, ecfg)
    plan = balance_batches(part, spec.batch_size, seed)
    dense = sum(b.size for b in detector_init.biases)
    multi = multihead_task(train.features, part) if "imp-single" in spec.methods else None
    if multi is not None:
        s_final, s_trace = extract_tickets(full, multi, ecfg)
        s_plan = balance_batches(multi.partition, spec.batch_size, seed)
        s_cfg = replace(rcfg, epochs=spec.single_epoch_factor * spec.epochs)

    acc = np.zeros((len(levels), spec.classes))
    jac = np.zeros((len(levels), spec.classes))
    for i, s in enumerate(levels):
        masks = trace.snapshots.get(s, final)
        jac[i] = mean_similarity_to_others(similarity_matrix(masks)) if len(masks) > 1 else 1.0
        theta, rtrace = joint_retrain(detector_init, masks, plan, det, rcfg)
        rep = evaluate_routed(theta, masks, test.features, test.labels, mapping)
        acc[i] = rep.balanced_accuracy
        counts = count_params(masks, dense)
        base = {"seed": seed, "sparsity": s, "mean_jaccard": float(jac[i].mean())}
        report.rows.append({**base, "method": "rtl", "metric": rep.macro_balanced_accuracy,
                            "precision": rep.macro_precision, "recall": rep.macro_recall,
                            "params": counts.union_total, "updates": sum(rtrace.updates),
                            "epochs": spec.epochs})
        audit = {"seed": seed, "sparsity": s, "rtl_updates": rtrace.updates,
                 "rtl_extraction_steps": trace.optimizer_steps}
        # each detector batch carries as many sampled negatives as positives
        sizes = [[2 * len(b) for b in batches] for batches in plan.batches]
        audit["rtl_presentations"] = int(sum(spec.epochs * sum(z) for z in sizes))
        ok = all(u == spec.epochs * plan.M for u in rtrace.updates)
        if "imp-multi" in spec.methods:
            models, mtrace = independent_retrain(detector_init, masks, plan, det, rcfg)
            mrep = evaluate_routed(models, masks, test.features, test.labels, mapping)
            report.rows.append({**base, "method": "imp-multi", "metric": mrep.macro_balanced_accuracy,
                                "precision": mrep.macro_precision, "recall": mrep.macro_recall,
                                "params": counts.separate_total, "updates": sum(mtrace.updates),
                                "epochs": spec.epochs})
            audit["imp_multi_updates"] = mtrace.updates
            ok = ok and mtrace.updates == rtrace.updates
        if multi is not None:
            smask = s_trace.snapshots.get(s, s_final)
            stheta, strace = joint_retrain(full, smask, s_plan, multi, s_cfg)
            test_part = partition_by_label(test, mapping)
            srep = metrics_from_logits(multihead_logits(stheta, smask[0], test.features),
                                       test_part.membership(len(test)), part.subset_ids)
            scount = count_params(smask, sum(b.size for b in full.biases))
            report.rows.append({**base, "method": "imp-single", "metric": srep.macro_balanced_accuracy,
                                "precision": srep.macro_precision, "recall": srep.macro_recall,
                                "params": scount.union_total, "updates": sum(strace.updates),
                                "epochs": s_cfg.epochs, "mean_jaccard": 1.0})
            audit["imp_single_updates"] = strace.updates
            audit["imp_single_epochs"] = s_cfg.epochs
            audit["imp_single_presentations"] = int(s_cfg.epochs * len(train))
            ok = ok and s_cfg.epochs == spec.single_epoch_factor * spec.epochs
        audit["pass"] = bool(ok)
        report.audit.append(audit)
    if len(levels) >= 3:
        report.curves[seed] = CollapseCurve(levels, acc, jac, list(part.subset_ids))


def _inr_seed(spec: BenchmarkSpec, seed: int, report: BenchmarkReport) -> None:
    image, regions = two_region_fixture(spec.image_size, seed)
    cfg = replace(spec.inr, seed=seed)
    init = init_params(cfg.widths(image.channels), seed)
    levels = list(spec.sparsities)
    schedule = PruneSchedule(max(levels), "count", spec.prune_count)
    ecfg = ExtractionConfig(cfg.steps, schedule, seed, cfg.batch_size, cfg.lr, checkpoints=tuple(levels))
    rcfg = RetrainConfig(cfg.epochs, cfg.lr, cfg.batch_size, seed, moments=cfg.moments)
    region_maps = {"rtl": regions}
    if "imp-single" in spec.methods:
        region_maps["imp-single"] = RegionMap.uniform(*regions.shape)
    extracted = {}
    for name, rmap in region_maps.items():
        task = coordinate_task(image, rmap, cfg)
        final, trace = extract_tickets(init, task, ecfg)
        extracted[name] = (rmap, task, final, trace, balance_batches(task.partition, cfg.batch_size, seed))
    dense = sum(b.size for b in init.biases)
    for s in levels:
        audit = {"seed": seed, "sparsity": s}
        for name, (rmap, task, final, trace, plan) in extracted.items():
            masks = trace.snapshots.get(s, final)
            theta, rtrace = joint_retrain(init, masks, plan, task, rcfg)
            value = psnr(reconstruct(theta, masks, rmap, cfg.encoder, cfg.convention), image)
            counts = count_params(masks, dense)
            jac = (float(mean_similarity_to_others(similarity_matrix(masks)).mean())
                   if len(masks) > 1 else 1.0)
            report.rows.append({"seed": seed, "sparsity": s, "method": name, "metric": value,
                                "params": counts.union_total, "updates": sum(rtrace.updates),
                                "epochs": cfg.epochs, "mean_jaccard": jac})
            audit[f"{name}_updates"] = rtrace.updates
            audit[f"{name}_presentations"] = int(cfg.epochs * image.height * image.width)
            if name == "rtl" and "imp-multi" in spec.methods:
                models, mtrace = independent_retrain(init, masks, plan, task, rcfg)
                mval = psnr(reconstruct(models, masks, rmap, cfg.encoder, cfg.convention), image)
                report.rows.append({"seed": seed, "sparsity": s, "method": "imp-multi", "metric": mval,
                                    "params": counts.separate_total, "updates": sum(mtrace.updates),
                                    "epochs": cfg.epochs, "mean_jaccard": jac})
                audit["imp-multi_updates"] = mtrace.updates
        # every pixel is presented once per epoch in each method
        audit["pass"] = len({v for k, v in audit.items() if k.endswith("_presentations")}) <= 1
        report.audit.append(audit)


def run_benchmark(spec: BenchmarkSpec) -> BenchmarkReport:
    """Run every method for every seed and sparsity; see :meth:`BenchmarkReport.verdicts`."""
    report = BenchmarkReport(spec)
    start = time.perf_counter()
    for seed in spec.seeds:
        if spec.task == "synthetic-classification":
            _classification_seed(spec, seed, report)
        else:
            _inr_seed(spec, seed, report)
    report.seconds = time.perf_counter() - start
    order = {m: i for i, m in enumerate(METHODS)}
    report.rows.sort(key=lambda r: (r["seed"], r["sparsity"], order[r["method"]]))
    return report
