"""Stage runner: simulate -> preprocess -> scalogram -> plan -> translate ->
assemble -> train -> evaluate -> report.

Stages communicate only through files under the output directory, are
deterministic given the config, and write every artifact atomically.

Seed derivation: stage ``name`` uses the first 64-bit word of
``SeedSequence(root_seed, spawn_key=(crc32(name),))``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
import zlib
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps

from . import classify, domainplan, dq0, scalogram, sigsim, wavelet
from .config import PipelineConfig
from .io import atomic_write_text, read_json, read_signal_store, write_cycle_csv, write_json, write_signal_store

log = logging.getLogger("ismd")

STAGES = ("simulate", "preprocess", "scalogram", "plan", "translate", "assemble", "train", "evaluate", "report")

# reference dataset sizes, compared against ours in report.json
REFERENCE_RECORDED_TOTAL = 4860
REFERENCE_REFINED_TOTAL = 510
REFERENCE_FINAL_DATASET = 40847
REFERENCE_COLUMN_COUNTS = (3620, 3220, 2820, 2420, 2020, 1620, 1220, 820, 420)


class DependencyError(RuntimeError):
    """An upstream artifact is missing."""


def stage_seed(root: int, name: str) -> int:
    ss = np.random.SeedSequence(int(root), spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def config_digest(cfg: PipelineConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.canonical(), sort_keys=True).encode()).hexdigest()


@dataclass
class Context:
    cfg: PipelineConfig
    out: Path
    jobs: int = 1

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def need(self, stage: str, producer: str, *parts) -> Path:
        p = self.path(*parts)
        if not p.exists():
            raise DependencyError(f"stage '{stage}' needs {p}; run '{producer}' first")
        return p


# --- config adapters -------------------------------------------------------

def simulation_config(cfg: PipelineConfig) -> sigsim.SimulationConfig:
    s = cfg.simulator
    params = sigsim.FaultParams(
        load_fraction=s.load_fraction, noise_level=s.noise_level,
        sideband_orders=tuple(s.sideband_orders), faulty_indices=tuple(s.faulty_indices),
        age_noise_factor=s.age_noise_factor, age_am_level=s.age_am_level,
        age_am_cutoff_orders=s.age_am_cutoff_orders, harmonic_orders=tuple(s.harmonic_orders),
        age_harmonic_levels=tuple(s.age_harmonic_levels))
    return sigsim.SimulationConfig(counts=s.counts.model_dump(), domains=tuple(s.domains), axes=tuple(s.axes),
                                   sample_rate=s.sample_rate_hz, ref_duration=s.ref_duration_s, params=params)


def classifier_config(cfg: PipelineConfig) -> classify.ClassifierConfig:
    t = cfg.training
    return classify.ClassifierConfig(
        input_size=t.input_size, conv_channels=tuple(t.conv_channels), kernel_size=t.kernel_size,
        dense=tuple(t.dense), n_classes=t.n_classes, batch_size=t.batch_size, epochs=t.epochs,
        learning_rate=t.learning_rate, l2=t.l2, optimizer=t.optimizer, momentum=t.momentum,
        seed=stage_seed(cfg.seed, "train"))


def resample_to(x: np.ndarray, rate_in: float, rate_out: float) -> np.ndarray:
    """Anti-aliased polyphase resampling."""
    if rate_in == rate_out:
        return np.asarray(x, dtype=float)
    frac = Fraction(rate_out / rate_in).limit_denominator(1000)
    return sps.resample_poly(x, frac.numerator, frac.denominator)


def analysis_signal(cycle: sigsim.ThreePhaseCycle, cfg: PipelineConfig):
    """DQ0 -> component selection -> DWT denoise -> resample to the analysis rate."""
    p = cfg.preprocess
    dq = dq0.transform_cycle(cycle, p.theta)
    x = dq0.select_analysis_signal(dq, p.analysis_mode)
    levels = None if p.levels == "auto" else p.levels
    clean, info = wavelet.denoise(x, p.family, levels, wavelet.DenoisePolicy(p.denoise_kind, p.threshold))
    return resample_to(clean, cycle.sample_rate, p.analysis_rate_hz), info


class ImageRenderer:
    """Analysis cycle -> CWT -> PNG (picklable for worker processes)."""

    def __init__(self, cfg: PipelineConfig):
        s = cfg.scalogram
        self.section = s
        self.rate = cfg.preprocess.analysis_rate_hz
        self.scales = wavelet.scale_grid(self.rate, s.f_min_hz, s.f_max_hz, s.n_scales, s.omega0)

    def scalogram(self, x: np.ndarray) -> wavelet.Scalogram:
        s = self.section
        x = np.asarray(x, dtype=float)
        if s.center:
            x = x - x.mean()
        return wavelet.cwt(x, self.rate, self.scales, s.wavelet, s.omega0, s.n_times)

    def image(self, sc: wavelet.Scalogram) -> scalogram.ScalogramImage:
        s = self.section
        return scalogram.to_image(sc, s.image_size, s.normalization, s.style, s.low_frequency_top, s.eps)

    def __call__(self, cycle: domainplan.AnalysisCycle, path: Path) -> scalogram.ScalogramImage:
        img = self.image(self.scalogram(cycle.signal))
        scalogram.write_png(img, path)
        return img


# --- stages ----------------------------------------------------------------

def run_simulate(ctx: Context) -> dict:
    cfg = ctx.cfg
    ds = sigsim.gen_dataset(stage_seed(cfg.seed, "simulate"), simulation_config(cfg))
    counts = {}
    for r in ds.records:
        counts[r.fault] = counts.get(r.fault, 0) + 1
    if cfg.simulator.export_csv:
        for rec, cyc in zip(ds.records, ds.cycles()):
            write_cycle_csv(cyc, ctx.path("simulated", "csv", f"axis{rec.axis}", rec.fault,
                                          str(rec.speed_percent), f"{rec.cycle_id}.csv"))
    doc = {"config_digest": config_digest(cfg), "total": len(ds), "per_class": counts,
           "records": [r.to_dict() for r in ds.records]}
    write_json(ctx.path("simulated", "cycles.json"), doc)
    log.info("simulate: %d cycles %s", len(ds), counts)
    return {"total": len(ds), "per_class": counts}


def _load_simulated(ctx: Context, stage: str) -> sigsim.SimulatedDataset:
    doc = read_json(ctx.need(stage, "simulate", "simulated", "cycles.json"))
    records = [sigsim.CycleRecord.from_dict(r) for r in doc["records"]]
    return sigsim.SimulatedDataset(records, simulation_config(ctx.cfg))


def run_preprocess(ctx: Context) -> dict:
    cfg = ctx.cfg
    ds = _load_simulated(ctx, "preprocess")
    refined = domainplan.refine_original(ds.records, cfg.preprocess.refined_counts.model_dump(),
                                         cfg.preprocess.axis)
    signals, meta = {}, {}
    for rec in refined:
        cyc = ds.cycle(rec)
        x, info = analysis_signal(cyc, cfg)
        key = domainplan.original_id(rec.fault, rec.speed_percent, rec.cycle_id)
        signals[key] = x
        meta[key] = {"fault": rec.fault, "speed_percent": rec.speed_percent, "cycle_id": rec.cycle_id,
                     "axis": rec.axis, "sample_rate_hz": cfg.preprocess.analysis_rate_hz,
                     "denoise_threshold": info.threshold, "noise_sigma": info.sigma, "levels": info.levels}
    write_signal_store(ctx.path("preprocessed", "analysis"), signals, meta)
    per_class = {}
    for rec in refined:
        per_class[rec.fault] = per_class.get(rec.fault, 0) + 1
    write_json(ctx.path("preprocessed", "refined.json"),
               {"total": len(refined), "per_class": per_class, "records": [r.to_dict() for r in refined]})
    log.info("preprocess: %d refined cycles %s", len(refined), per_class)
    return {"total": len(refined), "per_class": per_class}


def load_originals(ctx: Context, stage: str) -> dict[str, domainplan.AnalysisCycle]:
    ctx.need(stage, "preprocess", "preprocessed", "analysis.json")
    signals, meta = read_signal_store(ctx.path("preprocessed", "analysis"))
    out = {}
    for key, x in signals.items():
        m = meta[key]
        out[key] = domainplan.AnalysisCycle(x, float(m["sample_rate_hz"]), sigsim.FaultClass(m["fault"]),
                                            sigsim.SpeedDomain(int(m["speed_percent"])), key)
    return out


def run_scalogram(ctx: Context) -> dict:
    cfg = ctx.cfg
    originals = load_originals(ctx, "scalogram")
    render = ImageRenderer(cfg)
    index = []
    for key, cyc in originals.items():
        entry = domainplan.original_entry(cyc.fault, cyc.speed.percent, int(key.rsplit("/", 1)[1]))
        sc = render.scalogram(cyc.signal)
        scalogram.write_png(render.image(sc), ctx.path("dataset", entry.path))
        if cfg.scalogram.write_matrices:
            wavelet.write_scalogram(sc, ctx.path("scalograms", entry.path[len("original/"):-len(".png")] + ".bin"))
        index.append(entry.to_dict())
    write_json(ctx.path("dataset", "original.json"), index)
    log.info("scalogram: %d original images", len(index))
    return {"images": len(index)}


def run_plan(ctx: Context) -> dict:
    cfg = ctx.cfg
    ctx.need("plan", "preprocess", "preprocessed", "refined.json")
    plan = domainplan.enumerate_pairs(cfg.plan.domains, cfg.preprocess.refined_counts.model_dump())
    write_json(ctx.path("plan.json"), plan.to_dict())
    log.info("plan: %d pairs", len(plan.pairs))
    return {"pairs": len(plan.pairs), "expected_per_class": plan.to_dict()["expected_per_class"]}


def _plan_originals(ctx: Context, stage: str):
    plan = domainplan.TransferPlan.from_dict(read_json(ctx.need(stage, "plan", "plan.json")))
    originals = load_originals(ctx, stage)
    keep = {d.percent for d in plan.domains}
    return plan, {k: v for k, v in originals.items() if v.speed.percent in keep}


def run_translate(ctx: Context) -> dict:
    """Resolve and dry-run every (class, pair, source, reference) translation job."""
    cfg = ctx.cfg
    plan, originals = _plan_originals(ctx, "translate")
    manifest = domainplan.assemble_dataset(originals, plan, cfg.plan.alpha_schedule,
                                           stage_seed(cfg.seed, "assemble"), render_fn=None)
    jobs = [e.to_dict() for e in manifest.select(origin="generated")]
    write_json(ctx.path("translations.json"), jobs)
    counts = manifest.counts(origin="generated")
    log.info("translate: %d jobs %s", len(jobs), counts)
    return {"jobs": len(jobs), "per_class": counts}


def run_assemble(ctx: Context) -> dict:
    cfg = ctx.cfg
    plan, originals = _plan_originals(ctx, "assemble")
    scheduled = read_json(ctx.need("assemble", "translate", "translations.json"))
    ctx.need("assemble", "scalogram", "dataset", "original.json")
    manifest = domainplan.assemble_dataset(originals, plan, cfg.plan.alpha_schedule,
                                           stage_seed(cfg.seed, "assemble"), root=ctx.path("dataset"),
                                           render_fn=ImageRenderer(cfg), jobs=ctx.jobs)
    produced = [e.to_dict() for e in manifest.select(origin="generated")]
    if produced != scheduled:
        raise DependencyError("translations.json is stale relative to the plan; re-run 'translate'")
    manifest = domainplan.split(manifest, cfg.plan.train_fraction, stage_seed(cfg.seed, "split"))
    manifest.validate()
    write_json(ctx.path("manifest.json"), manifest.to_list())
    counts = {"original": manifest.counts("original"), "generated": manifest.counts("generated")}
    log.info("assemble: %d entries %s", len(manifest), counts)
    return counts


def load_manifest(ctx: Context, stage: str) -> domainplan.DatasetManifest:
    return domainplan.DatasetManifest.from_list(read_json(ctx.need(stage, "assemble", "manifest.json")))


def load_images(root: Path, entries, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Grey uint8 images resized to ``size`` and their class indices."""
    x = np.empty((len(entries), size, size), dtype=np.uint8)
    y = np.empty(len(entries), dtype=int)
    for i, e in enumerate(entries):
        px = scalogram.read_png(root / e.path)
        if px.ndim == 3:
            px = px.astype(float).mean(axis=2)
        if px.shape != (size, size):
            px = np.floor(scalogram.resize(px, size, size) + 0.5)
        x[i] = np.clip(px, 0, 255).astype(np.uint8)
        y[i] = classify.CLASS_NAMES.index(e.cls)
    return x, y


def run_train(ctx: Context) -> dict:
    cfg = ctx.cfg
    manifest = load_manifest(ctx, "train")
    ccfg = classifier_config(cfg)
    root = ctx.path("dataset")
    tr = manifest.select(origin="generated", split="train")
    te = manifest.select(origin="generated", split="test")
    if not tr:
        raise DependencyError("manifest has no training entries")
    t0 = time.time()
    xtr, ytr = load_images(root, tr, ccfg.input_size)
    xte, yte = load_images(root, te, ccfg.input_size)
    log.info("train: loaded %d train / %d test images in %.1fs", len(xtr), len(xte), time.time() - t0)
    model = classify.init_model(ccfg)

    def progress(r):
        log.info("epoch %d/%d loss %.4f acc %.4f test_loss %s test_acc %s", r.epoch, ccfg.epochs,
                 r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy)

    model, history = classify.train(model, xtr, ytr, xte, yte, ccfg, log=progress)
    classify.save_model(model, ctx.path("model.ckpt"))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "train_accuracy", "test_loss", "test_accuracy"])
    for r in history:
        w.writerow([r.epoch, repr(r.train_loss), repr(r.train_accuracy),
                    "" if r.test_loss is None else repr(r.test_loss),
                    "" if r.test_accuracy is None else repr(r.test_accuracy)])
    atomic_write_text(ctx.path("history.csv"), buf.getvalue())
    last = history[-1] if history else None
    return {"epochs": len(history), "final_train_accuracy": last.train_accuracy if last else None,
            "final_test_accuracy": last.test_accuracy if last else None}


def run_evaluate(ctx: Context) -> dict:
    model = classify.load_model(ctx.need("evaluate", "train", "model.ckpt"))
    manifest = load_manifest(ctx, "evaluate")
    val = manifest.select(split="validation")
    if not val:
        raise DependencyError("manifest has no validation entries")
    x, y = load_images(ctx.path("dataset"), val, model.config.input_size)
    report = classify.evaluate(model, x, y, "validation")
    write_json(ctx.path("evaluation.json"), report.to_dict())
    atomic_write_text(ctx.path("confusion.txt"), report.confusion.to_text())
    log.info("evaluate: overall accuracy %.4f, most confused %s", report.overall_accuracy,
             report.confusion.most_confused_pair())
    return {"overall_accuracy": report.overall_accuracy}


def dataset_gap(plan: domainplan.TransferPlan, original_total: int) -> dict:
    """Dataset sizes derivable from the plan, next to the reference sizes."""
    per_class = {cls: plan.expected_total(cls) for cls in plan.counts}
    generated = sum(per_class.values())
    n_d = plan.n_domains
    columns = {}
    for cls, c in plan.counts.items():
        n = c[plan.domains[0].percent]
        columns[cls] = [domainplan.generated_count(n, n, n_d, k) for k in range(1, n_d)]
    normal = plan.counts.get("Normal", {})
    uniform = len(set(normal.values())) == 1 if normal else False
    with_originals = ([domainplan.column_total_with_originals(next(iter(normal.values())), n_d, k)
                       for k in range(1, n_d)] if uniform else None)
    return {
        "generated_per_class": per_class,
        "generated_total": generated,
        "original_total": original_total,
        "final_dataset_total": generated + original_total,
        "reference_final_dataset": REFERENCE_FINAL_DATASET,
        "final_dataset_gap": REFERENCE_FINAL_DATASET - (generated + original_total),
        "reproduced": False,
        "column_counts_per_class": columns,
        "column_counts_with_originals_normal": with_originals,
        "reference_column_counts": list(REFERENCE_COLUMN_COUNTS),
        "note": ("pair counts follow n_a * n_b per pair; the reference per-column counts equal "
                 "these plus the column domain's own originals, and the reference final size is "
                 "not derivable from the per-class counts"),
    }


def run_report(ctx: Context) -> dict:
    cfg = ctx.cfg
    evaluation = read_json(ctx.need("report", "evaluate", "evaluation.json"))
    sim = read_json(ctx.need("report", "simulate", "simulated", "cycles.json"))
    refined = read_json(ctx.need("report", "preprocess", "preprocessed", "refined.json"))
    plan = domainplan.TransferPlan.from_dict(read_json(ctx.need("report", "plan", "plan.json")))
    manifest = load_manifest(ctx, "report")
    history_rows = list(csv.DictReader(ctx.need("report", "train", "history.csv").read_text().splitlines()))
    report = {
        "config_digest": config_digest(cfg),
        "seed": cfg.seed,
        "counts": {
            "simulated_total": sim["total"],
            "simulated_per_class": sim["per_class"],
            "refined_total": refined["total"],
            "refined_per_class": refined["per_class"],
            "manifest_original": manifest.counts("original"),
            "manifest_generated": manifest.counts("generated"),
            "splits": {s: len(manifest.select(split=s)) for s in ("train", "test", "validation")},
        },
        "reference_comparison": {
            "recorded_total": {"ours": sim["total"], "reference": REFERENCE_RECORDED_TOTAL},
            "refined_total": {"ours": refined["total"], "reference": REFERENCE_REFINED_TOTAL},
            **dataset_gap(plan, refined["total"]),
        },
        "training": {
            "epochs": len(history_rows),
            "final": history_rows[-1] if history_rows else None,
            "hyperparameters": cfg.training.model_dump(),
        },
        "evaluation": evaluation,
    }
    write_json(ctx.path("report.json"), report)
    return {"overall_accuracy": evaluation["overall_accuracy"]}


RUNNERS = {
    "simulate": run_simulate,
    "preprocess": run_preprocess,
    "scalogram": run_scalogram,
    "plan": run_plan,
    "translate": run_translate,
    "assemble": run_assemble,
    "train": run_train,
    "evaluate": run_evaluate,
    "report": run_report,
}


def run_stage(stage: str, cfg: PipelineConfig, out, jobs: int = 1) -> dict:
    if stage not in RUNNERS:
        raise ValueError(f"unknown stage {stage!r}")
    ctx = Context(cfg, Path(out), max(1, int(jobs)))
    ctx.out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    result = RUNNERS[stage](ctx)
    log.info("%s finished in %.1fs", stage, time.time() - t0)
    return result


def run_all(cfg: PipelineConfig, out, jobs: int = 1) -> dict:
    return {stage: run_stage(stage, cfg, out, jobs) for stage in STAGES}
