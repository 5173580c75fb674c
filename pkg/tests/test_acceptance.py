"""Acceptance suite: one PASS/FAIL line per criterion in the terminal summary."""
import json
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import snapshot
from ismd import classify, cli, domainplan, dq0, pipeline, wavelet
from ismd.config import PipelineConfig, load_profile
from test_classify import finite_difference_check
from test_wavelet import brute_force_cwt, snr_db

C1 = "DQ0 correctness"
C2 = "DWT perfect reconstruction and denoising"
C3 = "CWT oracle equivalence"
C4 = "Combinatorics fidelity"
C5 = "Dataset counts"
C6 = "Gradient check"
C7 = "Metric arithmetic"
C8 = "End-to-end desk-scale classification"
C9 = "Determinism"


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        return False


# --- C1 ---------------------------------------------------------------------

@pytest.mark.criterion(C1)
def test_dq0_correctness(record_property):
    with Timer() as t:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for th in rng.uniform(-100, 100, 100):
            m = dq0.park_matrix(th)
            worst = max(worst, np.abs(m @ m.T - np.eye(3)).max())
        assert worst <= 1e-12

        amp, fs, f = 13.7, 20000.0, 83.0
        th = 2 * np.pi * f * np.arange(4000) / fs
        abc = amp * np.vstack([np.sin(th), np.sin(th - 2 * np.pi / 3), np.sin(th + 2 * np.pi / 3)])
        d, q, z = dq0.project(abc, th)
        assert np.abs(q).max() < 1e-9 * amp
        assert np.abs(z).max() < 1e-9 * amp
        assert np.abs(d - amp * math.sqrt(1.5)).max() <= 1e-9
    assert t.elapsed < 1.0
    record_property("detail", f"max |MM^T - I| = {worst:.1e}; {t.elapsed:.3f} s")


# --- C2 ---------------------------------------------------------------------

@pytest.mark.criterion(C2)
def test_dwt_round_trip(record_property):
    with Timer() as t:
        worst = 0.0
        for n in (256, 1000, 1024):
            for levels in (1, 2, 3, 4):
                x = np.random.default_rng(n * 10 + levels).normal(size=n)
                y = wavelet.dwt_reconstruct(wavelet.dwt_decompose(x, levels=levels))
                worst = max(worst, np.linalg.norm(y - x) / np.linalg.norm(x))
    assert worst < 1e-8
    assert t.elapsed < 5.0
    record_property("detail", f"worst relative error {worst:.1e}; {t.elapsed:.3f} s")


_denoise_started = []


@pytest.mark.criterion(C2)
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), period=st.integers(32, 400), n=st.sampled_from([1024, 2048, 4096]),
       kind=st.sampled_from(["soft", "hard"]))
def test_denoise_improves_snr_property(seed, period, n, kind):
    if not _denoise_started:
        _denoise_started.append(time.perf_counter())
    t = np.arange(n)
    clean = np.sin(2 * np.pi * t / period)
    sigma = math.sqrt(np.mean(clean ** 2) / 10.0)        # 10 dB
    noisy = clean + np.random.default_rng(seed).normal(scale=sigma, size=n)
    y, _ = wavelet.denoise(noisy, policy=wavelet.DenoisePolicy(kind))
    assert snr_db(clean, y) > snr_db(clean, noisy)
    assert time.perf_counter() - _denoise_started[0] < 5.0


# --- C3 ---------------------------------------------------------------------

@pytest.mark.criterion(C3)
def test_cwt_matches_direct_summation(record_property):
    with Timer() as t:
        fs = 1024.0
        rng = np.random.default_rng(9)
        time_axis = np.arange(512) / fs
        x = np.sin(2 * np.pi * 100 * time_axis) + np.cos(2 * np.pi * 17 * time_axis) + 0.3 * rng.normal(size=512)
        scales = wavelet.scale_grid(fs, 8.0, 400.0, 16)
        fast = wavelet.cwt_coefficients(x, scales)
        slow = brute_force_cwt(x, scales)
        err = np.abs(fast - slow).max() / np.abs(slow).max()
        assert err <= 1e-6

        freqs = wavelet.center_frequency(scales, fs)
        hits = 0
        for f0 in (20.0, 55.0, 125.0, 310.0):
            s = np.sin(2 * np.pi * f0 * time_axis)
            ridge = int(np.argmax(np.abs(brute_force_cwt(s, scales)).mean(axis=1)))
            fast_ridge = int(np.argmax(wavelet.cwt(s, fs, scales).magnitudes.mean(axis=1)))
            nearest = int(np.argmin(np.abs(freqs - f0)))
            assert ridge == fast_ridge == nearest, f0
            hits += 1
    assert t.elapsed < 30.0
    record_property("detail", f"max error {err:.1e} x peak; {hits} ridges on nearest scale; {t.elapsed:.1f} s")


# --- C4 ---------------------------------------------------------------------

@pytest.mark.criterion(C4)
def test_combinatorics(record_property):
    with Timer() as t:
        plan = domainplan.enumerate_pairs(range(10, 101, 10))
        assert len(plan.pairs) == 45
        assert [len(plan.column(k)) for k in range(1, 10)] == list(range(9, 0, -1))
        assert [p.as_tuple() for p in plan.column(1)] == [(10, b) for b in range(20, 101, 10)]
        assert [p.as_tuple() for p in plan.column(9)] == [(90, 100)]
        for n_a in range(1, 31):
            for n_b in range(1, 31):
                for n_d in range(1, 11):
                    for big in range(1, n_d + 1):
                        assert domainplan.generated_count(n_a, n_b, n_d, big) == n_a * n_b * (n_d - big)
        reference = [3620, 3220, 2820, 2420, 2020, 1620, 1220, 820, 420]
        for k, value in enumerate(reference, start=1):
            assert domainplan.generated_count(20, 20, 10, k) + 20 == value
    assert t.elapsed < 1.0
    record_property("detail", f"45 pairs, columns 9..1, 3600 + 20 = 3620; {t.elapsed:.3f} s")


# --- shared CI-profile run ----------------------------------------------------

@pytest.fixture(scope="session")
def ci_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ci") / "out"
    cfg = load_profile("ci")
    times = {}
    t0 = time.perf_counter()
    for stage in pipeline.STAGES:
        s0 = time.perf_counter()
        pipeline.run_stage(stage, cfg, out)
        times[stage] = time.perf_counter() - s0
    times["total"] = time.perf_counter() - t0
    return out, cfg, times


# --- C5 ---------------------------------------------------------------------

@pytest.mark.criterion(C5)
def test_default_counts(tmp_path, record_property):
    out = tmp_path / "default"
    cfg = PipelineConfig()
    with Timer() as t:
        sim = pipeline.run_stage("simulate", cfg, out)
        pre = pipeline.run_stage("preprocess", cfg, out)
        pipeline.run_stage("plan", cfg, out)
        tr = pipeline.run_stage("translate", cfg, out)
    assert sim["total"] == 4860
    assert pre["total"] == 510 and pre["per_class"] == {"Normal": 200, "Faulty": 170, "FaultyAge": 140}
    assert tr["jobs"] == 39825
    assert tr["per_class"] == {"Normal": 18000, "Faulty": 13005, "FaultyAge": 8820}
    record_property("detail", f"default config 4860 / 510 / 39825 scheduled in {t.elapsed:.0f} s")


@pytest.mark.criterion(C5)
def test_ci_dataset_on_disk(ci_run, record_property):
    out, cfg, times = ci_run
    manifest = json.loads((out / "manifest.json").read_text())
    gen = [e for e in manifest if e["origin"] == "generated"]
    orig = [e for e in manifest if e["origin"] == "original"]
    assert len(gen) == 39825 and len(orig) == 510
    pngs = list((out / "dataset" / "generated").rglob("*.png"))
    assert len(pngs) == 39825
    report = json.loads((out / "report.json").read_text())
    gap = report["reference_comparison"]
    assert gap["generated_total"] == 39825
    assert gap["final_dataset_total"] == 40335
    assert gap["reference_final_dataset"] == 40847 and gap["final_dataset_gap"] == 512
    assert gap["reproduced"] is False
    assert report["counts"]["simulated_total"] == 4860 and report["counts"]["refined_total"] == 510
    build = sum(times[s] for s in ("simulate", "preprocess", "scalogram", "plan", "translate", "assemble"))
    assert build < 180.0
    record_property("detail", f"CI profile dataset built in {build:.0f} s; gap 40847 - 40335 = 512 reported")


# --- C6 ---------------------------------------------------------------------

@pytest.mark.criterion(C6)
def test_gradient_check(record_property):
    with Timer() as t:
        cfg = classify.ClassifierConfig(input_size=8, conv_channels=(2, 3), kernel_size=2, dense=(4,),
                                        l2=1e-3, seed=21)
        model = classify.init_model(cfg)
        rng = np.random.default_rng(22)
        for k in model.params:
            if k.endswith(".b"):
                model.params[k] = rng.normal(scale=0.1, size=model.params[k].shape)
        x = rng.normal(size=(6, 8, 8))
        n_params = sum(v.size for v in model.params.values())
        worst = finite_difference_check(model, x, [0, 1, 2, 2, 1, 0], step=1e-5, rtol=1e-4)
    assert t.elapsed < 10.0
    record_property("detail", f"{n_params} parameters, worst relative error {worst:.1e}; {t.elapsed:.2f} s")


# --- C7 ---------------------------------------------------------------------

@pytest.mark.criterion(C7)
def test_metric_arithmetic(record_property):
    with Timer() as t:
        m = classify.binary_metrics(tp=50, tn=40, fp=5, fn=5)
        want = {"accuracy": 0.90, "sensitivity": 0.9091, "specificity": 0.8889, "precision": 0.9091, "f_score": 0.9091}
        for k, v in want.items():
            assert abs(m[k] - v) <= 1e-4, k
    assert t.elapsed < 1.0
    record_property("detail", ", ".join(f"{k} {m[k]:.4f}" for k in want))


# --- C8 ---------------------------------------------------------------------

@pytest.mark.criterion(C8)
def test_desk_scale_classification(ci_run, record_property):
    out, cfg, times = ci_run
    t = cfg.training
    assert (t.batch_size, t.epochs, t.learning_rate, t.l2, t.optimizer) == (32, 30, 1e-4, 1e-5, "sgd")
    assert cfg.simulator.model_dump(exclude={"sample_rate_hz", "ref_duration_s"}) == \
        PipelineConfig().simulator.model_dump(exclude={"sample_rate_hz", "ref_duration_s"})
    ev = json.loads((out / "evaluation.json").read_text())
    assert ev["split"] == "validation" and ev["n_samples"] == 510
    manifest = json.loads((out / "manifest.json").read_text())
    assert all(e["origin"] == "original" for e in manifest if e["split"] == "validation")
    acc = ev["overall_accuracy"]
    pair = ev["most_confused_pair"]
    record_property("detail", f"validation accuracy {acc:.4f}, most confused {pair[0]}<->{pair[1]}, "
                              f"pipeline {times['total'] / 60:.1f} min")
    assert acc >= 0.90
    assert pair == ["Normal", "Faulty"]
    assert times["total"] < 600.0


# --- C9 ---------------------------------------------------------------------

@pytest.mark.criterion(C9)
def test_two_runs_byte_identical(tiny_run, tmp_path, record_property):
    out = tmp_path / "again"
    assert cli.main(["--profile", "tiny", "--out", str(out), "run", "--all"]) == 0
    a, b = snapshot(tiny_run), snapshot(out)
    assert a == b
    kinds = {k for k in a if k.endswith((".png", ".ckpt", "manifest.json", "report.json"))}
    assert any(k.endswith(".png") for k in kinds) and "model.ckpt" in kinds and "report.json" in kinds
    record_property("detail", f"{len(a)} files identical across two tiny-profile runs")


@pytest.mark.criterion(C9)
def test_ci_stages_rerun_identical(ci_run, record_property):
    out, cfg, _ = ci_run
    watched = ["manifest.json", "report.json", "evaluation.json", "plan.json", "translations.json",
               "dataset/original.json", "preprocessed/analysis.bin"]
    pngs = sorted(p.relative_to(out).as_posix() for p in (out / "dataset" / "original").rglob("*.png"))
    watched += pngs
    before = {k: (out / k).read_bytes() for k in watched}
    for stage in ("simulate", "preprocess", "scalogram", "plan", "translate", "evaluate", "report"):
        pipeline.run_stage(stage, cfg, out)
    after = {k: (out / k).read_bytes() for k in watched}
    assert before == after
    record_property("detail", f"{len(watched)} CI artifacts unchanged after re-running stages")
