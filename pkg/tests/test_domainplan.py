import numpy as np
import pytest

from ismd import domainplan as dp
from ismd import sigsim
from ismd.sigsim import FaultClass, SpeedDomain

FULL = list(range(10, 101, 10))


def test_refine_default_counts():
    recs = sigsim.gen_dataset(0).records
    refined = dp.refine_original(recs)
    assert len(refined) == 510
    assert {r.axis for r in refined} == {4}
    for pct in FULL:
        got = [sum(1 for r in refined if r.speed_percent == pct and r.fault == c) for c in ("Normal", "Faulty", "FaultyAge")]
        assert got == [20, 17, 14]


def test_refine_is_idempotent():
    refined = dp.refine_original(sigsim.gen_dataset(0).records)
    assert dp.refine_original(refined) == refined


def test_refine_too_few():
    cfg = sigsim.SimulationConfig(counts={"Normal": 2, "Faulty": 2, "FaultyAge": 2}, domains=(10,), axes=(4,))
    with pytest.raises(dp.PlanError):
        dp.refine_original(sigsim.gen_dataset(0, cfg).records)


def test_full_grid_pairs_and_columns():
    plan = dp.enumerate_pairs(FULL)
    assert len(plan.pairs) == 45
    assert [len(plan.column(i)) for i in range(1, 10)] == [9, 8, 7, 6, 5, 4, 3, 2, 1]
    assert [p.as_tuple() for p in plan.column(1)] == [(10, b) for b in range(20, 101, 10)]
    assert [p.as_tuple() for p in plan.column(9)] == [(90, 100)]
    assert all(p.a < p.b for p in plan.pairs)


def test_two_domains_single_pair():
    assert [p.as_tuple() for p in dp.enumerate_pairs([20, 10]).pairs] == [(10, 20)]


def test_pair_order_enforced():
    with pytest.raises(ValueError):
        dp.DomainPair(SpeedDomain(30), SpeedDomain(30))


def test_generated_count_examples():
    assert dp.generated_count(20, 20, 10, 1) == 3600
    assert dp.generated_count(20, 20, 10, 9) == 400
    assert dp.generated_count(20, 20, 10, 10) == 0


def test_column_reconciliation():
    reference = [3620, 3220, 2820, 2420, 2020, 1620, 1220, 820, 420]
    for k, value in enumerate(reference, start=1):
        assert dp.generated_count(20, 20, 10, k) + 20 == value
        assert dp.column_total_with_originals(20, 10, k) == value


def test_column_counts_equal_pair_sums():
    plan = dp.enumerate_pairs(FULL)
    for cls, n in dp.REFINED_COUNTS.items():
        for k in range(1, 10):
            assert sum(plan.expected(cls, p) for p in plan.column(k)) == dp.generated_count(n, n, 10, k)


def test_expected_totals():
    plan = dp.enumerate_pairs(FULL)
    got = {c: plan.expected_total(c) for c in dp.REFINED_COUNTS}
    assert got == {"Normal": 18000, "Faulty": 13005, "FaultyAge": 8820}
    assert sum(got.values()) == 39825


def test_plan_round_trip():
    plan = dp.enumerate_pairs([10, 40, 70])
    assert dp.TransferPlan.from_dict(plan.to_dict()) == plan


def _sine(freq, amp, pct, fs=1000.0, n=None, fault=FaultClass.NORMAL, cid=0):
    n = n or int(fs * 2 * 10 / pct)
    t = np.arange(n) / fs
    return dp.AnalysisCycle(amp * np.sin(2 * np.pi * freq * t), fs, fault, SpeedDomain(pct),
                            dp.original_id(fault, pct, cid))


def warp_oracle(x, ratio, length):
    out = []
    for k in range(length):
        p = k * ratio
        i = int(p)
        if i >= len(x) - 1:
            out.append(x[-1])
        else:
            f = p - i
            out.append(x[i] * (1 - f) + x[i + 1] * f)
    return np.array(out)


def test_alpha_zero_is_reference():
    s, r = _sine(25, 1.0, 20), _sine(50, 2.0, 40)
    out = dp.translate_pair(s, r, 0.0)
    assert np.array_equal(out.signal, r.signal)


def test_alpha_one_is_warped_source():
    s, r = _sine(25, 1.0, 20), _sine(50, 2.0, 40)
    out = dp.translate_pair(s, r, 1.0)
    assert np.array_equal(out.signal, warp_oracle(s.signal, 2.0, len(r.signal)))


def test_half_blend_of_aligned_sinusoids():
    s, r = _sine(25, 1.0, 20), _sine(50, 3.0, 40)
    out = dp.translate_pair(s, r, 0.5)
    t = np.arange(len(r.signal)) / 1000.0
    np.testing.assert_allclose(out.signal, 2.0 * np.sin(2 * np.pi * 50 * t), atol=1e-12)
    assert out.speed == SpeedDomain(40) and out.pair.as_tuple() == (20, 40)
    assert out.parents == (s.ident, r.ident)


def test_translate_rejects_bad_inputs():
    s = _sine(25, 1.0, 20)
    with pytest.raises(dp.PlanError):
        dp.translate_pair(s, _sine(25, 1.0, 40, fault=FaultClass.FAULTY), 0.5)
    with pytest.raises(dp.PlanError):
        dp.translate_pair(s, _sine(25, 1.0, 20, cid=1), 0.5)
    with pytest.raises(dp.PlanError):
        dp.translate_pair(s, _sine(25, 1.0, 40), 1.5)


def _originals(domains, counts):
    out = {}
    for fault in sigsim.FAULT_CLASSES:
        for pct in domains:
            for cid in range(counts[fault.value]):
                c = _sine(10 + cid, 1.0, pct, fault=fault, cid=cid, n=64)
                out[c.ident] = c
    return out


def test_single_pair_manifest_counts():
    counts = {"Normal": 20, "Faulty": 17, "FaultyAge": 14}
    plan = dp.enumerate_pairs([10, 20], counts)
    m = dp.assemble_dataset(_originals([10, 20], counts), plan)
    gen = m.counts("generated")
    assert gen == {"Normal": 400, "Faulty": 289, "FaultyAge": 196}
    assert m.counts("original") == {"Normal": 40, "Faulty": 34, "FaultyAge": 28}
    e = m.select(origin="generated", cls="Normal")[0]
    assert e.parents == ["Normal/10/0", "Normal/20/0"] and e.pair == [10, 20]


def test_manifest_order_does_not_depend_on_jobs(tmp_path):
    counts = {"Normal": 3, "Faulty": 2, "FaultyAge": 2}
    plan = dp.enumerate_pairs([30, 60, 90], counts)
    orig = _originals([30, 60, 90], counts)
    a = dp.assemble_dataset(orig, plan, (0.25, 0.5, 0.75), seed=3)
    b = dp.assemble_dataset(dict(reversed(list(orig.items()))), plan, (0.25, 0.5, 0.75), seed=3, jobs=2)
    assert a.to_list() == b.to_list()
    assert {e.alpha for e in a.select(origin="generated")} <= {0.25, 0.5, 0.75}


def test_empty_plan_only_originals():
    counts = {"Normal": 2, "Faulty": 2, "FaultyAge": 2}
    plan = dp.TransferPlan([], [SpeedDomain(10)], {})
    m = dp.assemble_dataset(_originals([10], counts), plan)
    assert len(m) == 6 and not m.select(origin="generated")


def test_missing_parents():
    counts = {"Normal": 3, "Faulty": 2, "FaultyAge": 2}
    plan = dp.enumerate_pairs([10, 20], {"Normal": 4, "Faulty": 2, "FaultyAge": 2})
    with pytest.raises(dp.PlanError):
        dp.assemble_dataset(_originals([10, 20], counts), plan)


def _generated_manifest(n=400):
    entries = [dp.ManifestEntry(id=f"Normal/10_20/{i}", path=f"g/{i}.png", cls="Normal", origin="generated",
                                domains=[10, 20], pair=[10, 20], parents=["Normal/10/0", "Normal/20/0"]) for i in range(n)]
    entries.append(dp.original_entry("Normal", 10, 0))
    return dp.DatasetManifest(entries)


def test_split_70_30():
    m = dp.split(_generated_manifest(), 0.7, seed=1)
    assert len(m.select(split="train")) == 280
    assert len(m.select(split="test")) == 120
    assert [e.split for e in m.select(origin="original")] == ["validation"]
    m.validate()


def test_split_deterministic():
    a = dp.split(_generated_manifest(), 0.7, seed=5)
    b = dp.split(_generated_manifest(), 0.7, seed=5)
    c = dp.split(_generated_manifest(), 0.7, seed=6)
    assert [e.split for e in a.entries] == [e.split for e in b.entries]
    assert [e.split for e in a.entries] != [e.split for e in c.entries]


def test_manifest_round_trip():
    m = dp.split(_generated_manifest(10), 0.7, seed=1)
    assert dp.DatasetManifest.from_list(m.to_list()) == m
    assert m.to_list()[0]["class"] == "Normal"
