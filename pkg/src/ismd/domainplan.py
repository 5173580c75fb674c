"""Cross-domain pair schedule, translation surrogate and dataset assembly.

Every unordered pair of distinct speed domains ``(a, b)`` with ``a < b``
contributes ``n_a * n_b`` generated samples per class: each source cycle of
domain ``a`` is translated towards each reference cycle of domain ``b``.
Grouped by the lower domain's index ``N_d`` this is
``N_ab = n_a * n_b * (n_d - N_d)`` per column.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .sigsim import FAULT_AXIS, FAULT_CLASSES, CycleRecord, FaultClass, SpeedDomain

REFINED_COUNTS = {"Normal": 20, "Faulty": 17, "FaultyAge": 14}


class PlanError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class DomainPair:
    a: SpeedDomain
    b: SpeedDomain

    def __post_init__(self):
        if not self.a.percent < self.b.percent:
            raise PlanError(f"pair must satisfy a < b and exclude same-domain cells, got ({self.a.percent},{self.b.percent})")

    @property
    def label(self) -> str:
        return f"{self.a.percent}_{self.b.percent}"

    def as_tuple(self) -> tuple[int, int]:
        return (self.a.percent, self.b.percent)


def generated_count(n_a: int, n_b: int, n_d: int, N_d: int) -> int:
    """Images produced for the column of domain number ``N_d``."""
    if n_a < 0 or n_b < 0:
        raise PlanError("sample counts must be non-negative")
    if not 1 <= N_d <= n_d:
        raise PlanError(f"domain number {N_d} outside 1..{n_d}")
    return (n_a * n_b) * (n_d - N_d)


def column_total_with_originals(n: int, n_d: int, N_d: int) -> int:
    """Per-column count when the column domain's own originals are counted too."""
    return generated_count(n, n, n_d, N_d) + n


@dataclass
class TransferPlan:
    pairs: list[DomainPair]
    domains: list[SpeedDomain]
    counts: dict[str, dict[int, int]]   # class -> domain percent -> n

    @property
    def n_domains(self) -> int:
        return len(self.domains)

    def column(self, domain_number: int) -> list[DomainPair]:
        """Pairs whose lower domain is the ``domain_number``-th domain (1-based)."""
        low = self.domains[domain_number - 1]
        return [p for p in self.pairs if p.a == low]

    def expected(self, cls: str, pair: DomainPair) -> int:
        c = self.counts[cls]
        return c[pair.a.percent] * c[pair.b.percent]

    def expected_total(self, cls: str) -> int:
        return sum(self.expected(cls, p) for p in self.pairs)

    def to_dict(self) -> dict:
        return {
            "domains": [d.percent for d in self.domains],
            "pairs": [list(p.as_tuple()) for p in self.pairs],
            "counts": {cls: {str(k): v for k, v in sorted(c.items())} for cls, c in self.counts.items()},
            "expected_per_class": {cls: self.expected_total(cls) for cls in self.counts},
            "columns": {str(i + 1): [list(p.as_tuple()) for p in self.column(i + 1)]
                        for i in range(self.n_domains)},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TransferPlan":
        domains = [SpeedDomain(int(p)) for p in d["domains"]]
        pairs = [DomainPair(SpeedDomain(int(a)), SpeedDomain(int(b))) for a, b in d["pairs"]]
        counts = {c: {int(k): int(v) for k, v in m.items()} for c, m in d["counts"].items()}
        return cls(pairs, domains, counts)


def enumerate_pairs(domains: Iterable, counts: Mapping[str, int | Mapping[int, int]] | None = None) -> TransferPlan:
    """All pairs with a < b, grouped by the lower domain (column order)."""
    doms = sorted({d if isinstance(d, SpeedDomain) else SpeedDomain(int(d)) for d in domains})
    if len(doms) < 2:
        raise PlanError("at least two domains are needed to form a pair")
    counts = REFINED_COUNTS if counts is None else counts
    per_domain = {}
    for cls, c in counts.items():
        FaultClass.parse(cls)
        if isinstance(c, Mapping):
            per_domain[cls] = {d.percent: int(c[d.percent]) for d in doms}
        else:
            per_domain[cls] = {d.percent: int(c) for d in doms}
    pairs = [DomainPair(a, b) for i, a in enumerate(doms) for b in doms[i + 1:]]
    return TransferPlan(pairs, doms, per_domain)


def refine_original(records: Sequence[CycleRecord], counts: Mapping[str, int] = REFINED_COUNTS,
                    axis: int = FAULT_AXIS) -> list[CycleRecord]:
    """Keep the faulted axis only and the first ``counts[class]`` cycles per domain."""
    groups: dict[tuple[int, str], list[CycleRecord]] = {}
    for r in records:
        if r.axis == axis:
            groups.setdefault((r.speed_percent, r.fault), []).append(r)
    if not groups:
        raise PlanError(f"no cycles for axis {axis}")
    out = []
    for pct in sorted({k[0] for k in groups}):
        for fault in FAULT_CLASSES:
            have = sorted(groups.get((pct, fault.value), []), key=lambda r: r.cycle_id)
            k = int(counts[fault.value])
            if len(have) < k:
                raise PlanError(f"axis {axis} {pct}% {fault.value}: need {k} cycles, have {len(have)}")
            out.extend(have[:k])
    return out


@dataclass
class AnalysisCycle:
    """1-D analysis signal with its labels."""

    signal: np.ndarray
    sample_rate: float
    fault: FaultClass
    speed: SpeedDomain
    ident: str
    pair: DomainPair | None = None
    parents: tuple[str, ...] = ()


def original_id(fault, percent: int, cycle_id: int) -> str:
    return f"{FaultClass.parse(fault).value}/{int(percent)}/{int(cycle_id)}"


def warp(x: np.ndarray, ratio: float, length: int) -> np.ndarray:
    """Linear-interpolation resample reading ``x`` at positions ``k * ratio``."""
    pos = np.arange(length) * ratio
    return np.interp(pos, np.arange(len(x)), x)


def translate_pair(source: AnalysisCycle, reference: AnalysisCycle, alpha: float = 0.5) -> AnalysisCycle:
    """Warp ``source`` to the reference's speed and blend with the reference.

    A cycle at a lower speed lasts ``b / a`` times longer, so reading the
    source every ``b / a`` samples compresses it onto the reference time base.
    """
    if source.fault is not reference.fault:
        raise PlanError(f"class mismatch: {source.fault.value} vs {reference.fault.value}")
    if source.speed == reference.speed:
        raise PlanError(f"same-domain pair ({source.speed.percent},{reference.speed.percent}) is excluded")
    if not 0.0 <= alpha <= 1.0:
        raise PlanError(f"alpha must lie in [0, 1], got {alpha}")
    if source.sample_rate != reference.sample_rate:
        raise PlanError("source and reference sample rates differ")
    ratio = reference.speed.percent / source.speed.percent
    ref = np.asarray(reference.signal, dtype=float)
    warped = warp(np.asarray(source.signal, dtype=float), ratio, len(ref))
    if alpha == 1.0:
        out = warped
    elif alpha == 0.0:
        out = ref.copy()
    else:
        out = alpha * warped + (1.0 - alpha) * ref
    lo, hi = sorted((source.speed, reference.speed))
    return AnalysisCycle(out, reference.sample_rate, reference.fault, reference.speed,
                         f"{source.ident}->{reference.ident}", DomainPair(lo, hi),
                         (source.ident, reference.ident))


@dataclass
class ManifestEntry:
    id: str
    path: str
    cls: str
    origin: str                        # original | generated
    domains: list[int]
    pair: list[int] | None = None
    parents: list[str] = field(default_factory=list)
    alpha: float | None = None
    split: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class"] = d.pop("cls")
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ManifestEntry":
        d = dict(d)
        d["cls"] = d.pop("class")
        return cls(**d)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def to_list(self) -> list[dict]:
        return [e.to_dict() for e in self.entries]

    @classmethod
    def from_list(cls, rows) -> "DatasetManifest":
        return cls([ManifestEntry.from_dict(r) for r in rows])

    def select(self, origin: str | None = None, split: str | None = None, cls: str | None = None):
        return [e for e in self.entries
                if (origin is None or e.origin == origin)
                and (split is None or e.split == split)
                and (cls is None or e.cls == cls)]

    def counts(self, origin: str | None = None) -> dict[str, int]:
        out = {f.value: 0 for f in FAULT_CLASSES}
        for e in self.select(origin=origin):
            out[e.cls] += 1
        return out

    def validate(self) -> None:
        for e in self.entries:
            if e.origin == "generated":
                if e.pair is None or len(e.parents) != 2:
                    raise PlanError(f"generated entry {e.id} must reference one pair and two parents")
                if e.pair[0] == e.pair[1]:
                    raise PlanError(f"generated entry {e.id} has a same-domain pair")
            if e.split == "validation" and e.origin != "original":
                raise PlanError(f"validation entry {e.id} is not original")
            if e.split in ("train", "test") and e.origin != "generated":
                raise PlanError(f"{e.split} entry {e.id} is not generated")


def original_entry(fault, percent: int, cycle_id: int) -> ManifestEntry:
    cls = FaultClass.parse(fault).value
    return ManifestEntry(id=original_id(cls, percent, cycle_id),
                         path=f"original/{cls}/{percent}/{cycle_id}.png",
                         cls=cls, origin="original", domains=[int(percent)])


def job_alpha(alpha_schedule: Sequence[float], seed: int, key: tuple[int, ...]) -> float:
    if len(alpha_schedule) == 1:
        return float(alpha_schedule[0])
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))
    return float(alpha_schedule[int(rng.integers(len(alpha_schedule)))])


def _synthesize_pair(task):
    """Translate, render and store every combination of one (class, pair)."""
    cls, pair, sources, references, alpha_schedule, seed, root, render_fn = task
    fault = FaultClass.parse(cls)
    entries = []
    for s in sources:
        for r in references:
            src_id, ref_id = s.ident.rsplit("/", 1)[1], r.ident.rsplit("/", 1)[1]
            alpha = job_alpha(alpha_schedule, seed, (fault.index, pair.a.percent, pair.b.percent,
                                                     int(src_id), int(ref_id)))
            out = translate_pair(s, r, alpha)
            rel = f"generated/{cls}/{pair.label}/{src_id}_{ref_id}.png"
            if render_fn is not None:
                render_fn(out, Path(root) / rel)
            entries.append(ManifestEntry(id=f"{cls}/{pair.label}/{src_id}_{ref_id}", path=rel, cls=cls,
                                         origin="generated", domains=[pair.a.percent, pair.b.percent],
                                         pair=[pair.a.percent, pair.b.percent],
                                         parents=[s.ident, r.ident], alpha=alpha))
    return entries


def assemble_dataset(originals: Mapping[str, AnalysisCycle], plan: TransferPlan,
                     alpha_schedule: Sequence[float] = (0.5,), seed: int = 0, root=None,
                     render_fn: Callable | None = None, jobs: int = 1) -> DatasetManifest:
    """Original entries followed by every generated combination of the plan.

    ``render_fn(cycle, path)`` turns a translated cycle into an image file;
    with ``render_fn=None`` only the manifest is produced. Entries are merged
    in (class, pair, source id, reference id) order whatever ``jobs`` is.
    """
    if not alpha_schedule:
        raise PlanError("alpha schedule is empty")
    by_group: dict[tuple[str, int], list[AnalysisCycle]] = {}
    for cyc in originals.values():
        by_group.setdefault((cyc.fault.value, cyc.speed.percent), []).append(cyc)
    for v in by_group.values():
        v.sort(key=lambda c: int(c.ident.rsplit("/", 1)[1]))

    entries = []
    for fault in FAULT_CLASSES:
        for pct in sorted({p for (c, p) in by_group if c == fault.value}):
            for cyc in by_group[(fault.value, pct)]:
                entries.append(original_entry(fault, pct, int(cyc.ident.rsplit("/", 1)[1])))

    tasks = []
    for fault in FAULT_CLASSES:
        cls = fault.value
        if cls not in plan.counts:
            continue
        for pair in plan.pairs:
            src = by_group.get((cls, pair.a.percent), [])
            ref = by_group.get((cls, pair.b.percent), [])
            need_a, need_b = plan.counts[cls][pair.a.percent], plan.counts[cls][pair.b.percent]
            if len(src) < need_a or len(ref) < need_b:
                raise PlanError(f"missing parents for {cls} pair {pair.as_tuple()}: "
                                f"have {len(src)}/{len(ref)}, need {need_a}/{need_b}")
            tasks.append((cls, pair, src[:need_a], ref[:need_b], tuple(alpha_schedule), seed, root, render_fn))

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_synthesize_pair, tasks))
    else:
        results = [_synthesize_pair(t) for t in tasks]
    for r in results:
        entries.extend(r)
    return DatasetManifest(entries)


def split(manifest: DatasetManifest, train_fraction: float = 0.7, seed: int = 0) -> DatasetManifest:
    """Seeded per-class train/test partition of generated entries; originals -> validation."""
    if not 0.0 <= train_fraction <= 1.0:
        raise PlanError("train_fraction must lie in [0, 1]")
    generated = manifest.select(origin="generated")
    if not generated and train_fraction > 0:
        raise PlanError("no generated entries to split into train/test")
    out = [ManifestEntry(**asdict(e)) for e in manifest.entries]
    for e in out:
        if e.origin == "original":
            e.split = "validation"
    for fault in FAULT_CLASSES:
        idx = [i for i, e in enumerate(out) if e.origin == "generated" and e.cls == fault.value]
        if not idx:
            continue
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(fault.index,))))
        order = rng.permutation(len(idx))
        n_train = int(math.floor(train_fraction * len(idx) + 0.5))
        for rank, k in enumerate(order):
            out[idx[k]].split = "train" if rank < n_train else "test"
    return DatasetManifest(out)
