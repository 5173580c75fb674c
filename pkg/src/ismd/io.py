"""File formats and atomic writes."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np


class ArtifactError(OSError):
    """I/O failure with the offending path attached."""


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise ArtifactError(f"cannot write {path}: {exc}") from exc


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dump_json(obj))


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc


def _csv_bytes(header, columns) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in zip(*columns):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue().encode()


def _read_csv(path, header):
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0] != list(header):
        raise ValueError(f"{path}: expected header {','.join(header)}")
    data = np.array(rows[1:], dtype=float).reshape(-1, len(header))
    return data.T


CYCLE_HEADER = ("t_s", "i_a", "i_b", "i_c")
DQ0_HEADER = ("t_s", "theta_rad", "i_d", "i_q", "i_0")


def write_cycle_csv(cycle, path) -> None:
    path = Path(path)
    atomic_write_bytes(path, _csv_bytes(CYCLE_HEADER, [cycle.times, cycle.i_a, cycle.i_b, cycle.i_c]))
    write_json(path.with_suffix(".json"), cycle.metadata())


def read_cycle_csv(path):
    from .sigsim import FaultClass, SpeedDomain, ThreePhaseCycle

    path = Path(path)
    meta = read_json(path.with_suffix(".json"))
    _, a, b, c = _read_csv(path, CYCLE_HEADER)
    return ThreePhaseCycle(a, b, c, float(meta["sample_rate_hz"]), SpeedDomain(int(meta["speed_percent"])),
                           FaultClass(meta["fault"]), int(meta["axis"]), int(meta["cycle_id"]), int(meta["seed"]))


def write_dq0_csv(dq, path) -> None:
    path = Path(path)
    atomic_write_bytes(path, _csv_bytes(DQ0_HEADER, [dq.times, dq.theta, dq.i_d, dq.i_q, dq.i_0]))
    write_json(path.with_suffix(".json"), dict(dq.source))


def read_dq0_csv(path):
    from .dq0 import Dq0Cycle

    path = Path(path)
    meta = read_json(path.with_suffix(".json"))
    _, theta, d, q, z = _read_csv(path, DQ0_HEADER)
    return Dq0Cycle(d, q, z, theta, float(meta["sample_rate_hz"]), meta)


def write_signal_store(path, signals: dict, meta: dict | None = None, dtype: str = "<f8") -> None:
    """Concatenated little-endian arrays in ``<path>.bin`` with a JSON index in ``<path>.json``."""
    path = Path(path)
    index, parts, offset = {}, [], 0
    for key, arr in signals.items():
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        index[key] = {"offset": offset, "length": int(len(arr)), **((meta or {}).get(key, {}))}
        parts.append(raw)
        offset += len(raw)
    atomic_write_bytes(path.with_suffix(".bin"), b"".join(parts))
    write_json(path.with_suffix(".json"), {"dtype": dtype, "entries": index})


def read_signal_store(path) -> tuple[dict, dict]:
    path = Path(path)
    header = read_json(path.with_suffix(".json"))
    try:
        raw = path.with_suffix(".bin").read_bytes()
    except OSError as exc:
        raise ArtifactError(f"cannot read {path.with_suffix('.bin')}: {exc}") from exc
    dtype = np.dtype(header["dtype"])
    signals = {}
    for key, ent in header["entries"].items():
        signals[key] = np.frombuffer(raw, dtype=dtype, count=ent["length"], offset=ent["offset"]).astype(float)
    return signals, header["entries"]
