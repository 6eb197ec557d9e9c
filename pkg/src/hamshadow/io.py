"""Snapshot streams, CSV tables and JSON summaries."""
from __future__ import annotations

import csv
import json
import math
import os

from .errors import SnapshotParseError
from .rmt import MAX_QUBITS
from .shadows import Snapshot

SNAPSHOT_VERSION = 1
_FIELDS = ("version", "N", "t", "seed", "b")


def snapshot_record(s: Snapshot):
    return {
        "version": SNAPSHOT_VERSION,
        "N": s.num_qubits,
        "t": format(s.t, ".17g"),
        "seed": format(s.seed, "#x"),
        "b": s.outcome,
    }


def persist_snapshots(snapshots, path):
    """Write one JSON record per line: version, N, t, seed (hex), b (bitstring)."""
    with open(path, "w") as fh:
        for s in snapshots:
            fh.write(json.dumps(snapshot_record(s), separators=(",", ":")) + "\n")


def parse_snapshot_line(line, lineno=0) -> Snapshot:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SnapshotParseError(lineno, f"invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise SnapshotParseError(lineno, "record is not an object")
    missing = [k for k in _FIELDS if k not in rec]
    if missing:
        raise SnapshotParseError(lineno, f"missing field(s) {', '.join(missing)}")
    if rec["version"] != SNAPSHOT_VERSION:
        raise SnapshotParseError(lineno, f"unsupported snapshot version {rec['version']!r}")
    n = rec["N"]
    if isinstance(n, bool) or not isinstance(n, int) or not 1 <= n <= MAX_QUBITS:
        raise SnapshotParseError(lineno, f"invalid qubit count {n!r}")
    try:
        t = float(rec["t"])
        seed = int(rec["seed"], 16)
    except (TypeError, ValueError):
        raise SnapshotParseError(lineno, "t must be decimal and seed hexadecimal") from None
    if not (math.isfinite(t) and t >= 0):
        raise SnapshotParseError(lineno, f"invalid time {rec['t']!r}")
    if not 0 <= seed < 2**64:
        raise SnapshotParseError(lineno, "seed does not fit in 64 bits")
    b = rec["b"]
    if not isinstance(b, str) or len(b) != n or any(c not in "01" for c in b):
        raise SnapshotParseError(lineno, f"outcome {b!r} is not a bitstring of length {n}")
    return Snapshot(seed, t, b, n)


def load_snapshots(path):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                out.append(parse_snapshot_line(line, lineno))
    return out


def write_csv(path, columns, rows, comment=None):
    """CSV with an optional leading ``# ...`` comment line and a header row."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.DictWriter(fh, fieldnames=list(columns), quoting=csv.QUOTE_MINIMAL,
                           extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})


def read_csv(path):
    """Rows of a CSV written by :func:`write_csv`, comment lines skipped."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_json_safe(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
