"""Binary trajectory snapshots.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON
header (schema version, mesh descriptor, config hash and text, scalar
trajectory metadata, array manifest), then the raw array payloads in
manifest order as little-endian values.  Writing is temp-then-rename so a
partially written file is never observable under the final name.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .diagnostics import LEDGER_COLUMNS
from .errors import SnapshotFormatError
from .scheme import TrajectoryRecord

MAGIC = b"STFSI\x00\x01\x00"
SCHEMA_VERSION = 1

_ARRAYS = (
    ("u", "<f8"),
    ("v", "<f8"),
    ("v_half", "<f8"),
    ("eta", "<f8"),
    ("eta_star", "<f8"),
    ("theta", "<i8"),
    ("j_min", "<f8"),
    ("eta_norm", "<f8"),
    ("dW", "<f8"),
    ("ledger", "<f8"),
)


def write_snapshot(path: str, traj: TrajectoryRecord, config_text: str, config_hash: str):
    """Serialize one trajectory atomically."""
    header = {
        "schema": SCHEMA_VERSION,
        "config_hash": config_hash,
        "config_text": config_text,
        "ledger_columns": list(LEDGER_COLUMNS),
        "scalars": {
            "dt": traj.dt,
            "n_steps": traj.n_steps,
            "delta1": traj.delta1,
            "delta2": traj.delta2,
            "s_exp": traj.s_exp,
            "seed": traj.seed,
            "stop_step": traj.stop_step,
            "failed": bool(traj.failed),
            "completed_steps": traj.completed_steps,
        },
        "arrays": [
            {"name": name, "dtype": dt, "shape": list(getattr(traj, name).shape)}
            for name, dt in _ARRAYS
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    d = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".snap-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for name, dt in _ARRAYS:
                fh.write(np.ascontiguousarray(getattr(traj, name), dtype=dt).tobytes())
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_snapshot(path: str):
    """Read a snapshot; returns (TrajectoryRecord, header dict)."""
    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(MAGIC))
            if magic != MAGIC:
                raise SnapshotFormatError(f"{path}: not a snapshot file")
            (hlen,) = struct.unpack("<I", fh.read(4))
            try:
                header = json.loads(fh.read(hlen).decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise SnapshotFormatError(f"{path}: corrupt header") from exc
            if header.get("schema") != SCHEMA_VERSION:
                raise SnapshotFormatError(
                    f"{path}: schema {header.get('schema')} != {SCHEMA_VERSION}"
                )
            if header.get("ledger_columns") != list(LEDGER_COLUMNS):
                raise SnapshotFormatError(f"{path}: ledger column registry mismatch")
            arrays = {}
            for spec in header["arrays"]:
                shape = tuple(spec["shape"])
                count = int(np.prod(shape)) if shape else 1
                dtype = np.dtype(spec["dtype"])
                buf = fh.read(count * dtype.itemsize)
                if len(buf) != count * dtype.itemsize:
                    raise SnapshotFormatError(f"{path}: truncated array {spec['name']}")
                arrays[spec["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    except OSError as exc:
        raise SnapshotFormatError(f"{path}: unreadable ({exc})") from exc
    except struct.error as exc:
        raise SnapshotFormatError(f"{path}: truncated header") from exc

    sc = header["scalars"]
    traj = TrajectoryRecord(
        dt=sc["dt"],
        n_steps=sc["n_steps"],
        delta1=sc["delta1"],
        delta2=sc["delta2"],
        s_exp=sc["s_exp"],
        seed=sc["seed"],
        u=arrays["u"],
        v=arrays["v"],
        v_half=arrays["v_half"],
        eta=arrays["eta"],
        eta_star=arrays["eta_star"],
        theta=arrays["theta"],
        j_min=arrays["j_min"],
        eta_norm=arrays["eta_norm"],
        dW=arrays["dW"],
        ledger=arrays["ledger"],
        stop_step=sc["stop_step"],
        failed=sc["failed"],
        completed_steps=sc["completed_steps"],
    )
    return traj, header


def write_json_atomic(path: str, payload: dict):
    d = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".json-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv_atomic(path: str, rows: list, fieldnames: list):
    import csv

    d = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".csv-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fieldnames)
            w.writeheader()
            for r in rows:
                w.writerow(r)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
