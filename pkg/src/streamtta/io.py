"""On-disk formats: embedding matrices, labels, hyperparameter configs,
experiment reports and adapter state snapshots.

Binary embedding layout (all little-endian)::

    offset 0   8 bytes   magic b"EMOTTA01"
    offset 8   uint32    dim   (>= 1)
    offset 12  uint64    count
    offset 20  float32[count * dim], row-major

Files whose name ends in ``.csv`` are read and written as plain text instead,
one comma-separated vector per line.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from .core import AdapterState, CovarianceRule, HyperParams, StreamTTAError

MAGIC = b"EMOTTA01"
HEADER = struct.Struct("<8sIQ")
_F32 = np.dtype("<f4")


class FormatError(StreamTTAError, ValueError):
    pass


class ConfigError(StreamTTAError, ValueError):
    pass


def _is_csv(path) -> bool:
    return str(path).lower().endswith(".csv")


def write_embeddings(path, vectors) -> None:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2:
        raise FormatError(f"expected a count x dim array, got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise FormatError("embedding dimension must be at least 1")
    data = arr.astype(_F32)
    if _is_csv(path):
        with open(path, "w") as fh:
            for row in data:
                fh.write(",".join(f"{float(v):.9g}" for v in row) + "\n")
        return
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, arr.shape[1], arr.shape[0]))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_header(fh, file_size: int) -> tuple[int, int]:
    raw = fh.read(HEADER.size)
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic: expected {MAGIC!r}, found {raw[:len(MAGIC)]!r}")
    if len(raw) < HEADER.size:
        raise FormatError(
            f"truncated header: expected {HEADER.size} bytes, found {len(raw)}"
        )
    _, dim, count = HEADER.unpack(raw)
    if dim < 1:
        raise FormatError("header declares dim = 0")
    expected = count * dim * _F32.itemsize
    present = file_size - HEADER.size
    row_bytes = dim * _F32.itemsize
    if present < expected:
        raise FormatError(
            f"truncated payload: header declares {count} rows of dim {dim} "
            f"({expected} bytes) but only {present // row_bytes} rows "
            f"({present} bytes) are present"
        )
    if present > expected:
        raise FormatError(
            f"{present - expected} unexpected trailing bytes after {count} rows of dim {dim}"
        )
    return dim, count


def read_embeddings(path) -> np.ndarray:
    """Read a count x dim float64 array (values carry binary32 precision)."""
    if _is_csv(path):
        return _read_csv(path)
    with open(path, "rb") as fh:
        size = os.fstat(fh.fileno()).st_size
        dim, count = read_header(fh, size)
        data = np.fromfile(fh, dtype=_F32, count=count * dim)
    return data.reshape(count, dim).astype(np.float64)


def _read_csv(path) -> np.ndarray:
    rows = []
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
            if dim is None:
                dim = len(row)
            elif len(row) != dim:
                raise FormatError(f"{path}:{lineno}: expected {dim} values, found {len(row)}")
            rows.append(row)
    if dim is None:
        raise FormatError(f"{path}: no vectors found")
    return np.array(rows, dtype=np.float64)


def read_labels(path) -> list[int]:
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.strip()
            if not tok or tok.startswith("#"):
                continue
            try:
                labels.append(int(tok, 10))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: not an integer label: {tok!r}") from None
    return labels


def write_labels(path, labels) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{int(v)}\n" for v in labels)


_BOOL_WORDS = {
    "true": True, "yes": True, "on": True, "1": True,
    "false": False, "no": False, "off": False, "0": False,
}


def _parse_value(key: str, raw: str, kind):
    if kind is bool:
        try:
            return _BOOL_WORDS[raw.lower()]
        except KeyError:
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}") from None
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if kind is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if kind is CovarianceRule:
        try:
            return CovarianceRule(raw.lower())
        except ValueError:
            allowed = ", ".join(r.value for r in CovarianceRule)
            raise ConfigError(f"{key}: unknown value {raw!r} (expected one of {allowed})") from None
    raise AssertionError(kind)


_CONFIG_KINDS = {
    "alpha": float,
    "beta": float,
    "epsilon": float,
    "mean_update": bool,
    "cov_update": bool,
    "alm_prior_weighting": bool,
    "use_prior_in_prediction": bool,
    "covariance_rule": CovarianceRule,
    "refactor_period": int,
    "normalize_embeddings": bool,
}
assert set(_CONFIG_KINDS) == {f.name for f in fields(HyperParams)}


def parse_config(text: str, source: str = "<config>") -> HyperParams:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KINDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw, _CONFIG_KINDS[key])
    try:
        return HyperParams(**values)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def read_config(path) -> HyperParams:
    return parse_config(Path(path).read_text(), str(path))


def write_config(path, hyper: HyperParams) -> None:
    lines = [f"{k} = {str(v).lower() if isinstance(v, bool) else v}" for k, v in hyper.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n")


def write_report(path, report) -> None:
    """Write one JSON record per line; ``report`` is a dict or a list of dicts."""
    records = report if isinstance(report, list) else [report]
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, allow_nan=True) + "\n")


def read_report(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_state(path, state: AdapterState) -> None:
    Path(path).write_text(json.dumps(state.to_dict()))


def load_state(path) -> AdapterState:
    return AdapterState.from_dict(json.loads(Path(path).read_text()))
