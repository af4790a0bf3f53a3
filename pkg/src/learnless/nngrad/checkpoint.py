"""Checkpoint container: a zip of ``.npy`` members plus a JSON header.

Members are written with a fixed timestamp and in sorted order, so saving the
same state twice yields identical bytes.
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .model import AdamState, ModelParams

FORMAT = "learnless-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_member(zf: zipfile.ZipFile, name: str, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path: str | Path, params: ModelParams, meta: Optional[dict[str, Any]] = None) -> Path:
    path = Path(path)
    header = {
        "format": FORMAT,
        "version": VERSION,
        "arch": params.arch,
        "in_channels": params.in_channels,
        "lr": params.lr,
        "betas": list(params.betas),
        "eps": params.eps,
        "adam_step": params.adam.step,
        "tensors": sorted(params.params),
        "meta": meta or {},
    }
    with zipfile.ZipFile(path, "w") as zf:
        _write_member(zf, "header.json", json.dumps(header, sort_keys=True, indent=1).encode())
        for name in sorted(params.params):
            _write_member(zf, f"param/{name}.npy", _npy_bytes(params.params[name]))
            _write_member(zf, f"adam_m/{name}.npy", _npy_bytes(params.adam.m[name]))
            _write_member(zf, f"adam_v/{name}.npy", _npy_bytes(params.adam.v[name]))
    return path


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict[str, Any]]:
    """Returns ``(params, meta)``."""
    path = Path(path)
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        if header.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")

        def read(kind, name):
            return np.lib.format.read_array(io.BytesIO(zf.read(f"{kind}/{name}.npy")), allow_pickle=False)

        names = header["tensors"]
        adam = AdamState(
            m={n: read("adam_m", n) for n in names},
            v={n: read("adam_v", n) for n in names},
            step=int(header["adam_step"]),
        )
        params = ModelParams(
            arch=header["arch"],
            in_channels=int(header["in_channels"]),
            params={n: read("param", n) for n in names},
            lr=float(header["lr"]),
            betas=tuple(header["betas"]),
            eps=float(header["eps"]),
            adam=adam,
        )
    return params, header["meta"]
