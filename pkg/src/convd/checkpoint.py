"""Checkpoint file format.

One UTF-8 JSON header line {format_version, config, manifest} terminated by
a single LF, followed by the raw little-endian float64 arrays concatenated
in manifest order. The manifest maps array name -> [rows, cols, byte offset
into the binary section]; 1-D arrays are stored as a single row. Round
trips are bit-exact.
"""

import json
import os

import numpy as np

from .attention import AttentionParams
from .errors import CheckpointError
from .model import ModelParams

FORMAT_VERSION = 1

_ARRAY_ORDER = (
    "ent",
    "rel",
    "attn_q",
    "attn_k",
    "attn_v",
    "attn_u",
    "w_fc",
    "b_fc",
    "w_out",
    "b_out",
    "bn_gamma",
    "bn_beta",
    "bn_mean",
    "bn_var",
)

_VECTOR_NAMES = frozenset(
    ("attn_v", "attn_u", "b_fc", "b_out", "bn_gamma", "bn_beta", "bn_mean", "bn_var")
)


def _all_arrays(params: ModelParams) -> dict:
    return {**params.named_arrays(), **params.running_arrays()}


def save_checkpoint(path, config: dict, params: ModelParams) -> None:
    arrays = _all_arrays(params)
    manifest = {}
    offset = 0
    blobs = []
    for name in _ARRAY_ORDER:
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        rows, cols = (1, arr.shape[0]) if arr.ndim == 1 else arr.shape
        manifest[name] = [rows, cols, offset]
        blob = arr.astype("<f8", copy=False).tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "config": config, "manifest": manifest},
        sort_keys=True,
        separators=(",", ":"),
    )
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (config dict, ModelParams). Raises CheckpointError on version
    mismatch, truncation, or a malformed header."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        body = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}")
    manifest = header.get("manifest", {})
    if set(manifest) != set(_ARRAY_ORDER):
        raise CheckpointError("checkpoint manifest is missing arrays")
    arrays = {}
    total = 0
    for name in _ARRAY_ORDER:
        rows, cols, offset = manifest[name]
        nbytes = rows * cols * 8
        if offset + nbytes > len(body):
            raise CheckpointError(f"checkpoint truncated inside array {name!r}")
        flat = np.frombuffer(body, dtype="<f8", count=rows * cols, offset=offset)
        if name in _VECTOR_NAMES:
            arrays[name] = flat.astype(np.float64)
        else:
            arrays[name] = flat.astype(np.float64).reshape(rows, cols)
        total = max(total, offset + nbytes)
    if total != len(body):
        raise CheckpointError("checkpoint has trailing or missing bytes")
    config = header["config"]
    params = ModelParams(
        ent=arrays["ent"],
        rel=arrays["rel"],
        attn=AttentionParams(
            a_q=arrays["attn_q"],
            a_k=arrays["attn_k"],
            a_v=arrays["attn_v"],
            u=arrays["attn_u"],
            lam=float(config.get("priori_weight", 0.0)),
        ),
        w_fc=arrays["w_fc"],
        b_fc=arrays["b_fc"],
        w_out=arrays["w_out"],
        b_out=arrays["b_out"],
        bn_gamma=arrays["bn_gamma"],
        bn_beta=arrays["bn_beta"],
        bn_mean=arrays["bn_mean"],
        bn_var=arrays["bn_var"],
    )
    return config, params
