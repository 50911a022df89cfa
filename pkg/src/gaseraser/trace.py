"""Binary attention traces, so the pipeline can run offline on dumped models.

Layout (all little-endian):

    header, 40 bytes
        magic       4s   b"GSTR"
        version     u16  1
        flags       u16  bit 0 set when every layer has its own hidden state
        L, H, S, d  u32 each
        img_start   u32
        img_end     u32
        reserved    u32  0
    payload, L blocks of
        hidden      f32[S, d]
        attention   f32[H, S, S]

A plain-text sidecar ``<path>.meta`` (INI style, one ``[trace]`` section)
holds the token roles, model name, monitored dims and any extra string keys.
"""

from __future__ import annotations

import configparser
import os
import struct
import tempfile
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path

import numpy as np

from .core import AttentionTensor, TokenContext, new_attention_tensor

MAGIC = b"GSTR"
VERSION = 1
HEADER = struct.Struct("<4sHHIIIIIII")
FLAG_LAYER_HIDDEN = 1
READ_TOL = 1e-4
F32 = np.dtype("<f4")


class TraceError(ValueError):
    pass


class BadMagic(TraceError):
    pass


class VersionMismatch(TraceError):
    pass


class TruncatedPayload(TraceError):
    pass


class TrailingBytes(TraceError):
    pass


class IoFailure(OSError):
    pass


@dataclass
class TraceMetadata:
    model_name: str = ""
    monitored_dims: tuple[int, ...] = ()
    roles: tuple[str, ...] | None = None
    extra: dict[str, str] = field(default_factory=dict)
    hidden: np.ndarray | None = field(default=None, repr=False)  # (L, S, d), filled by read_trace
    flags: int = 0
    version: int = VERSION


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def _atomic_write(path: Path, data: bytes) -> None:
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def _sidecar_text(meta: TraceMetadata, ctx: TokenContext) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    section = {
        "model": meta.model_name,
        "monitored_dims": ", ".join(str(k) for k in meta.monitored_dims),
        "roles": " ".join(ctx.roles),
    }
    for key, value in meta.extra.items():
        if key in section:
            raise ValueError(f"extra key {key!r} clashes with a reserved sidecar key")
        section[key] = str(value)
    cp["trace"] = section
    buf = StringIO()
    cp.write(buf)
    return buf.getvalue()


def write_trace(
    ctx: TokenContext,
    tensors: list[AttentionTensor],
    metadata: TraceMetadata | None,
    path,
    hidden: np.ndarray | None = None,
) -> None:
    """Write ``tensors`` (one per layer) and hidden states to ``path``.

    ``hidden`` is (L, S, d); without it every layer stores ``ctx.embeddings``
    and flag bit 0 stays clear. Trace and sidecar are each replaced atomically.
    """
    path = Path(path)
    meta = metadata or TraceMetadata()
    if not tensors:
        raise ValueError("need at least one layer")
    L, H, S, d = len(tensors), tensors[0].H, ctx.S, ctx.d
    for t in tensors:
        if t.weights.shape != (H, S, S):
            raise ValueError(f"layer {t.layer_index}: shape {t.weights.shape}, expected {(H, S, S)}")
    flags = 0
    if hidden is None:
        hidden = np.broadcast_to(ctx.embeddings, (L, S, d))
    else:
        hidden = np.asarray(hidden)
        if hidden.shape != (L, S, d):
            raise ValueError(f"hidden has shape {hidden.shape}, expected {(L, S, d)}")
        flags |= FLAG_LAYER_HIDDEN
    start, end = ctx.image_span
    parts = [HEADER.pack(MAGIC, VERSION, flags, L, H, S, d, start, end, 0)]
    for layer, t in enumerate(tensors):
        parts.append(hidden[layer].astype(F32).tobytes())
        parts.append(t.weights.astype(F32).tobytes())
    _atomic_write(path, b"".join(parts))
    _atomic_write(sidecar_path(path), _sidecar_text(meta, ctx).encode())


def _read_sidecar(path: Path) -> TraceMetadata:
    meta = TraceMetadata()
    side = sidecar_path(path)
    if not side.exists():
        return meta
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(side, encoding="utf-8")
    except (OSError, configparser.Error) as e:
        raise TraceError(f"unreadable sidecar {side}: {e}") from e
    if "trace" not in cp:
        raise TraceError(f"sidecar {side} has no [trace] section")
    sec = dict(cp["trace"])
    meta.model_name = sec.pop("model", "")
    dims = sec.pop("monitored_dims", "").replace(",", " ").split()
    meta.monitored_dims = tuple(int(k) for k in dims)
    roles = sec.pop("roles", "").split()
    meta.roles = tuple(roles) or None
    meta.extra = sec
    return meta


def read_trace(path, tol: float = READ_TOL) -> tuple[TokenContext, list[AttentionTensor], TraceMetadata]:
    """Load and validate a trace; returns the layer-0 context, one tensor per layer and metadata."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            head = f.read(HEADER.size)
            if len(head) < 6 or head[:4] != MAGIC:
                raise BadMagic(f"{path}: not a trace file")
            (version,) = struct.unpack_from("<H", head, 4)
            if version != VERSION:
                raise VersionMismatch(f"{path}: version {version}, this reader handles {VERSION}")
            if len(head) < HEADER.size:
                raise TruncatedPayload(f"{path}: header cut short")
            _, _, flags, L, H, S, d, start, end, _ = HEADER.unpack(head)
            per_layer = (S * d + H * S * S) * F32.itemsize
            payload = f.read(L * per_layer + 1)
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if len(payload) < L * per_layer:
        raise TruncatedPayload(f"{path}: payload has {len(payload)} bytes, header implies {L * per_layer}")
    if len(payload) > L * per_layer:
        raise TrailingBytes(f"{path}: bytes past the end of the payload")

    meta = _read_sidecar(path)
    meta.flags, meta.version = flags, version
    hidden = np.empty((L, S, d))
    tensors = []
    offset = 0
    for layer in range(L):
        block = np.frombuffer(payload, F32, S * d + H * S * S, offset)
        offset += per_layer
        hidden[layer] = block[: S * d].reshape(S, d)
        w = block[S * d :].reshape(H, S, S).astype(np.float64)
        tensors.append(new_attention_tensor(w, layer_index=layer, tol=tol))
    meta.hidden = hidden
    ctx = TokenContext(hidden[0], (start, end), meta.roles)
    return ctx, tensors, meta


def layer_contexts(ctx: TokenContext, meta: TraceMetadata) -> list[TokenContext]:
    """One context per layer, built from the stored hidden states."""
    if meta.hidden is None:
        raise ValueError("metadata carries no hidden states")
    return [TokenContext(h, ctx.image_span, ctx.roles) for h in meta.hidden]


def export_toy_trace(model, ctx: TokenContext, path, monitored_dims=(), model_name: str = "toy") -> None:
    """Dump an unintervened toy forward pass, the way an external model would be dumped."""
    from .toy import forward

    result = forward(model, ctx)
    meta = TraceMetadata(model_name=model_name, monitored_dims=tuple(monitored_dims))
    write_trace(ctx, result.attentions, meta, path, hidden=np.stack(result.hidden))
