"""Attention block: per-pixel channel mixing of ``O`` and ``I_l`` into a (0, 1) weight map.

    T = sigmoid(head . relu(W_o O + b_o + W_i I_l + b_i) + b_h)

Weights archive layout: a sequence of records, each
``uint32 name_len | utf-8 name | TNSR record``. The entries ``branchO``,
``branchI`` and ``head`` hold ``[matrix | bias]`` with the bias as the last
column, i.e. TNSR tensors of height ``C_out`` and width ``C_in + 1``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptHeader, DimensionMismatch, MissingEntry, ShapeMismatch, WeightDimensionMismatch
from .imageio import PathLike, atomic_write, encode_tensor, read_tensor_record
from .tensor import Tensor

ENTRIES = ("branchO", "branchI", "head")
_NAME_LEN = struct.Struct("<I")


@dataclass(frozen=True)
class AttentionWeights:
    branch_o: np.ndarray
    bias_o: np.ndarray
    branch_i: np.ndarray
    bias_i: np.ndarray
    head: np.ndarray
    bias_h: float

    def __post_init__(self):
        for name in ("branch_o", "bias_o", "branch_i", "bias_i", "head"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "bias_h", float(self.bias_h))
        if not np.isfinite(self.bias_h):
            raise ValueError("bias_h must be finite")

    @property
    def channels(self) -> int:
        return self.branch_o.shape[1]

    def check(self, c: int) -> None:
        """Raise unless the weights apply to ``c``-channel inputs."""
        expected = {
            "branch_o": (c, c),
            "bias_o": (c,),
            "branch_i": (c, c),
            "bias_i": (c,),
            "head": (c,),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise WeightDimensionMismatch(f"{name} has shape {got}, expected {shape} for C={c}")

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [self.branch_o.ravel(), self.bias_o, self.branch_i.ravel(), self.bias_i, self.head, [self.bias_h]]
        )

    @classmethod
    def unflatten(cls, vec: np.ndarray, c: int) -> "AttentionWeights":
        vec = np.asarray(vec, dtype=np.float64)
        sizes = [c * c, c, c * c, c, c, 1]
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return cls(parts[0].reshape(c, c), parts[1], parts[2].reshape(c, c), parts[3], parts[4], parts[5][0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, AttentionWeights):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("branch_o", "bias_o", "branch_i", "bias_i", "head", "bias_h")
        )

    __hash__ = None


def default_weights(c: int) -> AttentionWeights:
    """Untrained initialisation: branches ``identity / C``, head ``1 / C``, zero biases."""
    eye = np.eye(c) / c
    zeros = np.zeros(c)
    return AttentionWeights(eye, zeros, eye.copy(), zeros.copy(), np.full(c, 1.0 / c), 0.0)


def random_weights(c: int, rng: np.random.Generator, scale: float = 1.0) -> AttentionWeights:
    n = 2 * c * c + 3 * c + 1
    return AttentionWeights.unflatten(rng.normal(0.0, scale, n), c)


@dataclass
class AttentionCache:
    O: np.ndarray
    I: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray
    T: np.ndarray


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only; never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def attention_forward(O: np.ndarray, I: np.ndarray, w: AttentionWeights) -> AttentionCache:
    """float64 forward on ``(C, H, W)`` arrays, keeping intermediates."""
    if O.shape != I.shape:
        raise ShapeMismatch(f"attention inputs differ: {O.shape} vs {I.shape}")
    w.check(O.shape[0])
    pre = (
        np.einsum("oc,chw->ohw", w.branch_o, O)
        + w.bias_o[:, None, None]
        + np.einsum("oc,chw->ohw", w.branch_i, I)
        + w.bias_i[:, None, None]
    )
    hidden = np.maximum(pre, 0.0)
    logits = np.einsum("c,chw->hw", w.head, hidden)[None] + w.bias_h
    return AttentionCache(O, I, pre, hidden, _sigmoid(logits))


def attention_block(O: Tensor, I_l: Tensor, w: AttentionWeights) -> Tensor:
    """Single-channel attention map in (0, 1) from equally shaped ``O`` and ``I_l``.

    The float32 result is nudged inside the open interval so that it stays a
    valid (strictly positive) weight even when the logits saturate.
    """
    T = attention_forward(O.data.astype(np.float64), I_l.data.astype(np.float64), w).T
    dtype = np.result_type(O.dtype, I_l.dtype)
    T = T.astype(dtype)
    tiny = np.finfo(dtype).tiny
    T = np.clip(T, tiny, np.nextafter(dtype.type(1), dtype.type(0)))
    return Tensor._wrap(T)


# -- archive -----------------------------------------------------------------


def _blocks(w: AttentionWeights) -> dict[str, np.ndarray]:
    return {
        "branchO": np.column_stack([w.branch_o, w.bias_o]),
        "branchI": np.column_stack([w.branch_i, w.bias_i]),
        "head": np.append(w.head, w.bias_h)[None],
    }


def encode_weights(w: AttentionWeights) -> bytes:
    out = bytearray()
    for name, block in _blocks(w).items():
        raw = name.encode("utf-8")
        out += _NAME_LEN.pack(len(raw)) + raw
        out += encode_tensor(Tensor(block[None].astype(np.float32)))
    return bytes(out)


def decode_weights(buf: bytes) -> AttentionWeights:
    fh = io.BytesIO(buf)
    entries: dict[str, np.ndarray] = {}
    while True:
        head = fh.read(_NAME_LEN.size)
        if not head:
            break
        if len(head) < _NAME_LEN.size:
            raise CorruptHeader("truncated entry name length")
        (n,) = _NAME_LEN.unpack(head)
        raw = fh.read(n)
        if len(raw) < n:
            raise CorruptHeader("truncated entry name")
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptHeader("entry name is not valid UTF-8") from None
        t = read_tensor_record(fh)
        if t.channels != 1:
            raise DimensionMismatch(f"entry {name!r} must be a single-plane tensor")
        entries[name] = t.data[0].astype(np.float64)
    for name in ENTRIES:
        if name not in entries:
            raise MissingEntry(f"weights archive lacks entry {name!r}")
    bo, bi, hd = entries["branchO"], entries["branchI"], entries["head"]
    c = bo.shape[0]
    if bo.shape != (c, c + 1) or bi.shape != (c, c + 1) or hd.shape != (1, c + 1):
        raise DimensionMismatch(
            f"inconsistent block shapes branchO={bo.shape} branchI={bi.shape} head={hd.shape}"
        )
    return AttentionWeights(bo[:, :c], bo[:, c], bi[:, :c], bi[:, c], hd[0, :c], hd[0, c])


def save_weights(path: PathLike, w: AttentionWeights) -> None:
    atomic_write(path, encode_weights(w))


def load_weights(path: PathLike) -> AttentionWeights:
    with open(path, "rb") as fh:
        return decode_weights(fh.read())
