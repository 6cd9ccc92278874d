"""Block-sampling self-attention and the full self-attention oracle.

Both operators act on an (H, W, C_in) feature grid. Q/K/V come from 1x1
convolutions (a per-position linear map C_in -> C_h); the output projection Z
maps C_h back to C_in and the result is added to the input residually.

Full self-attention builds the (HW, HW) row-softmax attention matrix. The
block-sampled variant computes attention only for the M query positions
inside one contiguous rectangle, so the matrix shrinks to (M, HW); all other
positions pass their V feature through unchanged before the Z projection.
With the block covering the whole grid the two operators coincide. The
rectangle is resampled every training step from a seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import BlockOutOfBounds, DimensionMismatch

BYTES_F32 = 4


@dataclass
class AttentionProblem:
    """Feature grid plus projection kernels and the sample budget M."""

    x: np.ndarray  # (H, W, C_in)
    wq: np.ndarray  # (C_in, C_h)
    bq: np.ndarray  # (C_h,)
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wz: np.ndarray  # (C_h, C_in)
    bz: np.ndarray  # (C_in,)
    m: int = 1

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        h, w, cin = self.x.shape
        ch = self.wq.shape[1]
        for name, arr, shape in (
            ("wq", self.wq, (cin, ch)),
            ("bq", self.bq, (ch,)),
            ("wk", self.wk, (cin, ch)),
            ("bk", self.bk, (ch,)),
            ("wv", self.wv, (cin, ch)),
            ("bv", self.bv, (ch,)),
            ("wz", self.wz, (ch, cin)),
            ("bz", self.bz, (cin,)),
        ):
            if np.asarray(arr).shape != shape:
                raise DimensionMismatch(f"{name} must have shape {shape}")
        if not (1 <= self.m <= h * w):
            raise ValueError(f"m must lie in [1, {h * w}], got {self.m}")

    @property
    def dims(self):
        return self.x.shape[:2]

    @property
    def c_in(self) -> int:
        return self.x.shape[2]

    @property
    def c_hidden(self) -> int:
        return self.wq.shape[1]

    @classmethod
    def random(cls, h, w, c_in, m, seed=0, c_hidden=None) -> "AttentionProblem":
        """Seeded random problem; C_h defaults to C_in / 2 (at least 1)."""
        ch = max(1, c_in // 2) if c_hidden is None else c_hidden
        rng = np.random.default_rng(seed)
        g = lambda *shape: rng.normal(0.0, 0.5, size=shape)
        return cls(
            g(h, w, c_in),
            g(c_in, ch), g(ch),
            g(c_in, ch), g(ch),
            g(c_in, ch), g(ch),
            g(ch, c_in), g(c_in),
            m=m,
        )


@dataclass
class BlockSampleSpec:
    """A bh x bw rectangle of query positions anchored at (row, col)."""

    row: int
    col: int
    bh: int
    bw: int

    def check(self, dims) -> None:
        h, w = dims
        if not (
            0 <= self.row
            and 0 <= self.col
            and self.row + self.bh <= h
            and self.col + self.bw <= w
            and self.bh >= 1
            and self.bw >= 1
        ):
            raise BlockOutOfBounds(
                f"block {self.bh}x{self.bw} at ({self.row}, {self.col}) "
                f"does not fit a {h}x{w} grid"
            )

    def flat_indices(self, dims) -> np.ndarray:
        self.check(dims)
        _, w = dims
        rows = np.arange(self.row, self.row + self.bh)
        cols = np.arange(self.col, self.col + self.bw)
        return (rows[:, None] * w + cols[None, :]).reshape(-1)

    @property
    def m(self) -> int:
        return self.bh * self.bw


def block_shape(h: int, w: int, m: int):
    """Nearest-to-square factorization of m that fits an h x w grid.

    Falls back to a single-row run when no 2-D factorization fits; raises
    BlockOutOfBounds when m cannot be laid out at all.
    """
    best = None
    for bh in range(1, m + 1):
        if m % bh:
            continue
        bw = m // bh
        if bh > h or bw > w:
            continue
        score = abs(bh - bw)
        if best is None or score < best[0]:
            best = (score, bh, bw)
    if best is None:
        raise BlockOutOfBounds(f"no {m}-element block fits a {h}x{w} grid")
    return best[1], best[2]


def sample_block_spec(dims, m: int, rng: np.random.Generator) -> BlockSampleSpec:
    """Uniformly random in-bounds anchor for a near-square m-element block."""
    h, w = dims
    bh, bw = block_shape(h, w, m)
    row = int(rng.integers(0, h - bh + 1))
    col = int(rng.integers(0, w - bw + 1))
    return BlockSampleSpec(row, col, bh, bw)


def full_block_spec(dims) -> BlockSampleSpec:
    """The degenerate block covering the whole grid (exact attention)."""
    h, w = dims
    return BlockSampleSpec(0, 0, h, w)


def _conv1x1(x, w, b, dims):
    h, ww = dims
    flat = ad.reshape(x, (h * ww, ad.value_of(x).shape[-1]))
    out = ad.matmul(flat, ad.as_var(w)) + ad.as_var(b)
    return out  # stays flat (P, C_out)


def full_self_attention_vars(x, wq, bq, wk, bk, wv, bv, wz, bz):
    """Var-level full self-attention; returns (y, attention_matrix)."""
    x = ad.as_var(x)
    h, w, cin = x.shape
    qf = _conv1x1(x, wq, bq, (h, w))
    kf = _conv1x1(x, wk, bk, (h, w))
    vf = _conv1x1(x, wv, bv, (h, w))
    att = ad.softmax_rows(ad.matmul(qf, ad.transpose2d(kf)))
    out = ad.matmul(att, vf)
    z = ad.matmul(out, ad.as_var(wz)) + ad.as_var(bz)
    y = ad.reshape(z, (h, w, cin)) + x
    return y, att


def bs_self_attention_vars(x, wq, bq, wk, bk, wv, bv, wz, bz, spec: BlockSampleSpec):
    """Var-level block-sampling self-attention; returns (y, attention_matrix)."""
    x = ad.as_var(x)
    h, w, cin = x.shape
    spec.check((h, w))
    idx = spec.flat_indices((h, w))
    qf = _conv1x1(x, wq, bq, (h, w))
    kf = _conv1x1(x, wk, bk, (h, w))
    vf = _conv1x1(x, wv, bv, (h, w))
    qm = ad.take_rows(qf, idx)
    att = ad.softmax_rows(ad.matmul(qm, ad.transpose2d(kf)))
    v_new = ad.matmul(att, vf)
    resulting = ad.put_rows(vf, v_new, idx)
    z = ad.matmul(resulting, ad.as_var(wz)) + ad.as_var(bz)
    y = ad.reshape(z, (h, w, cin)) + x
    return y, att


def full_self_attention(problem: AttentionProblem) -> np.ndarray:
    """Full self-attention output (H, W, C_in), the oracle operator."""
    y, _ = full_self_attention_vars(
        problem.x, problem.wq, problem.bq, problem.wk, problem.bk,
        problem.wv, problem.bv, problem.wz, problem.bz,
    )
    return ad.value_of(y)


def bs_self_attention(problem: AttentionProblem, spec: BlockSampleSpec) -> np.ndarray:
    """Block-sampling self-attention output (H, W, C_in)."""
    if spec.m != problem.m:
        raise BlockOutOfBounds(
            f"block holds {spec.m} positions but the problem expects {problem.m}"
        )
    y, _ = bs_self_attention_vars(
        problem.x, problem.wq, problem.bq, problem.wk, problem.bk,
        problem.wv, problem.bv, problem.wz, problem.bz, spec,
    )
    return ad.value_of(y)


@dataclass
class AttentionMemoryEstimate:
    """Closed-form byte counts for the attention matrix and QKV buffers."""

    full_matrix: int
    bs_matrix: int
    qkv_buffers: int
    bytes_per_element: int = BYTES_F32

    @property
    def full_total(self) -> int:
        return self.full_matrix + self.qkv_buffers

    @property
    def bs_total(self) -> int:
        return self.bs_matrix + self.qkv_buffers

    @property
    def matrix_reduction(self) -> float:
        return self.full_matrix / self.bs_matrix


def attention_memory_estimate(h, w, m, c_h, bytes_per_element=BYTES_F32):
    """Estimate attention-matrix and Q/K/V buffer footprints in bytes."""
    p = h * w
    return AttentionMemoryEstimate(
        full_matrix=p * p * bytes_per_element,
        bs_matrix=m * p * bytes_per_element,
        qkv_buffers=3 * p * c_h * bytes_per_element,
        bytes_per_element=bytes_per_element,
    )
