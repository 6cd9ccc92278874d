"""Disparity-space partitioning and plane-placement strategies.

The disparity range [d_f, d_n] is split into N uniform bins; plane 1 is the
nearest (largest disparity) and lives in the first bin. A plane's location
inside its bin is an offset v in (0, 1):

    d_i = d_n + (v_i + i - 1) (d_f - d_n) / N

Strategies compared by the placement sweeps:

* random:  one seeded uniform draw per bin, then the offset formula;
* equal:   fixed bin centers (v = 0.5);
* global:  disparities at the segment midpoints of a cumulative softmax over
           the whole range. Monotone by construction but free to cluster all
           planes arbitrarily close together, which is exactly the failure
           mode local binning prevents;
* local:   learnable offsets stored as unconstrained reals behind a logistic
           map, so v stays in the open interval and each plane stays in its
           own bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvalidRange

STRATEGY_NAMES = ("random", "equal", "global", "local")


@dataclass(frozen=True)
class DisparityBins:
    """Uniform partition of [d_f, d_n] into N bins (near to far)."""

    d_near: float
    d_far: float
    n: int

    def __post_init__(self):
        if not (self.d_near > self.d_far > 0):
            raise InvalidRange(
                f"need d_near > d_far > 0, got {self.d_near}, {self.d_far}"
            )
        if self.n < 1:
            raise InvalidRange(f"need at least one bin, got {self.n}")

    @property
    def width(self) -> float:
        return (self.d_near - self.d_far) / self.n

    def edges(self) -> np.ndarray:
        """Bin edges, descending: edges[i] is the near edge of bin i+1."""
        return self.d_near - self.width * np.arange(self.n + 1)

    def bin_index(self, d) -> np.ndarray:
        """Bin index (0-based) of disparities; clipped into range."""
        idx = np.floor((self.d_near - np.asarray(d)) / self.width)
        return np.clip(idx, 0, self.n - 1).astype(np.int64)


def near_far_from_depth_range(z_min: float, z_max: float):
    """(d_near, d_far) for a scene spanning depths [z_min, z_max]."""
    if not (0 < z_min < z_max):
        raise InvalidRange(f"need 0 < z_min < z_max, got {z_min}, {z_max}")
    return 1.0 / z_min, 1.0 / z_max


@dataclass
class OffsetVector:
    """Per-bin offsets stored as unconstrained reals; v = logistic(raw)."""

    raw: np.ndarray

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64).reshape(-1)

    @classmethod
    def centered(cls, n: int) -> "OffsetVector":
        return cls(np.zeros(n))

    @property
    def offsets(self) -> np.ndarray:
        return ad.value_of(ad.sigmoid(ad.Var(self.raw)))

    def to_json(self) -> dict:
        return {"raw": self.raw.tolist(), "offsets": self.offsets.tolist()}


def locations_from_offsets(bins: DisparityBins, v):
    """Plane disparities from per-bin offsets (accepts Vars or arrays).

    Offsets of exactly 0/1 would sit on bin edges; the logistic storage in
    OffsetVector keeps them strictly inside.
    """
    v = ad.as_var(v)
    if v.shape[0] != bins.n:
        raise InvalidRange(f"expected {bins.n} offsets, got {v.shape[0]}")
    index = np.arange(1, bins.n + 1, dtype=np.float64)
    step = (bins.d_far - bins.d_near) / bins.n
    return (v + (index - 1.0)) * step + bins.d_near


def global_locations(bins: DisparityBins, logits):
    """Segment-midpoint cumulative-softmax partition of the full range.

    With all-equal logits the midpoints land exactly on the bin centers;
    skewed logits can push every plane into one bin.
    """
    logits = ad.as_var(logits)
    if logits.shape[0] != bins.n:
        raise InvalidRange(f"expected {bins.n} logits, got {logits.shape[0]}")
    p = ad.softmax_rows(ad.reshape(logits, (1, bins.n)))
    p = ad.reshape(p, (bins.n,))
    cum = ad.cumsum_exclusive(p, axis=0)
    mid = cum + p * 0.5
    return bins.d_near + mid * (bins.d_far - bins.d_near)


def random_offsets(n: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform draw per bin; the caller owns the generator state."""
    return rng.uniform(0.0, 1.0, size=n)


def place(strategy: str, bins: DisparityBins, *, rng=None, offsets=None, logits=None):
    """Plane disparities for a named strategy (plain arrays, evaluation path).

    random needs ``rng``; local uses ``offsets`` (an OffsetVector, default
    centered); global uses ``logits`` (default all zeros).
    """
    if strategy == "random":
        if rng is None:
            raise ValueError("random placement needs an rng")
        v = random_offsets(bins.n, rng)
        return ad.value_of(locations_from_offsets(bins, v))
    if strategy == "equal":
        return ad.value_of(locations_from_offsets(bins, np.full(bins.n, 0.5)))
    if strategy == "global":
        logits = np.zeros(bins.n) if logits is None else np.asarray(logits)
        return ad.value_of(global_locations(bins, logits))
    if strategy == "local":
        offsets = OffsetVector.centered(bins.n) if offsets is None else offsets
        return ad.value_of(locations_from_offsets(bins, offsets.offsets))
    raise ValueError(f"unknown placement strategy {strategy!r}")
