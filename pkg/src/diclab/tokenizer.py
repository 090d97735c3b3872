"""Digit tokenization of univariate real series.

A series is affinely rescaled into a fixed nonnegative target range, then each
value becomes a k-digit integer token (one bin id in {0, ..., 10^k - 1}).
Decoding maps a bin back to the center of its value interval in source units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


class DecodeError(ValueError):
    """Raised when a token is not a valid k-digit string."""


@dataclass(frozen=True)
class NumericEncoding:
    """Settings of the digit encoding.

    target_hi defaults to 10 - 10^(1-k), the largest value whose k-digit
    encoding stays inside the bin space (9.99 for k=3).
    """

    target_lo: float = 0.0
    target_hi: float | None = None
    k: int = 3
    separator: str = ","
    pad_fraction: float = 0.15

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.pad_fraction < 0:
            raise ValueError(f"pad_fraction must be >= 0, got {self.pad_fraction}")
        if self.target_hi is None:
            object.__setattr__(self, "target_hi", 10.0 - 10.0 ** (1 - self.k))
        if self.target_lo >= self.target_hi:
            raise ValueError(
                f"target_lo must be < target_hi, got ({self.target_lo}, {self.target_hi})"
            )

    @property
    def n_bins(self) -> int:
        return 10**self.k

    @property
    def bin_width(self) -> float:
        """Width of one bin in rescaled units."""
        return 10.0 ** (1 - self.k)


@dataclass(frozen=True)
class SeriesRescale:
    """Invertible affine map from source units onto the encoding target range."""

    source_min: float
    source_max: float
    slope: float
    offset: float

    def apply(self, x):
        return np.asarray(x, dtype=float) * self.slope + self.offset

    def invert(self, y):
        return (np.asarray(y, dtype=float) - self.offset) / self.slope

    @property
    def source_bin_width(self) -> float:
        """Width of one rescaled-unit interval expressed in source units."""
        return 1.0 / self.slope


def identity_rescale(enc: NumericEncoding) -> SeriesRescale:
    """Rescale that leaves values unchanged (source units == rescaled units)."""
    return SeriesRescale(
        source_min=enc.target_lo, source_max=enc.target_hi, slope=1.0, offset=0.0
    )


def fit_rescale(series, enc: NumericEncoding) -> SeriesRescale:
    """Fit the affine map sending the pad_fraction-padded [min, max] of
    `series` onto [target_lo, target_hi].

    A constant series has no range; it is given a synthetic span so the map
    stays invertible and the constant lands on the target midpoint.
    """
    values = np.asarray(series, dtype=float)
    if values.size < 1:
        raise ValueError("series must contain at least one value")
    if not np.all(np.isfinite(values)):
        raise ValueError("series contains non-finite values")
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi > lo:
        pad = enc.pad_fraction * (hi - lo)
        src_min, src_max = lo - pad, hi + pad
    else:
        # constant series: symmetric synthetic span around the value
        span = max(abs(lo), 1.0)
        src_min, src_max = lo - span, lo + span
    slope = (enc.target_hi - enc.target_lo) / (src_max - src_min)
    offset = enc.target_lo - src_min * slope
    return SeriesRescale(source_min=src_min, source_max=src_max, slope=slope, offset=offset)


def series_to_bins(series, rescale: SeriesRescale, enc: NumericEncoding):
    """Map source values to integer bin ids. Returns (bins, n_clamped).

    bin = floor(rescaled * 10^(k-1)); out-of-range values are clamped into
    {0, ..., 10^k - 1} and counted.
    """
    y = rescale.apply(series)
    raw = np.floor(y * 10.0 ** (enc.k - 1)).astype(np.int64)
    clamped = np.clip(raw, 0, enc.n_bins - 1)
    n_clamped = int(np.sum(raw != clamped))
    if n_clamped:
        logger.warning("clamped %d values outside the encoding range", n_clamped)
    return clamped, n_clamped


def bins_to_tokens(bins, enc: NumericEncoding) -> str:
    return enc.separator.join(format(int(b), f"0{enc.k}d") for b in np.asarray(bins))


def encode_series(series, rescale: SeriesRescale, enc: NumericEncoding) -> str:
    """Encode a source-unit series as separator-joined k-digit tokens."""
    bins, _ = series_to_bins(series, rescale, enc)
    return bins_to_tokens(bins, enc)


def bin_center(bin_id, enc: NumericEncoding):
    """Center of a bin in rescaled units."""
    return (np.asarray(bin_id, dtype=float) + 0.5) * enc.bin_width


def decode_bin(bin_id, rescale: SeriesRescale, enc: NumericEncoding):
    """Source-unit value at the center of the given bin(s)."""
    return rescale.invert(bin_center(bin_id, enc))


def decode_value(token: str, rescale: SeriesRescale, enc: NumericEncoding) -> float:
    """Decode one k-digit token to the source-unit value at its bin center."""
    if len(token) != enc.k or not token.isdigit():
        raise DecodeError(f"expected exactly {enc.k} digits, got {token!r}")
    return float(decode_bin(int(token), rescale, enc))


def decode_series(tokens: str, rescale: SeriesRescale, enc: NumericEncoding) -> np.ndarray:
    """Decode a separator-joined token string back to source-unit values."""
    parts = tokens.split(enc.separator) if tokens else []
    return np.array([decode_value(p, rescale, enc) for p in parts])
