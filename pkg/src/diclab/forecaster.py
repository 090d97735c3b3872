"""In-context forecasting of univariate series as next-bin distributions.

Each backend consumes the digit-tokenized bin sequence of a series and emits,
per position i, a categorical distribution over the next value's bin
conditioned only on positions 0..i. Three backends ship:

* ``markov_bin``   -- empirical next-bin frequency table over the context
  (bigram counts with unigram/persistence backoff, optional Laplace
  smoothing). Deterministic; used as a desk-scale oracle.
* ``gaussian_context`` -- Gaussian fitted to the in-context moments, with
  mean-estimation inflation ``(1 + 1/n)`` on the predictive variance,
  discretized over the bin grid.
* ``llm_http``     -- remote model speaking a minimal JSON protocol that
  returns per-position logits over the bin vocabulary.
"""

from __future__ import annotations

import time
from bisect import bisect_left, insort
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import erf

from .tokenizer import (
    NumericEncoding,
    SeriesRescale,
    fit_rescale,
    identity_rescale,
    series_to_bins,
)


class ForecastError(RuntimeError):
    """A backend could not produce a distribution."""


class TransportError(ForecastError):
    """HTTP transport failure; carries the last status code (0 = no response)."""

    def __init__(self, message: str, status: int = 0):
        super().__init__(message)
        self.status = status


class ContextOverflowError(TransportError):
    """The series exceeds the backend's context window (HTTP 413)."""

    def __init__(self, message: str):
        super().__init__(message, status=413)


@dataclass(frozen=True)
class NextValueDistribution:
    """Categorical distribution over value bins with source-unit views.

    The distribution places atoms at bin centers; cdf/quantile use the
    right-continuous convention (atom mass included at the point).
    """

    probs: np.ndarray
    rescale: SeriesRescale
    enc: NumericEncoding

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.shape[0] != self.enc.n_bins:
            raise ValueError(f"probs must have shape [{self.enc.n_bins}], got {p.shape}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probs must be finite and nonnegative")
        total = p.sum()
        if not np.isclose(total, 1.0, atol=1e-9) or total <= 0:
            raise ValueError(f"probs must sum to 1 within 1e-9, got {total}")
        p = p / total
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @cached_property
    def _cum(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    @cached_property
    def _centers_src(self) -> np.ndarray:
        # source-unit value of every bin center
        y = (np.arange(self.enc.n_bins) + 0.5) * self.enc.bin_width
        return self.rescale.invert(y)

    def mean(self) -> float:
        return float(self.probs @ self._centers_src)

    def variance(self) -> float:
        m = self.mean()
        return float(self.probs @ (self._centers_src - m) ** 2)

    def mode(self) -> float:
        return float(self._centers_src[int(np.argmax(self.probs))])

    def mode_bin(self) -> int:
        return int(np.argmax(self.probs))

    def quantile(self, p: float) -> float:
        """Generalized inverse CDF: smallest bin center with CDF >= p."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {p}")
        idx = int(np.searchsorted(self._cum, p, side="left"))
        idx = min(idx, self.enc.n_bins - 1)
        return float(self._centers_src[idx])

    def quantiles(self, ps) -> np.ndarray:
        """Vectorized generalized inverse CDF."""
        ps = np.asarray(ps, dtype=float)
        if np.any(ps < 0) or np.any(ps > 1):
            raise ValueError("quantile levels must lie in [0, 1]")
        idx = np.minimum(np.searchsorted(self._cum, ps, side="left"), self.enc.n_bins - 1)
        return self._centers_src[idx]

    def cdf(self, v: float) -> float:
        """P(value <= v), counting the full mass of any atom at v."""
        u = float(self.rescale.apply(v)) / self.enc.bin_width
        # atoms sit at bin coordinates b + 0.5; 1e-9 absorbs float round-trip
        idx = int(np.floor(u - 0.5 + 1e-9))
        if idx < 0:
            return 0.0
        return float(self._cum[min(idx, self.enc.n_bins - 1)])

    def sample(self, rng: np.random.Generator) -> float:
        idx = int(np.searchsorted(self._cum, rng.random(), side="right"))
        return float(self._centers_src[min(idx, self.enc.n_bins - 1)])

    def pick(self, sampling: str, rng: np.random.Generator | None = None) -> float:
        if sampling == "mean":
            return self.mean()
        if sampling == "mode":
            return self.mode()
        if sampling == "sample":
            if rng is None:
                raise ValueError("sampling='sample' requires an rng")
            return self.sample(rng)
        raise ValueError(f"unknown sampling rule {sampling!r}")


def dist_stats(d: NextValueDistribution) -> dict:
    """Summary statistics of a next-value distribution in source units."""
    return {"mean": d.mean(), "mode": d.mode(), "variance": d.variance()}


def logits_to_distribution(
    logits,
    temperature: float = 1.0,
    rescale: SeriesRescale | None = None,
    enc: NumericEncoding | None = None,
) -> NextValueDistribution:
    """softmax(logits / temperature) over the bin vocabulary."""
    enc = enc or NumericEncoding()
    rescale = rescale or identity_rescale(enc)
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits, dtype=float)
    if z.shape != (enc.n_bins,):
        raise ValueError(f"expected {enc.n_bins} logits, got shape {z.shape}")
    if np.any(np.isnan(z)):
        raise ValueError("logits contain NaN")
    z = z / temperature
    zmax = np.max(z)
    if zmax == -np.inf:
        raise ValueError("all logits are -inf")
    e = np.exp(z - zmax)
    return NextValueDistribution(probs=e / e.sum(), rescale=rescale, enc=enc)


def _nearest(sorted_values: list[int], target: int) -> int:
    """Closest element of a sorted list; ties resolve to the lower value."""
    pos = bisect_left(sorted_values, target)
    if pos == 0:
        return sorted_values[0]
    if pos == len(sorted_values):
        return sorted_values[-1]
    before, after = sorted_values[pos - 1], sorted_values[pos]
    return before if target - before <= after - target else after


def _softmax_rows(logits: np.ndarray, temperature: float) -> np.ndarray:
    z = logits / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class MarkovBinBackend:
    """Next-bin frequency estimator over the context prefix.

    At position i the distribution is the (optionally Laplace-smoothed)
    empirical frequency of successors of the current bin among the
    transitions seen so far. A current bin that never occurred as a
    transition source borrows the row of the nearest seen source bin
    (nearest-neighbor backoff; ties to the lower bin), an empty transition
    table falls back to persistence (point mass on the current bin).
    """

    def __init__(self, smoothing: float = 0.0):
        if smoothing < 0:
            raise ValueError(f"smoothing must be >= 0, got {smoothing}")
        self.smoothing = smoothing

    def forecast_bins(self, bins, positions, enc: NumericEncoding) -> np.ndarray:
        bins = np.asarray(bins, dtype=np.int64)
        n_bins = enc.n_bins
        wanted = sorted(set(int(p) for p in positions))
        out = np.empty((len(wanted), n_bins))
        row_of = {p: j for j, p in enumerate(wanted)}
        bigram: dict[int, Counter] = defaultdict(Counter)
        sources: list[int] = []  # sorted distinct source bins
        for i in range(bins.shape[0]):
            if i > 0:
                src = int(bins[i - 1])
                if not bigram[src]:
                    insort(sources, src)
                bigram[src][int(bins[i])] += 1
            if i in row_of:
                cur = int(bins[i])
                row = np.zeros(n_bins)
                if sources:
                    counts = bigram[cur] or bigram[_nearest(sources, cur)]
                    row[list(counts.keys())] = list(counts.values())
                else:
                    row[cur] = 1.0
                row += self.smoothing
                out[row_of[i]] = row / row.sum()
        return out


class GaussianContextBackend:
    """Gaussian from the in-context moments, discretized over the bin grid.

    The predictive variance includes the uncertainty of the estimated mean,
    var * (1 + 1/n), so early positions are wider than late ones. ``window``
    restricts the moments to the most recent values of the prefix.
    """

    def __init__(self, window: int | None = None):
        if window is not None and window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        self.window = window

    def forecast_bins(self, bins, positions, enc: NumericEncoding) -> np.ndarray:
        bins = np.asarray(bins, dtype=np.int64)
        n_bins = enc.n_bins
        centers = bins + 0.5  # bin coordinates
        out = np.empty((len(positions), n_bins))
        edges = np.arange(n_bins + 1, dtype=float)
        for j, pos in enumerate(positions):
            i = int(pos)
            lo = 0 if self.window is None else max(0, i + 1 - self.window)
            prefix = centers[lo : i + 1]
            n = prefix.shape[0]
            mu = float(prefix.mean())
            var = float(prefix.var(ddof=1)) if n >= 2 else 0.0
            var *= 1.0 + 1.0 / n
            if var <= 0.0:
                row = np.zeros(n_bins)
                row[min(max(int(mu), 0), n_bins - 1)] = 1.0
                out[j] = row
                continue
            sd = np.sqrt(var)
            cdf = 0.5 * (1.0 + erf((edges - mu) / (sd * np.sqrt(2.0))))
            row = np.diff(cdf)
            row[0] += cdf[0]
            row[-1] += 1.0 - cdf[-1]
            out[j] = row / row.sum()
        return out


class LlmHttpBackend:
    """Remote forecaster speaking JSON over HTTP POST /v1/icl_forecast.

    Request:  {"series_bins": [int], "k": int, "return_positions": "all"|[int]}
    Response: {"logits": [[float; n_bins] per requested position]}
    HTTP 413 maps to ContextOverflowError; 5xx and connection failures are
    retried with exponential backoff (max_attempts total tries).
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        max_attempts: int = 3,
        backoff_base: float = 0.25,
        max_concurrency: int = 4,
        temperature: float = 1.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.max_concurrency = max_concurrency
        self.temperature = temperature

    def _post(self, payload: dict) -> dict:
        import requests

        url = self.endpoint + "/v1/icl_forecast"
        last_exc: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt > 0:
                time.sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                resp = requests.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as e:
                last_exc = e
                continue
            if resp.status_code == 413:
                raise ContextOverflowError(f"context overflow from {url}")
            if 500 <= resp.status_code < 600:
                last_exc = TransportError(
                    f"server error {resp.status_code} from {url}", status=resp.status_code
                )
                continue
            if resp.status_code != 200:
                raise TransportError(
                    f"unexpected status {resp.status_code} from {url}", status=resp.status_code
                )
            return resp.json()
        if isinstance(last_exc, TransportError):
            raise last_exc
        raise TransportError(f"no response from {url}: {last_exc}") from last_exc

    def forecast_bins(self, bins, positions, enc: NumericEncoding) -> np.ndarray:
        bins = [int(b) for b in np.asarray(bins)]
        payload = {
            "series_bins": bins,
            "k": enc.k,
            "return_positions": [int(p) for p in positions],
        }
        data = self._post(payload)
        logits = np.asarray(data["logits"], dtype=float)
        if logits.shape != (len(positions), enc.n_bins):
            raise ForecastError(
                f"backend returned logits of shape {logits.shape}, "
                f"expected {(len(positions), enc.n_bins)}"
            )
        return _softmax_rows(logits, self.temperature)

    def forecast_bins_batch(self, bins_list, positions_list, enc: NumericEncoding):
        workers = max(1, min(self.max_concurrency, len(bins_list)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(self.forecast_bins, b, p, enc)
                for b, p in zip(bins_list, positions_list)
            ]
            return [f.result() for f in futures]


@dataclass(frozen=True)
class BackendSpec:
    """Declarative backend choice: kind plus kind-specific settings."""

    kind: str
    settings: dict = field(default_factory=dict)

    def build(self):
        return make_backend(self.kind, **self.settings)


def make_backend(kind: str, **settings):
    if kind == "markov_bin":
        return MarkovBinBackend(**settings)
    if kind == "gaussian_context":
        return GaussianContextBackend(**settings)
    if kind == "llm_http":
        return LlmHttpBackend(**settings)
    raise ValueError(f"unknown backend kind {kind!r}")


def _resolve_positions(positions, n: int) -> list[int]:
    if positions == "all":
        return list(range(n))
    if positions == "last":
        return [n - 1]
    resolved = [int(p) for p in positions]
    for p in resolved:
        if not 0 <= p < n:
            raise ValueError(f"position {p} outside series of length {n}")
    return resolved


def icl_forecast(
    series,
    backend,
    enc: NumericEncoding | None = None,
    positions="all",
    rescale: SeriesRescale | None = None,
) -> list[NextValueDistribution]:
    """Forecast next-value distributions for the requested positions.

    Position i's distribution conditions only on series values 0..i. The
    rescale is fit on the full input window unless supplied explicitly.
    """
    enc = enc or NumericEncoding()
    values = np.asarray(series, dtype=float)
    if values.ndim != 1 or values.shape[0] < 2:
        raise ValueError("series must be 1-D with length >= 2")
    rescale = rescale or fit_rescale(values, enc)
    bins, _ = series_to_bins(values, rescale, enc)
    pos = _resolve_positions(positions, values.shape[0])
    probs = backend.forecast_bins(bins, pos, enc)
    return [NextValueDistribution(probs=probs[j], rescale=rescale, enc=enc) for j in range(len(pos))]


def icl_forecast_batch(
    series_list,
    backend,
    enc: NumericEncoding | None = None,
    positions="all",
) -> list[list[NextValueDistribution]]:
    """Forecast several series; elementwise identical to separate calls."""
    enc = enc or NumericEncoding()
    prepared = []
    for series in series_list:
        values = np.asarray(series, dtype=float)
        if values.ndim != 1 or values.shape[0] < 2:
            raise ValueError("every series must be 1-D with length >= 2")
        rescale = fit_rescale(values, enc)
        bins, _ = series_to_bins(values, rescale, enc)
        prepared.append((rescale, bins, _resolve_positions(positions, values.shape[0])))
    if hasattr(backend, "forecast_bins_batch"):
        all_probs = backend.forecast_bins_batch(
            [b for _, b, _ in prepared], [p for _, _, p in prepared], enc
        )
    else:
        all_probs = [backend.forecast_bins(b, p, enc) for _, b, p in prepared]
    results = []
    for (rescale, _, pos), probs in zip(prepared, all_probs):
        results.append(
            [NextValueDistribution(probs=probs[j], rescale=rescale, enc=enc) for j in range(len(pos))]
        )
    return results
