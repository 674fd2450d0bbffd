"""Start-stop delay histogram, the classic single-pair coincidence estimator.

Each event on the start channel is paired with the *first* subsequent event
on the stop channel and the delay is histogrammed.  Because later stops are
discarded, the histogram measures the waiting-time density, not the
correlation function: for a flat (Poisson) stop stream of accepted rate mu
the delay density is mu * exp(-mu * tau), so even perfectly uncorrelated
channels produce an apparent decay.  The exponential (and its small-delay
linearization 1 - mu*tau) are provided so the artifact can be compared
against measurements directly.

Normalization anchors the histogram either at zero delay (the first few
bins, standard for deadtime-style plots) or on the far tail (common when
the tail is assumed uncorrelated).  Both are supported because the choice
changes where the bias appears, not whether it exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

NORMALIZATION_MODES = ("anchor_zero_lag", "anchor_tail")

_ZERO_ANCHOR_BINS = 3
_TAIL_ANCHOR_FRACTION = 0.10


@dataclass(frozen=True)
class StartStopHistogram:
    lag_ns: np.ndarray          # bin centers, tau >= 0
    counts: np.ndarray          # int64 per bin
    bin_width_ns: float
    n_starts: int               # starts considered
    n_paired: int               # starts whose first stop fell inside range
    normalized_g2: np.ndarray | None = None
    mode: str | None = None


def start_stop_histogram(start_times_ps: np.ndarray,
                         stop_times_ps: np.ndarray,
                         bin_width_ns: float,
                         max_lag_ns: float) -> StartStopHistogram:
    """Histogram of first-stop-after-start delays over [0, max_lag_ns)."""
    bin_ps = bin_width_ns * 1000.0
    if bin_ps <= 0 or abs(bin_ps - round(bin_ps)) > 1e-9:
        raise ValueError("bin width must be a positive whole number of ps")
    bin_ps = int(round(bin_ps))
    n_bins = max_lag_ns * 1000.0 / bin_ps
    if n_bins <= 0 or abs(n_bins - round(n_bins)) > 1e-6:
        raise ValueError("max lag must be a whole number of bins")
    n_bins = int(round(n_bins))

    starts = np.asarray(start_times_ps, dtype=np.int64)
    stops = np.asarray(stop_times_ps, dtype=np.int64)
    counts = np.zeros(n_bins, dtype=np.int64)
    n_paired = 0
    if starts.size and stops.size:
        idx = np.searchsorted(stops, starts, side="left")
        matched = idx < stops.size
        delays = stops[idx[matched]] - starts[matched]  # >= 0 by construction
        in_range = delays < n_bins * bin_ps
        n_paired = int(in_range.sum())
        counts = np.bincount(delays[in_range] // bin_ps,
                             minlength=n_bins).astype(np.int64)
    centers = (np.arange(n_bins) + 0.5) * (bin_ps * 1e-3)
    return StartStopHistogram(lag_ns=centers, counts=counts,
                              bin_width_ns=bin_ps * 1e-3,
                              n_starts=int(starts.size), n_paired=n_paired)


def normalize_histogram(hist: StartStopHistogram,
                        mode: str = "anchor_zero_lag") -> StartStopHistogram:
    """Scale counts so the anchor region averages to 1."""
    if mode not in NORMALIZATION_MODES:
        raise ValueError(f"mode must be one of {NORMALIZATION_MODES}, got {mode!r}")
    n = hist.counts.size
    if mode == "anchor_zero_lag":
        anchor = hist.counts[:min(_ZERO_ANCHOR_BINS, n)]
    else:
        k = max(1, int(math.ceil(n * _TAIL_ANCHOR_FRACTION)))
        anchor = hist.counts[n - k:]
    base = float(anchor.mean()) if anchor.size else 0.0
    if base <= 0.0:
        raise ValueError(f"{mode}: anchor region holds no counts")
    return replace(hist, normalized_g2=hist.counts / base, mode=mode)


def poisson_startstop_curve(rate_hz: float, lag_ns: np.ndarray) -> np.ndarray:
    """Normalized delay curve of an uncorrelated stop stream: exp(-mu tau)."""
    return np.exp(-rate_hz * np.asarray(lag_ns, dtype=np.float64) * 1e-9)


def poisson_startstop_linearized(rate_hz: float, lag_ns: np.ndarray) -> np.ndarray:
    """Small-delay linearization 1 - mu*tau of the same artifact."""
    return 1.0 - rate_hz * np.asarray(lag_ns, dtype=np.float64) * 1e-9


STARTSTOP_CSV_HEADER = "lag_ns,counts,normalized_g2,mode"


def write_startstop_csv(path, hist: StartStopHistogram) -> None:
    norm = hist.normalized_g2
    mode = hist.mode or ""
    lines = [STARTSTOP_CSV_HEADER]
    for k in range(hist.counts.size):
        nv = "" if norm is None else repr(float(norm[k]))
        lines.append(f"{float(hist.lag_ns[k])!r},{int(hist.counts[k])},{nv},{mode}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
