"""Single-photon avalanche detector model and event bookkeeping.

Detection is a doubly-stochastic point process: the envelope from field
synthesis drives a per-step Bernoulli trial.  In each simulation step of
width dt a candidate fires with probability (rate + dcr) * dt, where rate is
the pixel's detected-rate envelope (multiplied by the PDE only when the
envelope carries raw physical flux).  Steps are short enough that the
probability stays small; if it ever exceeds 0.1 the run errors out asking
for a smaller step rather than silently distorting statistics.  Candidates
are placed uniformly inside their step, timestamped in integer picoseconds.

Candidates then receive Gaussian timing jitter (sigma = FWHM / (2 sqrt(2 ln 2))
~ FWHM/2.355), are re-sorted, and pass through a non-paralyzable dead-time
filter: an accepted event blinds the pixel for tau_d, and candidates arriving
inside the blind interval are dropped without extending it.  Jitter never
creates or destroys candidates; only the dead-time filter discards.

Constant envelopes (coherent/incoherent sources) use an exact fast path:
the per-step Bernoulli sequence is sampled by geometric gap lengths, which
is distribution-identical to drawing every step.

Binarization maps events to half-open bins [n T, (n+1) T) and tiles the
stream into back-to-back windows of window_n + max_lag_bins bins, so the
windowed correlator can slide up to +-max_lag_bins while always summing a
full set of window_n products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .config import DetectorSpec, TimeGrid
from .fieldsynth import IntensityTrace

_GAUSS_FWHM = 2.0 * np.sqrt(2.0 * np.log(2.0))
_MAX_STEP_PROB = 0.1
_CHUNK = 1 << 22  # fixed thinning chunk; part of the deterministic stream


class ResolutionError(ValueError):
    """Per-step candidate probability too large for faithful thinning."""


class EventFormatError(ValueError):
    """Malformed event file."""


@dataclass(frozen=True)
class EventStream:
    """Per-pixel detection timestamps in integer picoseconds.

    ``candidates`` counts pre-dead-time candidates per pixel (None when the
    stream was loaded or sliced and the accounting is unknown).
    """

    times_ps: tuple          # per-pixel int64 arrays, strictly increasing
    duration_ps: int
    candidates: np.ndarray | None = None

    @property
    def n_pixels(self) -> int:
        return len(self.times_ps)

    @property
    def counts(self) -> np.ndarray:
        return np.array([t.size for t in self.times_ps], dtype=np.int64)

    @property
    def discarded(self) -> np.ndarray | None:
        if self.candidates is None:
            return None
        return self.candidates - self.counts

    def times_s(self, pixel: int) -> np.ndarray:
        return self.times_ps[pixel] * 1e-12


def expected_rate_nonparalyzable(rate_hz: float, dead_time_ns: float) -> float:
    """Accepted rate of a Poisson stream behind a non-paralyzable dead time."""
    return rate_hz / (1.0 + rate_hz * dead_time_ns * 1e-9)


@numba.njit(cache=True)
def _deadtime_scan(times, dead_ps):  # pragma: no cover - jitted
    out = np.empty_like(times)
    k = 0
    last = np.int64(0)
    for i in range(times.size):
        v = times[i]
        if k == 0:
            out[k] = v
            last = v
            k += 1
        else:
            gap = v - last
            # blind interval is [last, last + dead); drops don't extend it.
            # gap > 0 also collapses same-picosecond stamps when dead == 0.
            if gap > 0 and gap >= dead_ps:
                out[k] = v
                last = v
                k += 1
    return out[:k]


def _candidate_steps_sampled(rng, rates_hz, dt_s):
    """Bernoulli thinning over an envelope chunk; returns step indices."""
    p = rates_hz * dt_s
    pmax = float(p.max()) if p.size else 0.0
    if pmax > _MAX_STEP_PROB:
        raise ResolutionError(
            f"per-step candidate probability {pmax:.3g} exceeds "
            f"{_MAX_STEP_PROB}; reduce grid.sim_dt_ps")
    u = rng.random(p.size)
    return np.flatnonzero(u < p)


def _candidate_steps_constant(rng, p, n_steps):
    """Geometric-gap sampling of a constant-probability Bernoulli sequence."""
    if p == 0.0 or n_steps == 0:
        return np.empty(0, dtype=np.int64)
    if p > _MAX_STEP_PROB:
        raise ResolutionError(
            f"per-step candidate probability {p:.3g} exceeds "
            f"{_MAX_STEP_PROB}; reduce grid.sim_dt_ps")
    parts = []
    pos = np.int64(-1)
    block = max(1024, int(n_steps * p * 1.05) + 64)
    while pos < n_steps - 1:
        gaps = rng.geometric(p, size=block).astype(np.int64)
        steps = pos + np.cumsum(gaps)
        parts.append(steps)
        pos = steps[-1]
    steps = np.concatenate(parts)
    return steps[steps < n_steps]


def detect_events(trace: IntensityTrace, detector: DetectorSpec, seed,
                  physical_flux: bool = False) -> EventStream:
    """Run the detector over an envelope; returns per-pixel event times.

    ``seed`` follows the documented splitting rule: pixel p consumes the
    substream default_rng((*seed_tuple, p)), so results do not depend on
    pixel evaluation order.  By default envelopes already carry detected
    rates; ``physical_flux=True`` multiplies by the PDE first.
    """
    seed_tuple = seed if isinstance(seed, tuple) else (seed,)
    dt_ps = trace.sim_dt_ps
    dt_s = dt_ps * 1e-12
    duration = trace.duration_ps
    eta = detector.pde if physical_flux else 1.0
    sigma_ps = detector.jitter_fwhm_ps / _GAUSS_FWHM
    dead_ps = np.int64(round(detector.dead_time_ns * 1000.0))
    all_times = []
    candidates = np.zeros(trace.n_pixels, dtype=np.int64)
    for pix in range(trace.n_pixels):
        rng = np.random.default_rng((*seed_tuple, pix))
        if trace.is_constant:
            p = (eta * float(trace.pixel_rates_hz[pix]) + detector.dcr_hz) * dt_s
            steps = _candidate_steps_constant(rng, p, trace.n_samples)
        else:
            env = trace.samples[pix]
            pieces = []
            for lo in range(0, trace.n_samples, _CHUNK):
                hi = min(lo + _CHUNK, trace.n_samples)
                rel = _candidate_steps_sampled(
                    rng, eta * env[lo:hi] + detector.dcr_hz, dt_s)
                pieces.append(rel + lo)
            steps = np.concatenate(pieces) if pieces else np.empty(0, np.int64)
        n_cand = steps.size
        candidates[pix] = n_cand
        t = steps.astype(np.int64) * dt_ps
        if dt_ps > 1:
            t += rng.integers(0, dt_ps, size=n_cand, dtype=np.int64)
        if sigma_ps > 0.0 and n_cand:
            t += np.rint(rng.normal(0.0, sigma_ps, size=n_cand)).astype(np.int64)
            # reflect at the stream edges; jitter preserves candidate count
            np.abs(t, out=t)
            over = t >= duration
            t[over] = 2 * duration - t[over]
            np.clip(t, 0, duration - 1, out=t)
            t.sort()
        accepted = _deadtime_scan(t, dead_ps)
        all_times.append(accepted)
    return EventStream(times_ps=tuple(all_times), duration_ps=duration,
                       candidates=candidates)


def events_from_times(times_ps_per_pixel, duration_ps: int) -> EventStream:
    """Wrap externally produced timestamps, enforcing the stream invariants."""
    cleaned = []
    for pix, times in enumerate(times_ps_per_pixel):
        t = np.asarray(times, dtype=np.int64)
        if t.size:
            d = np.diff(t)
            if np.any(d <= 0):
                k = int(np.argmax(d <= 0)) + 1
                raise EventFormatError(
                    f"pixel {pix}: non-monotonic timestamp at record {k}")
            if t[0] < 0 or t[-1] >= duration_ps:
                raise EventFormatError(
                    f"pixel {pix}: timestamp outside [0, duration)")
        cleaned.append(t)
    return EventStream(times_ps=tuple(cleaned), duration_ps=int(duration_ps))


def slice_events(stream: EventStream, t0_ps: int, t1_ps: int) -> EventStream:
    """Events in [t0, t1), rebased to t0; accounting does not carry over."""
    if not 0 <= t0_ps < t1_ps <= stream.duration_ps:
        raise ValueError("bad slice bounds")
    out = []
    for t in stream.times_ps:
        lo = np.searchsorted(t, t0_ps, side="left")
        hi = np.searchsorted(t, t1_ps, side="left")
        out.append(t[lo:hi] - t0_ps)
    return EventStream(times_ps=tuple(out), duration_ps=t1_ps - t0_ps)


@dataclass(frozen=True)
class BinaryWindowSet:
    """Per-pixel window-tiled occupancy bits.

    bits[p, m, n] is 1 iff pixel p saw at least one event in bin n of
    window m; each window stores window_n + max_lag_bins bins.
    """

    bits: np.ndarray         # (P, M, W) uint8
    window_n: int
    max_lag_bins: int
    bin_t_ns: float
    window_starts_ps: np.ndarray

    @property
    def n_pixels(self) -> int:
        return self.bits.shape[0]

    @property
    def n_windows(self) -> int:
        return self.bits.shape[1]

    @property
    def span_bins(self) -> int:
        return self.bits.shape[2]


def binarize(events: EventStream, grid: TimeGrid,
             n_windows: int | None = None) -> BinaryWindowSet:
    """Tile the stream into M windows of N + L half-open bins of width T.

    An event at exactly a bin boundary lands in the higher bin (bins are
    [n T, (n+1) T)).  Events beyond the tiled span are ignored.  Errors if
    the stream is shorter than the span the grid demands.
    """
    m = grid.window_m if n_windows is None else int(n_windows)
    if m < 1:
        raise ValueError("need at least one window")
    w = grid.window_span_bins
    bin_ps = grid.bin_ps
    need = m * w * bin_ps
    if events.duration_ps < need:
        raise ValueError(
            f"stream duration {events.duration_ps} ps is shorter than the "
            f"{need} ps needed for {m} windows of {w} bins x {bin_ps} ps")
    n_bins = m * w
    bits = np.zeros((events.n_pixels, n_bins), dtype=np.uint8)
    for pix, t in enumerate(events.times_ps):
        idx = t // bin_ps
        idx = idx[idx < n_bins]
        bits[pix, idx] = 1
    starts = np.arange(m, dtype=np.int64) * (w * bin_ps)
    return BinaryWindowSet(bits=bits.reshape(events.n_pixels, m, w),
                           window_n=grid.window_n,
                           max_lag_bins=grid.max_lag_bins,
                           bin_t_ns=grid.bin_t_ns,
                           window_starts_ps=starts)


# --- event persistence (G2EV) ------------------------------------------------
# little-endian: magic "G2EV", version u32, pixels u32, duration_ps u64,
# then per pixel: count u64 followed by count u64 timestamps (ps).

_G2EV_MAGIC = b"G2EV"
_G2EV_VERSION = 1
_G2EV_HEADER = np.dtype([("magic", "S4"), ("version", "<u4"),
                         ("pixels", "<u4"), ("duration_ps", "<u8")])


def save_events(path, stream: EventStream) -> None:
    header = np.zeros(1, dtype=_G2EV_HEADER)
    header["magic"] = _G2EV_MAGIC
    header["version"] = _G2EV_VERSION
    header["pixels"] = stream.n_pixels
    header["duration_ps"] = stream.duration_ps
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        for t in stream.times_ps:
            fh.write(np.array([t.size], dtype="<u8").tobytes())
            fh.write(np.ascontiguousarray(t, dtype="<u8").tobytes())


def load_events(path) -> EventStream:
    """Read a G2EV file; errors carry byte offsets and record indices."""
    with open(path, "rb") as fh:
        blob = fh.read()
    hsize = _G2EV_HEADER.itemsize
    if len(blob) < hsize:
        raise EventFormatError(
            f"truncated header: file ends at byte {len(blob)}, need {hsize}")
    header = np.frombuffer(blob[:hsize], dtype=_G2EV_HEADER)[0]
    if bytes(header["magic"]) != _G2EV_MAGIC:
        raise EventFormatError(f"bad magic {bytes(header['magic'])!r}")
    if int(header["version"]) != _G2EV_VERSION:
        raise EventFormatError(f"unsupported version {int(header['version'])}")
    pixels = int(header["pixels"])
    duration = int(header["duration_ps"])
    times = []
    off = hsize
    for pix in range(pixels):
        if len(blob) < off + 8:
            raise EventFormatError(
                f"truncated at byte {len(blob)}: expected count for pixel {pix}")
        count = int(np.frombuffer(blob[off:off + 8], dtype="<u8")[0])
        off += 8
        need = off + count * 8
        if len(blob) < need:
            raise EventFormatError(
                f"truncated at byte {len(blob)}: pixel {pix} declares "
                f"{count} records up to byte {need}")
        t = np.frombuffer(blob[off:need], dtype="<u8").astype(np.int64)
        off = need
        if t.size:
            d = np.diff(t)
            if np.any(d <= 0):
                k = int(np.argmax(d <= 0)) + 1
                raise EventFormatError(
                    f"pixel {pix}: non-monotonic timestamp at record {k}")
            if t[-1] >= duration:
                raise EventFormatError(
                    f"pixel {pix}: timestamp beyond declared duration")
        times.append(t)
    if off != len(blob):
        raise EventFormatError(
            f"{len(blob) - off} trailing bytes after pixel blocks")
    return EventStream(times_ps=tuple(times), duration_ps=duration)
