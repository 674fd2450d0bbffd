"""Windowed multiphoton estimator for pairwise g2(x, tau).

The stream is tiled into M windows; within window m pixel p contributes a
binary occupancy word X_p^(m).  For a pair (i, j) and a bin lag l >= 0 the
coincidence count is

    C(l) = sum_m sum_{n=0}^{N-1} X_i^(m)(n) X_j^(m)(n + l)

where the extra max_lag_bins margin stored per window guarantees every lag
sums exactly N products.  Negative lags swap the roles of i and j, so
g2_ij(l) = g2_ji(-l) holds bit-exactly by construction.

Two normalizations are supported, because with multiphoton windows the
single-rate normalization can be taken per acquisition window or globally:

* ``global``:     g2(l) = N M C(l) / (S_i * S_j(l)) with S the total counts
  of the core (shifted core for j).  Cheapest, but a windows-long intensity
  modulation (or blanked acquisitions) biases it away from 1.
* ``per_window``: g2(l) = N sum_m C_m(l) / sum_m s_i^(m) s_j^(m)(l) with
  per-window counts s.  Robust to window-scale intensity modulation; the
  default.

All counting is integer-exact: window cross-correlations run through a
length-W real FFT whose output is rounded back to the exact integer counts
(error bounded far below 1/2), and every accumulator is int64.  The
estimator's statistical error bar is g2 / sqrt(C), undefined where C = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spad import BinaryWindowSet

VARIANTS = ("global", "per_window")

_CHUNK_BYTES = 3.2e8  # transient working-set budget for window chunks


@dataclass(frozen=True)
class Correlogram:
    pixel_i: int
    pixel_j: int
    separation_um: float
    lag_ns: np.ndarray
    g2: np.ndarray            # NaN where the denominator vanished
    stderr: np.ndarray        # g2/sqrt(C); NaN where C = 0
    coincidences: np.ndarray  # int64 C(l)
    variant: str
    n_windows: int
    diagnostics: tuple = ()

    @property
    def zero_lag_index(self) -> int:
        return (len(self.lag_ns) - 1) // 2

    def g2_at_zero(self) -> float:
        return float(self.g2[self.zero_lag_index])


def _validate_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")


class _PixelChunkView:
    """Float and integer views of one pixel's window chunk, FFTs cached."""

    __slots__ = ("f_core", "f_full", "s_core", "span_sums")

    def __init__(self, bits, n, l):
        w = bits.shape[1]
        a = bits.astype(np.float64)
        self.f_full = np.fft.rfft(a, axis=1)
        core = a
        core[:, n:] = 0.0  # a is already a private copy
        self.f_core = np.fft.rfft(core, axis=1)
        ints = bits.astype(np.int64)
        cs = np.zeros((bits.shape[0], w + 1), dtype=np.int64)
        np.cumsum(ints, axis=1, out=cs[:, 1:])
        # per-window count of the N-bin span starting at offset l, l = 0..L
        self.span_sums = cs[:, n:n + l + 1] - cs[:, 0:l + 1]
        self.s_core = self.span_sums[:, 0]


def _directed_counts(view_a: _PixelChunkView, view_b: _PixelChunkView,
                     w: int, l: int) -> np.ndarray:
    """C(l) = sum_m sum_n A_core[m, n] B[m, n+l] for l = 0..L, exactly."""
    spec = (np.conj(view_a.f_core) * view_b.f_full).sum(axis=0)
    c = np.fft.irfft(spec, n=w)[:l + 1]
    rounded = np.rint(c)
    if np.max(np.abs(c - rounded)) > 0.25:
        raise RuntimeError("correlation FFT lost integer exactness")
    return rounded.astype(np.int64)


class PairAccumulator:
    """Streaming accumulation of one pair's correlogram across batches."""

    def __init__(self, window_n: int, max_lag_bins: int):
        self.n = int(window_n)
        self.l = int(max_lag_bins)
        self.w = self.n + self.l
        self.m_total = 0
        z = lambda: np.zeros(self.l + 1, dtype=np.int64)
        self.c_pos, self.c_neg = z(), z()
        self.d_pos, self.d_neg = z(), z()       # per-window denominators
        self.sh_j_pos, self.sh_i_neg = z(), z()  # shifted-span totals (global)
        self.s_i_core = 0
        self.s_j_core = 0

    def _chunk_len(self, n_pixels=2) -> int:
        per = self.w * 16 + (self.w // 2 + 1) * 32 + (self.w + 1) * 8
        return max(256, int(_CHUNK_BYTES // (n_pixels * per)))

    def add(self, bits_i: np.ndarray, bits_j: np.ndarray) -> None:
        if bits_i.shape != bits_j.shape or bits_i.shape[1] != self.w:
            raise ValueError("window batches must be (M, N + L) and matched")
        step = self._chunk_len()
        for lo in range(0, bits_i.shape[0], step):
            hi = min(lo + step, bits_i.shape[0])
            vi = _PixelChunkView(bits_i[lo:hi], self.n, self.l)
            vj = _PixelChunkView(bits_j[lo:hi], self.n, self.l)
            self._add_views(vi, vj, hi - lo)

    def _add_views(self, vi, vj, m):
        self.m_total += m
        self.c_pos += _directed_counts(vi, vj, self.w, self.l)
        self.c_neg += _directed_counts(vj, vi, self.w, self.l)
        self.d_pos += np.einsum("m,ml->l", vi.s_core, vj.span_sums)
        self.d_neg += np.einsum("m,ml->l", vj.s_core, vi.span_sums)
        self.sh_j_pos += vj.span_sums.sum(axis=0)
        self.sh_i_neg += vi.span_sums.sum(axis=0)
        self.s_i_core += int(vi.s_core.sum())
        self.s_j_core += int(vj.s_core.sum())

    def finalize(self, variant: str, bin_t_ns: float, pixel_i: int,
                 pixel_j: int, separation_um: float = math.nan) -> Correlogram:
        _validate_variant(variant)
        if self.m_total == 0:
            raise ValueError("no windows accumulated")
        l = self.l
        lags = np.arange(-l, l + 1, dtype=np.float64) * bin_t_ns
        coinc = np.concatenate([self.c_neg[1:][::-1], self.c_pos]).astype(np.int64)
        if variant == "per_window":
            denom = np.concatenate([self.d_neg[1:][::-1], self.d_pos])
            num = self.n * coinc.astype(np.float64)
        else:
            denom_pos = np.float64(self.s_i_core) * self.sh_j_pos
            denom_neg = np.float64(self.s_j_core) * self.sh_i_neg
            denom = np.concatenate([denom_neg[1:][::-1], denom_pos])
            num = (self.n * self.m_total) * coinc.astype(np.float64)
        g2 = np.full(coinc.shape, np.nan)
        ok = denom > 0
        g2[ok] = num[ok] / denom[ok]
        stderr = np.full(coinc.shape, np.nan)
        pos = ok & (coinc > 0)
        stderr[pos] = g2[pos] / np.sqrt(coinc[pos])
        diagnostics = tuple(
            f"lag {lags[k]:g} ns: zero denominator, estimate undefined"
            for k in np.flatnonzero(~ok))
        return Correlogram(pixel_i=pixel_i, pixel_j=pixel_j,
                           separation_um=separation_um, lag_ns=lags, g2=g2,
                           stderr=stderr, coincidences=coinc, variant=variant,
                           n_windows=self.m_total, diagnostics=diagnostics)


class MultiPairAccumulator:
    """Shared-FFT accumulation over many pairs of the same window set."""

    def __init__(self, window_n: int, max_lag_bins: int, pairs):
        self.pairs = [(int(i), int(j)) for i, j in pairs]
        for i, j in self.pairs:
            if i == j:
                raise ValueError("pairs must join two distinct pixels")
        self.acc = {p: PairAccumulator(window_n, max_lag_bins) for p in self.pairs}

    def add(self, binset: BinaryWindowSet) -> None:
        first = next(iter(self.acc.values()))
        if binset.span_bins != first.w or binset.window_n != first.n:
            raise ValueError("window layout mismatch with accumulator")
        used = sorted({p for pr in self.pairs for p in pr})
        step = first._chunk_len(n_pixels=len(used))
        m = binset.n_windows
        for lo in range(0, m, step):
            hi = min(lo + step, m)
            views = {p: _PixelChunkView(binset.bits[p, lo:hi], first.n, first.l)
                     for p in used}
            for (i, j) in self.pairs:
                self.acc[(i, j)]._add_views(views[i], views[j], hi - lo)

    def finalize(self, variant: str, bin_t_ns: float,
                 separations: dict | None = None) -> dict:
        out = {}
        for (i, j) in self.pairs:
            sep = math.nan if separations is None else separations[(i, j)]
            out[(i, j)] = self.acc[(i, j)].finalize(
                variant, bin_t_ns, i, j, separation_um=sep)
        return out


def g2_pair(binset: BinaryWindowSet, i: int, j: int,
            variant: str = "per_window",
            separation_um: float = math.nan) -> Correlogram:
    """Correlogram of one pixel pair over the symmetric lag axis."""
    _validate_variant(variant)
    if not (0 <= i < binset.n_pixels and 0 <= j < binset.n_pixels):
        raise ValueError("pixel index out of range")
    if i == j:
        raise ValueError("pairs must join two distinct pixels")
    acc = PairAccumulator(binset.window_n, binset.max_lag_bins)
    acc.add(binset.bits[i], binset.bits[j])
    return acc.finalize(variant, binset.bin_t_ns, i, j, separation_um)


def g2_all_pairs(binset: BinaryWindowSet, variant: str = "per_window",
                 pairs=None, separations: dict | None = None) -> dict:
    """Correlograms for every unordered pair (or a chosen subset).

    Bit-identical to calling ``g2_pair`` per pair; the shared-FFT path only
    removes redundant work.
    """
    _validate_variant(variant)
    if pairs is None:
        n = binset.n_pixels
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    acc = MultiPairAccumulator(binset.window_n, binset.max_lag_bins, pairs)
    acc.add(binset)
    return acc.finalize(variant, binset.bin_t_ns, separations)


@dataclass(frozen=True)
class CorrelationMap:
    """Zero-lag g2 across the array; diagonal pinned to the zero-separation
    chaotic reference value 2 by convention (a pixel cannot be correlated
    with itself by splitting, so the ideal autocorrelation value stands in).
    """

    values: np.ndarray    # (P, P) float64
    stderr: np.ndarray    # (P, P), NaN on the diagonal
    n_pixels: int
    diagonal_value: float = 2.0


def zero_lag_map(correlograms: dict, n_pixels: int,
                 diagonal_value: float = 2.0) -> CorrelationMap:
    """Assemble the symmetric zero-lag map from pair correlograms."""
    values = np.full((n_pixels, n_pixels), np.nan)
    stderr = np.full((n_pixels, n_pixels), np.nan)
    np.fill_diagonal(values, diagonal_value)
    for i in range(n_pixels):
        for j in range(i + 1, n_pixels):
            corr = correlograms.get((i, j)) or correlograms.get((j, i))
            if corr is None:
                raise ValueError(f"missing correlogram for pair ({i}, {j})")
            k = corr.zero_lag_index
            v, s = float(corr.g2[k]), float(corr.stderr[k])
            values[i, j] = values[j, i] = v
            stderr[i, j] = stderr[j, i] = s
    return CorrelationMap(values=values, stderr=stderr, n_pixels=n_pixels,
                          diagonal_value=diagonal_value)


# --- CSV ---------------------------------------------------------------------

CORRELOGRAM_CSV_HEADER = "pair_i,pair_j,separation_um,lag_ns,g2,stderr,coincidences,variant"


def write_correlogram_csv(path, corr: Correlogram) -> None:
    lines = [CORRELOGRAM_CSV_HEADER]
    for k in range(len(corr.lag_ns)):
        lines.append(
            f"{corr.pixel_i},{corr.pixel_j},{float(corr.separation_um)!r},"
            f"{float(corr.lag_ns[k])!r},{float(corr.g2[k])!r},"
            f"{float(corr.stderr[k])!r},"
            f"{int(corr.coincidences[k])},{corr.variant}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_correlogram_csv(path) -> Correlogram:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != CORRELOGRAM_CSV_HEADER:
        raise ValueError(f"{path}: not a correlogram CSV")
    rows = [ln.split(",") for ln in lines[1:]]
    if not rows:
        raise ValueError(f"{path}: empty correlogram")
    i, j = int(rows[0][0]), int(rows[0][1])
    sep = float(rows[0][2])
    variant = rows[0][7]
    lag = np.array([float(r[3]) for r in rows])
    g2 = np.array([float(r[4]) for r in rows])
    stderr = np.array([float(r[5]) for r in rows])
    coinc = np.array([int(r[6]) for r in rows], dtype=np.int64)
    return Correlogram(pixel_i=i, pixel_j=j, separation_um=sep, lag_ns=lag,
                       g2=g2, stderr=stderr, coincidences=coinc,
                       variant=variant, n_windows=0)


def write_map_csv(path, cmap: CorrelationMap) -> None:
    lines = [",".join(repr(float(v)) for v in row) for row in cmap.values]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
