"""Closed-form coherence models and weighted least-squares fits.

For a spatially slit-like chaotic source of angular width theta and a
Gaussian spectral line, the field correlation magnitude factorizes into a
spatial sinc and a temporal Gaussian:

    |g1(x, tau)| = |sinc(pi theta x / lambda)| * exp(-pi tau^2 / (2 tau_c^2))

with sinc(u) = sin(u)/u.  Intensity correlations then follow the Siegert
relation with a polarization factor 1/B (B = number of independent
polarization branches, 1 for polarized light, 2 for unpolarized):

    g2(x, tau) = 1 + (1/B) sinc^2(pi theta x / lambda) exp(-pi tau^2 / tau_c^2)

The coherence time of a Gaussian line of FWHM delta_omega (rad/s) is

    tau_c = 2 sqrt(2 pi ln 2) / delta_omega

so a 130 MHz linewidth gives tau_c ~ 5.11 ns.

Reference zero-separation signatures of the three source kinds:

    kind         |g1|   g2
    incoherent    0      1
    coherent      1      1
    chaotic       1      2      (single polarization branch)

Fits are single-parameter weighted Gauss-Newton with analytic Jacobians:
``fit_angular_width`` recovers theta from zero-lag spatial samples,
``fit_coherence_time`` recovers tau_c from a temporal correlogram.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import SourceSpec


class FitDegenerateError(ValueError):
    """Data carries no information about the parameter (flat samples)."""


class FitConvergenceError(RuntimeError):
    """Iteration cap reached before the relative-change criterion."""

    def __init__(self, message, last_estimate):
        super().__init__(message)
        self.last_estimate = last_estimate


_GAUSS_FWHM = 2.0 * math.sqrt(2.0 * math.log(2.0))  # sigma -> FWHM, 2.3548


def coherence_time(delta_omega_rad_s: float) -> float:
    """Coherence time (s) of a Gaussian line with FWHM delta_omega (rad/s)."""
    if delta_omega_rad_s <= 0:
        raise ValueError("delta_omega must be > 0")
    return 2.0 * math.sqrt(2.0 * math.pi * math.log(2.0)) / delta_omega_rad_s


@dataclass(frozen=True)
class ChaoticModelParams:
    theta_rad: float            # source angular width
    wavelength_nm: float
    tau_c_ns: float
    polarization_factor: float  # 1/B: 1.0 polarized, 0.5 unpolarized

    def __post_init__(self):
        if self.theta_rad < 0:
            raise ValueError("theta_rad must be >= 0")
        if self.wavelength_nm <= 0:
            raise ValueError("wavelength_nm must be > 0")
        if self.tau_c_ns <= 0:
            raise ValueError("tau_c_ns must be > 0")
        if not 0.0 < self.polarization_factor <= 1.0:
            raise ValueError("polarization_factor must lie in (0, 1]")

    @classmethod
    def from_source(cls, source: SourceSpec) -> "ChaoticModelParams":
        """Model parameters implied by a chaotic source description."""
        tau_c_s = coherence_time(2.0 * math.pi * source.linewidth_hz)
        return cls(
            theta_rad=source.angular_width_rad,
            wavelength_nm=source.wavelength_nm,
            tau_c_ns=tau_c_s * 1e9,
            polarization_factor=1.0 / source.branches,
        )


def _sinc(u):
    """sin(u)/u with the removable singularity patched by series."""
    u = np.asarray(u, dtype=np.float64)
    small = np.abs(u) < 1e-8
    safe = np.where(small, 1.0, u)
    return np.where(small, 1.0 - u * u / 6.0, np.sin(safe) / safe)


def _dsinc(u):
    """d/du sin(u)/u, series-patched near zero."""
    u = np.asarray(u, dtype=np.float64)
    small = np.abs(u) < 1e-8
    safe = np.where(small, 1.0, u)
    exact = np.cos(safe) / safe - np.sin(safe) / (safe * safe)
    return np.where(small, -u / 3.0 + u ** 3 / 30.0, exact)


def _u_spatial(params: ChaoticModelParams, x_um):
    # x and lambda to a common length unit: x_um / lambda_nm * 1000
    return np.pi * params.theta_rad * np.asarray(x_um, dtype=np.float64) \
        * 1000.0 / params.wavelength_nm


def g1_model(params: ChaoticModelParams, x_um, tau_ns):
    """|g1| for a pair separation x (um) and delay tau (ns)."""
    u = _u_spatial(params, x_um)
    tau = np.asarray(tau_ns, dtype=np.float64)
    return np.abs(_sinc(u)) * np.exp(
        -np.pi * tau ** 2 / (2.0 * params.tau_c_ns ** 2))


def g2_model(params: ChaoticModelParams, x_um, tau_ns):
    """Chaotic-light g2(x, tau) = 1 + (1/B) sinc^2 exp(-pi tau^2/tau_c^2)."""
    u = _u_spatial(params, x_um)
    tau = np.asarray(tau_ns, dtype=np.float64)
    return 1.0 + params.polarization_factor * _sinc(u) ** 2 * np.exp(
        -np.pi * tau ** 2 / params.tau_c_ns ** 2)


def table1_reference(kind: str) -> tuple[float, float]:
    """Ideal (|g1|, g2) signature at zero separation and zero delay.

    Chaotic values are per polarization branch (polarized light).
    """
    table = {
        "incoherent": (0.0, 1.0),
        "coherent": (1.0, 1.0),
        "chaotic": (1.0, 2.0),
    }
    try:
        return table[kind]
    except KeyError:
        raise ValueError(f"unknown source kind {kind!r}") from None


@dataclass(frozen=True)
class FitResult:
    parameter: str
    value: float
    stderr: float      # 1-sigma from the quadratic approximation
    iterations: int
    n_samples: int


_MAX_ITER = 100
_REL_TOL = 1e-10


def _prepare_samples(abscissa, values, sigmas, min_distinct=3):
    x = np.asarray(abscissa, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    s = np.asarray(sigmas, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape or x.shape != s.shape:
        raise ValueError("abscissa, values and sigmas must be equal-length 1-d")
    if x.size < min_distinct or np.unique(x).size < min_distinct:
        raise ValueError(
            f"fit needs at least {min_distinct} samples at distinct abscissae")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise ValueError("samples must be finite")
    if not np.all(s > 0):
        raise ValueError("sigmas must be > 0")
    # deterministic result under input reordering
    order = np.lexsort((s, y, x))
    return x[order], y[order], s[order]


def _gauss_newton(p0, model, jac, y, w, name):
    """Single-parameter weighted Gauss-Newton; returns (p, stderr, iters).

    Steps are backtracked (halved) until the weighted SSE does not increase,
    which rules out the limit cycles plain Gauss-Newton falls into on noisy
    samples.
    """
    p = float(p0)
    r = (model(p) - y) * w
    sse = float(r @ r)
    for it in range(1, _MAX_ITER + 1):
        j = jac(p) * w
        jtj = float(j @ j)
        if jtj <= 0 or not math.isfinite(jtj):
            raise FitDegenerateError(
                f"{name}: zero-information Jacobian at {p!r} "
                "(samples carry no dependence on the parameter)")
        step = -float(j @ r) / jtj
        scale = 1.0
        for _ in range(40):
            p_new = p + scale * step
            r_new = (model(p_new) - y) * w
            sse_new = float(r_new @ r_new)
            if math.isfinite(sse_new) and sse_new <= sse:
                break
            scale *= 0.5
        else:
            p_new, r_new, sse_new = p, r, sse  # no downhill direction left
        if abs(p_new - p) <= _REL_TOL * max(abs(p), 1e-300):
            stderr = 1.0 / math.sqrt(jtj)
            return p_new, stderr, it
        p, r, sse = p_new, r_new, sse_new
    raise FitConvergenceError(
        f"{name}: no convergence after {_MAX_ITER} iterations "
        f"(last estimate {p!r})", last_estimate=p)


def fit_angular_width(params: ChaoticModelParams, x_um, g2_values,
                      sigmas) -> FitResult:
    """Fit the source angular width from zero-lag spatial g2 samples.

    Model: g2(x) = 1 + pf * sinc^2(pi theta x / lambda).  All parameters of
    ``params`` except theta are held fixed; its theta seeds the search grid
    scale but a coarse scan makes the fit robust to a poor starting value.
    """
    x, y, s = _prepare_samples(x_um, g2_values, sigmas)
    if np.all(x == 0.0):
        raise FitDegenerateError("all samples at x = 0 carry no width information")
    pf = params.polarization_factor
    scale = 1000.0 * np.pi / params.wavelength_nm  # u = scale * theta * x

    def model(theta):
        return 1.0 + pf * _sinc(scale * theta * x) ** 2

    def jac(theta):
        u = scale * theta * x
        return pf * 2.0 * _sinc(u) * _dsinc(u) * scale * x

    x_max = float(np.max(np.abs(x[x != 0])))
    # coarse scan over the first sinc lobe and a little beyond; GN polishes
    u_grid = np.linspace(0.05, 2.0 * np.pi, 64)
    theta_grid = u_grid / (scale * x_max)
    w = 1.0 / s
    sse = [float((((model(t) - y) * w) ** 2).sum()) for t in theta_grid]
    theta0 = float(theta_grid[int(np.argmin(sse))])
    theta, stderr, it = _gauss_newton(theta0, model, jac, y, w,
                                      "fit_angular_width")
    # model is even in theta; report the physical branch
    return FitResult("theta_rad", abs(theta), stderr, it, x.size)


def fit_coherence_time(params: ChaoticModelParams, tau_ns, g2_values,
                       sigmas, x_um: float = 0.0) -> FitResult:
    """Fit tau_c from a temporal correlogram at fixed pair separation.

    Model: g2(tau) = 1 + pf * sinc^2(pi theta x / lambda) * exp(-pi tau^2/tau_c^2)
    with the spatial factor frozen at the given separation (default x = 0).
    """
    tau, y, s = _prepare_samples(tau_ns, g2_values, sigmas)
    if np.all(tau == 0.0):
        raise FitDegenerateError("all samples at tau = 0 carry no width information")
    amp = params.polarization_factor * float(_sinc(_u_spatial(params, x_um)) ** 2)
    if amp <= 0:
        raise FitDegenerateError("spatial factor vanishes at this separation")

    def model(tc):
        # np.float64 plus errstate so an absurd iterate saturates to inf/0
        # instead of raising; step control and the Jacobian guard take over
        tc = np.float64(tc)
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            return 1.0 + amp * np.exp(-np.pi * tau ** 2 / tc ** 2)

    def jac(tc):
        tc = np.float64(tc)
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            e = np.exp(-np.pi * tau ** 2 / tc ** 2)
            return amp * e * 2.0 * np.pi * tau ** 2 / tc ** 3

    w = 1.0 / s
    tau_max = float(np.max(np.abs(tau[tau != 0])))
    tc_grid = np.geomspace(tau_max / 30.0, tau_max * 3.0, 48)
    sse = [float((((model(tc) - y) * w) ** 2).sum()) for tc in tc_grid]
    tc0 = float(tc_grid[int(np.argmin(sse))])
    tc, stderr, it = _gauss_newton(tc0, model, jac, y, w, "fit_coherence_time")
    return FitResult("tau_c_ns", abs(tc), stderr, it, tau.size)
