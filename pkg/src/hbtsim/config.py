"""Experiment description types and the flat text config format.

A run is described by four value objects plus a master seed:

* :class:`ArrayGeometry`  -- the detector array layout (pixel grid, pitches)
* :class:`SourceSpec`     -- the light source (kind, line, angular size, rate)
* :class:`DetectorSpec`   -- per-pixel detector response (PDE, dead time,
  timing jitter, dark counts)
* :class:`TimeGrid`       -- simulation step, correlation bin width, window
  layout for the windowed estimator

Config files are flat UTF-8 text, one ``key = value`` binding per line, with
``#`` starting a comment.  Keys are namespaced with dots; the known
namespaces are ``geometry``, ``source``, ``detector``, ``grid``, ``run`` and
``experiment``.  Unknown keys are hard errors (typos must not silently turn
into defaults).  Omitted optional keys take the defaults below; only
``source.kind`` and ``source.mean_rate_hz`` are required.

Units are part of the key names: ``_um`` micrometres, ``_nm`` nanometres,
``_ns`` nanoseconds, ``_ps`` picoseconds, ``_hz`` hertz, ``_rad`` radians.

Pixel indexing is row-major: pixel ``i`` sits at row ``i // cols``,
column ``i % cols``, at position ``(col * pitch_x_um, row * pitch_y_um)``.
The x axis runs along a row; the spatial coherence model varies along x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    """Raised for malformed config text or invalid parameter values."""


SOURCE_KINDS = ("coherent", "chaotic", "incoherent")
POLARIZATIONS = ("polarized", "unpolarized")


@dataclass(frozen=True)
class ArrayGeometry:
    rows: int = 4
    cols: int = 4
    pitch_x_um: float = 30.0   # pixel spacing along a row
    pitch_y_um: float = 43.0   # row spacing
    active_diameter_um: float = 3.5  # active n-well size, metadata only

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("geometry.rows and geometry.cols must be >= 1")
        if self.pitch_x_um <= 0 or self.pitch_y_um <= 0:
            raise ConfigError("geometry pitches must be > 0")
        if self.active_diameter_um < 0:
            raise ConfigError("geometry.active_diameter_um must be >= 0")

    @property
    def n_pixels(self) -> int:
        return self.rows * self.cols


def pixel_position(geometry: ArrayGeometry, index: int) -> tuple[float, float]:
    """(x, y) position of a pixel centre in micrometres, row-major indexing."""
    if not 0 <= index < geometry.n_pixels:
        raise ConfigError(
            f"pixel index {index} out of range 0..{geometry.n_pixels - 1}")
    row, col = divmod(index, geometry.cols)
    return (col * geometry.pitch_x_um, row * geometry.pitch_y_um)


def pair_separation(geometry: ArrayGeometry, i: int, j: int) -> float:
    """Euclidean centre-to-centre distance between pixels i and j (um)."""
    xi, yi = pixel_position(geometry, i)
    xj, yj = pixel_position(geometry, j)
    return math.hypot(xi - xj, yi - yj)


@dataclass(frozen=True)
class SourceSpec:
    kind: str                       # coherent | chaotic | incoherent
    mean_rate_hz: float             # detected-rate target per pixel
    wavelength_nm: float = 546.0    # mercury green line
    linewidth_hz: float = 130e6     # Gaussian FWHM in frequency (chaotic)
    angular_width_rad: float = 0.01  # source angular size seen from the array
    polarization: str = "unpolarized"

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ConfigError(
                f"source.kind must be one of {SOURCE_KINDS}, got {self.kind!r}")
        if self.mean_rate_hz < 0:
            raise ConfigError("source.mean_rate_hz must be >= 0")
        if self.wavelength_nm <= 0:
            raise ConfigError("source.wavelength_nm must be > 0")
        if self.polarization not in POLARIZATIONS:
            raise ConfigError(
                f"source.polarization must be one of {POLARIZATIONS}, "
                f"got {self.polarization!r}")
        if self.kind == "chaotic":
            # coherent/incoherent synthesis ignores these, chaotic needs them
            if self.linewidth_hz <= 0:
                raise ConfigError("source.linewidth_hz must be > 0 for chaotic")
            if self.angular_width_rad < 0:
                raise ConfigError("source.angular_width_rad must be >= 0")

    @property
    def branches(self) -> int:
        """Number of independent polarization branches (1 or 2)."""
        return 1 if self.polarization == "polarized" else 2


@dataclass(frozen=True)
class DetectorSpec:
    pde: float = 0.25             # photon detection efficiency at 546 nm
    dead_time_ns: float = 15.0    # non-paralyzable
    jitter_fwhm_ps: float = 80.0  # Gaussian timing jitter, FWHM
    dcr_hz: float = 7.5           # dark count rate per pixel

    def __post_init__(self):
        if not 0.0 <= self.pde <= 1.0:
            raise ConfigError("detector.pde must lie in [0, 1]")
        if self.dead_time_ns < 0:
            raise ConfigError("detector.dead_time_ns must be >= 0")
        if self.jitter_fwhm_ps < 0:
            raise ConfigError("detector.jitter_fwhm_ps must be >= 0")
        if self.dcr_hz < 0:
            raise ConfigError("detector.dcr_hz must be >= 0")


@dataclass(frozen=True)
class TimeGrid:
    sim_dt_ps: int = 100      # intensity sampling / thinning step
    bin_t_ns: float = 1.0     # correlation bin width T
    window_n: int = 100       # bins N correlated per window
    window_m: int = 100_000   # number of windows M
    max_lag_bins: int = 50    # largest |lag| in bins

    def __post_init__(self):
        if self.sim_dt_ps < 1:
            raise ConfigError("grid.sim_dt_ps must be a positive integer")
        if self.bin_t_ns <= 0:
            raise ConfigError("grid.bin_t_ns must be > 0")
        bin_ps = self.bin_t_ns * 1000.0
        if abs(bin_ps - round(bin_ps)) > 1e-9:
            raise ConfigError("grid.bin_t_ns must be a whole number of ps")
        if round(bin_ps) % self.sim_dt_ps != 0:
            raise ConfigError(
                "grid.bin_t_ns must be an integer multiple of grid.sim_dt_ps")
        if self.window_n < 1:
            raise ConfigError("grid.window_n must be >= 1")
        if self.window_m < 1:
            raise ConfigError("grid.window_m must be >= 1")
        if self.max_lag_bins < 0:
            raise ConfigError("grid.max_lag_bins must be >= 0")

    @property
    def bin_ps(self) -> int:
        return round(self.bin_t_ns * 1000.0)

    @property
    def window_span_bins(self) -> int:
        """Bins stored per window: N plus the lag margin."""
        return self.window_n + self.max_lag_bins

    @property
    def window_span_ps(self) -> int:
        return self.window_span_bins * self.bin_ps

    def lags_ns(self):
        """Symmetric lag axis -L..L in units of the bin width, as floats."""
        import numpy as np
        return np.arange(-self.max_lag_bins, self.max_lag_bins + 1) * self.bin_t_ns


@dataclass(frozen=True)
class RunConfig:
    geometry: ArrayGeometry
    source: SourceSpec
    detector: DetectorSpec
    grid: TimeGrid
    seed: int


# --- config file schema -----------------------------------------------------
# name -> (coercion, default); REQUIRED marks keys without defaults.

_REQUIRED = object()


def _coerce_int(key, raw, line):
    try:
        v = int(raw, 0)
    except ValueError:
        try:
            f = float(raw)
        except ValueError:
            raise ConfigError(f"line {line}: {key} expects an integer, got {raw!r}")
        if f != int(f):
            raise ConfigError(f"line {line}: {key} expects an integer, got {raw!r}")
        v = int(f)
    return v


def _coerce_float(key, raw, line):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"line {line}: {key} expects a number, got {raw!r}")


def _coerce_str(key, raw, line):
    return raw


_SCHEMA: dict[str, tuple] = {
    "geometry.rows": (_coerce_int, 4),
    "geometry.cols": (_coerce_int, 4),
    "geometry.pitch_x_um": (_coerce_float, 30.0),
    "geometry.pitch_y_um": (_coerce_float, 43.0),
    "geometry.active_diameter_um": (_coerce_float, 3.5),
    "source.kind": (_coerce_str, _REQUIRED),
    "source.mean_rate_hz": (_coerce_float, _REQUIRED),
    "source.wavelength_nm": (_coerce_float, 546.0),
    "source.linewidth_hz": (_coerce_float, 130e6),
    "source.angular_width_rad": (_coerce_float, 0.01),
    "source.polarization": (_coerce_str, "unpolarized"),
    "detector.pde": (_coerce_float, 0.25),
    "detector.dead_time_ns": (_coerce_float, 15.0),
    "detector.jitter_fwhm_ps": (_coerce_float, 80.0),
    "detector.dcr_hz": (_coerce_float, 7.5),
    "grid.sim_dt_ps": (_coerce_int, 100),
    "grid.bin_t_ns": (_coerce_float, 1.0),
    "grid.window_n": (_coerce_int, 100),
    "grid.window_m": (_coerce_int, 100_000),
    "grid.max_lag_bins": (_coerce_int, 50),
    "run.seed": (_coerce_int, 1),
    # experiment.* is consumed by the harness; listed here so the parser can
    # tell a harness key from a typo
    "experiment.kind": (_coerce_str, "temporal_pair"),
    "experiment.variant": (_coerce_str, "per_window"),
    "experiment.pairs": (_coerce_str, ""),
    "experiment.output_dir": (_coerce_str, "results"),
    "experiment.k_modes": (_coerce_int, 1024),
}


def parse_config_text(text: str) -> dict[str, tuple[str, int]]:
    """Parse config text into {key: (raw_value, line_number)}.

    Grammar only; no typing or defaults.  Raises ConfigError with the
    offending line number on malformed lines, unknown keys and duplicates.
    """
    out: dict[str, tuple[str, int]] = {}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {rawline!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(
                f"line {lineno}: duplicate key {key!r} "
                f"(first set on line {out[key][1]})")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        out[key] = (value, lineno)
    return out


def _typed_values(kv: dict[str, tuple[str, int]]) -> dict:
    vals = {}
    for key, (coerce, default) in _SCHEMA.items():
        if key in kv:
            raw, line = kv[key]
            vals[key] = coerce(key, raw, line)
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key {key!r}")
        else:
            vals[key] = default
    return vals


def config_from_text(text: str) -> RunConfig:
    """Build a validated RunConfig from config text."""
    vals = _typed_values(parse_config_text(text))
    return _run_config_from_values(vals)


def _run_config_from_values(vals: dict) -> RunConfig:
    geometry = ArrayGeometry(
        rows=vals["geometry.rows"],
        cols=vals["geometry.cols"],
        pitch_x_um=vals["geometry.pitch_x_um"],
        pitch_y_um=vals["geometry.pitch_y_um"],
        active_diameter_um=vals["geometry.active_diameter_um"],
    )
    source = SourceSpec(
        kind=vals["source.kind"],
        mean_rate_hz=vals["source.mean_rate_hz"],
        wavelength_nm=vals["source.wavelength_nm"],
        linewidth_hz=vals["source.linewidth_hz"],
        angular_width_rad=vals["source.angular_width_rad"],
        polarization=vals["source.polarization"],
    )
    detector = DetectorSpec(
        pde=vals["detector.pde"],
        dead_time_ns=vals["detector.dead_time_ns"],
        jitter_fwhm_ps=vals["detector.jitter_fwhm_ps"],
        dcr_hz=vals["detector.dcr_hz"],
    )
    grid = TimeGrid(
        sim_dt_ps=vals["grid.sim_dt_ps"],
        bin_t_ns=vals["grid.bin_t_ns"],
        window_n=vals["grid.window_n"],
        window_m=vals["grid.window_m"],
        max_lag_bins=vals["grid.max_lag_bins"],
    )
    return RunConfig(geometry, source, detector, grid, seed=vals["run.seed"])


def load_config(path) -> RunConfig:
    """Load and validate a run description from a config file."""
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_text(fh.read())


def load_config_values(path) -> dict:
    """Typed values for every schema key (harness view, experiment.* included)."""
    with open(path, "r", encoding="utf-8") as fh:
        return _typed_values(parse_config_text(fh.read()))


def config_to_text(cfg: RunConfig, experiment: dict | None = None) -> str:
    """Render a RunConfig to canonical config text.

    Every core key is written explicitly so a saved file does not silently
    change meaning if package defaults move.  ``experiment`` may carry extra
    ``experiment.*`` bindings (string/int values) to append.
    """
    g, s, d, t = cfg.geometry, cfg.source, cfg.detector, cfg.grid
    lines = [
        "# hbtsim run description",
        f"geometry.rows = {g.rows}",
        f"geometry.cols = {g.cols}",
        f"geometry.pitch_x_um = {g.pitch_x_um!r}",
        f"geometry.pitch_y_um = {g.pitch_y_um!r}",
        f"geometry.active_diameter_um = {g.active_diameter_um!r}",
        f"source.kind = {s.kind}",
        f"source.mean_rate_hz = {s.mean_rate_hz!r}",
        f"source.wavelength_nm = {s.wavelength_nm!r}",
        f"source.linewidth_hz = {s.linewidth_hz!r}",
        f"source.angular_width_rad = {s.angular_width_rad!r}",
        f"source.polarization = {s.polarization}",
        f"detector.pde = {d.pde!r}",
        f"detector.dead_time_ns = {d.dead_time_ns!r}",
        f"detector.jitter_fwhm_ps = {d.jitter_fwhm_ps!r}",
        f"detector.dcr_hz = {d.dcr_hz!r}",
        f"grid.sim_dt_ps = {t.sim_dt_ps}",
        f"grid.bin_t_ns = {t.bin_t_ns!r}",
        f"grid.window_n = {t.window_n}",
        f"grid.window_m = {t.window_m}",
        f"grid.max_lag_bins = {t.max_lag_bins}",
        f"run.seed = {cfg.seed}",
    ]
    if experiment:
        for key in sorted(experiment):
            if key not in _SCHEMA or not key.startswith("experiment."):
                raise ConfigError(f"not an experiment key: {key!r}")
            lines.append(f"{key} = {experiment[key]}")
    return "\n".join(lines) + "\n"


def save_config(path, cfg: RunConfig, experiment: dict | None = None) -> None:
    """Write canonical config text; load_config(save_config(c)) == c."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg, experiment))
