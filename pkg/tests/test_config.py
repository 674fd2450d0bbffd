import pytest

from hbtsim.config import (ArrayGeometry, ConfigError, DetectorSpec, RunConfig,
                           SourceSpec, TimeGrid, config_from_text,
                           config_to_text, load_config, load_config_values,
                           pair_separation, parse_config_text, pixel_position,
                           save_config)

MINIMAL = "source.kind = chaotic\nsource.mean_rate_hz = 2.5e6\n"


def test_defaults_match_documented_hardware():
    g = ArrayGeometry()
    assert (g.rows, g.cols) == (4, 4)
    assert g.pitch_x_um == 30.0 and g.pitch_y_um == 43.0
    assert g.active_diameter_um == 3.5
    assert g.n_pixels == 16
    d = DetectorSpec()
    assert d.pde == 0.25 and d.dead_time_ns == 15.0
    assert d.jitter_fwhm_ps == 80.0 and d.dcr_hz == 7.5
    s = SourceSpec(kind="chaotic", mean_rate_hz=1.0)
    assert s.wavelength_nm == 546.0 and s.linewidth_hz == 130e6
    assert s.angular_width_rad == 0.01 and s.branches == 2


def test_pixel_position_row_major():
    g = ArrayGeometry()
    assert pixel_position(g, 0) == (0.0, 0.0)
    assert pixel_position(g, 5) == (30.0, 43.0)
    assert pixel_position(g, 15) == (90.0, 129.0)
    with pytest.raises(ConfigError):
        pixel_position(g, 16)
    with pytest.raises(ConfigError):
        pixel_position(g, -1)


def test_pair_separation_euclidean():
    g = ArrayGeometry()
    assert pair_separation(g, 0, 1) == 30.0
    assert pair_separation(g, 0, 4) == 43.0
    assert pair_separation(g, 0, 15) == pytest.approx(157.29272074701996, rel=1e-12)
    assert pair_separation(g, 15, 0) == pair_separation(g, 0, 15)


def test_source_validation():
    with pytest.raises(ConfigError):
        SourceSpec(kind="laser", mean_rate_hz=1.0)
    with pytest.raises(ConfigError):
        SourceSpec(kind="chaotic", mean_rate_hz=-1.0)
    with pytest.raises(ConfigError):
        SourceSpec(kind="chaotic", mean_rate_hz=1.0, polarization="circular")
    with pytest.raises(ConfigError):
        SourceSpec(kind="chaotic", mean_rate_hz=1.0, linewidth_hz=0.0)
    # constant-envelope kinds do not require a linewidth
    SourceSpec(kind="coherent", mean_rate_hz=1.0, linewidth_hz=0.0)
    assert SourceSpec(kind="chaotic", mean_rate_hz=1.0,
                      polarization="polarized").branches == 1


def test_detector_validation():
    with pytest.raises(ConfigError):
        DetectorSpec(pde=1.5)
    with pytest.raises(ConfigError):
        DetectorSpec(dead_time_ns=-1.0)
    with pytest.raises(ConfigError):
        DetectorSpec(jitter_fwhm_ps=-0.1)
    with pytest.raises(ConfigError):
        DetectorSpec(dcr_hz=-1.0)


def test_grid_validation_and_derived():
    t = TimeGrid(sim_dt_ps=500, bin_t_ns=1.0, window_n=100, window_m=10,
                 max_lag_bins=50)
    assert t.bin_ps == 1000
    assert t.window_span_bins == 150
    assert t.window_span_ps == 150_000
    lags = t.lags_ns()
    assert len(lags) == 101 and lags[0] == -50.0 and lags[-1] == 50.0
    with pytest.raises(ConfigError):
        TimeGrid(sim_dt_ps=0)
    with pytest.raises(ConfigError):
        TimeGrid(bin_t_ns=0.0001)  # 0.1 ps, not a whole ps
    with pytest.raises(ConfigError):
        TimeGrid(sim_dt_ps=300, bin_t_ns=1.0)  # 1000 % 300 != 0
    with pytest.raises(ConfigError):
        TimeGrid(max_lag_bins=-1)
    # lag margin may exceed the window length
    assert TimeGrid(window_n=100, max_lag_bins=100).window_span_bins == 200


def test_parse_minimal_and_defaults():
    cfg = config_from_text(MINIMAL)
    assert cfg.source.kind == "chaotic"
    assert cfg.source.mean_rate_hz == 2.5e6
    assert cfg.geometry == ArrayGeometry()
    assert cfg.detector == DetectorSpec()
    assert cfg.seed == 1


def test_parse_comments_blanks_and_inline_values():
    text = "# heading\n\nsource.kind = coherent\n source.mean_rate_hz=1e6  \n"
    cfg = config_from_text(text)
    assert cfg.source.kind == "coherent"
    assert cfg.source.mean_rate_hz == 1e6


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("source.kind = chaotic\nnot a binding\n")
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("source.knid = chaotic\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("run.seed = 1\nrun.seed = 2\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("source.kind =\n")


def test_missing_required_key():
    with pytest.raises(ConfigError, match="source.mean_rate_hz"):
        config_from_text("source.kind = chaotic\n")


def test_type_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="line 3"):
        config_from_text(MINIMAL + "grid.window_n = soon\n")
    with pytest.raises(ConfigError, match="integer"):
        config_from_text(MINIMAL + "grid.window_n = 10.5\n")


def test_roundtrip_text(tmp_path):
    cfg = RunConfig(
        geometry=ArrayGeometry(rows=2, cols=3, pitch_x_um=25.0),
        source=SourceSpec(kind="chaotic", mean_rate_hz=3.3e6,
                          angular_width_rad=0.9e-2, polarization="polarized"),
        detector=DetectorSpec(pde=0.4, dead_time_ns=0.0),
        grid=TimeGrid(sim_dt_ps=250, bin_t_ns=0.5, window_n=64, window_m=128,
                      max_lag_bins=10),
        seed=77,
    )
    assert config_from_text(config_to_text(cfg)) == cfg
    path = tmp_path / "roundtrip.cfg"
    save_config(path, cfg, experiment={"experiment.kind": "full_map",
                                       "experiment.k_modes": 256})
    assert load_config(path) == cfg
    vals = load_config_values(path)
    assert vals["experiment.kind"] == "full_map"
    assert vals["experiment.k_modes"] == 256
    assert vals["experiment.variant"] == "per_window"  # default preserved


def test_typed_values_cover_every_schema_key(tmp_path):
    path = tmp_path / "m.cfg"
    path.write_text(MINIMAL)
    from hbtsim.config import _SCHEMA
    vals = load_config_values(path)
    assert set(vals) == set(_SCHEMA)


def test_non_experiment_key_rejected_in_experiment_dict():
    cfg = config_from_text(MINIMAL)
    with pytest.raises(ConfigError):
        config_to_text(cfg, experiment={"run.seed": 9})
