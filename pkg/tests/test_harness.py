import json
import math
import os

import numpy as np
import pytest

from hbtsim.config import (ArrayGeometry, ConfigError, DetectorSpec,
                           RunConfig, SourceSpec, TimeGrid, save_config)
from hbtsim.harness import (EXPERIMENT_KINDS, QUICK_SCALE, ExperimentSpec,
                            HarnessError, accumulate_pair, accumulate_pairs,
                            chaotic_binsets, constant_binsets,
                            load_experiment, parse_pairs, run_experiment,
                            segment_windows, spec_config_sha256)

QUIET = DetectorSpec(pde=0.25, dead_time_ns=0.0, jitter_fwhm_ps=80.0,
                     dcr_hz=7.5)


def chaotic_cfg(rate=5e6, m=4000, seed=3, **grid_kw):
    kw = dict(sim_dt_ps=1000, bin_t_ns=4.0, window_n=20, window_m=m,
              max_lag_bins=5)
    kw.update(grid_kw)
    return RunConfig(
        geometry=ArrayGeometry(),
        source=SourceSpec(kind="chaotic", mean_rate_hz=rate,
                          angular_width_rad=0.9e-2),
        detector=QUIET,
        grid=TimeGrid(**kw),
        seed=seed,
    )


def coherent_cfg(rate=1e7, m=100_000, seed=5):
    return RunConfig(
        geometry=ArrayGeometry(rows=1, cols=2),
        source=SourceSpec(kind="coherent", mean_rate_hz=rate),
        detector=DetectorSpec(pde=0.25, dead_time_ns=0.0, jitter_fwhm_ps=0.0,
                              dcr_hz=0.0),
        grid=TimeGrid(sim_dt_ps=1000, bin_t_ns=1.0, window_n=100,
                      window_m=m, max_lag_bins=5),
        seed=seed,
    )


def test_parse_pairs():
    assert parse_pairs("5-6;0-15") == ((5, 6), (0, 15))
    assert parse_pairs("") == ()
    assert parse_pairs(" 0-1 ; ") == ((0, 1),)
    with pytest.raises(ConfigError, match="bad pair '0:15'"):
        parse_pairs("0:15")
    with pytest.raises(ConfigError, match="bad pair"):
        parse_pairs("0-x")


def test_experiment_spec_validation():
    cfg = chaotic_cfg()
    with pytest.raises(ConfigError, match="experiment.kind"):
        ExperimentSpec(run=cfg, kind="sideways")
    with pytest.raises(ConfigError, match="experiment.variant"):
        ExperimentSpec(run=cfg, variant="strange")
    with pytest.raises(ConfigError, match="k_modes"):
        ExperimentSpec(run=cfg, k_modes=0)
    with pytest.raises(ConfigError, match="missing pixel"):
        ExperimentSpec(run=cfg, pairs=((0, 40),))
    with pytest.raises(ConfigError, match="itself"):
        ExperimentSpec(run=cfg, pairs=((3, 3),))
    assert set(EXPERIMENT_KINDS) == {"temporal_pair", "spatial_row",
                                     "full_map", "method_compare",
                                     "table1_suite"}


def test_load_experiment_and_config_hash(tmp_path):
    cfg = chaotic_cfg()
    path = tmp_path / "exp.cfg"
    save_config(path, cfg, experiment={"experiment.kind": "spatial_row",
                                       "experiment.variant": "global",
                                       "experiment.pairs": "0-1;0-3",
                                       "experiment.k_modes": 256})
    spec = load_experiment(path)
    assert spec.kind == "spatial_row"
    assert spec.variant == "global"
    assert spec.pairs == ((0, 1), (0, 3))
    assert spec.k_modes == 256
    assert spec.run == cfg
    h1 = spec_config_sha256(spec)
    assert len(h1) == 64 and h1 == spec_config_sha256(spec)
    other = ExperimentSpec(run=chaotic_cfg(seed=4), kind="spatial_row",
                           variant="global", pairs=((0, 1), (0, 3)),
                           k_modes=256)
    assert spec_config_sha256(other) != h1


def test_segment_windows_partition():
    grid = TimeGrid(sim_dt_ps=500, bin_t_ns=1.0, window_n=100, window_m=1,
                    max_lag_bins=50)
    sizes = segment_windows(grid, 4, 1_000_000)
    assert sum(sizes) == 1_000_000
    assert len(set(sizes[:-1])) <= 1          # equal full segments
    assert all(s >= 1 for s in sizes)
    # memory budget: pixels * span_bins * steps_per_bin * m_seg <= 24e6
    assert 4 * 150 * 2 * max(sizes) <= 24_000_000
    # the constant-envelope budget is the occupancy array, much larger
    big = segment_windows(grid, 2, 1_000_000, constant=True)
    assert sum(big) == 1_000_000
    assert len(big) <= len(sizes)
    assert segment_windows(grid, 4, 3) == [3]
    with pytest.raises(ValueError):
        segment_windows(grid, 4, 0)


def test_chaotic_binsets_layout_and_virtual_pair():
    cfg = chaotic_cfg(m=60)
    sets = list(chaotic_binsets(cfg, [0, 5], 64, total_m=60))
    assert sum(b.n_windows for b in sets) == 60
    for b in sets:
        assert b.n_pixels == 2
        assert b.span_bins == cfg.grid.window_span_bins
    vp = list(chaotic_binsets(cfg, [5], 64, total_m=20, virtual_pair=True))
    assert all(b.n_pixels == 2 for b in vp)
    with pytest.raises(ValueError, match="chaotic"):
        next(iter(chaotic_binsets(coherent_cfg(), [0], 64, total_m=1)))


def test_constant_binsets_layout():
    cfg = coherent_cfg(m=50)
    sets = list(constant_binsets(cfg, n_channels=3, total_m=50))
    assert sum(b.n_windows for b in sets) == 50
    assert all(b.n_pixels == 3 for b in sets)


def test_accumulate_pairs_matches_single_pair():
    cfg = chaotic_cfg(m=150)
    sets = list(chaotic_binsets(cfg, [0, 1, 2], 64, total_m=150))
    multi = accumulate_pairs(sets, cfg.grid, "global",
                             [(0, 1), (0, 2)],
                             labels={(0, 1): (0, 1), (0, 2): (0, 2)},
                             separations={(0, 1): 30.0, (0, 2): 60.0})
    solo = accumulate_pair(sets, cfg.grid, "global", 0, 1,
                           separation_um=30.0, row_i=0, row_j=1)
    np.testing.assert_array_equal(multi[(0, 1)].g2, solo.g2)
    np.testing.assert_array_equal(multi[(0, 1)].coincidences,
                                  solo.coincidences)
    assert multi[(0, 2)].separation_um == 60.0


def test_virtual_pair_bunching_is_visible():
    # zero-separation virtual pair on polarized chaotic light should show
    # clear bunching even in a short accumulation
    src = SourceSpec(kind="chaotic", mean_rate_hz=5e6,
                     polarization="polarized")
    cfg = RunConfig(geometry=ArrayGeometry(), source=src, detector=QUIET,
                    grid=TimeGrid(sim_dt_ps=500, bin_t_ns=1.0, window_n=50,
                                  window_m=12000, max_lag_bins=10),
                    seed=11)
    corr = accumulate_pair(
        chaotic_binsets(cfg, [0], 256, total_m=12000, virtual_pair=True),
        cfg.grid, "global", 0, 1, separation_um=0.0)
    assert corr.n_windows == 12000
    assert corr.g2_at_zero() > 1.4
    tail = corr.g2[np.abs(corr.lag_ns) > 8.0]
    assert np.all(np.isfinite(tail))
    assert abs(np.nanmean(tail) - 1.0) < 0.15


def test_run_temporal_pair_artifacts(tmp_path):
    cfg = chaotic_cfg(m=4000)
    spec = ExperimentSpec(run=cfg, kind="temporal_pair", variant="global",
                          pairs=((5, 6), (0, 15)), k_modes=128)
    bundle = run_experiment(spec, out_dir=tmp_path / "out")
    assert bundle.kind == "temporal_pair"
    names = set(bundle.artifacts)
    assert {"correlogram_5_6.csv", "correlogram_0_15.csv",
            "fit.json"} <= names
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["format_version"] == 1
    assert man["kind"] == "temporal_pair"
    assert man["config_sha256"] == spec_config_sha256(spec)
    assert man["windows_total"] == 4000
    assert man["quick"] is False
    assert "aborted_stage" not in man
    assert man["wall_time_s"] >= 0.0
    assert set(man["artifacts"]) == names
    fit = json.loads((tmp_path / "out" / "fit.json").read_text())
    assert fit["fit"] == "coherence_time_ns"
    assert math.isfinite(fit["value"]) and fit["value"] > 0
    assert fit["model_tau_c_ns"] == pytest.approx(5.109865155907386)
    summ = man["summary"]
    assert set(summ["pairs"]) == {"5-6", "0-15"}
    # pixels 5 and 6 are one pitch apart along x; 0 and 15 are far apart,
    # so the predicted zero-lag excess must be much larger for 5-6
    m56 = summ["pairs"]["5-6"]["model_g2_zero"]
    m015 = summ["pairs"]["0-15"]["model_g2_zero"]
    assert m56 > 1.15 and m015 < 1.05


def test_run_spatial_row_artifacts(tmp_path):
    cfg = chaotic_cfg(m=2500, max_lag_bins=2)
    spec = ExperimentSpec(run=cfg, kind="spatial_row", variant="global",
                          k_modes=128)
    bundle = run_experiment(spec, out_dir=tmp_path / "o")
    text = (tmp_path / "o" / "spatial_g2.csv").read_text().splitlines()
    assert text[0] == "pair_i,pair_j,separation_um,g2_zero,stderr,model_g2_zero"
    assert len(text) == 1 + 6  # 4 pixels in row 0 -> 6 pairs
    seps = [float(ln.split(",")[2]) for ln in text[1:]]
    assert sorted(set(seps)) == [30.0, 60.0, 90.0]
    models = {float(ln.split(",")[2]): float(ln.split(",")[5])
              for ln in text[1:]}
    assert models[30.0] == pytest.approx(1.2071088263138656, rel=1e-9)
    fit = json.loads((tmp_path / "o" / "fit.json").read_text())
    assert fit["fit"] == "angular_width_rad"
    assert math.isfinite(fit["value"]) and fit["value"] > 0
    assert bundle.summary["fitted_angular_width_rad"] == fit["value"]


def test_run_full_map_artifacts(tmp_path):
    cfg = RunConfig(
        geometry=ArrayGeometry(rows=2, cols=2),
        source=SourceSpec(kind="chaotic", mean_rate_hz=5e6,
                          angular_width_rad=0.9e-2),
        detector=QUIET,
        grid=TimeGrid(sim_dt_ps=1000, bin_t_ns=4.0, window_n=10,
                      window_m=1500, max_lag_bins=0),
        seed=9,
    )
    spec = ExperimentSpec(run=cfg, kind="full_map", variant="global",
                          k_modes=128)
    run_experiment(spec, out_dir=tmp_path / "m")
    rows = (tmp_path / "m" / "map.csv").read_text().strip().split("\n")
    vals = np.array([[float(v) for v in r.split(",")] for r in rows])
    assert vals.shape == (4, 4)
    np.testing.assert_array_equal(vals, vals.T)
    np.testing.assert_array_equal(np.diag(vals), np.full(4, 2.0))
    meta = json.loads((tmp_path / "m" / "map.meta.json").read_text())
    assert meta["rows"] == 2 and meta["cols"] == 2
    assert meta["diagonal_value"] == 2.0
    assert len(meta["pixel_positions_um"]) == 4
    assert meta["pixel_positions_um"][3] == [30.0, 43.0]
    assert len(meta["stderr"]) == 4


def test_run_method_compare(tmp_path):
    spec = ExperimentSpec(run=coherent_cfg(m=100_000), kind="method_compare",
                          variant="per_window")
    bundle = run_experiment(spec, out_dir=tmp_path / "c")
    names = set(bundle.artifacts)
    assert {"compare_multiphoton.csv", "compare_startstop.csv",
            "compare_analytic.csv"} <= names
    s = bundle.summary
    mu = s["accepted_stop_rate_hz"]
    assert mu == pytest.approx(1e7, rel=0.05)
    # the start-stop histogram shows the exponential artifact...
    assert s["startstop_at_50ns"] == pytest.approx(
        s["startstop_expected_at_50ns"], abs=0.08)
    assert s["startstop_at_50ns"] < 0.75
    # ...while the windowed estimator stays flat at 1
    assert s["multiphoton_max_abs_z"] < 5.0
    analytic = (tmp_path / "c" / "compare_analytic.csv").read_text().splitlines()
    assert analytic[0] == "lag_ns,startstop_expected,startstop_linearized,multiphoton_expected"
    row = analytic[1].split(",")
    assert float(row[3]) == 1.0


def test_method_compare_rejects_chaotic(tmp_path):
    spec = ExperimentSpec(run=chaotic_cfg(m=10), kind="method_compare")
    with pytest.raises(HarnessError, match="method_compare"):
        run_experiment(spec, out_dir=tmp_path / "x")
    man = json.loads((tmp_path / "x" / "manifest.json").read_text())
    assert man["aborted_stage"] == "method_compare"


def test_run_table1_suite(tmp_path):
    cfg = RunConfig(
        geometry=ArrayGeometry(),
        source=SourceSpec(kind="chaotic", mean_rate_hz=2.5e6),
        detector=QUIET,
        grid=TimeGrid(sim_dt_ps=1000, bin_t_ns=4.0, window_n=25,
                      window_m=20000, max_lag_bins=5),
        seed=21,
    )
    spec = ExperimentSpec(run=cfg, kind="table1_suite", k_modes=256)
    bundle = run_experiment(spec, out_dir=tmp_path / "t")
    lines = (tmp_path / "t" / "table1.csv").read_text().splitlines()
    assert lines[0] == ("kind,g1_reference,g2_reference,g1_proxy_measured,"
                        "g2_measured,g2_stderr")
    rows = [ln.split(",") for ln in lines[1:]]
    assert [r[0] for r in rows] == ["incoherent", "coherent", "chaotic"]
    assert [float(r[2]) for r in rows] == [1.0, 1.0, 2.0]
    g2 = {r[0]: float(r[4]) for r in rows}
    assert 0.5 < g2["incoherent"] < 1.5
    assert 0.5 < g2["coherent"] < 1.5
    assert 1.2 < g2["chaotic"] < 2.8
    assert g2["chaotic"] > max(g2["coherent"], g2["incoherent"])
    assert "single-mode source" in bundle.summary["note"]


def test_quick_scales_windows(tmp_path):
    cfg = RunConfig(
        geometry=ArrayGeometry(rows=1, cols=2),
        source=SourceSpec(kind="coherent", mean_rate_hz=1e7),
        detector=DetectorSpec(pde=0.25, dead_time_ns=0.0,
                              jitter_fwhm_ps=0.0, dcr_hz=0.0),
        grid=TimeGrid(sim_dt_ps=1000, bin_t_ns=1.0, window_n=100,
                      window_m=100_000, max_lag_bins=5),
        seed=5,
    )
    spec = ExperimentSpec(run=cfg, kind="method_compare")
    run_experiment(spec, out_dir=tmp_path / "q", quick=True)
    man = json.loads((tmp_path / "q" / "manifest.json").read_text())
    assert man["quick"] is True
    assert man["windows_total"] == 100_000 // QUICK_SCALE


def _small_map_cfg(seed):
    return RunConfig(
        geometry=ArrayGeometry(rows=2, cols=2),
        source=SourceSpec(kind="chaotic", mean_rate_hz=5e6,
                          angular_width_rad=0.9e-2),
        detector=QUIET,
        grid=TimeGrid(sim_dt_ps=1000, bin_t_ns=4.0, window_n=10,
                      window_m=800, max_lag_bins=0),
        seed=seed,
    )


def test_run_experiment_determinism(tmp_path):
    spec = ExperimentSpec(run=_small_map_cfg(3), kind="full_map",
                          variant="global", k_modes=64)
    run_experiment(spec, out_dir=tmp_path / "a")
    run_experiment(spec, out_dir=tmp_path / "b")
    ca = (tmp_path / "a" / "map.csv").read_bytes()
    assert ca == (tmp_path / "b" / "map.csv").read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    ma.pop("wall_time_s"), mb.pop("wall_time_s")
    assert ma == mb
    # a different master seed must change the data
    spec2 = ExperimentSpec(run=_small_map_cfg(4), kind="full_map",
                           variant="global", k_modes=64)
    run_experiment(spec2, out_dir=tmp_path / "c")
    assert (tmp_path / "c" / "map.csv").read_bytes() != ca
