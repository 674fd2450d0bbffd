"""Desk-scale photon-correlation experiment on a simulated SPAD array.

The package synthesizes photon streams with controlled statistics (single
mode, bandwidth-unresolved, or narrowband chaotic), detects them with a
realistic single-photon detector model (efficiency, dead time, jitter, dark
counts), and estimates the second-order coherence g2(x, tau) with a windowed
multiphoton estimator that stays unbiased where the classic start-stop
histogram does not.
"""

__version__ = "0.1.0"

from .config import (ArrayGeometry, ConfigError, DetectorSpec, RunConfig,
                     SourceSpec, TimeGrid, config_from_text, config_to_text,
                     load_config, load_config_values, pair_separation,
                     pixel_position, save_config)
from .model import (ChaoticModelParams, FitConvergenceError,
                    FitDegenerateError, FitResult, coherence_time,
                    fit_angular_width, fit_coherence_time, g1_model, g2_model,
                    table1_reference)
from .fieldsynth import (IntensityTrace, ModeSet, TraceFormatError, field_g1,
                         load_intensity, sample_modes, save_intensity,
                         synth_field, synth_intensity,
                         synth_intensity_coherent, synth_intensity_incoherent,
                         virtual_pair_trace)
from .spad import (BinaryWindowSet, EventFormatError, EventStream,
                   ResolutionError, binarize, detect_events,
                   events_from_times, expected_rate_nonparalyzable,
                   load_events, save_events, slice_events)
from .correlator import (CorrelationMap, Correlogram, MultiPairAccumulator,
                         PairAccumulator, g2_all_pairs, g2_pair,
                         read_correlogram_csv, write_correlogram_csv,
                         write_map_csv, zero_lag_map)
from .startstop import (StartStopHistogram, normalize_histogram,
                        poisson_startstop_curve,
                        poisson_startstop_linearized, start_stop_histogram,
                        write_startstop_csv)
from .harness import (EXPERIMENT_KINDS, ExperimentSpec, HarnessError,
                      ResultBundle, accumulate_pair, accumulate_pairs,
                      chaotic_binsets, constant_binsets, import_events,
                      load_experiment, parse_pairs, run_experiment)

__all__ = [name for name in dir() if not name.startswith("_")]
