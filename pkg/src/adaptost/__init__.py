"""Two-stage adaptive TOST for average bioequivalence.

Stagewise combination tests with a binding futility bound, decision-aligned
confidence bounds from shifted p-value families, simultaneous min/max testing
of two endpoints, conditional-power sample-size re-estimation, and a seeded
Monte Carlo simulator for operating characteristics.
"""

from .combine import (Boundaries, CombinationSpec, calibrate_pocock, comb_value,
                      conditional_error, critical_c, middle_prob, overall_p)
from .errors import (AdaptostError, BracketError, CalibrationError, ConfigError,
                     DecompositionError, DegenerateDesignError, DomainError,
                     NumericError, StateError)
from .simulate import (ScenarioConfig, SimulationReport, TrialResult,
                       run_comparator_study, run_study, simulate_trial)
from .ssr import (InterimEstimates, SsrConfig, conditional_power,
                  futility_free_prob, gamma_quantities, maurer_ssr_power,
                  n2_for_cp, required_cp, ssr_bioequiv, ssr_multi, ssr_single,
                  stage1_power)
from .statkit import (RngStream, bvn_cdf, chol, find_root, integrate,
                      mvn_sample, norm_cdf, norm_quantile, t_cdf,
                      wishart_sample)
from .tost import (DesignSpec, HypState, HypothesisOutcome, StageSummary,
                   TostState, check_prop1, ci_bounds, finalize, interim_decide,
                   overall_shifted_p, shifted_bounds, shifted_p, stage_p)
from .twoendpoint import (EndpointCovariance, EndpointPairSummary,
                          MinMaxQuantities, check_prop2, ci_minmax,
                          iu_comparator, minmax, minmax_p, minmax_shifted_p,
                          sigma_from_gamma)

__version__ = "0.1.0"
