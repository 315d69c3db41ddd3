"""Power-constrained distributed estimation of a Gaussian vector.

Sensors quantize noisy linear observations of a common Gaussian parameter,
modulate the bits, and transmit over noisy fading channels to a fusion
center.  This package provides the analytical machinery around that
pipeline: Bayesian and classical Fisher information, the Weiss-Weinstein
bound, LMMSE and quasi-BLUE estimators with closed-form error matrices,
four transmit-power allocation schemes, and a Monte-Carlo simulator used to
cross-validate every analytical quantity.
"""

from .channel import (BitErrorProfile, bit_error, decision_threshold,
                      transition_matrix)
from .errors import (CandidateRejectedError, ConfigError, ConvergenceError,
                     DivergenceError, DomainError, NotSpdError, QsenseError,
                     SolverError, UnsupportedConfigError)
from .estimator import (MomentSet, MseReport, centralized_mse, closed_form_integrals,
                        lmmse_estimate, lmmse_mse, moment_set, mse_trace,
                        quasi_blue_estimate, quasi_blue_mse)
from .fim import (FisherReport, bayesian_fim, beta, beta_dot, classical_fim,
                  expected_score, mi_lower_bound, sensor_score)
from .mcsim import (EmpiricalReport, IndependenceReport,
                    empirical_conditional_independence, simulate)
from .model import (ChannelQuality, Coherent, GaussianPrior, NetworkModel,
                    NoncoherentEnvelope, NoncoherentStats, SensorSpec,
                    attenuation_gains, channel_quality, random_deployment, snr)
from .numerics import (GaussQuadRule, bivariate_q, expect_over_gaussian,
                       gauss_hermite_rule, gaussian_q, marcum_q)
from .powalloc import (KktCertificate, PowerAllocation, SolverOptions,
                       allocate_logdet_fim, allocate_mse_min, allocate_qblue_min,
                       allocate_tr_fim, gradient_tr_fim, hessian_diag_tr_fim,
                       tr_fim_objective, logdet_fim_objective, uniform_allocation,
                       verify_kkt)
from .quantizer import (QuantizerSpec, encode, hamming, lloyd_max_quantizer,
                        observation_std, quantize, quantizer_distortion,
                        uniform_quantizer, uniform_quantizer_from_sigma)
from .wwb import (TestPointSet, WwbCandidate, default_test_points, mu,
                  weiss_weinstein_bound, wwb_candidate, wwb_supremum)

__version__ = "0.1.0"
