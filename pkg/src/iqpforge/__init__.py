"""iqpforge: classical training and analysis of IQP-family generative models."""

from .circuits import (AngleRef, Bipartition, BoundCircuit, Circuit,
                       CircuitFamily, ConnectivityGraph, Gate,
                       NotBipartiteError, OddCycleError, bind, build_family,
                       check_bipartite, circuit_from_json, circuit_to_json,
                       connectivity_graph, phase_feature_map,
                       random_ensemble_instance)
from .forrelation import (DegenerateSampleError, EstimatorResult,
                          ForrelationEngine, LatentState, PhasePolynomial,
                          alpha_amplitude, beta_amplitude, estimate_forrelation,
                          estimate_gamma, estimate_p_bitstring, estimate_p_zero,
                          estimate_zz_expectation, grad_forrelation, grad_p,
                          m_for_precision, phase_polynomial, sample_p)
from .statevector import (CapacityError, ProbabilityTable, SampleCounts,
                          StateVector, dqgm_sampling_distribution,
                          dqgm_training_probability, expectation_gamma,
                          expectation_zz, full_distribution,
                          parameter_shift_grad, probability,
                          read_probability_table, sample, sample_table,
                          simulate, write_probability_table)
from .training import (Checkpoint, GaussianMixtureKernel, TargetDistribution,
                       TrainConfig, TrainingDivergence, gaussian_target,
                       identity_padding_init, load_checkpoint, loss_gradient,
                       mmd_loss, mse_loss, save_checkpoint, train_dqgm,
                       train_qcbm)
from .diagnostics import (DiagnosticsReport, TrialDiagnostics,
                          anti_concentration_fraction, ensemble_study,
                          porter_thomas_probs, porter_thomas_tv, run_trial,
                          t_sparse_curve, xeb_delta_h)
from .tncomplexity import (ContractionPlan, TensorNetwork, circuit_to_network,
                           complexity_sweep, contract, greedy_plan)

__version__ = "0.1.0"
