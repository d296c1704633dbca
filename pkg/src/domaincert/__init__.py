"""domaincert: certified rejection-sampling guardrails for sequence models.

Wrap a capable generalist model and a small in-domain guide model in a
rejection loop, and compute provable adversarial upper bounds (atomic
and domain certificates) on the probability of emitting any given
response, for every possible prompt. Verified end to end on enumerable
toy models and a synthetic character-task domain.
"""

__version__ = "0.1.0"

from .analysis import (MetaDistribution, RejectionEstimate, ecdf, ecdf_and_histograms,
                       expected_iterations, frr_trr_sweep, likelihood_m_bounds,
                       likelihood_m_exact, meta_distribution, rejection_prob_mc,
                       simulate_valid)
from .adversary import (AttackReport, find_adversary_l, find_adversary_m,
                        prompt_space, verify_bound_under_attack)
from .benchmark import BenchAtEpsResult, bench_at_epsilon, generation_accuracy
from .certificates import (AtomicCertificate, ConstrictionRecord, DomainCertificate,
                           atomic_certificate, constriction_ratio, domain_certificate,
                           renyi_inf_divergence, solve_k_for_epsilon,
                           verify_certificate_soundness)
from .chartask import (CharTaskItem, CharTaskSpec, apply_task, build_dataset,
                       chartask_vocabulary, check_valid_sequence, check_valid_tokens,
                       generate_item)
from .enumeration import EnumeratedSupport, enumerate_support
from .errors import DomainCertError, InputError, ResourceLimitError
from .experiment import ExperimentConfig, load_config, run_experiment
from .models import (ConstantLikelihoodModel, NGramModel, PointMassModel,
                     SeededTabularModel, SequenceModel, TabularModel,
                     apply_temperature, greedy_decode, logprob_conditional,
                     logprob_marginal, sample)
from .sampler import (EvalRecord, ValidConfig, ValidOutcome, acceptance_test,
                      batch_evaluate, run_valid)
from .vocab import Vocabulary

__all__ = [name for name in dir() if not name.startswith("_")]
