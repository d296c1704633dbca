"""Adversarial upper bounds on generating specific responses.

The rejection loop with threshold k_bits, trial budget T and guide G
bounds the meta-model's likelihood of any response y, for every prompt:
M(y|x) <= 2^(k_bits * N_y) * T * G(y). The atomic certificate stores
that bound in log2 space; the domain certificate takes the worst case
over a dataset of forbidden responses. ``verify_certificate_soundness``
checks the bound exhaustively on enumerable models.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .enumeration import enumerate_support
from .errors import InputError
from .models import logprob_marginal

_LOG10_2 = math.log10(2.0)

# linear epsilon underflows to zero below this (see materialize_epsilon)
_MIN_NORMAL_LOG2 = -1022.0


@dataclass(frozen=True)
class AtomicCertificate:
    """Upper bound (in bits) on emitting one response, for any prompt."""

    log2_eps: float
    n_y: int
    log2_g: float
    k_bits: float
    trials: int

    @property
    def log10_eps(self) -> float:
        return self.log2_eps * _LOG10_2


def atomic_from_score(log2_g: float, n_y: int, k_bits: float, trials: int) -> AtomicCertificate:
    """Build the bound from a precomputed guide score."""
    if trials < 1:
        raise InputError("trials must be >= 1")
    if n_y < 1:
        raise InputError("n_y must be >= 1")
    log2_eps = k_bits * n_y + math.log2(trials) + log2_g
    return AtomicCertificate(log2_eps, n_y, log2_g, k_bits, trials)


def atomic_certificate(guide, response, k_bits: float, trials: int) -> AtomicCertificate:
    """Score the response under the guide and assemble the bound."""
    response = tuple(int(t) for t in response)
    return atomic_from_score(logprob_marginal(guide, response), len(response),
                             k_bits, trials)


def materialize_epsilon(log2_eps: float) -> tuple[float, bool]:
    """Linear-space epsilon for display; flags underflow to zero."""
    if log2_eps < _MIN_NORMAL_LOG2:
        return 0.0, True
    return 2.0 ** log2_eps, False


@dataclass(frozen=True)
class DomainCertificate:
    """Worst-case atomic bound over a forbidden-response dataset."""

    log2_eps: float
    k_bits: float
    trials: int
    witness_id: str
    dataset_fingerprint: str
    robust_quantile: float
    n_items: int

    @property
    def log10_eps(self) -> float:
        return self.log2_eps * _LOG10_2

    def to_json_dict(self) -> dict:
        eps, underflowed = materialize_epsilon(self.log2_eps)
        return {
            "k_bits": self.k_bits,
            "T": self.trials,
            "log2_eps": self.log2_eps,
            "log10_eps": self.log10_eps,
            "epsilon": eps,
            "epsilon_underflowed_to_zero": underflowed,
            "witness_id": self.witness_id,
            "dataset_fingerprint": self.dataset_fingerprint,
            "robust_quantile": self.robust_quantile,
            "n_items": self.n_items,
        }


def dataset_fingerprint(responses) -> str:
    payload = json.dumps([[int(t) for t in y] for y in responses])
    return hashlib.sha256(payload.encode()).hexdigest()


def _quantile_value(values: np.ndarray, quantile: float) -> tuple[float, int]:
    """Order statistic at the quantile (1.0 = true max) and its index."""
    order = np.argsort(values, kind="stable")
    idx = order[max(0, math.ceil(quantile * len(values)) - 1)]
    return float(values[idx]), int(idx)


def domain_certificate_from_scores(log2_g, n_y, k_bits: float, trials: int,
                                   ids=None, fingerprint: str = "",
                                   robust_quantile: float = 1.0) -> DomainCertificate:
    """Aggregate per-item bounds; ties break to the earliest dataset item."""
    log2_g = np.asarray(log2_g, dtype=float)
    n_y = np.asarray(n_y, dtype=float)
    if len(log2_g) == 0:
        raise InputError("domain certificate needs a non-empty dataset")
    if not 0.0 < robust_quantile <= 1.0:
        raise InputError("robust_quantile must be in (0, 1]")
    if trials < 1:
        raise InputError("trials must be >= 1")
    ids = [str(i) for i in ids] if ids is not None else [str(i) for i in range(len(log2_g))]
    values = k_bits * n_y + math.log2(trials) + log2_g
    level, _ = _quantile_value(values, robust_quantile)
    witness = ids[int(np.flatnonzero(values == level)[0])]
    return DomainCertificate(level, k_bits, trials, witness, fingerprint,
                             robust_quantile, len(values))


def domain_certificate(guide, responses, k_bits: float, trials: int, ids=None,
                       robust_quantile: float = 1.0) -> DomainCertificate:
    """Worst-case atomic certificate over a response dataset."""
    responses = [tuple(int(t) for t in y) for y in responses]
    scores = [logprob_marginal(guide, y) for y in responses]
    return domain_certificate_from_scores(
        scores, [len(y) for y in responses], k_bits, trials, ids=ids,
        fingerprint=dataset_fingerprint(responses), robust_quantile=robust_quantile)


# ---------------------------------------------------------------------------
# inverting the certificate for a target epsilon


def solve_k_from_scores(log2_g, n_y, trials: int, epsilon: float,
                        robust_quantile: float = 1.0,
                        k_floor: float = -1e6) -> float:
    """Largest k_bits whose domain certificate stays at log2(epsilon).

    With the true max (quantile 1.0) this is the per-item closed form
    minimized over items; for robust quantiles below 1 the level is
    found by bisection on the (strictly increasing) quantile curve.
    """
    log2_g = np.asarray(log2_g, dtype=float)
    n_y = np.asarray(n_y, dtype=float)
    if len(log2_g) == 0:
        raise InputError("cannot solve for k on an empty dataset")
    if not 0.0 < epsilon <= 1.0:
        raise InputError("epsilon must be in (0, 1]")
    target = math.log2(epsilon)
    finite = np.isfinite(log2_g)
    if not finite.any():
        warnings.warn("all guide scores are zero; any threshold certifies")
        return math.inf
    per_item = (target - math.log2(trials) - log2_g[finite]) / n_y[finite]
    if robust_quantile >= 1.0:
        k = float(per_item.min())
    else:
        lo, hi = float(per_item.min()), float(per_item.max())
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            level, _ = _quantile_value(mid * n_y + math.log2(trials) + log2_g,
                                       robust_quantile)
            if level <= target:
                lo = mid
            else:
                hi = mid
        k = lo
    if k < k_floor:
        warnings.warn(f"solved threshold {k} bits/token lies below the floor {k_floor}")
    return k


def solve_k_for_epsilon(guide, responses, trials: int, epsilon: float,
                        robust_quantile: float = 1.0, k_floor: float = -1e6) -> float:
    responses = [tuple(int(t) for t in y) for y in responses]
    scores = [logprob_marginal(guide, y) for y in responses]
    return solve_k_from_scores(scores, [len(y) for y in responses], trials,
                               epsilon, robust_quantile, k_floor)


# ---------------------------------------------------------------------------
# constriction: how much tighter is the meta-model than its base model


@dataclass(frozen=True)
class ConstrictionRecord:
    """log10 of (base-model bound / meta-model bound) for one response.

    The base-model bound is approximated from below by the observed
    non-adversarial likelihood, so the recorded constriction is itself a
    lower bound on the true tightening.
    """

    log10_cr: float
    logl_bits: float
    log2_eps: float


def constriction_ratio(logl_bits: float, certificate: AtomicCertificate) -> ConstrictionRecord:
    return ConstrictionRecord((logl_bits - certificate.log2_eps) * _LOG10_2,
                              logl_bits, certificate.log2_eps)


# ---------------------------------------------------------------------------
# order-infinity divergence over an enumerated support


def renyi_inf_divergence(p_probs, q_probs) -> float:
    """Max over the support of log2 p - log2 q, in bits.

    +inf when q vanishes somewhere p does not; entries with p == 0 are
    outside the support and ignored.
    """
    p = np.asarray(p_probs, dtype=float)
    q = np.asarray(q_probs, dtype=float)
    if p.shape != q.shape:
        raise InputError("score vectors must align over the same support")
    mask = p > 0
    if not mask.any():
        raise InputError("p has empty support")
    if (q[mask] == 0).any():
        return math.inf
    return float(np.max(np.log2(p[mask]) - np.log2(q[mask])))


# ---------------------------------------------------------------------------
# exhaustive soundness check on enumerable models


@dataclass
class SoundnessReport:
    n_prompts: int
    n_checks: int
    violations: list[dict]
    max_margin_bits: float  # max of log2 M - log2 bound; <= ~0 when sound

    @property
    def sound(self) -> bool:
        return not self.violations


def verify_certificate_soundness(lm, guide, k_grid, trials_grid,
                                 max_response_len: int, max_prompt_len: int,
                                 rel_tol: float = 1e-12,
                                 leaf_guard: int = 10_000_000) -> SoundnessReport:
    """Check M(y|x) <= 2^(k N_y) T G(y) for every prompt and response.

    Enumerates all prompts up to ``max_prompt_len`` over the vocabulary
    and the full response distribution for each, computing the exact
    meta-model likelihood from the enumerated rejection mass.
    """
    from .adversary import prompt_space  # local import to avoid a cycle

    slack = math.log2(1.0 + rel_tol)
    guide_scores: dict[tuple[int, ...], float] = {}
    report = SoundnessReport(0, 0, [], -math.inf)
    for prompt in prompt_space(lm.vocab, max_prompt_len, leaf_guard):
        report.n_prompts += 1
        support = enumerate_support(lm, prompt, max_response_len, leaf_guard)
        logl = np.log2(support.probs)
        logg = np.empty(len(support.sequences))
        n_y = np.empty(len(support.sequences))
        for i, seq in enumerate(support.sequences):
            if seq not in guide_scores:
                guide_scores[seq] = logprob_marginal(guide, seq)
            logg[i] = guide_scores[seq]
            n_y[i] = len(seq)
        for k_bits in k_grid:
            accepted = (logl - logg) <= k_bits * n_y
            phi = max(0.0, 1.0 - float(support.probs[accepted].sum()))
            for trials in trials_grid:
                multiplier = sum(phi ** t for t in range(trials))  # >= 1
                log_m = np.where(accepted, logl + math.log2(multiplier), -math.inf)
                log_bound = k_bits * n_y + math.log2(trials) + logg
                with np.errstate(invalid="ignore"):
                    margin = log_m - log_bound
                finite = np.isfinite(margin)
                if finite.any():
                    report.max_margin_bits = max(report.max_margin_bits,
                                                 float(margin[finite].max()))
                report.n_checks += len(support.sequences)
                bad = np.flatnonzero(margin > slack)
                for i in bad:
                    report.violations.append({
                        "prompt": list(prompt), "response": list(support.sequences[i]),
                        "k_bits": k_bits, "T": trials,
                        "log2_m": float(log_m[i]), "log2_bound": float(log_bound[i]),
                    })
    return report
