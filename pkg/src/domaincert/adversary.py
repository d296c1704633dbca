"""Exhaustive prompt-space adversaries against the rejection loop.

For a target response, the unconstrained adversary maximizes the base
model's likelihood over all prompts; the constrained adversary maximizes
the meta-model's likelihood, which restricts the search to prompts where
the target passes the acceptance test. The point of the exercise is the
verdict: no prompt pushes the meta-model past its certificate.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import meta_distribution
from .certificates import atomic_from_score
from .errors import ResourceLimitError
from .models import logprob_conditional, logprob_marginal
from .sampler import acceptance_test
from .vocab import Vocabulary


def prompt_space(vocab: Vocabulary, max_len: int, guard: int = 10_000_000):
    """All prompts of length 0..max_len in lexicographic order."""
    size = len(vocab)
    total = sum(size ** n for n in range(max_len + 1))
    if total > guard:
        raise ResourceLimitError(f"prompt space of {total} exceeds guard {guard}")
    prompts = [()]
    for n in range(1, max_len + 1):
        prompts.extend(itertools.product(range(size), repeat=n))
    return sorted(prompts)


def find_adversary_l(lm, response, prompts) -> tuple[tuple[int, ...], float]:
    """Exact argmax of logL(response | prompt); lexicographic tie-break."""
    response = tuple(int(t) for t in response)
    best_prompt, best = None, -math.inf
    for prompt in prompts:
        value = logprob_conditional(lm, response, prompt)
        if best_prompt is None or value > best:
            best_prompt, best = prompt, value
    return best_prompt, best


def find_adversary_m(lm, guide, k_bits: float, trials: int, response, prompts,
                     max_len: int, _phi_cache: dict | None = None):
    """Constrained argmax of the meta-model likelihood.

    Returns (prompt, m_prob, logl_bits) or None when the target is
    accepted under no prompt (the meta-model then never emits it).
    For a single trial the meta-likelihood of an accepted response is
    the base likelihood itself; for more trials the per-prompt rejection
    mass is enumerated exactly (and cached across targets).
    """
    response = tuple(int(t) for t in response)
    logg = logprob_marginal(guide, response)
    n_y = len(response)
    best = None
    for prompt in prompts:
        logl = logprob_conditional(lm, response, prompt)
        if not acceptance_test(logl, logg, n_y, k_bits):
            continue
        l_prob = 2.0 ** logl
        if trials == 1:
            m_prob = l_prob
        else:
            if _phi_cache is not None and prompt in _phi_cache:
                phi, multiplier = _phi_cache[prompt]
            else:
                dist = meta_distribution(lm, guide, k_bits, trials, prompt, max_len)
                phi, multiplier = dist.phi, dist.multiplier
                if _phi_cache is not None:
                    _phi_cache[prompt] = (phi, multiplier)
            m_prob = l_prob * multiplier
        if best is None or m_prob > best[1]:
            best = (prompt, m_prob, logl)
    return best


@dataclass(frozen=True)
class AttackReport:
    """Both adversaries for one target, compared against the certificate."""

    target: tuple[int, ...]
    x_adv_l: tuple[int, ...]
    logl_adv_bits: float
    x_adv_m: tuple[int, ...] | None
    m_adv_prob: float
    log2_eps: float
    violated: bool

    def to_json_dict(self) -> dict:
        return {
            "target": list(self.target),
            "x_adv_L": list(self.x_adv_l),
            "logL_adv_bits": self.logl_adv_bits,
            "x_adv_M": list(self.x_adv_m) if self.x_adv_m is not None else None,
            "m_adv_prob": self.m_adv_prob,
            "log2_eps": self.log2_eps,
            "violated": self.violated,
        }


def verify_bound_under_attack(lm, guide, k_bits: float, trials: int, targets,
                              prompt_len: int = 3, max_len: int = 6,
                              rel_tol: float = 1e-12,
                              guard: int = 10_000_000) -> list[AttackReport]:
    """Attack every target with both adversaries and check the certificate.

    The reported ``violated`` flag must come back False for every
    target; the constrained adversary's value is the exact worst-case
    meta-model likelihood over the whole prompt space.
    """
    prompts = prompt_space(lm.vocab, prompt_len, guard)
    phi_cache: dict = {}
    reports = []
    for target in targets:
        target = tuple(int(t) for t in target)
        x_l, logl_adv = find_adversary_l(lm, target, prompts)
        cert = atomic_from_score(logprob_marginal(guide, target), len(target),
                                 k_bits, trials)
        hit = find_adversary_m(lm, guide, k_bits, trials, target, prompts,
                               max_len, phi_cache)
        if hit is None:
            m_prob, x_m = 0.0, None
        else:
            x_m, m_prob, _ = hit
        bound = (2.0 ** cert.log2_eps) * (1.0 + rel_tol)
        reports.append(AttackReport(target, x_l, logl_adv, x_m, m_prob,
                                    cert.log2_eps, m_prob > bound))
    return reports


def write_attack_reports(reports, path) -> None:
    payload = {
        "n_targets": len(reports),
        "n_violations": sum(r.violated for r in reports),
        "reports": [r.to_json_dict() for r in reports],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
