"""Exact and Monte Carlo analysis of the rejection loop, plus sweeps.

Covers the exact meta-model likelihood on enumerable models, the
expected number of iterations, binomial-CI estimation of the per-trial
rejection probability, FRR/TRR threshold sweeps and eCDF/histogram
aggregation for reports.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np
from scipy.stats import beta as _beta

from .certificates import _LOG10_2
from .enumeration import EnumeratedSupport, enumerate_support
from .errors import InputError
from .models import logprob_conditional, logprob_marginal, sample
from .sampler import acceptance_test


def geometric_multiplier(phi: float, trials: int) -> float:
    """Sum of phi^t for t < trials: (1 - phi^T) / (1 - phi), exactly T at phi=1."""
    if not 0.0 <= phi <= 1.0:
        raise InputError("phi must lie in [0, 1]")
    if trials < 1:
        raise InputError("trials must be >= 1")
    return float(sum(phi ** t for t in range(trials)))


def expected_iterations(phi: float, trials: int) -> float:
    """Expected number of draws the rejection loop performs."""
    return geometric_multiplier(phi, trials)


# ---------------------------------------------------------------------------
# exact meta-model likelihood on enumerable models


@dataclass
class MetaDistribution:
    """Exact outcome distribution of the rejection loop for one prompt.

    ``m_probs[i]`` is the probability that the loop returns
    ``sequences[i]``; together with ``abstain_prob`` these sum to one.
    """

    sequences: list[tuple[int, ...]]
    l_probs: np.ndarray
    logg_bits: np.ndarray
    accepted: np.ndarray
    phi: float
    multiplier: float
    abstain_prob: float
    truncated_mass: float
    _index: dict | None = field(default=None, repr=False)

    @property
    def m_probs(self) -> np.ndarray:
        return np.where(self.accepted, self.l_probs * self.multiplier, 0.0)

    def prob_of(self, response) -> float:
        if self._index is None:
            self._index = {s: i for i, s in enumerate(self.sequences)}
        i = self._index.get(tuple(response))
        return float(self.m_probs[i]) if i is not None else 0.0

    @property
    def total_mass(self) -> float:
        return float(self.m_probs.sum() + self.abstain_prob)


def meta_distribution(lm, guide, k_bits: float, trials: int, prompt=(),
                      max_len: int = 6, leaf_guard: int = 10_000_000,
                      support: EnumeratedSupport | None = None) -> MetaDistribution:
    """Enumerate the loop's exact outcome distribution for a prompt.

    The per-trial rejection probability is one minus the accepted mass
    (truncated draws count as rejections), and accepted responses are
    scaled by the geometric-series multiplier.
    """
    if trials < 1:
        raise InputError("trials must be >= 1")
    if support is None:
        support = enumerate_support(lm, prompt, max_len, leaf_guard)
    logl = np.log2(support.probs) if len(support.probs) else np.empty(0)
    logg = np.array([logprob_marginal(guide, seq) for seq in support.sequences])
    n_y = np.array([len(seq) for seq in support.sequences], dtype=float)
    accepted = (logl - logg) <= k_bits * n_y if len(logl) else np.zeros(0, dtype=bool)
    phi = min(1.0, max(0.0, 1.0 - float(support.probs[accepted].sum())))
    multiplier = geometric_multiplier(phi, trials)
    return MetaDistribution(support.sequences, support.probs, logg, accepted,
                            phi, multiplier, phi ** trials, support.truncated_mass)


def likelihood_m_exact(lm, guide, k_bits: float, trials: int, prompt, response,
                       max_len: int = 6) -> tuple[float, float]:
    """Exact (M(response | prompt), M(abstain | prompt)) pair."""
    dist = meta_distribution(lm, guide, k_bits, trials, prompt, max_len)
    return dist.prob_of(response), dist.abstain_prob


def likelihood_m_bounds(l_prob: float, estimate: "RejectionEstimate", trials: int,
                        accepted: bool = True) -> tuple[float, float]:
    """Interval for M from a rejection-probability CI (monotone in phi)."""
    if not accepted:
        return 0.0, 0.0
    return (l_prob * geometric_multiplier(estimate.lo, trials),
            l_prob * geometric_multiplier(estimate.hi, trials))


# ---------------------------------------------------------------------------
# Monte Carlo estimation of the per-trial rejection probability


@dataclass(frozen=True)
class RejectionEstimate:
    """Binomial point estimate and confidence interval, clipped to [0, 1]."""

    phi_hat: float
    n: int
    alpha: float
    lo: float
    hi: float
    method: str = "normal"


def rejection_prob_mc(lm, guide, k_bits: float, prompt, n: int,
                      alpha: float = 0.05, max_len: int = 64,
                      rng: np.random.Generator | None = None,
                      method: str = "normal") -> RejectionEstimate:
    """Estimate the per-trial rejection probability by sampling.

    ``method`` is the normal approximation phi +- z * sqrt(phi(1-phi)/n)
    by default; "clopper-pearson" gives exact-coverage bounds that stay
    informative near phi in {0, 1}.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must be in (0, 1)")
    if rng is None:
        rng = np.random.default_rng()
    prompt = tuple(int(t) for t in prompt)
    rejected = 0
    for _ in range(n):
        response, terminated = sample(lm, prompt, max_len, rng)
        if not terminated:
            rejected += 1
            continue
        logl = logprob_conditional(lm, response, prompt)
        logg = logprob_marginal(guide, response)
        if not acceptance_test(logl, logg, len(response), k_bits):
            rejected += 1
    phi_hat = rejected / n
    if method == "normal":
        z = NormalDist().inv_cdf(1.0 - alpha / 2.0)
        half = z * math.sqrt(phi_hat * (1.0 - phi_hat) / n)
        lo, hi = max(0.0, phi_hat - half), min(1.0, phi_hat + half)
    elif method == "clopper-pearson":
        lo = 0.0 if rejected == 0 else float(_beta.ppf(alpha / 2, rejected, n - rejected + 1))
        hi = 1.0 if rejected == n else float(_beta.ppf(1 - alpha / 2, rejected + 1, n - rejected))
    else:
        raise InputError(f"unknown CI method {method!r}")
    return RejectionEstimate(phi_hat, n, alpha, lo, hi, method)


# ---------------------------------------------------------------------------
# vectorized simulation of the full loop (for verifying the exact formulas)


@dataclass
class SimulationResult:
    n_runs: int
    sequence_counts: np.ndarray  # aligned with the meta-distribution's sequences
    abstain_count: int
    mean_iterations: float


def simulate_valid(dist: MetaDistribution, trials: int, n_runs: int,
                   rng: np.random.Generator) -> SimulationResult:
    """Simulate the rejection loop from an enumerated distribution.

    Each trial draws a terminated response (or a truncation event) with
    the model's exact probabilities and applies the acceptance decision;
    the geometric-multiplier formula is never used, so the simulation is
    an independent check of it.
    """
    if n_runs < 1:
        raise InputError("n_runs must be >= 1")
    n_seq = len(dist.sequences)
    p = np.append(dist.l_probs, dist.truncated_mass)
    p = np.maximum(p, 0.0)
    p = p / p.sum()
    acceptable = np.append(dist.accepted, False)
    draws = rng.choice(n_seq + 1, size=(n_runs, trials), p=p)
    ok = acceptable[draws]
    any_ok = ok.any(axis=1)
    first = np.argmax(ok, axis=1)
    iterations = np.where(any_ok, first + 1, trials)
    chosen = draws[np.arange(n_runs), first][any_ok]
    return SimulationResult(
        n_runs,
        np.bincount(chosen, minlength=n_seq + 1)[:n_seq],
        int((~any_ok).sum()),
        float(iterations.mean()),
    )


# ---------------------------------------------------------------------------
# FRR / TRR sweeps


DEFAULT_FRR_TARGETS = (0.0, 0.01, 0.05, 0.10, 0.20, 0.25, 0.50)


@dataclass
class SweepResult:
    k_grid: np.ndarray
    frr: np.ndarray
    trr: np.ndarray
    youden_j: np.ndarray
    cr_quantiles: np.ndarray          # (len(k_grid), 3): 10% / 50% / 90%
    k_at_frr: dict[float, float]
    trials: int
    warnings: list[str] = field(default_factory=list)

    def rows(self):
        for i, k in enumerate(self.k_grid):
            yield (float(k), float(self.frr[i]), float(self.trr[i]),
                   float(self.youden_j[i]), *map(float, self.cr_quantiles[i]))


def make_k_grid(records, points: int = 256, margin: float = 0.10) -> np.ndarray:
    """Evenly spaced thresholds spanning the observed normalized ratios."""
    ratios = [r.norm_ratio_bits for r in records if math.isfinite(r.norm_ratio_bits)]
    if not ratios:
        raise InputError("no finite normalized ratios to span")
    lo, hi = min(ratios), max(ratios)
    pad = (hi - lo) * margin or 1.0
    return np.linspace(lo - pad, hi + pad, points)


def frr_trr_sweep(records, k_grid=None, trials: int = 1,
                  frr_targets=DEFAULT_FRR_TARGETS) -> SweepResult:
    """Per-threshold rejection rates, Youden's J and constriction quantiles.

    FRR is the fraction of ID ground-truth pairs failing the acceptance
    test; TRR the same on OOD pairs. Constriction quantiles (10/50/90%)
    are computed over the OOD records at each threshold. Also reports
    the exact smallest threshold reaching each target FRR.
    """
    records = list(records)
    if not records:
        raise InputError("no records to sweep")
    if k_grid is None:
        k_grid = make_k_grid(records)
    k_grid = np.asarray(k_grid, dtype=float)
    notes = []
    id_ratios = np.array([r.norm_ratio_bits for r in records if r.label == "ID"])
    ood = [r for r in records if r.label == "OOD"]
    if len(id_ratios) == 0 or not ood:
        notes.append("records contain a single label; rates for the missing "
                     "label are reported as NaN")
        warnings.warn(notes[-1])
    ood_ratios = np.array([r.norm_ratio_bits for r in ood])
    ood_logl = np.array([r.logl_bits for r in ood])
    ood_logg = np.array([r.logg_bits for r in ood])
    ood_n = np.array([r.n_y for r in ood], dtype=float)
    frr = np.full(len(k_grid), math.nan)
    trr = np.full(len(k_grid), math.nan)
    crq = np.full((len(k_grid), 3), math.nan)
    for i, k in enumerate(k_grid):
        if len(id_ratios):
            frr[i] = float((id_ratios > k).mean())
        if len(ood):
            trr[i] = float((ood_ratios > k).mean())
            log10_cr = (ood_logl - (k * ood_n + math.log2(trials) + ood_logg)) * _LOG10_2
            crq[i] = np.quantile(log10_cr, (0.1, 0.5, 0.9))
    k_at = {}
    if len(id_ratios):
        ordered = np.sort(id_ratios)
        for target in frr_targets:
            idx = math.ceil((1.0 - target) * len(ordered)) - 1
            if idx < 0:
                continue
            k_at[float(target)] = float(ordered[idx])
    return SweepResult(k_grid, frr, trr, trr - frr, crq, k_at, trials, notes)


def write_sweep_csv(result: SweepResult, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("k", "frr", "trr", "j", "cr_p10", "cr_p50", "cr_p90"))
        for row in result.rows():
            writer.writerow([repr(v) for v in row])


# ---------------------------------------------------------------------------
# eCDF / histogram aggregation


def ecdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Right-continuous empirical CDF: F(v) = fraction of values <= v."""
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        raise InputError("cannot build an eCDF from no values")
    xs, counts = np.unique(values, return_counts=True)
    return xs, np.cumsum(counts) / values.size


def ecdf_and_histograms(values, bins: int = 40) -> dict:
    """Plot-ready eCDF points and a histogram over the same values."""
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        raise InputError("cannot aggregate an empty value list")
    xs, fs = ecdf(values)
    counts, edges = np.histogram(values, bins=bins)
    return {
        "n": int(values.size),
        "ecdf": {"x": xs.tolist(), "cdf": fs.tolist()},
        "histogram": {"bin_edges": edges.tolist(), "counts": counts.tolist()},
        "quantiles": {str(q): float(np.quantile(values, q))
                      for q in (0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95)},
    }
