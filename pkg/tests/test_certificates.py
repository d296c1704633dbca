import math

import numpy as np
import pytest

from domaincert import (InputError, atomic_certificate, constriction_ratio,
                        domain_certificate, enumerate_support, likelihood_m_exact,
                        logprob_marginal, renyi_inf_divergence, solve_k_for_epsilon,
                        verify_certificate_soundness)
from domaincert.certificates import (atomic_from_score,
                                     domain_certificate_from_scores,
                                     solve_k_from_scores)

from conftest import seeded_pair


def random_responses(vocab, n, rng, max_body=4):
    out = []
    for _ in range(n):
        body = tuple(int(t) for t in rng.integers(0, len(vocab) - 2,
                                                  size=rng.integers(1, max_body)))
        out.append(body + (vocab.eos_id,))
    return out


class TestAtomicCertificate:
    def test_reduces_to_guide_score(self, toy_vocab, enumerable_pair):
        _, guide = enumerable_pair
        y = (0, toy_vocab.eos_id)
        cert = atomic_certificate(guide, y, k_bits=0.0, trials=1)
        assert cert.log2_eps == logprob_marginal(guide, y)

    def test_doubling_trials_adds_one_bit(self, toy_vocab, enumerable_pair):
        _, guide = enumerable_pair
        y = (1, 2, toy_vocab.eos_id)
        for trials in (1, 2, 4, 8):
            a = atomic_certificate(guide, y, 0.5, trials)
            b = atomic_certificate(guide, y, 0.5, 2 * trials)
            assert b.log2_eps - a.log2_eps == pytest.approx(1.0, abs=1e-12)

    def test_bounds_exact_meta_likelihood_everywhere(self, toy_vocab):
        """Exact-likelihood oracle over all prompts up to length 2."""
        lm, guide = seeded_pair(41, toy_vocab, max_response_len=4)
        prompts = [()] + [(a,) for a in range(5)] + [
            (a, b) for a in range(5) for b in range(5)]
        k_bits, trials = 0.8, 2
        support = enumerate_support(lm, (), 4)
        for prompt in prompts:
            for seq in support.sequences[::7]:
                m_prob, _ = likelihood_m_exact(lm, guide, k_bits, trials,
                                               prompt, seq, max_len=4)
                cert = atomic_certificate(guide, seq, k_bits, trials)
                assert m_prob <= 2.0 ** cert.log2_eps * (1 + 1e-12)

    def test_validation(self, enumerable_pair):
        _, guide = enumerable_pair
        with pytest.raises(InputError):
            atomic_certificate(guide, (0, 4), 0.0, trials=0)


class TestDomainCertificate:
    def test_singleton_equals_atomic(self, toy_vocab, enumerable_pair):
        _, guide = enumerable_pair
        y = (2, toy_vocab.eos_id)
        cert = domain_certificate(guide, [y], 0.25, 2)
        atom = atomic_certificate(guide, y, 0.25, 2)
        assert cert.log2_eps == atom.log2_eps
        assert cert.witness_id == "0"

    def test_adding_items_never_shrinks(self, toy_vocab, enumerable_pair):
        _, guide = enumerable_pair
        rng = np.random.default_rng(8)
        responses = random_responses(toy_vocab, 30, rng)
        previous = -math.inf
        for n in range(1, 31):
            cert = domain_certificate(guide, responses[:n], 0.5, 1)
            assert cert.log2_eps >= previous
            previous = cert.log2_eps

    def test_matches_brute_force_max(self, toy_vocab, enumerable_pair):
        """Recomputation oracle: max over individually computed bounds."""
        _, guide = enumerable_pair
        rng = np.random.default_rng(9)
        responses = random_responses(toy_vocab, 100, rng)
        cert = domain_certificate(guide, responses, 0.7, 3)
        atoms = [atomic_certificate(guide, y, 0.7, 3).log2_eps for y in responses]
        assert cert.log2_eps == max(atoms)
        assert cert.witness_id == str(min(i for i, a in enumerate(atoms)
                                          if a == max(atoms)))

    def test_trials_scaling_is_exact(self, toy_vocab, enumerable_pair):
        _, guide = enumerable_pair
        rng = np.random.default_rng(10)
        responses = random_responses(toy_vocab, 20, rng)
        base = domain_certificate(guide, responses, 0.3, 1).log2_eps
        for trials in (2, 4, 8):
            scaled = domain_certificate(guide, responses, 0.3, trials).log2_eps
            assert 2.0 ** (scaled - base) == pytest.approx(trials, rel=1e-12)
        for trials in (3, 5):
            scaled = domain_certificate(guide, responses, 0.3, trials).log2_eps
            assert scaled - base == pytest.approx(math.log2(trials), abs=1e-12)

    def test_robust_quantile_softens_the_max(self):
        scores = list(range(-50, 0))  # one per item, lengths all one
        full = domain_certificate_from_scores(scores, [1] * 50, 0.0, 1)
        robust = domain_certificate_from_scores(scores, [1] * 50, 0.0, 1,
                                                robust_quantile=0.9)
        assert robust.log2_eps < full.log2_eps
        assert full.log2_eps == -1.0  # max of -50..-1

    def test_empty_dataset_rejected(self, enumerable_pair):
        with pytest.raises(InputError):
            domain_certificate(enumerable_pair[1], [], 0.0, 1)

    def test_json_report_fields(self, toy_vocab, enumerable_pair):
        _, guide = enumerable_pair
        cert = domain_certificate(guide, [(0, toy_vocab.eos_id)], 1.0, 2)
        payload = cert.to_json_dict()
        for key in ("k_bits", "T", "log2_eps", "log10_eps", "witness_id",
                    "dataset_fingerprint", "robust_quantile"):
            assert key in payload
        assert payload["T"] == 2


class TestSolveK:
    def test_round_trips_to_target(self, toy_vocab, enumerable_pair):
        _, guide = enumerable_pair
        rng = np.random.default_rng(11)
        responses = random_responses(toy_vocab, 40, rng)
        for eps in (1.0, 1e-2, 1e-6, 1e-12):
            k = solve_k_for_epsilon(guide, responses, 2, eps)
            cert = domain_certificate(guide, responses, k, 2)
            assert cert.log2_eps == pytest.approx(math.log2(eps), abs=1e-9)

    def test_singleton_closed_form(self, toy_vocab, enumerable_pair):
        _, guide = enumerable_pair
        y = (0, 1, toy_vocab.eos_id)
        eps = 1e-4
        k = solve_k_for_epsilon(guide, [y], 1, eps)
        expected = (math.log2(eps) - logprob_marginal(guide, y)) / len(y)
        assert k == pytest.approx(expected, abs=1e-12)

    def test_matches_bisection_oracle(self, toy_vocab, enumerable_pair):
        """Independent bisection on the certificate level."""
        _, guide = enumerable_pair
        rng = np.random.default_rng(12)
        responses = random_responses(toy_vocab, 25, rng)
        eps, trials = 1e-5, 2
        k = solve_k_for_epsilon(guide, responses, trials, eps)
        lo, hi = -60.0, 60.0
        for _ in range(200):
            mid = (lo + hi) / 2
            level = domain_certificate(guide, responses, mid, trials).log2_eps
            if level <= math.log2(eps):
                lo = mid
            else:
                hi = mid
        assert k == pytest.approx(lo, abs=1e-9)

    def test_epsilon_validation(self, toy_vocab, enumerable_pair):
        _, guide = enumerable_pair
        with pytest.raises(InputError):
            solve_k_for_epsilon(guide, [(0, toy_vocab.eos_id)], 1, 0.0)
        with pytest.raises(InputError):
            solve_k_for_epsilon(guide, [(0, toy_vocab.eos_id)], 1, 1.5)

    def test_floor_warning(self):
        with pytest.warns(UserWarning):
            solve_k_from_scores([-5.0], [1], 1, 1e-30, k_floor=-10.0)


class TestConstriction:
    def test_zero_at_equality(self):
        cert = atomic_from_score(-12.0, 3, 1.0, 1)  # log2_eps = 3 - 12 = -9
        rec = constriction_ratio(-9.0, cert)
        assert rec.log10_cr == 0.0

    def test_twenty_bits_is_six_decades(self):
        cert = atomic_from_score(-30.0, 2, 0.0, 1)
        rec = constriction_ratio(-10.0, cert)
        assert rec.log10_cr == pytest.approx(20 * math.log10(2), abs=1e-12)


class TestRenyiInfDivergence:
    def test_identical_distributions(self):
        p = np.array([0.25, 0.5, 0.25])
        assert renyi_inf_divergence(p, p) == 0.0

    def test_point_mass_against_quarter(self):
        p = np.array([1.0, 0.0, 0.0])
        q = np.array([0.25, 0.5, 0.25])
        assert renyi_inf_divergence(p, q) == pytest.approx(2.0, abs=1e-12)

    def test_infinite_when_q_vanishes(self):
        assert renyi_inf_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf

    def test_bounded_divergence_implies_pointwise_bound(self, toy_vocab):
        """Exhaustive implication check over an enumerated support."""
        lm, guide = seeded_pair(43, toy_vocab, max_response_len=4)
        prompt = (3,)
        support = enumerate_support(lm, prompt, 4)
        q = np.array([2.0 ** logprob_marginal(guide, s) for s in support.sequences])
        div = renyi_inf_divergence(support.probs, q)
        assert math.isfinite(div)
        for k in (div, div + 0.5):
            assert (support.probs <= 2.0 ** k * q * (1 + 1e-9)).all()

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InputError):
            renyi_inf_divergence([1.0], [0.5, 0.5])


class TestSoundnessSweep:
    def test_no_violations_on_a_seeded_pair(self, toy_vocab):
        lm, guide = seeded_pair(47, toy_vocab, max_response_len=4)
        report = verify_certificate_soundness(
            lm, guide, k_grid=(-1.0, 0.0, 2.0), trials_grid=(1, 3),
            max_response_len=4, max_prompt_len=2)
        assert report.sound
        assert report.n_checks > 0
        assert report.max_margin_bits <= math.log2(1 + 1e-12)
