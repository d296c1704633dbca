import math

import numpy as np
import pytest

from domaincert import (InputError, ecdf, ecdf_and_histograms, expected_iterations,
                        likelihood_m_bounds, likelihood_m_exact, meta_distribution,
                        rejection_prob_mc, simulate_valid)
from domaincert.analysis import (RejectionEstimate, frr_trr_sweep,
                                 geometric_multiplier, make_k_grid)
from domaincert.sampler import EvalRecord

from conftest import seeded_pair, two_outcome_pair


class TestGeometricMultiplier:
    def test_matches_closed_form_below_one(self):
        for phi in (0.0, 0.1, 0.25, 0.5, 0.9, 0.99):
            for trials in (1, 2, 5, 10):
                closed = (1 - phi ** trials) / (1 - phi) if phi < 1 else trials
                assert geometric_multiplier(phi, trials) == pytest.approx(
                    closed, rel=1e-12)

    def test_boundary_cases(self):
        assert expected_iterations(0.0, 7) == 1.0
        assert expected_iterations(1.0, 7) == 7.0
        assert expected_iterations(0.5, 3) == 1.75

    def test_validation(self):
        with pytest.raises(InputError):
            expected_iterations(-0.1, 2)
        with pytest.raises(InputError):
            expected_iterations(1.1, 2)
        with pytest.raises(InputError):
            expected_iterations(0.5, 0)


class TestMetaDistribution:
    def test_rejected_response_has_zero_likelihood(self, toy_vocab):
        lm, guide = two_outcome_pair(toy_vocab, accept_first=True,
                                     accept_second=False)
        m, _ = likelihood_m_exact(lm, guide, 0.0, 3, (), (1, toy_vocab.eos_id),
                                  max_len=2)
        assert m == 0.0

    def test_single_trial_returns_base_likelihood(self, toy_vocab):
        lm, guide = two_outcome_pair(toy_vocab, p_first=0.25)
        m, abstain = likelihood_m_exact(lm, guide, 0.0, 1, (),
                                        (0, toy_vocab.eos_id), max_len=2)
        assert m == pytest.approx(0.25, rel=1e-12)
        assert abstain == pytest.approx(0.75, rel=1e-12)

    def test_half_rejection_three_trials(self, toy_vocab):
        # rejection mass is exactly one half, so the accepted response is
        # scaled by 1 + 1/2 + 1/4 = 1.75
        lm, guide = two_outcome_pair(toy_vocab, p_first=0.5)
        dist = meta_distribution(lm, guide, 0.0, 3, (), max_len=2)
        assert dist.phi == pytest.approx(0.5, rel=1e-12)
        assert dist.multiplier == pytest.approx(1.75, rel=1e-12)
        assert dist.prob_of((0, toy_vocab.eos_id)) == pytest.approx(0.875, rel=1e-12)
        assert dist.abstain_prob == pytest.approx(0.125, rel=1e-12)

    def test_mass_conservation_over_seeds(self, toy_vocab):
        for seed in (1, 2, 3, 4):
            lm, guide = seeded_pair(seed * 100, toy_vocab, max_response_len=4)
            for k_bits in (-1.0, 0.0, 1.5):
                for trials in (1, 2, 5):
                    dist = meta_distribution(lm, guide, k_bits, trials, (0,),
                                             max_len=4)
                    assert dist.total_mass == pytest.approx(1.0, abs=1e-9)

    def test_accepted_mass_is_amplified(self, toy_vocab):
        lm, guide = seeded_pair(77, toy_vocab, max_response_len=4)
        dist = meta_distribution(lm, guide, 0.0, 4, (1,), max_len=4)
        assert (dist.m_probs[dist.accepted] >=
                dist.l_probs[dist.accepted] * (1 - 1e-12)).all()

    def test_simulation_agrees(self, toy_vocab):
        lm, guide = seeded_pair(88, toy_vocab, max_response_len=3)
        dist = meta_distribution(lm, guide, 0.5, 2, (), max_len=3)
        sim = simulate_valid(dist, 2, 200_000, np.random.default_rng(0))
        freq = sim.sequence_counts / sim.n_runs
        for i, p in enumerate(dist.m_probs):
            if p >= 1e-3:
                sigma = math.sqrt(p * (1 - p) / sim.n_runs)
                assert abs(freq[i] - p) <= 4 * sigma
        p_abstain = dist.abstain_prob
        sigma = math.sqrt(max(p_abstain * (1 - p_abstain), 1e-12) / sim.n_runs)
        assert abs(sim.abstain_count / sim.n_runs - p_abstain) <= 4 * sigma + 1e-9


class TestLikelihoodMBounds:
    def test_single_trial_collapses(self):
        est = RejectionEstimate(0.4, 100, 0.05, 0.3, 0.5)
        assert likelihood_m_bounds(0.2, est, 1) == (0.2, 0.2)

    def test_point_interval(self):
        est = RejectionEstimate(0.4, 100, 0.05, 0.4, 0.4)
        lo, hi = likelihood_m_bounds(0.1, est, 3)
        assert lo == hi

    def test_contains_exact_value_when_ci_covers(self, toy_vocab):
        lm, guide = two_outcome_pair(toy_vocab, p_first=0.5)
        dist = meta_distribution(lm, guide, 0.0, 3, (), max_len=2)
        est = RejectionEstimate(0.48, 1000, 0.05, 0.45, 0.55)
        lo, hi = likelihood_m_bounds(0.5, est, 3)
        assert lo <= dist.prob_of((0, toy_vocab.eos_id)) <= hi

    def test_rejected_item_degenerates(self):
        est = RejectionEstimate(0.4, 100, 0.05, 0.3, 0.5)
        assert likelihood_m_bounds(0.2, est, 3, accepted=False) == (0.0, 0.0)


class TestRejectionProbMC:
    def test_unachievable_threshold_gives_one(self, toy_vocab):
        lm, guide = two_outcome_pair(toy_vocab)
        est = rejection_prob_mc(lm, guide, -1e6, (), 200, max_len=2,
                                rng=np.random.default_rng(1))
        assert est.phi_hat == 1.0 and est.hi == 1.0

    def test_matches_enumerated_probability(self, toy_vocab):
        lm, guide = seeded_pair(99, toy_vocab, max_response_len=4)
        dist = meta_distribution(lm, guide, 0.5, 1, (2,), max_len=4)
        n = 4000
        est = rejection_prob_mc(lm, guide, 0.5, (2,), n, max_len=4,
                                rng=np.random.default_rng(2))
        sigma = math.sqrt(dist.phi * (1 - dist.phi) / n)
        assert abs(est.phi_hat - dist.phi) <= 3 * sigma

    def test_clopper_pearson_brackets_normal(self, toy_vocab):
        lm, guide = seeded_pair(99, toy_vocab, max_response_len=4)
        normal = rejection_prob_mc(lm, guide, 0.5, (), 500, max_len=4,
                                   rng=np.random.default_rng(3))
        cp = rejection_prob_mc(lm, guide, 0.5, (), 500, max_len=4,
                               rng=np.random.default_rng(3), method="clopper-pearson")
        assert normal.phi_hat == cp.phi_hat
        assert 0.0 <= cp.lo <= cp.phi_hat <= cp.hi <= 1.0

    def test_validation(self, toy_vocab):
        lm, guide = two_outcome_pair(toy_vocab)
        with pytest.raises(InputError):
            rejection_prob_mc(lm, guide, 0.0, (), 0)
        with pytest.raises(InputError):
            rejection_prob_mc(lm, guide, 0.0, (), 10, alpha=0.0)
        with pytest.raises(InputError):
            rejection_prob_mc(lm, guide, 0.0, (), 10, method="magic")


def make_records(id_ratios, ood_ratios):
    records = []
    for i, r in enumerate(id_ratios):
        records.append(EvalRecord(f"id{i}", "ID", 2, 2 * r, 0.0))
    for i, r in enumerate(ood_ratios):
        records.append(EvalRecord(f"ood{i}", "OOD", 2, 2 * r, 0.0))
    return records


class TestSweep:
    def test_extreme_thresholds(self):
        records = make_records([0.0, 1.0], [2.0, 3.0])
        sweep = frr_trr_sweep(records, [-10.0, 10.0])
        assert sweep.frr[1] == sweep.trr[1] == sweep.youden_j[1] == 0.0
        assert sweep.frr[0] == sweep.trr[0] == 1.0 and sweep.youden_j[0] == 0.0

    def test_separated_populations_reach_perfect_j(self):
        records = make_records([0.0, 0.5, 1.0], [5.0, 6.0, 7.0])
        sweep = frr_trr_sweep(records, [3.0])
        assert sweep.youden_j[0] == 1.0

    def test_rates_match_direct_recomputation(self):
        rng = np.random.default_rng(13)
        records = make_records(rng.normal(0, 1, 40), rng.normal(3, 1, 60))
        grid = make_k_grid(records, 64)
        sweep = frr_trr_sweep(records, grid)
        for i, k in enumerate(grid):
            frr = np.mean([r.norm_ratio_bits > k for r in records if r.label == "ID"])
            trr = np.mean([r.norm_ratio_bits > k for r in records if r.label == "OOD"])
            assert sweep.frr[i] == frr and sweep.trr[i] == trr

    def test_rates_are_non_increasing(self):
        rng = np.random.default_rng(14)
        records = make_records(rng.normal(0, 1, 50), rng.normal(2, 2, 50))
        sweep = frr_trr_sweep(records, make_k_grid(records, 256))
        assert (np.diff(sweep.frr) <= 1e-12).all()
        assert (np.diff(sweep.trr) <= 1e-12).all()

    def test_threshold_at_max_ratio_gives_zero_frr(self):
        rng = np.random.default_rng(15)
        records = make_records(rng.normal(0, 1, 30), rng.normal(2, 1, 30))
        k0 = frr_trr_sweep(records).k_at_frr[0.0]
        id_ratios = [r.norm_ratio_bits for r in records if r.label == "ID"]
        assert k0 == max(id_ratios)
        assert np.mean([r > k0 for r in id_ratios]) == 0.0

    def test_k_at_frr_is_smallest_feasible(self):
        rng = np.random.default_rng(16)
        records = make_records(rng.normal(0, 1, 100), rng.normal(2, 1, 10))
        sweep = frr_trr_sweep(records)
        id_ratios = np.array([r.norm_ratio_bits for r in records if r.label == "ID"])
        for target, k in sweep.k_at_frr.items():
            assert (id_ratios > k).mean() <= target
            assert (id_ratios > k - 1e-9).mean() > target or target == 0.5

    def test_constriction_quantiles_match_manual(self):
        records = make_records([0.0], [1.0, 2.0, 3.0])
        trials = 2
        sweep = frr_trr_sweep(records, [0.5], trials=trials)
        manual = []
        for r in records:
            if r.label == "OOD":
                bound = 0.5 * r.n_y + math.log2(trials) + r.logg_bits
                manual.append((r.logl_bits - bound) * math.log10(2))
        assert sweep.cr_quantiles[0][1] == pytest.approx(np.median(manual), abs=1e-12)

    def test_single_label_warns(self):
        records = make_records([0.0, 1.0], [])
        with pytest.warns(UserWarning):
            sweep = frr_trr_sweep(records, [0.5])
        assert math.isnan(sweep.trr[0]) and sweep.warnings

    def test_empty_records_rejected(self):
        with pytest.raises(InputError):
            frr_trr_sweep([])


class TestEcdf:
    def test_single_value_step(self):
        xs, fs = ecdf([3.5])
        assert list(xs) == [3.5] and list(fs) == [1.0]

    def test_boundary_values(self):
        xs, fs = ecdf([1.0, 2.0, 2.0, 5.0])
        assert fs[-1] == 1.0
        assert xs[0] == 1.0 and fs[0] == 0.25

    def test_quantiles_match_order_statistics(self):
        rng = np.random.default_rng(17)
        values = rng.normal(size=101)
        xs, fs = ecdf(values)
        agg = ecdf_and_histograms(values)
        for q in (0.1, 0.5, 0.9):
            direct = np.quantile(values, q)
            step = xs[np.searchsorted(fs, q)]
            assert abs(agg["quantiles"][str(q)] - direct) <= 1e-12
            gap = np.diff(np.sort(values)).max()
            assert abs(step - direct) <= gap + 1e-12

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            ecdf([])
        with pytest.raises(InputError):
            ecdf_and_histograms([])
