"""Benchmarking a certified system: accuracy under a certificate budget.

``bench_at_epsilon`` combines two independent streams per item: whether
the generalist's deterministic completion is exactly right, and whether
the ground-truth completion passes the acceptance test at the threshold
solved for the target certificate level. An item scores only when both
hold. ``generation_accuracy`` measures the rate of well-formed completed
sequences per model and prompt length, the capability gap that justifies
wrapping a generalist instead of deploying the guide directly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .certificates import solve_k_from_scores
from .chartask import CharTaskItem, check_valid_tokens
from .errors import InputError
from .models import greedy_decode, logprob_conditional, logprob_marginal, sample
from .sampler import acceptance_test
from .vocab import Vocabulary


@dataclass(frozen=True)
class BenchPoint:
    epsilon: float
    k_bits: float
    raw_accuracy: float
    certified_score: float
    abstention_rate: float


@dataclass
class BenchAtEpsResult:
    points: list[BenchPoint]
    n_items: int
    prompt_len: int
    trials: int

    def to_json_dict(self) -> dict:
        return {
            "n_items": self.n_items, "prompt_len": self.prompt_len, "T": self.trials,
            "points": [vars(p) for p in self.points],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("epsilon", "k_bits", "raw_accuracy",
                             "certified_score", "abstention_rate"))
            for p in self.points:
                writer.writerow([repr(p.epsilon), repr(p.k_bits), repr(p.raw_accuracy),
                                 repr(p.certified_score), repr(p.abstention_rate)])


def _encode_item(item: CharTaskItem, vocab: Vocabulary, prompt_len: int):
    flat = vocab.encode(item.flat)
    prompt = flat[:prompt_len]
    truth = flat[prompt_len:] + (vocab.eos_id,)
    return prompt, truth


def bench_at_epsilon(lm, guide, ood_responses, items, vocab: Vocabulary,
                     eps_list, trials: int = 1, prompt_len: int = 10,
                     max_len: int = 160) -> BenchAtEpsResult:
    """Certified benchmark score across a grid of certificate levels.

    Correctness uses the generalist's greedy completion (exact match
    against the item's true continuation); acceptance applies the
    threshold solved on ``ood_responses`` to the ground-truth pair.
    """
    items = list(items)
    if not items:
        raise InputError("no benchmark items")
    ood_responses = [tuple(int(t) for t in y) for y in ood_responses]
    ood_scores = [logprob_marginal(guide, y) for y in ood_responses]
    ood_lens = [len(y) for y in ood_responses]

    correct = np.zeros(len(items), dtype=bool)
    scores = []
    for i, item in enumerate(items):
        prompt, truth = _encode_item(item, vocab, prompt_len)
        completion, _ = greedy_decode(lm, prompt, max_len)
        correct[i] = completion == truth
        scores.append((logprob_conditional(lm, truth, prompt),
                       logprob_marginal(guide, truth), len(truth)))

    points = []
    for epsilon in eps_list:
        k_bits = solve_k_from_scores(ood_scores, ood_lens, trials, float(epsilon))
        accepted = np.array([acceptance_test(logl, logg, n, k_bits)
                             for logl, logg, n in scores])
        points.append(BenchPoint(
            float(epsilon), float(k_bits), float(correct.mean()),
            float((correct & accepted).mean()), float((~accepted).mean())))
    return BenchAtEpsResult(points, len(items), prompt_len, trials)


# ---------------------------------------------------------------------------
# well-formed generation rates (guide-only vs generalist capability gap)


def generation_accuracy(models: dict, items, vocab: Vocabulary,
                        prompt_lengths=(1, 5, 10), max_len: int = 64,
                        rng: np.random.Generator | None = None) -> dict:
    """Valid-sequence rate per model per prompt length.

    Completions are sampled (wrap models with ``apply_temperature``
    beforehand if sharpening is wanted); a completion counts when the
    prompt plus completion parses as a well-formed, correctly solved
    item. Returns {model_name: {prompt_len: rate}}.
    """
    items = list(items)
    if not items:
        raise InputError("no prompt items")
    if rng is None:
        rng = np.random.default_rng()
    table: dict = {name: {} for name in models}
    for name, model in models.items():
        for plen in prompt_lengths:
            hits = 0
            for item in items:
                prompt = vocab.encode(item.flat[:plen])
                completion, terminated = sample(model, prompt, max_len, rng)
                if terminated and check_valid_tokens(prompt + completion, vocab):
                    hits += 1
            table[name][int(plen)] = hits / len(items)
    return table


def write_generation_accuracy(table: dict, path) -> None:
    Path(path).write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
