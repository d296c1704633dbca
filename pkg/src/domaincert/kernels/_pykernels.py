"""Pure-Python/numpy backend for the n-gram hot loops.

Semantics must match ``_ckernels`` exactly: both backends compute
per-token probabilities as (count + alpha) / (total + alpha * V), sum
base-2 logs in sequence order, and sample by scanning the smoothed CDF
in token-id order. Given the same inputs (including the same uniform
draws) the two backends produce identical results.
"""

from __future__ import annotations

import math

import numpy as np


class NGramScorer:
    """Scores and samples from a frozen count table.

    Contexts are fixed-width (order-1 tokens, BOS-padded on the left);
    unseen contexts fall back to the additive-smoothing floor.
    """

    backend = "python"

    def __init__(self, order, vocab_size, alpha, bos_id, eos_id,
                 contexts, indptr, token_ids, token_counts, totals):
        self.order = int(order)
        self.vocab_size = int(vocab_size)
        self.alpha = float(alpha)
        self.bos_id = int(bos_id)
        self.eos_id = int(eos_id)
        self._indptr = np.asarray(indptr, dtype=np.int64)
        self._token_ids = np.asarray(token_ids, dtype=np.int32)
        self._token_counts = np.asarray(token_counts, dtype=np.int64)
        self._totals = np.asarray(totals, dtype=np.int64)
        ctx = np.asarray(contexts, dtype=np.int64).reshape(len(self._totals), self.order - 1)
        self._rows = {tuple(int(t) for t in row): r for r, row in enumerate(ctx)}

    def _padded(self, prompt) -> list[int]:
        width = self.order - 1
        ctx = [self.bos_id] * width + [int(t) for t in prompt]
        return ctx[len(ctx) - width:] if width else []

    def _token_prob(self, row: int, token: int) -> float:
        denom_alpha = self.alpha * self.vocab_size
        if row < 0:
            return self.alpha / denom_alpha
        lo, hi = self._indptr[row], self._indptr[row + 1]
        seg = self._token_ids[lo:hi]
        pos = np.searchsorted(seg, token)
        count = int(self._token_counts[lo + pos]) if pos < len(seg) and seg[pos] == token else 0
        return (count + self.alpha) / (int(self._totals[row]) + denom_alpha)

    def row_probs(self, row: int) -> np.ndarray:
        """Dense smoothed next-token distribution for a row (-1 = unseen)."""
        probs = np.full(self.vocab_size, self.alpha)
        if row < 0:
            return probs / (self.alpha * self.vocab_size)
        lo, hi = self._indptr[row], self._indptr[row + 1]
        probs[self._token_ids[lo:hi]] += self._token_counts[lo:hi]
        return probs / (int(self._totals[row]) + self.alpha * self.vocab_size)

    def row_for(self, context: tuple[int, ...]) -> int:
        return self._rows.get(context, -1)

    def score(self, prompt, response) -> float:
        """Sum of per-token base-2 log probabilities of ``response``."""
        width = self.order - 1
        ctx = self._padded(prompt)
        total = 0.0
        for token in response:
            token = int(token)
            row = self._rows.get(tuple(ctx), -1)
            total += math.log2(self._token_prob(row, token))
            if width:
                ctx.append(token)
                del ctx[0]
        return total

    def score_many(self, prompts, responses) -> np.ndarray:
        return np.array([self.score(x, y) for x, y in zip(prompts, responses)])

    def sample(self, prompt, max_len, uniforms):
        """Ancestral sampling driven by pre-drawn uniforms.

        Returns (tokens, terminated); tokens include the final EOS when
        terminated is True.
        """
        width = self.order - 1
        ctx = self._padded(prompt)
        out = []
        for step in range(int(max_len)):
            row = self._rows.get(tuple(ctx), -1)
            cdf = np.cumsum(self.row_probs(row))
            token = int(min(np.searchsorted(cdf, uniforms[step], side="right"),
                            self.vocab_size - 1))
            out.append(token)
            if token == self.eos_id:
                return np.array(out, dtype=np.int64), True
            if width:
                ctx.append(token)
                del ctx[0]
        return np.array(out, dtype=np.int64), False
