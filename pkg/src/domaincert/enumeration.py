"""Exhaustive enumeration of a model's response distribution.

Only feasible for toy vocabularies and short length caps; used as the
brute-force oracle behind the exact meta-model likelihood, the
soundness sweeps and the adversary search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ResourceLimitError

DEFAULT_LEAF_GUARD = 10_000_000


@dataclass
class EnumeratedSupport:
    """Every terminated sequence reachable within the length cap.

    ``truncated_mass`` is the probability of reaching the cap without
    EOS; terminated probabilities plus truncated mass sum to one.
    """

    sequences: list[tuple[int, ...]]
    probs: np.ndarray
    truncated_mass: float
    _index: dict[tuple[int, ...], int] | None = field(default=None, repr=False)

    @property
    def total_mass(self) -> float:
        return float(self.probs.sum() + self.truncated_mass)

    def prob_of(self, sequence) -> float:
        if self._index is None:
            self._index = {s: i for i, s in enumerate(self.sequences)}
        i = self._index.get(tuple(sequence))
        return float(self.probs[i]) if i is not None else 0.0


def enumerate_support(model, prompt=(), max_len: int = 6,
                      leaf_guard: int = DEFAULT_LEAF_GUARD) -> EnumeratedSupport:
    """Depth-first expansion of all responses of length <= max_len.

    Sequences are emitted in depth-first token-id order, so the order is
    deterministic. Zero-probability branches are pruned exactly. Raises
    ResourceLimitError when the space exceeds ``leaf_guard`` leaves.
    """
    prompt = tuple(int(t) for t in prompt)
    model.vocab.check_tokens(prompt)
    if max_len < 1:
        raise InputError("max_len must be >= 1")
    size = len(model.vocab)
    if size ** max_len > leaf_guard:
        raise ResourceLimitError(
            f"enumeration space {size}^{max_len} exceeds guard {leaf_guard}")
    eos = model.vocab.eos_id
    sequences: list[tuple[int, ...]] = []
    probs: list[float] = []
    truncated = 0.0
    visited = 0

    def expand(prefix: tuple[int, ...], mass: float):
        nonlocal truncated, visited
        visited += 1
        if visited > leaf_guard:
            raise ResourceLimitError(f"enumeration exceeded guard {leaf_guard}")
        row = model.next_probs(prompt, prefix)
        for token in range(size):
            q = mass * float(row[token])
            if q == 0.0:
                continue
            seq = prefix + (token,)
            if token == eos:
                sequences.append(seq)
                probs.append(q)
            elif len(seq) >= max_len:
                truncated += q
            else:
                expand(seq, q)

    expand((), 1.0)
    return EnumeratedSupport(sequences, np.asarray(probs), truncated)
