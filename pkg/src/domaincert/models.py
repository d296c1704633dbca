"""Sequence models: the scoring/sampling contract and concrete models.

A sequence model exposes per-token conditional distributions through
``next_probs(prompt, prefix)``; everything else (sequence likelihoods,
ancestral sampling, temperature scaling, exhaustive enumeration) is
derived from that single method. All log-probabilities are base 2
("bits") throughout the package.

Conventions:
  * a prompt is a tuple of token ids (no BOS/EOS requirements),
  * a response is a tuple of token ids whose length is N_y; terminated
    responses end with EOS and the EOS factor is part of the score,
  * conditioning contexts are left-padded with BOS.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from . import kernels
from .errors import InputError
from .vocab import Vocabulary

MODEL_FORMAT = "domaincert-ngram"
MODEL_FORMAT_VERSION = 1


@runtime_checkable
class SequenceModel(Protocol):
    """Anything exposing per-token conditional distributions."""

    vocab: Vocabulary

    def next_probs(self, prompt: tuple[int, ...], prefix: tuple[int, ...]) -> np.ndarray:
        """Distribution over the next token given prompt and partial response."""
        ...


# ---------------------------------------------------------------------------
# generic operations


def logprob_conditional(model, response, prompt=()) -> float:
    """log2 probability of ``response`` given ``prompt``, in bits.

    The value is the sum of per-token conditional log2 probabilities and
    is -inf exactly when some factor is zero.
    """
    response = tuple(int(t) for t in response)
    prompt = tuple(int(t) for t in prompt)
    if not response:
        raise InputError("cannot score an empty response")
    model.vocab.check_tokens(prompt)
    model.vocab.check_tokens(response)
    fast = getattr(model, "score_response", None)
    if fast is not None:
        return float(fast(response, prompt))
    total = 0.0
    for n, token in enumerate(response):
        p = float(model.next_probs(prompt, response[:n])[token])
        if p <= 0.0:
            return float("-inf")
        total += math.log2(p)
    return total


def logprob_marginal(model, response) -> float:
    """log2 probability of ``response`` under the empty prompt, in bits."""
    return logprob_conditional(model, response, prompt=())


def sample(model, prompt, max_len, rng) -> tuple[tuple[int, ...], bool]:
    """Ancestral sampling until EOS or ``max_len`` tokens.

    Returns (tokens, terminated). Truncation (no EOS within max_len) is
    a valid outcome, flagged by terminated=False. Deterministic given
    the generator state.
    """
    prompt = tuple(int(t) for t in prompt)
    if max_len < 1:
        raise InputError("max_len must be >= 1")
    model.vocab.check_tokens(prompt)
    fast = getattr(model, "sample_response", None)
    if fast is not None:
        return fast(prompt, max_len, rng)
    eos = model.vocab.eos_id
    out: list[int] = []
    for _ in range(max_len):
        cdf = np.cumsum(model.next_probs(prompt, tuple(out)))
        token = int(min(np.searchsorted(cdf, rng.random(), side="right"), len(cdf) - 1))
        out.append(token)
        if token == eos:
            return tuple(out), True
    return tuple(out), False


def greedy_decode(model, prompt, max_len) -> tuple[tuple[int, ...], bool]:
    """Deterministic argmax decoding (ties broken by lowest token id)."""
    prompt = tuple(int(t) for t in prompt)
    model.vocab.check_tokens(prompt)
    eos = model.vocab.eos_id
    out: list[int] = []
    for _ in range(max_len):
        token = int(np.argmax(model.next_probs(prompt, tuple(out))))
        out.append(token)
        if token == eos:
            return tuple(out), True
    return tuple(out), False


def apply_temperature(model, temperature: float):
    """Rescale per-token logits by 1/temperature and renormalize.

    temperature == 1 returns the model unchanged (exact no-op).
    """
    if temperature <= 0:
        raise InputError("temperature must be > 0")
    if temperature == 1.0:
        return model
    return TemperatureModel(model, temperature)


class TemperatureModel:
    """Wraps a model with temperature-scaled conditionals."""

    def __init__(self, base, temperature: float):
        self.base = base
        self.temperature = float(temperature)
        self.vocab = base.vocab

    def next_probs(self, prompt, prefix):
        p = np.asarray(self.base.next_probs(prompt, prefix), dtype=float)
        with np.errstate(divide="ignore"):
            logits = np.log(p) / self.temperature
        logits -= logits.max()
        w = np.exp(logits)
        return w / w.sum()


# ---------------------------------------------------------------------------
# trainable add-alpha n-gram model


class NGramModel:
    """Add-alpha smoothed n-gram model over a fixed vocabulary.

    Conditionals are (count + alpha) / (total + alpha * V), so every
    token has probability at least alpha / (total + alpha * V) > 0 and
    every context distribution sums to one. Models are immutable after
    training; scoring and sampling run on the compiled kernel when it is
    available.
    """

    def __init__(self, vocab: Vocabulary, order: int, alpha: float,
                 contexts, row_tokens, row_counts):
        if order < 1:
            raise InputError("order must be >= 1")
        if alpha <= 0:
            raise InputError("alpha must be > 0")
        self.vocab = vocab
        self.order = int(order)
        self.alpha = float(alpha)
        self._contexts = [tuple(int(t) for t in c) for c in contexts]
        self._row_index = {c: r for r, c in enumerate(self._contexts)}
        tokens_flat: list[int] = []
        counts_flat: list[int] = []
        indptr = [0]
        for tids, cnts in zip(row_tokens, row_counts):
            pairs = sorted(zip((int(t) for t in tids), (int(c) for c in cnts)))
            tokens_flat.extend(t for t, _ in pairs)
            counts_flat.extend(c for _, c in pairs)
            indptr.append(len(tokens_flat))
        self._indptr = np.asarray(indptr, dtype=np.int64)
        self._token_ids = np.asarray(tokens_flat, dtype=np.int32)
        self._token_counts = np.asarray(counts_flat, dtype=np.int64)
        self._totals = np.array(
            [self._token_counts[self._indptr[r]:self._indptr[r + 1]].sum()
             for r in range(len(self._contexts))], dtype=np.int64)
        self._scorer = kernels.make_scorer(
            self.order, len(vocab), self.alpha, vocab.bos_id, vocab.eos_id,
            np.asarray(self._contexts, dtype=np.int64).reshape(len(self._contexts), order - 1),
            self._indptr, self._token_ids, self._token_counts, self._totals)

    # -- construction

    @classmethod
    def train(cls, corpus, order: int, alpha: float, vocab: Vocabulary) -> "NGramModel":
        """Count BOS-padded transitions over a corpus of token sequences."""
        if order < 1:
            raise InputError("order must be >= 1")
        if alpha <= 0:
            raise InputError("alpha must be > 0")
        corpus = list(corpus)
        if not corpus:
            raise InputError("training corpus is empty")
        counts: dict[tuple[int, ...], Counter] = defaultdict(Counter)
        pad = (vocab.bos_id,) * (order - 1)
        for seq in corpus:
            seq = tuple(int(t) for t in seq)
            vocab.check_tokens(seq)
            padded = pad + seq
            for i, target in enumerate(seq):
                counts[padded[i:i + order - 1]][target] += 1
        contexts = sorted(counts)
        row_tokens = [sorted(counts[c]) for c in contexts]
        row_counts = [[counts[c][t] for t in toks] for c, toks in zip(contexts, row_tokens)]
        return cls(vocab, order, alpha, contexts, row_tokens, row_counts)

    # -- the SequenceModel contract

    def next_probs(self, prompt, prefix):
        width = self.order - 1
        ctx = ((self.vocab.bos_id,) * width + tuple(prompt) + tuple(prefix))
        row = self._row_index.get(ctx[len(ctx) - width:] if width else (), -1)
        return self._scorer.row_probs(row)

    # -- kernel fast paths

    def score_response(self, response, prompt=()) -> float:
        return float(self._scorer.score(
            np.asarray(prompt, dtype=np.int64), np.asarray(response, dtype=np.int64)))

    def sample_response(self, prompt, max_len, rng):
        uniforms = rng.random(max_len)
        tokens, terminated = self._scorer.sample(
            np.asarray(prompt, dtype=np.int64), int(max_len), uniforms)
        return tuple(int(t) for t in tokens), bool(terminated)

    # -- introspection / persistence

    @property
    def backend(self) -> str:
        return self._scorer.backend

    @property
    def num_contexts(self) -> int:
        return len(self._contexts)

    def context_count(self, context) -> int:
        row = self._row_index.get(tuple(context), -1)
        return int(self._totals[row]) if row >= 0 else 0

    def tables(self) -> dict:
        """Raw frozen arrays, e.g. for building a scorer on another backend."""
        return {
            "order": self.order, "vocab_size": len(self.vocab), "alpha": self.alpha,
            "bos_id": self.vocab.bos_id, "eos_id": self.vocab.eos_id,
            "contexts": np.asarray(self._contexts, dtype=np.int64).reshape(
                len(self._contexts), self.order - 1),
            "indptr": self._indptr, "token_ids": self._token_ids,
            "token_counts": self._token_counts, "totals": self._totals,
        }

    def save(self, path) -> None:
        """Write a versioned, self-describing JSON file (bit-exact round trip)."""
        rows_t, rows_c = [], []
        for r in range(len(self._contexts)):
            lo, hi = int(self._indptr[r]), int(self._indptr[r + 1])
            rows_t.append([int(t) for t in self._token_ids[lo:hi]])
            rows_c.append([int(c) for c in self._token_counts[lo:hi]])
        payload = {
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "vocab": {
                "elements": list(self.vocab.elements),
                "bos_id": self.vocab.bos_id,
                "eos_id": self.vocab.eos_id,
            },
            "order": self.order,
            "alpha": self.alpha,
            "contexts": [list(c) for c in self._contexts],
            "row_tokens": rows_t,
            "row_counts": rows_c,
        }
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def load(cls, path) -> "NGramModel":
        payload = json.loads(Path(path).read_text())
        if payload.get("format") != MODEL_FORMAT:
            raise InputError(f"{path}: not a {MODEL_FORMAT} file")
        if payload.get("version") != MODEL_FORMAT_VERSION:
            raise InputError(f"{path}: unsupported version {payload.get('version')}")
        v = payload["vocab"]
        vocab = Vocabulary(tuple(v["elements"]), v["bos_id"], v["eos_id"])
        return cls(vocab, payload["order"], payload["alpha"],
                   payload["contexts"], payload["row_tokens"], payload["row_counts"])


# ---------------------------------------------------------------------------
# exact tabular models (brute-force oracles and planted instances)


def _validate_row(row, size) -> np.ndarray:
    row = np.asarray(row, dtype=float)
    if row.shape != (size,):
        raise InputError(f"probability row must have shape ({size},)")
    if (row < 0).any() or abs(float(row.sum()) - 1.0) > 1e-9:
        raise InputError("probability row must be non-negative and sum to 1")
    return row


class TabularModel:
    """Explicit conditional tables over a bounded sequence space.

    ``rows`` maps (prompt, prefix) pairs to next-token distributions;
    missing keys use ``default``. With ``force_eos_at`` set, EOS gets
    probability one once the response reaches that length minus one, so
    all probability mass terminates within the cap.
    """

    def __init__(self, vocab: Vocabulary, rows=None, default=None, force_eos_at=None):
        self.vocab = vocab
        size = len(vocab)
        self.rows = {
            (tuple(x), tuple(pre)): _validate_row(row, size)
            for (x, pre), row in (rows or {}).items()
        }
        if default is None:
            default = np.full(size, 1.0 / size)
        self.default = _validate_row(default, size)
        self.force_eos_at = force_eos_at
        self._eos_row = np.zeros(size)
        self._eos_row[vocab.eos_id] = 1.0

    def next_probs(self, prompt, prefix):
        if self.force_eos_at is not None and len(prefix) >= self.force_eos_at - 1:
            return self._eos_row
        return self.rows.get((tuple(prompt), tuple(prefix)), self.default)


class SeededTabularModel:
    """Deterministic random conditional tables for exhaustive checks.

    Each row is a Dirichlet draw seeded by (seed, response depth, a
    window of trailing context), blended with extra EOS mass; EOS is
    forced at the response-length cap so the model is enumerable: the
    probabilities of all terminated sequences sum to one for any prompt.
    """

    def __init__(self, vocab: Vocabulary, seed: int, max_response_len: int,
                 window: int = 3, eos_boost: float = 0.25):
        self.vocab = vocab
        self.seed = int(seed)
        self.max_response_len = int(max_response_len)
        self.window = int(window)
        self.eos_boost = float(eos_boost)
        self._cache: dict[tuple, np.ndarray] = {}
        self._eos_row = np.zeros(len(vocab))
        self._eos_row[vocab.eos_id] = 1.0

    def next_probs(self, prompt, prefix):
        if len(prefix) >= self.max_response_len - 1:
            return self._eos_row
        context = tuple(prompt) + tuple(prefix)
        tail = context[-self.window:] if self.window > 0 else ()
        key = (len(prefix),) + tail
        row = self._cache.get(key)
        if row is None:
            rng = np.random.default_rng(
                np.random.SeedSequence([self.seed, len(prefix) + 1] + [t + 1 for t in tail]))
            row = rng.dirichlet(np.ones(len(self.vocab)))
            row = (1.0 - self.eos_boost) * row + self.eos_boost * self._eos_row
            self._cache[key] = row
        return row


class PointMassModel:
    """Puts all probability on one terminated response, for any prompt."""

    def __init__(self, vocab: Vocabulary, target):
        target = tuple(int(t) for t in target)
        vocab.check_tokens(target)
        if not target:
            raise InputError("point-mass target must be non-empty")
        if target[-1] != vocab.eos_id:
            target = target + (vocab.eos_id,)
        self.vocab = vocab
        self.target = target

    def next_probs(self, prompt, prefix):
        row = np.zeros(len(self.vocab))
        prefix = tuple(prefix)
        n = len(prefix)
        if n < len(self.target) and prefix == self.target[:n]:
            row[self.target[n]] = 1.0
        else:
            row[self.vocab.eos_id] = 1.0
        return row


class ConstantLikelihoodModel:
    """Analytic stub: every token contributes a fixed probability factor.

    The per-token factors deliberately need not normalize; the stub
    exists to score closed-form cases (a response of length N scores
    exactly N * log2(factor)). Do not sample from it.
    """

    def __init__(self, vocab: Vocabulary, factor: float):
        if not 0 < factor <= 1:
            raise InputError("factor must be in (0, 1]")
        self.vocab = vocab
        self.factor = float(factor)

    def next_probs(self, prompt, prefix):
        return np.full(len(self.vocab), self.factor)
