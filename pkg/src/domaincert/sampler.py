"""Iterative dismissal: rejection sampling with a guide-model ratio test.

``run_valid`` draws up to ``max_trials`` candidate responses from the
generalist model and returns the first one whose length-normalized
log-likelihood ratio against the guide stays below the threshold;
otherwise it abstains. Abstention is a value, not an exception.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .models import logprob_conditional, logprob_marginal, sample

EvalLabel = str  # "ID" | "OOD"


def acceptance_test(logl_bits: float, logg_bits: float, n_y: int, k_bits: float) -> bool:
    """True iff logL - logG <= k_bits * n_y (ties accept).

    Equivalent to thresholding the geometric-mean-normalized ratio
    (logL - logG) / n_y at k_bits. A zero-likelihood candidate is
    accepted vacuously; a zero guide score with nonzero likelihood is
    rejected.
    """
    if n_y < 1:
        raise InputError("n_y must be >= 1")
    if logl_bits == float("-inf"):
        return True
    if logg_bits == float("-inf"):
        return False
    return logl_bits - logg_bits <= k_bits * n_y


@dataclass(frozen=True)
class ValidConfig:
    """Hyperparameters of the rejection loop."""

    k_bits: float
    max_trials: int = 1
    max_len: int = 128
    seed: int | None = None

    def __post_init__(self):
        if not math.isfinite(self.k_bits):
            raise InputError("k_bits must be finite")
        if self.max_trials < 1:
            raise InputError("max_trials must be >= 1")
        if self.max_len < 1:
            raise InputError("max_len must be >= 1")


@dataclass(frozen=True)
class TrialRecord:
    """Audit entry for one rejected draw."""

    response: tuple[int, ...]
    logl_bits: float
    logg_bits: float
    truncated: bool


@dataclass(frozen=True)
class ValidOutcome:
    """Accepted response with audit trail, or abstention."""

    accepted: bool
    trials: int
    rejected: tuple[TrialRecord, ...]
    response: tuple[int, ...] | None = None
    iteration: int | None = None
    logl_bits: float | None = None
    logg_bits: float | None = None

    def to_json_dict(self) -> dict:
        out = {
            "status": "accepted" if self.accepted else "abstained",
            "trials": self.trials,
            "rejected": [
                {"response": list(t.response), "logl_bits": t.logl_bits,
                 "logg_bits": t.logg_bits, "truncated": t.truncated}
                for t in self.rejected
            ],
        }
        if self.accepted:
            out.update(response=list(self.response), iteration=self.iteration,
                       logl_bits=self.logl_bits, logg_bits=self.logg_bits)
        return out


def run_valid(lm, guide, config: ValidConfig, prompt,
              rng: np.random.Generator | None = None) -> ValidOutcome:
    """Run the rejection loop for one prompt.

    Every draw counts toward the trial budget; truncated draws (no EOS
    within max_len) are rejected regardless of their ratio and flagged
    in the audit trail.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    prompt = tuple(int(t) for t in prompt)
    rejected: list[TrialRecord] = []
    for iteration in range(1, config.max_trials + 1):
        response, terminated = sample(lm, prompt, config.max_len, rng)
        logl = logprob_conditional(lm, response, prompt)
        logg = logprob_marginal(guide, response)
        if terminated and acceptance_test(logl, logg, len(response), config.k_bits):
            return ValidOutcome(True, iteration, tuple(rejected), response,
                                iteration, logl, logg)
        rejected.append(TrialRecord(response, logl, logg, not terminated))
    return ValidOutcome(False, config.max_trials, tuple(rejected))


# ---------------------------------------------------------------------------
# ground-truth batch evaluation


@dataclass(frozen=True)
class EvalRecord:
    """Per-sample log-likelihood evidence for threshold sweeps."""

    item_id: str
    label: EvalLabel
    n_y: int
    logl_bits: float
    logg_bits: float

    @property
    def norm_ratio_bits(self) -> float:
        return (self.logl_bits - self.logg_bits) / self.n_y

    def accepted(self, k_bits: float) -> bool:
        return acceptance_test(self.logl_bits, self.logg_bits, self.n_y, k_bits)


@dataclass
class BatchResult:
    records: list[EvalRecord]
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (id, reason)


def batch_evaluate(lm, guide, dataset, k_grid=()) -> BatchResult:
    """Score ground-truth (prompt, response, label) triples; no sampling.

    ``dataset`` yields (item_id, prompt, response, label). Items with
    invalid tokens are skipped and reported. ``k_grid`` is only
    validated here; accept/reject flags are derived from the records
    via ``EvalRecord.accepted`` / ``acceptance_matrix``.
    """
    result = BatchResult([])
    for k in k_grid:
        if not math.isfinite(k):
            raise InputError("k grid entries must be finite")
    empty = True
    for item_id, prompt, response, label in dataset:
        empty = False
        if label not in ("ID", "OOD"):
            raise InputError(f"label must be 'ID' or 'OOD', got {label!r}")
        try:
            logl = logprob_conditional(lm, response, prompt)
            logg = logprob_marginal(guide, response)
        except InputError as exc:
            result.skipped.append((str(item_id), str(exc)))
            continue
        result.records.append(
            EvalRecord(str(item_id), label, len(tuple(response)), logl, logg))
    if empty:
        raise InputError("dataset is empty")
    return result


def acceptance_matrix(records, k_grid) -> np.ndarray:
    """Boolean (record, k) matrix of acceptance decisions."""
    out = np.zeros((len(records), len(k_grid)), dtype=bool)
    for i, rec in enumerate(records):
        for j, k in enumerate(k_grid):
            out[i, j] = rec.accepted(k)
    return out


# ---------------------------------------------------------------------------
# serialization

_CSV_COLUMNS = ("id", "label", "n_y", "logL_bits", "logG_bits", "norm_ratio_bits")


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for r in records:
            writer.writerow([r.item_id, r.label, r.n_y, repr(r.logl_bits),
                             repr(r.logg_bits), repr(r.norm_ratio_bits)])


def read_records_csv(path) -> list[EvalRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != _CSV_COLUMNS:
            raise InputError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            records.append(EvalRecord(row["id"], row["label"], int(row["n_y"]),
                                      float(row["logL_bits"]), float(row["logG_bits"])))
    return records


def write_outcome_json(outcome: ValidOutcome, path) -> None:
    Path(path).write_text(json.dumps(outcome.to_json_dict(), indent=2) + "\n")
