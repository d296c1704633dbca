"""CharTask: a synthetic character-transformation domain.

Every item is a flat sequence "Q <input elements> <4 task tokens>
<output elements>" where the first task token names the transformation
applied to the input: S sorts ascending, R sorts descending, A adds one
to each element, E puts even elements before odd ones. Elements are
compared by the unicode codepoints of their characters; multi-character
elements use the codepoint tuple as sort key and the last character for
parity and for the add-one increment (so "13" + 1 = "14" and "c" + 1 =
"d"). The integer pool avoids elements ending in 9, keeping increments
inside the digit range.

The target domain used across the toolkit is sorting over the integer
pool; everything else (other tasks, the mixed integer+character pool)
is out of domain.
"""

from __future__ import annotations

import hashlib
import json
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .vocab import BOS_TOKEN, EOS_TOKEN, Vocabulary

TASK_TOKENS = ("S", "A", "R", "E")
QUERY_MARKER = "Q"

DATASET_FORMAT = "domaincert-chartask"
DATASET_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# element algebra


def sort_key(element: str) -> tuple[int, ...]:
    return tuple(ord(c) for c in element)


def is_even(element: str) -> bool:
    return ord(element[-1]) % 2 == 0


def increment(element: str) -> str:
    """Add one: bump the final character's codepoint ("13" -> "14")."""
    return element[:-1] + chr(ord(element[-1]) + 1)


def apply_task(task: str, elements) -> tuple[str, ...]:
    """Apply a task token to a non-empty element sequence."""
    elements = tuple(elements)
    if not elements:
        raise InputError("task input must be non-empty")
    if task == "S":
        return tuple(sorted(elements, key=sort_key))
    if task == "R":
        return tuple(sorted(elements, key=sort_key, reverse=True))
    if task == "A":
        return tuple(increment(e) for e in elements)
    if task == "E":
        evens = sorted((e for e in elements if is_even(e)), key=sort_key)
        odds = sorted((e for e in elements if not is_even(e)), key=sort_key)
        return tuple(evens + odds)
    raise InputError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# element pools and vocabulary


def int_pool(size: int = 49) -> tuple[str, ...]:
    """Distinct integers (as strings) whose last digit is never 9."""
    pool = [str(n) for n in range(1, 200) if n % 10 != 9]
    if size > len(pool):
        raise InputError(f"integer pool capped at {len(pool)} elements")
    return tuple(pool[:size])


def char_pool(size: int = 249) -> tuple[str, ...]:
    """Single and double lowercase elements, last character below 'z'."""
    singles = [c for c in string.ascii_lowercase if c != "z"]
    doubles = [a + b for a in string.ascii_lowercase for b in singles]
    pool = singles + doubles
    if size > len(pool):
        raise InputError(f"character pool capped at {len(pool)} elements")
    return tuple(pool[:size])


def pool_elements(pool: str, int_size: int = 49, char_size: int = 249) -> tuple[str, ...]:
    if pool == "int":
        return int_pool(int_size)
    if pool == "intchar":
        return int_pool(int_size) + char_pool(char_size)
    raise InputError(f"unknown pool {pool!r} (expected 'int' or 'intchar')")


def chartask_vocabulary(pool: str = "intchar") -> Vocabulary:
    """Shared vocabulary: markers, pool elements and their increments."""
    base = pool_elements(pool)
    closure = sorted(set(base) | {increment(e) for e in base})
    return Vocabulary.build(
        (QUERY_MARKER,) + TASK_TOKENS + tuple(closure), BOS_TOKEN, EOS_TOKEN)


# ---------------------------------------------------------------------------
# items and datasets


@dataclass(frozen=True)
class CharTaskItem:
    """One generated item, kept with its flat encoding."""

    s_in: tuple[str, ...]
    task: str
    task_tokens: tuple[str, str, str, str]
    s_out: tuple[str, ...]
    flat: tuple[str, ...]

    @classmethod
    def make(cls, s_in, task: str, trailing) -> "CharTaskItem":
        s_in = tuple(s_in)
        task_tokens = (task,) + tuple(trailing)
        if sorted(task_tokens) != sorted(TASK_TOKENS):
            raise InputError("task tokens must be a permutation of S, A, R, E")
        s_out = apply_task(task, s_in)
        flat = (QUERY_MARKER,) + s_in + task_tokens + s_out
        return cls(s_in, task, task_tokens, s_out, flat)


@dataclass(frozen=True)
class CharTaskSpec:
    """Generation settings for one dataset."""

    tasks: tuple[str, ...] = ("S",)
    pool: str = "int"
    train: int = 10_000
    val: int = 64
    test: int = 256
    min_input_len: int = 1
    max_input_len: int = 12
    int_pool_size: int = 49
    char_pool_size: int = 249
    seed: int = 0

    def __post_init__(self):
        if not self.tasks or any(t not in TASK_TOKENS for t in self.tasks):
            raise InputError(f"tasks must be a non-empty subset of {TASK_TOKENS}")
        if len(set(self.tasks)) != len(self.tasks):
            raise InputError("duplicate task tokens in spec")
        if not 1 <= self.min_input_len <= self.max_input_len <= 49:
            raise InputError("input length bounds must satisfy 1 <= min <= max <= 49")
        if min(self.train, self.val, self.test) < 0:
            raise InputError("split sizes must be non-negative")
        self.elements()  # validate pool sizes eagerly

    def elements(self) -> tuple[str, ...]:
        return pool_elements(self.pool, self.int_pool_size, self.char_pool_size)

    def canonical(self) -> dict:
        return {
            "tasks": list(self.tasks), "pool": self.pool,
            "train": self.train, "val": self.val, "test": self.test,
            "min_input_len": self.min_input_len, "max_input_len": self.max_input_len,
            "int_pool_size": self.int_pool_size, "char_pool_size": self.char_pool_size,
            "seed": self.seed,
        }

    def sha256(self) -> str:
        return hashlib.sha256(
            json.dumps(self.canonical(), sort_keys=True).encode()).hexdigest()


def generate_item(spec: CharTaskSpec, rng: np.random.Generator) -> CharTaskItem:
    """Draw one item: random input, random task, shuffled trailing tokens."""
    elements = spec.elements()
    length = int(rng.integers(spec.min_input_len, spec.max_input_len + 1))
    s_in = tuple(elements[i] for i in rng.integers(0, len(elements), size=length))
    task = spec.tasks[int(rng.integers(len(spec.tasks)))]
    others = [t for t in TASK_TOKENS if t != task]
    trailing = tuple(others[i] for i in rng.permutation(3))
    return CharTaskItem.make(s_in, task, trailing)


@dataclass
class DatasetSplits:
    spec: CharTaskSpec
    train: list[CharTaskItem] = field(default_factory=list)
    val: list[CharTaskItem] = field(default_factory=list)
    test: list[CharTaskItem] = field(default_factory=list)


def build_dataset(spec: CharTaskSpec) -> DatasetSplits:
    """Generate disjoint train/val/test splits (no duplicate flats)."""
    rng = np.random.default_rng(spec.seed)
    seen: set[tuple[str, ...]] = set()
    splits = DatasetSplits(spec)
    stale = 0
    for bucket, count in ((splits.train, spec.train), (splits.val, spec.val),
                          (splits.test, spec.test)):
        while len(bucket) < count:
            if stale > 5000:  # no new item in thousands of draws: space exhausted
                raise InputError(
                    "could not generate enough distinct items; the requested "
                    "split sizes exceed what this pool/length range supports")
            item = generate_item(spec, rng)
            if item.flat in seen:
                stale += 1
                continue
            stale = 0
            seen.add(item.flat)
            bucket.append(item)
    return splits


# ---------------------------------------------------------------------------
# validity checking


def parse_flat(elements) -> CharTaskItem | None:
    """Strict parse of a flat sequence; None when any rule is violated."""
    elements = tuple(elements)
    if len(elements) < 7 or elements[0] != QUERY_MARKER:
        return None
    if QUERY_MARKER in elements[1:]:
        return None
    body = elements[1:]
    first_task = next((i for i, e in enumerate(body) if e in TASK_TOKENS), None)
    if first_task is None or first_task == 0:
        return None
    s_in = body[:first_task]
    block = body[first_task:first_task + 4]
    if sorted(block) != sorted(TASK_TOKENS):
        return None
    tail = body[first_task + 4:]
    if tail != apply_task(block[0], s_in):
        return None
    return CharTaskItem(s_in, block[0], tuple(block), tail, elements)


def check_valid_sequence(elements) -> bool:
    """True iff the flat element sequence is a well-formed, correct item."""
    return parse_flat(elements) is not None


def check_valid_tokens(tokens, vocab: Vocabulary) -> bool:
    """Token-level validity: at most one trailing EOS, no BOS, valid flat."""
    tokens = tuple(int(t) for t in tokens)
    try:
        vocab.check_tokens(tokens)
    except InputError:
        return False
    if vocab.bos_id in tokens:
        return False
    if tokens and tokens[-1] == vocab.eos_id:
        tokens = tokens[:-1]
    if vocab.eos_id in tokens:
        return False
    return check_valid_sequence(vocab.decode(tokens))


# ---------------------------------------------------------------------------
# dataset files: one flat sequence per line, space-separated elements


def save_dataset(path, items, spec: CharTaskSpec, split: str) -> None:
    lines = [
        f"# {DATASET_FORMAT} v{DATASET_FORMAT_VERSION}",
        f"# spec_sha256={spec.sha256()}",
        f"# seed={spec.seed}",
        f"# split={split}",
    ]
    lines.extend(" ".join(item.flat) for item in items)
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> tuple[list[CharTaskItem], dict[str, str]]:
    header: dict[str, str] = {}
    items: list[CharTaskItem] = []
    with open(path) as fh:
        first = fh.readline().strip()
        if first != f"# {DATASET_FORMAT} v{DATASET_FORMAT_VERSION}":
            raise InputError(f"{path}: not a {DATASET_FORMAT} file")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                header[key] = value
                continue
            item = parse_flat(line.split(" "))
            if item is None:
                raise InputError(f"{path}: invalid item line {line!r}")
            items.append(item)
    return items, header
