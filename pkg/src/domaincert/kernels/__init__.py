"""Backend selection for the n-gram hot loops.

The compiled Cython kernel is used when the extension built
successfully; otherwise (or when DOMAINCERT_PURE_PYTHON=1 is set) the
numpy fallback takes over. Both expose the same ``NGramScorer``
contract and produce identical numbers; ``benchmarks/bench_kernels.py``
compares their throughput.
"""

from __future__ import annotations

import os

from . import _pykernels

_backends = {"python": _pykernels.NGramScorer}

if os.environ.get("DOMAINCERT_PURE_PYTHON", "0") in ("0", ""):
    try:
        from . import _ckernels

        _backends["cython"] = _ckernels.NGramScorer
    except ImportError:
        pass

BACKEND = "cython" if "cython" in _backends else "python"


def make_scorer(order, vocab_size, alpha, bos_id, eos_id,
                contexts, indptr, token_ids, token_counts, totals,
                backend: str | None = None):
    """Build a scorer on the selected (or an explicitly named) backend."""
    cls = _backends[backend or BACKEND]
    return cls(order, vocab_size, alpha, bos_id, eos_id,
               contexts, indptr, token_ids, token_counts, totals)


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_backends))
