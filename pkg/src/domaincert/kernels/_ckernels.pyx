# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled backend for the n-gram hot loops.

Mirrors ``_pykernels`` exactly; see that module for the semantics.
Context lookup walks a token-chain map (unordered_map keyed by
(node << 32) | token), which stays exact for any order and vocabulary
size, unlike a positional base-V encoding.
"""

from cython.operator cimport dereference as deref
from libc.math cimport log2
from libcpp.unordered_map cimport unordered_map

import numpy as np

ctypedef unordered_map[long long, int].iterator map_it

DEF MAX_CONTEXT = 64


cdef class NGramScorer:
    cdef readonly int order
    cdef readonly int vocab_size
    cdef readonly double alpha
    cdef readonly int bos_id
    cdef readonly int eos_id
    cdef readonly object backend
    cdef long long[::1] _indptr
    cdef int[::1] _token_ids
    cdef long long[::1] _token_counts
    cdef long long[::1] _totals
    cdef unordered_map[long long, int] _edges
    cdef unordered_map[long long, int] _row_of
    cdef int _n_nodes

    def __init__(self, order, vocab_size, alpha, bos_id, eos_id,
                 contexts, indptr, token_ids, token_counts, totals):
        if order - 1 > MAX_CONTEXT:
            raise ValueError(f"compiled kernel supports order <= {MAX_CONTEXT + 1}")
        self.order = order
        self.vocab_size = vocab_size
        self.alpha = alpha
        self.bos_id = bos_id
        self.eos_id = eos_id
        self.backend = "cython"
        self._indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self._token_ids = np.ascontiguousarray(token_ids, dtype=np.int32)
        self._token_counts = np.ascontiguousarray(token_counts, dtype=np.int64)
        self._totals = np.ascontiguousarray(totals, dtype=np.int64)
        cdef long long[:, ::1] ctx = np.ascontiguousarray(
            np.asarray(contexts, dtype=np.int64).reshape(len(self._totals), order - 1))
        self._n_nodes = 1
        cdef Py_ssize_t r
        cdef int node, j, width = order - 1
        cdef long long key
        cdef map_it it
        for r in range(ctx.shape[0]):
            node = 0
            for j in range(width):
                key = ((<long long> node) << 32) | ctx[r, j]
                it = self._edges.find(key)
                if it == self._edges.end():
                    self._edges[key] = self._n_nodes
                    node = self._n_nodes
                    self._n_nodes += 1
                else:
                    node = deref(it).second
            self._row_of[node] = <int> r

    cdef int _walk(self, long long* ctx, int width) noexcept nogil:
        cdef int node = 0, j
        cdef long long key
        cdef map_it it
        for j in range(width):
            key = ((<long long> node) << 32) | ctx[j]
            it = self._edges.find(key)
            if it == self._edges.end():
                return -1
            node = deref(it).second
        it = self._row_of.find(node)
        if it == self._row_of.end():
            return -1
        return deref(it).second

    cdef double _token_prob(self, int row, long long token) noexcept nogil:
        cdef double denom_alpha = self.alpha * self.vocab_size
        cdef long long lo, hi, mid, count = 0
        if row < 0:
            return self.alpha / denom_alpha
        lo = self._indptr[row]
        hi = self._indptr[row + 1]
        while lo < hi:
            mid = (lo + hi) >> 1
            if self._token_ids[mid] < token:
                lo = mid + 1
            else:
                hi = mid
        if lo < self._indptr[row + 1] and self._token_ids[lo] == token:
            count = self._token_counts[lo]
        return (count + self.alpha) / (self._totals[row] + denom_alpha)

    cdef void _init_ctx(self, long long* ctx, int width, long long[::1] prompt) noexcept nogil:
        cdef Py_ssize_t n = prompt.shape[0]
        cdef int j
        for j in range(width):
            if n >= width - j:
                ctx[j] = prompt[n - (width - j)]
            else:
                ctx[j] = self.bos_id

    def row_probs(self, row):
        """Dense smoothed next-token distribution for a row (-1 = unseen)."""
        probs = np.full(self.vocab_size, self.alpha)
        if row < 0:
            return probs / (self.alpha * self.vocab_size)
        lo, hi = self._indptr[row], self._indptr[row + 1]
        probs[np.asarray(self._token_ids[lo:hi])] += np.asarray(self._token_counts[lo:hi])
        return probs / (int(self._totals[row]) + self.alpha * self.vocab_size)

    def row_for(self, context):
        cdef long long[::1] arr = np.ascontiguousarray(
            np.asarray(context, dtype=np.int64).ravel())
        if arr.shape[0] != self.order - 1:
            return -1
        if self.order == 1:
            return self._walk(NULL, 0)
        return self._walk(&arr[0], self.order - 1)

    def score(self, prompt, response):
        """Sum of per-token base-2 log probabilities of ``response``."""
        cdef long long[::1] x = np.ascontiguousarray(
            np.asarray(prompt, dtype=np.int64).ravel())
        cdef long long[::1] y = np.ascontiguousarray(
            np.asarray(response, dtype=np.int64).ravel())
        return self._score(x, y)

    cdef double _score(self, long long[::1] x, long long[::1] y) noexcept nogil:
        cdef int width = self.order - 1
        cdef long long ctx[MAX_CONTEXT]
        cdef double total = 0.0
        cdef Py_ssize_t i
        cdef int j, row
        self._init_ctx(ctx, width, x)
        for i in range(y.shape[0]):
            row = self._walk(ctx, width)
            total += log2(self._token_prob(row, y[i]))
            if width:
                for j in range(width - 1):
                    ctx[j] = ctx[j + 1]
                ctx[width - 1] = y[i]
        return total

    def score_many(self, prompts, responses):
        out = np.empty(len(prompts))
        cdef double[::1] view = out
        cdef Py_ssize_t i
        for i in range(len(prompts)):
            view[i] = self._score(
                np.ascontiguousarray(np.asarray(prompts[i], dtype=np.int64).ravel()),
                np.ascontiguousarray(np.asarray(responses[i], dtype=np.int64).ravel()))
        return out

    def sample(self, prompt, max_len, uniforms):
        """Ancestral sampling driven by pre-drawn uniforms.

        Returns (tokens, terminated); tokens include the final EOS when
        terminated is True.
        """
        cdef long long[::1] x = np.ascontiguousarray(
            np.asarray(prompt, dtype=np.int64).ravel())
        cdef double[::1] u = np.ascontiguousarray(uniforms, dtype=np.float64).ravel()
        cdef Py_ssize_t limit = max_len
        out = np.empty(limit, dtype=np.int64)
        cdef long long[::1] o = out
        cdef int width = self.order - 1
        cdef long long ctx[MAX_CONTEXT]
        cdef Py_ssize_t step, n = 0
        cdef int j, row, token
        cdef bint terminated = False
        self._init_ctx(ctx, width, x)
        for step in range(limit):
            row = self._walk(ctx, width)
            token = self._pick(row, u[step])
            o[n] = token
            n += 1
            if token == self.eos_id:
                terminated = True
                break
            if width:
                for j in range(width - 1):
                    ctx[j] = ctx[j + 1]
                ctx[width - 1] = token
        return out[:n], terminated

    cdef int _pick(self, int row, double u) noexcept nogil:
        """Smallest token id whose smoothed CDF exceeds u (clamped to V-1)."""
        cdef double denom, acc = 0.0
        cdef long long lo = 0, hi = 0
        cdef int t
        if row < 0:
            denom = self.alpha * self.vocab_size
        else:
            denom = self._totals[row] + self.alpha * self.vocab_size
            lo = self._indptr[row]
            hi = self._indptr[row + 1]
        for t in range(self.vocab_size):
            if lo < hi and self._token_ids[lo] == t:
                acc += (self._token_counts[lo] + self.alpha) / denom
                lo += 1
            else:
                acc += self.alpha / denom
            if acc > u:
                return t
        return self.vocab_size - 1
