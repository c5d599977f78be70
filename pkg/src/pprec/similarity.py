"""Item-item Jaccard similarity: exact, MinHash signatures, and round-count estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from pprec import kernels

MODES = ("paper-literal", "union-normalized")
EMPTY = np.iinfo(np.uint64).max
# item universes up to 4096 items (64 MiB of int32 counters) count round
# pairs densely
DENSE_PAIR_CELLS = 1 << 24


class EstimationError(ValueError):
    """Similarity is undefined, e.g. an item without any users."""


class SimilarityMatrix:
    """Sparse symmetric item similarity, stored as sorted upper-triangular triples.

    Absent pairs are 0 and the diagonal is 1 by definition.
    """

    def __init__(self, n_items, rows, cols, values):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (len(rows) == len(cols) == len(values)):
            raise ValueError("rows, cols and values must have equal length")
        if len(rows):
            if np.any(rows >= cols):
                raise ValueError("entries must satisfy i < j")
            if rows.min() < 0 or cols.max() >= n_items:
                raise ValueError("item id out of range")
            if np.any(values < 0.0) or np.any(values > 1.0):
                raise ValueError("similarity values must lie in [0, 1]")
        keys = rows * n_items + cols
        self.n_items = int(n_items)
        step = np.diff(keys)
        if np.any(step <= 0):
            order = np.argsort(keys, kind="stable")
            rows, cols, values, keys = rows[order], cols[order], values[order], keys[order]
            if np.any(np.diff(keys) == 0):
                raise ValueError("duplicate item pair")
        self.rows, self.cols, self.values, self._keys = rows, cols, values, keys
        self._sym = None

    @classmethod
    def _from_sorted(cls, n_items, rows, cols, values):
        """Skip validation for triples already sorted, unique, i < j and in [0, 1]."""
        self = cls.__new__(cls)
        self.n_items = int(n_items)
        self.rows, self.cols, self.values = rows, cols, values
        self._keys = rows * self.n_items + cols
        self._sym = None
        return self

    def __len__(self):
        return len(self.values)

    def __repr__(self):
        return f"SimilarityMatrix(n_items={self.n_items}, nnz={len(self)})"

    def lookup(self, i, j):
        if i == j:
            return 1.0
        if i > j:
            i, j = j, i
        key = i * self.n_items + j
        pos = np.searchsorted(self._keys, key)
        if pos < len(self._keys) and self._keys[pos] == key:
            return float(self.values[pos])
        return 0.0

    def symmetric(self):
        """Symmetric CSR with a zero diagonal, for scoring."""
        if self._sym is None:
            m = self.n_items
            r = np.concatenate([self.rows, self.cols])
            c = np.concatenate([self.cols, self.rows])
            v = np.concatenate([self.values, self.values])
            self._sym = sp.csr_matrix((v, (r, c)), shape=(m, m))
            self._sym.sort_indices()
        return self._sym

    def scaled(self, factor):
        """Copy with every stored value multiplied by ``factor`` (range check skipped)."""
        out = object.__new__(SimilarityMatrix)
        out.n_items, out.rows, out.cols = self.n_items, self.rows, self.cols
        out.values = self.values * factor
        out._keys = self._keys
        out._sym = None
        return out

    def to_dict(self):
        return {(int(i), int(j)): float(v) for i, j, v in zip(self.rows, self.cols, self.values)}

    def equals(self, other):
        return (
            self.n_items == other.n_items
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.values, other.values)
        )


def exact_jaccard(ui, uj):
    ui, uj = set(ui), set(uj)
    union = len(ui | uj)
    if union == 0:
        return 0.0
    return len(ui & uj) / union


def cooccurrence(indptr, cols, n_cols, threads=1, backend=None):
    """Upper-triangular column co-occurrence of a binary CSR matrix.

    Returns ``(i, j, count)`` sorted by ``(i, j)``; only pairs that co-occur.
    """
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    n_rows = len(indptr) - 1
    rows = np.repeat(np.arange(n_rows, dtype=np.int64), np.diff(indptr))
    order = np.lexsort((rows, cols))
    col_rows = np.ascontiguousarray(rows[order])
    col_indptr = np.zeros(n_cols + 1, dtype=np.int64)
    np.cumsum(np.bincount(cols, minlength=n_cols), out=col_indptr[1:])
    fn = kernels.get("cooc_upper", backend)
    if threads <= 1 or n_cols < 2:
        return fn(indptr, cols, col_indptr, col_rows, 0, n_cols)
    from concurrent.futures import ThreadPoolExecutor

    # balance by pair work rather than column count
    work = np.cumsum(np.diff(col_indptr).astype(np.float64) ** 2)
    bounds = np.searchsorted(work, np.linspace(0, work[-1], threads + 1)[1:-1])
    edges = [0, *sorted(set(int(b) for b in bounds)), n_cols]
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(
            lambda ab: fn(indptr, cols, col_indptr, col_rows, ab[0], ab[1]),
            [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a],
        ))
    return tuple(np.concatenate([p[t] for p in parts]) for t in range(3))


def exact_similarity_matrix(ds, threads=1, backend=None):
    """Exact Jaccard for every item pair that shares at least one user."""
    i, j, cnt = cooccurrence(ds.likes_indptr, ds.likes_items, ds.n_items, threads, backend)
    deg = ds.item_degrees()
    return SimilarityMatrix._from_sorted(ds.n_items, i, j, cnt / (deg[i] + deg[j] - cnt))


@dataclass(frozen=True)
class HashFamily:
    """``k`` seeded 64-bit hash functions over dense user ids."""

    k: int
    master_seed: int = 0
    seeds: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("hash family needs k >= 1")
        base = kernels.mix64(self.master_seed & kernels.MASK64)
        idx = np.arange(1, self.k + 1, dtype=np.uint64)
        seeds = kernels.mix64_array(np.uint64(base) + idx * np.uint64(kernels.GOLDEN))
        seeds.flags.writeable = False
        object.__setattr__(self, "seeds", seeds)

    def hash_users(self, users):
        """Values of every function on ``users``; shape ``(len(users), k)``."""
        uh = user_hash(np.asarray(users, dtype=np.int64))
        return kernels.mix64_array(self.seeds[None, :] ^ uh[:, None])


def user_hash(users):
    return kernels.mix64_array(np.asarray(users, dtype=np.uint64) + np.uint64(kernels.GOLDEN))


@dataclass(frozen=True, eq=False)
class ItemSignatures:
    values: np.ndarray  # (n_items, k) uint64
    empty: np.ndarray  # (n_items,) bool

    @property
    def k(self):
        return self.values.shape[1]

    def estimate(self, i, j):
        if self.empty[i] or self.empty[j]:
            raise EstimationError(f"item {i if self.empty[i] else j} has no users")
        return estimate_from_signatures(self.values[i], self.values[j])

    def matrix(self):
        """Signature estimates for every pair of non-empty items with any collision."""
        m = self.values.shape[0]
        rows, cols, vals = [], [], []
        live = np.flatnonzero(~self.empty)
        for a, i in enumerate(live[:-1]):
            rest = live[a + 1:]
            eq = (self.values[rest] == self.values[i]).sum(axis=1)
            hit = eq > 0
            rows.append(np.full(hit.sum(), i, dtype=np.int64))
            cols.append(rest[hit])
            vals.append(eq[hit] / self.k)
        if not rows:
            return SimilarityMatrix(m, [], [], [])
        return SimilarityMatrix(m, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


def minhash_signatures(ds, family, backend=None):
    uh = user_hash(np.arange(ds.n_users, dtype=np.int64))
    fn = kernels.get("minhash_signatures", backend)
    values = fn(
        np.ascontiguousarray(ds.item_indptr),
        np.ascontiguousarray(ds.item_users),
        uh,
        np.ascontiguousarray(family.seeds),
    )
    return ItemSignatures(values, ds.item_degrees() == 0)


def estimate_from_signatures(sig_i, sig_j):
    sig_i, sig_j = np.asarray(sig_i), np.asarray(sig_j)
    if sig_i.shape != sig_j.shape or sig_i.ndim != 1 or len(sig_i) == 0:
        raise EstimationError("signatures must be non-empty and of equal length")
    if np.all(sig_i == EMPTY) or np.all(sig_j == EMPTY):
        raise EstimationError("signature of an item without users")
    return float(np.count_nonzero(sig_i == sig_j)) / len(sig_i)


def chernoff_k(alpha, delta):
    """Hash count ``ceil((2/alpha**2) ln(2/delta))`` for ``|error| <= alpha`` w.p. ``1-delta``."""
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must be in (0, 1/2), got {alpha}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    return math.ceil((2.0 / alpha ** 2) * math.log(2.0 / delta))


def chernoff_delta(k, alpha):
    """Failure probability bound for ``k`` functions at error ``alpha``."""
    return 2.0 * math.exp(-k * alpha ** 2 / 2.0)


@dataclass(frozen=True, eq=False)
class CoocCounts:
    """Round-level co-occurrence state: n_{i,j} per pair and per-item occurrence counts."""

    n_items: int
    k_rounds: int
    pair_i: np.ndarray
    pair_j: np.ndarray
    pair_counts: np.ndarray
    item_counts: np.ndarray

    @classmethod
    def empty(cls, n_items):
        z = np.zeros(0, dtype=np.int64)
        return cls(n_items, 0, z, z, z, np.zeros(n_items, dtype=np.int64))

    @classmethod
    def from_sets(cls, n_items, indptr, items, k_rounds=None, backend=None):
        """Count pairs over rounds given as a CSR of contributed item sets.

        Small item universes use a dense pair counter (linear in the number
        of rounds); larger ones fall back to sparse co-occurrence.
        """
        indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        items = np.ascontiguousarray(items, dtype=np.int64)
        if n_items * n_items <= DENSE_PAIR_CELLS and len(indptr) - 1 < 2**31:
            i, j, cnt = kernels.get("set_pair_counts", backend)(indptr, items, n_items)
        else:
            i, j, cnt = cooccurrence(indptr, items, n_items, backend=backend)
        if k_rounds is None:
            k_rounds = len(indptr) - 1
        return cls(n_items, int(k_rounds), i, j, cnt, np.bincount(items, minlength=n_items).astype(np.int64))

    def count(self, i, j):
        if i > j:
            i, j = j, i
        hit = np.flatnonzero((self.pair_i == i) & (self.pair_j == j))
        return int(self.pair_counts[hit[0]]) if len(hit) else 0

    def merge(self, other):
        """Associative, commutative combination of counts from disjoint round sets."""
        if other.n_items != self.n_items:
            raise ValueError("item universes differ")
        m = self.n_items
        keys = np.concatenate([self.pair_i * m + self.pair_j, other.pair_i * m + other.pair_j])
        cnts = np.concatenate([self.pair_counts, other.pair_counts])
        uniq, inv = np.unique(keys, return_inverse=True)
        summed = np.bincount(inv, weights=cnts, minlength=len(uniq)).astype(np.int64)
        return CoocCounts(m, self.k_rounds + other.k_rounds, uniq // m, uniq % m, summed,
                          self.item_counts + other.item_counts)

    def __add__(self, other):
        return self.merge(other)

    def equals(self, other):
        return (
            self.n_items == other.n_items
            and self.k_rounds == other.k_rounds
            and np.array_equal(self.pair_i, other.pair_i)
            and np.array_equal(self.pair_j, other.pair_j)
            and np.array_equal(self.pair_counts, other.pair_counts)
            and np.array_equal(self.item_counts, other.item_counts)
        )


def estimate_matrix_from_rounds(counts, mode="union-normalized"):
    """Similarity from round counts.

    ``paper-literal`` divides n_{i,j} by the number of rounds;
    ``union-normalized`` divides by the rounds in which i or j appeared.
    """
    if counts.k_rounds < 1:
        raise ValueError("need at least one completed round")
    i, j, n = counts.pair_i, counts.pair_j, counts.pair_counts
    if mode == "paper-literal":
        vals = n / counts.k_rounds
    elif mode == "union-normalized":
        # every stored pair has n >= 1, so the union count is positive
        vals = n / (counts.item_counts[i] + counts.item_counts[j] - n)
    else:
        raise ValueError(f"unknown estimator mode {mode!r}; expected one of {MODES}")
    return SimilarityMatrix._from_sorted(counts.n_items, i, j, vals)


def format_value(x):
    return f"{x:.10g}"


def write_similarity_csv(sims, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("item_i,item_j,similarity\n")
        for i, j, v in zip(sims.rows.tolist(), sims.cols.tolist(), sims.values.tolist()):
            fh.write(f"{i},{j},{format_value(v)}\n")


def read_similarity_csv(path, n_items):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return SimilarityMatrix(n_items, [], [], [])
    return SimilarityMatrix(n_items, data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2])
