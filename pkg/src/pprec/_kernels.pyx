# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.

Every function here has a twin in ``_fallback`` that must return bit-identical
arrays; ``tests/test_kernels.py`` holds them to that.
"""

import numpy as np

from libc.stdint cimport int8_t, int32_t, int64_t, uint64_t
from libcpp.algorithm cimport sort
from libcpp.vector cimport vector

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL

ACTION_INSERT = 0
ACTION_FORWARD = 1
ACTION_DELIVER = 2

STATUS_OK = 0
STATUS_TIMEOUT = 1


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t next_u64(uint64_t* state) noexcept nogil:
    state[0] += GOLDEN
    return mix64(state[0])


cdef inline double next_unit(uint64_t* state) noexcept nogil:
    return <double>(next_u64(state) >> 11) * (1.0 / 9007199254740992.0)


cdef inline int64_t next_below(uint64_t* state, int64_t n) noexcept nogil:
    cdef int64_t r = <int64_t>(next_unit(state) * <double>n)
    if r >= n:
        r = n - 1
    return r


def cooc_upper(const int64_t[:] row_indptr, const int64_t[:] row_cols,
               const int64_t[:] col_indptr, const int64_t[:] col_rows,
               int64_t col_start, int64_t col_stop):
    """Upper-triangular column co-occurrence counts of a binary CSR matrix.

    Returns ``(i, j, count)`` arrays sorted by ``(i, j)`` for ``i`` in
    ``[col_start, col_stop)`` and ``j > i``.
    """
    cdef int64_t n_cols = col_indptr.shape[0] - 1
    cdef vector[int64_t] out_i, out_j, out_c, touched
    cdef int64_t[::1] acc = np.zeros(max(n_cols, 1), dtype=np.int64)
    cdef int64_t i, p, q, r, c, t
    with nogil:
        for i in range(col_start, col_stop):
            touched.clear()
            for p in range(col_indptr[i], col_indptr[i + 1]):
                r = col_rows[p]
                for q in range(row_indptr[r], row_indptr[r + 1]):
                    c = row_cols[q]
                    if c <= i:
                        continue
                    if acc[c] == 0:
                        touched.push_back(c)
                    acc[c] += 1
            sort(touched.begin(), touched.end())
            for t in range(<int64_t>touched.size()):
                c = touched[t]
                out_i.push_back(i)
                out_j.push_back(c)
                out_c.push_back(acc[c])
                acc[c] = 0
    return _to_array(out_i), _to_array(out_j), _to_array(out_c)


def set_pair_counts(const int64_t[:] indptr, const int64_t[:] items, int64_t m):
    """Pair counts over a list of item sets using a dense ``m x m`` counter.

    Cost is one increment per pair per set plus one pass over the counter, so
    it is linear in the number of sets at fixed ``m``. Returns ``(i, j, count)``
    sorted by ``(i, j)`` with ``i < j``.
    """
    counts_arr = np.zeros(m * m, dtype=np.int32)
    cdef int32_t[::1] counts = counts_arr
    cdef int64_t n_sets = indptr.shape[0] - 1
    cdef int64_t t, p, q, a, b, hi, i, j, nnz = 0
    with nogil:
        for t in range(n_sets):
            hi = indptr[t + 1]
            for p in range(indptr[t], hi):
                a = items[p]
                for q in range(p + 1, hi):
                    b = items[q]
                    if a < b:
                        counts[a * m + b] += 1
                    else:
                        counts[b * m + a] += 1
        for p in range(m * m):
            if counts[p] != 0:
                nnz += 1
    out_i = np.empty(nnz, dtype=np.int64)
    out_j = np.empty(nnz, dtype=np.int64)
    out_c = np.empty(nnz, dtype=np.int64)
    cdef int64_t[::1] vi = out_i, vj = out_j, vc = out_c
    t = 0
    with nogil:
        for i in range(m):
            for j in range(i + 1, m):
                if counts[i * m + j] != 0:
                    vi[t] = i
                    vj[t] = j
                    vc[t] = counts[i * m + j]
                    t += 1
    return out_i, out_j, out_c


cdef object _to_array(vector[int64_t]& v):
    cdef Py_ssize_t n = v.size()
    arr = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] view = arr
    cdef Py_ssize_t t
    for t in range(n):
        view[t] = v[t]
    return arr


def minhash_signatures(const int64_t[:] item_indptr, const int64_t[:] item_users,
                       const uint64_t[:] user_hash, const uint64_t[:] seeds):
    """Per-item minimum of ``mix64(seed_l ^ user_hash[u])`` over the item's users.

    Items without users keep the all-ones sentinel row.
    """
    cdef int64_t m = item_indptr.shape[0] - 1
    cdef int64_t k = seeds.shape[0]
    out = np.full((m, k), np.iinfo(np.uint64).max, dtype=np.uint64)
    cdef uint64_t[:, ::1] sig = out
    cdef int64_t i, p, l
    cdef uint64_t uh, h
    with nogil:
        for i in range(m):
            for p in range(item_indptr[i], item_indptr[i + 1]):
                uh = user_hash[item_users[p]]
                for l in range(k):
                    h = mix64(seeds[l] ^ uh)
                    if h < sig[i, l]:
                        sig[i, l] = h
    return out


def walk_rounds(int64_t n_users, const double[:] rho, uint64_t base_key,
                int64_t first_round, int64_t n_rounds, int64_t max_hops,
                bint allow_self):
    """Run ``n_rounds`` consecutive walk rounds starting at ``first_round``.

    ``base_key`` is the already-mixed master seed. Returns contributor,
    deliverer, forward count and status per round plus a flat hop trace.
    """
    contributor = np.full(n_rounds, -1, dtype=np.int64)
    deliverer = np.full(n_rounds, -1, dtype=np.int64)
    forwards = np.zeros(n_rounds, dtype=np.int64)
    status = np.zeros(n_rounds, dtype=np.int8)
    indptr = np.zeros(n_rounds + 1, dtype=np.int64)
    cdef int64_t[::1] v_contrib = contributor
    cdef int64_t[::1] v_deliv = deliverer
    cdef int64_t[::1] v_fwd = forwards
    cdef int8_t[::1] v_status = status
    cdef int64_t[::1] v_indptr = indptr
    cdef vector[int64_t] holders
    cdef vector[int8_t] actions
    cdef int64_t t, holder, target, fwd
    cdef uint64_t state
    cdef bint inserted
    with nogil:
        for t in range(n_rounds):
            state = mix64(base_key + <uint64_t>(first_round + t) * GOLDEN)
            holder = next_below(&state, n_users)
            inserted = False
            fwd = 0
            while True:
                if next_unit(&state) < rho[holder]:
                    if not inserted:
                        inserted = True
                        v_contrib[t] = holder
                        holders.push_back(holder)
                        actions.push_back(0)
                    else:
                        v_deliv[t] = holder
                        holders.push_back(holder)
                        actions.push_back(2)
                        break
                else:
                    if fwd >= max_hops:
                        v_status[t] = 1
                        break
                    if allow_self:
                        target = next_below(&state, n_users)
                    else:
                        target = next_below(&state, n_users - 1)
                        if target >= holder:
                            target += 1
                    holders.push_back(holder)
                    actions.push_back(1)
                    fwd += 1
                    holder = target
            v_fwd[t] = fwd
            v_indptr[t + 1] = holders.size()
    trace_holder = np.empty(holders.size(), dtype=np.int64)
    trace_action = np.empty(actions.size(), dtype=np.int8)
    cdef int64_t[::1] v_h = trace_holder
    cdef int8_t[::1] v_a = trace_action
    for t in range(<int64_t>holders.size()):
        v_h[t] = holders[t]
        v_a[t] = actions[t]
    return contributor, deliverer, forwards, status, indptr, trace_holder, trace_action
