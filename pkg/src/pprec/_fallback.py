"""Pure-Python/numpy twins of the compiled kernels in ``_kernels.pyx``."""

import numpy as np
import scipy.sparse as sp

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

ACTION_INSERT = 0
ACTION_FORWARD = 1
ACTION_DELIVER = 2

STATUS_OK = 0
STATUS_TIMEOUT = 1

_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)


def mix64(z):
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix64_array(z):
    """Vectorised :func:`mix64` over a uint64 array (wraps mod 2**64)."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _C1
    z = (z ^ (z >> np.uint64(27))) * _C2
    return z ^ (z >> np.uint64(31))


def cooc_upper(row_indptr, row_cols, col_indptr, col_rows, col_start, col_stop):
    n_cols = len(col_indptr) - 1
    n_rows = len(row_indptr) - 1
    x = sp.csr_matrix(
        (np.ones(len(row_cols), dtype=np.int64), np.asarray(row_cols), np.asarray(row_indptr)),
        shape=(n_rows, n_cols),
    )
    xt = x[:, col_start:col_stop].T.tocsr()
    c = sp.triu(xt @ x, k=col_start + 1).tocoo()
    i = c.row.astype(np.int64) + col_start
    j = c.col.astype(np.int64)
    cnt = c.data.astype(np.int64)
    keep = cnt > 0
    i, j, cnt = i[keep], j[keep], cnt[keep]
    order = np.lexsort((j, i))
    return i[order], j[order], cnt[order]


def set_pair_counts(indptr, items, m, chunk=1 << 22):
    indptr = np.asarray(indptr, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    counts = np.zeros(m * m, dtype=np.int64)
    # every position p pairs with the later positions of its own set
    set_end = np.repeat(indptr[1:], np.diff(indptr))
    later = set_end - np.arange(len(items)) - 1
    starts = np.zeros(len(items) + 1, dtype=np.int64)
    np.cumsum(later, out=starts[1:])
    lo = 0
    while lo < len(items):
        # take whole positions until about ``chunk`` pairs are pending
        hi = max(lo + 1, int(np.searchsorted(starts, starts[lo] + chunk, side="right")) - 1)
        hi = min(hi, len(items))
        reps = later[lo:hi]
        first = np.repeat(np.arange(lo, hi), reps)
        offset = np.arange(len(first)) - np.repeat(starts[lo:hi] - starts[lo], reps)
        a, b = items[first], items[first + 1 + offset]
        keys = np.minimum(a, b) * m + np.maximum(a, b)
        counts += np.bincount(keys, minlength=m * m)
        lo = hi
    nz = np.flatnonzero(counts)
    return nz // m, nz % m, counts[nz]


def minhash_signatures(item_indptr, item_users, user_hash, seeds, chunk=1 << 20):
    item_indptr = np.asarray(item_indptr, dtype=np.int64)
    item_users = np.asarray(item_users, dtype=np.int64)
    user_hash = np.asarray(user_hash, dtype=np.uint64)
    seeds = np.asarray(seeds, dtype=np.uint64)
    m, k = len(item_indptr) - 1, len(seeds)
    out = np.full((m, k), np.iinfo(np.uint64).max, dtype=np.uint64)
    # bound the (likes x k) temporary by processing items in blocks
    per_block = max(1, chunk // max(k, 1))
    i = 0
    while i < m:
        stop = i + 1
        while stop < m and item_indptr[stop + 1] - item_indptr[i] <= per_block:
            stop += 1
        lo, hi = item_indptr[i], item_indptr[stop]
        if hi > lo:
            h = mix64_array(seeds[None, :] ^ user_hash[item_users[lo:hi]][:, None])
            starts = item_indptr[i:stop] - lo
            nonempty = item_indptr[i + 1:stop + 1] > item_indptr[i:stop]
            red = np.minimum.reduceat(h, starts[nonempty], axis=0)
            out[i:stop][nonempty] = red
        i = stop
    return out


class _Stream:
    __slots__ = ("state",)

    def __init__(self, key):
        self.state = key

    def unit(self):
        self.state = (self.state + GOLDEN) & MASK64
        return (mix64(self.state) >> 11) * (1.0 / 9007199254740992.0)

    def below(self, n):
        r = int(self.unit() * n)
        return n - 1 if r >= n else r


def walk_rounds(n_users, rho, base_key, first_round, n_rounds, max_hops, allow_self):
    contributor = np.full(n_rounds, -1, dtype=np.int64)
    deliverer = np.full(n_rounds, -1, dtype=np.int64)
    forwards = np.zeros(n_rounds, dtype=np.int64)
    status = np.zeros(n_rounds, dtype=np.int8)
    indptr = np.zeros(n_rounds + 1, dtype=np.int64)
    rho = [float(x) for x in rho]
    holders, actions = [], []
    for t in range(n_rounds):
        rng = _Stream(mix64((base_key + (first_round + t) * GOLDEN) & MASK64))
        holder = rng.below(n_users)
        inserted = False
        fwd = 0
        while True:
            if rng.unit() < rho[holder]:
                if not inserted:
                    inserted = True
                    contributor[t] = holder
                    holders.append(holder)
                    actions.append(ACTION_INSERT)
                else:
                    deliverer[t] = holder
                    holders.append(holder)
                    actions.append(ACTION_DELIVER)
                    break
            else:
                if fwd >= max_hops:
                    status[t] = STATUS_TIMEOUT
                    break
                if allow_self:
                    target = rng.below(n_users)
                else:
                    target = rng.below(n_users - 1)
                    if target >= holder:
                        target += 1
                holders.append(holder)
                actions.append(ACTION_FORWARD)
                fwd += 1
                holder = target
        forwards[t] = fwd
        indptr[t + 1] = len(holders)
    return (
        contributor,
        deliverer,
        forwards,
        status,
        indptr,
        np.asarray(holders, dtype=np.int64),
        np.asarray(actions, dtype=np.int8),
    )
