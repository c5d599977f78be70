import numpy as np
import pytest

from pprec import _fallback, kernels
from pprec.similarity import cooccurrence, minhash_signatures, HashFamily
from pprec.walksim import Population, WalkConfig, run_protocol

from conftest import BACKENDS, random_dataset

needs_cython = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")


def test_mix64_matches_splitmix64_reference():
    # first outputs of SplitMix64 seeded with 0
    state, out = 0, []
    for _ in range(3):
        state = (state + kernels.GOLDEN) & kernels.MASK64
        out.append(kernels.mix64(state))
    assert out == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_mix64_array_matches_scalar():
    xs = [0, 1, 2**63, kernels.MASK64, 123456789]
    arr = kernels.mix64_array(np.array(xs, dtype=np.uint64))
    assert arr.tolist() == [kernels.mix64(x) for x in xs]


def test_backend_selection_reports_something():
    assert kernels.BACKEND in ("cython", "python")
    assert "python" in kernels.available_backends()
    with pytest.raises(ValueError):
        kernels.get("cooc_upper", "fortran")


@needs_cython
@pytest.mark.parametrize("seed", range(5))
def test_cooc_backends_identical(seed):
    ds = random_dataset(np.random.default_rng(seed), 40, 25, 0.3)
    a = cooccurrence(ds.likes_indptr, ds.likes_items, ds.n_items, backend="cython")
    b = cooccurrence(ds.likes_indptr, ds.likes_items, ds.n_items, backend="python")
    for x, y in zip(a, b):
        assert x.dtype == y.dtype == np.int64
        np.testing.assert_array_equal(x, y)


@needs_cython
def test_cooc_threaded_matches_serial():
    ds = random_dataset(np.random.default_rng(3), 200, 80, 0.1)
    a = cooccurrence(ds.likes_indptr, ds.likes_items, ds.n_items, threads=1)
    b = cooccurrence(ds.likes_indptr, ds.likes_items, ds.n_items, threads=4)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_cooc_partial_column_range(backend):
    ds = random_dataset(np.random.default_rng(8), 30, 12, 0.4)
    fn = kernels.get("cooc_upper", backend)
    full = cooccurrence(ds.likes_indptr, ds.likes_items, ds.n_items, backend=backend)
    n_rows = ds.n_users
    rows = np.repeat(np.arange(n_rows), np.diff(ds.likes_indptr))
    order = np.lexsort((rows, ds.likes_items))
    part = fn(np.ascontiguousarray(ds.likes_indptr), np.ascontiguousarray(ds.likes_items),
              np.ascontiguousarray(ds.item_indptr), np.ascontiguousarray(rows[order]), 4, 9)
    sel = (full[0] >= 4) & (full[0] < 9)
    for x, y in zip(part, full):
        np.testing.assert_array_equal(x, y[sel])


@needs_cython
def test_minhash_backends_identical():
    ds = random_dataset(np.random.default_rng(1), 60, 20, 0.2)
    # an item with no users keeps the sentinel row in both backends
    ds = ds.with_pairs(*[a[ds.pairs()[1] != 5] for a in ds.pairs()])
    fam = HashFamily(64, master_seed=9)
    a = minhash_signatures(ds, fam, backend="cython")
    b = minhash_signatures(ds, fam, backend="python")
    np.testing.assert_array_equal(a.values, b.values)
    assert a.empty[5] and np.all(a.values[5] == np.iinfo(np.uint64).max)


def test_minhash_fallback_block_boundaries():
    ds = random_dataset(np.random.default_rng(2), 50, 30, 0.3)
    uh = kernels.mix64_array(np.arange(ds.n_users, dtype=np.uint64) + np.uint64(kernels.GOLDEN))
    seeds = HashFamily(16, 3).seeds
    small = _fallback.minhash_signatures(ds.item_indptr, ds.item_users, uh, seeds, chunk=40)
    big = _fallback.minhash_signatures(ds.item_indptr, ds.item_users, uh, seeds)
    np.testing.assert_array_equal(small, big)


@needs_cython
@pytest.mark.parametrize("allow_self", [True, False])
def test_walk_backends_identical(allow_self):
    ds = random_dataset(np.random.default_rng(4), 30, 10, 0.3)
    rho = np.random.default_rng(5).uniform(0.05, 0.95, ds.n_users)
    pop = Population.from_dataset(ds, rho)
    cfg = WalkConfig(k_rounds=2000, seed=77, allow_self_forward=allow_self)
    a, ca = run_protocol(pop, cfg, backend="cython")
    b, cb = run_protocol(pop, cfg, backend="python")
    assert a.equals(b)
    assert ca.equals(cb)


@needs_cython
def test_walk_timeouts_identical():
    ds = random_dataset(np.random.default_rng(4), 10, 5, 0.5)
    pop = Population.from_dataset(ds, 0.02)
    cfg = WalkConfig(k_rounds=300, seed=1, max_hops=20)
    a, _ = run_protocol(pop, cfg, backend="cython")
    b, _ = run_protocol(pop, cfg, backend="python")
    assert a.equals(b)
    assert (~a.completed).sum() > 0


def random_sets(rng, n_sets, m, max_size):
    sizes = rng.integers(0, max_size + 1, n_sets)
    indptr = np.r_[0, np.cumsum(sizes)].astype(np.int64)
    items = np.concatenate([rng.choice(m, s, replace=False) for s in sizes]).astype(np.int64)
    return indptr, items


@pytest.mark.parametrize("seed", range(3))
def test_set_pair_counts_against_pair_loop(seed, backend):
    rng = np.random.default_rng(seed)
    indptr, items = random_sets(rng, 300, 25, 9)  # unsorted within sets on purpose
    expect = {}
    for t in range(300):
        s = items[indptr[t]:indptr[t + 1]].tolist()
        for p in range(len(s)):
            for q in range(p + 1, len(s)):
                key = (min(s[p], s[q]), max(s[p], s[q]))
                expect[key] = expect.get(key, 0) + 1
    i, j, c = kernels.get("set_pair_counts", backend)(indptr, items, 25)
    assert list(zip(i.tolist(), j.tolist())) == sorted(expect)
    assert c.tolist() == [expect[k] for k in sorted(expect)]


def test_set_pair_counts_matches_sparse_cooc():
    rng = np.random.default_rng(9)
    indptr, items = random_sets(rng, 2000, 60, 15)
    dense = _fallback.set_pair_counts(indptr, items, 60, chunk=101)
    sparse = cooccurrence(indptr, items, 60)
    for a, b in zip(dense, sparse):
        np.testing.assert_array_equal(a, b)
    if "cython" in BACKENDS:
        for a, b in zip(kernels.get("set_pair_counts", "cython")(indptr, items, 60), sparse):
            np.testing.assert_array_equal(a, b)
