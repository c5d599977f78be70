import json
from dataclasses import fields

import numpy as np
import pytest
from scipy import stats

from pprec.dataset import InteractionDataset
from pprec.similarity import CoocCounts
from pprec.walksim import (
    SERVER,
    Population,
    ProtocolTimeout,
    ServerEvent,
    WalkConfig,
    contributor_distribution,
    counts_from_log,
    deliverer_is_contributor_rate,
    observer_view,
    run_protocol,
    run_round,
    write_roundlog_jsonl,
)

from conftest import random_dataset


def population(n_users, rho=0.5, n_items=20, seed=0):
    ds = random_dataset(np.random.default_rng(seed), n_users, n_items, 0.2)
    return Population.from_dataset(ds, rho)


def test_population_rejects_bad_rho():
    ds = random_dataset(np.random.default_rng(0), 3, 4)
    for bad in (0.0, 1.0, -0.1, [0.5, 0.5]):
        with pytest.raises(ValueError):
            Population.from_dataset(ds, bad)
    pop = Population.from_dataset(ds, {1: 0.9})
    assert pop.rho.tolist() == [0.5, 0.9, 0.5]
    cfg = WalkConfig(1, default_rho=0.2)
    assert Population.from_dataset(ds, {0: 0.7}, cfg.default_rho).rho.tolist() == [0.7, 0.2, 0.2]


def test_config_preconditions():
    for kw in ({"k_rounds": 0}, {"k_rounds": 1, "max_hops": 0}, {"k_rounds": 1, "on_timeout": "retry"},
               {"k_rounds": 1, "default_rho": 1.0}):
        with pytest.raises(ValueError):
            WalkConfig(**kw)


def test_single_user_forced_path(backend):
    ds = InteractionDataset.from_pairs([0, 0], [0, 2], 1, 3)
    pop = Population.from_dataset(ds, 0.99)
    out = run_round(pop, WalkConfig(1, seed=3), 0, backend=backend)
    assert out.hop_trace == ((0, "insert"), (0, "deliver"))
    assert out.contributed_set == (0, 2)
    assert out.contributor == out.delivering_user == 0
    assert out.hops == 0


def test_insert_then_deliver_trace_shape(backend):
    # find a round whose start user accepts twice in a row
    pop = population(10)
    log, _ = run_protocol(pop, WalkConfig(500, seed=1), backend=backend)
    found = [t for t in range(len(log)) if len(log.trace(t)) == 2]
    assert found
    out = log.outcome(found[0])
    (h1, a1), (h2, a2) = out.hop_trace
    assert (a1, a2) == ("insert", "deliver") and h1 == h2 == out.contributor
    assert out.contributed_set == tuple(pop.likes(h1).tolist())


def test_two_round_counting():
    # users 0: {a,b}, 1: {b,c}
    counts = CoocCounts.from_sets(3, np.array([0, 2, 4]), np.array([0, 1, 1, 2]))
    assert (counts.count(0, 1), counts.count(1, 2), counts.count(0, 2)) == (1, 1, 0)
    assert counts.item_counts.tolist() == [1, 2, 1]


def test_round_structure_and_content_fidelity(backend):
    pop = population(30, seed=4)
    log, _ = run_protocol(pop, WalkConfig(3000, seed=9), backend=backend)
    assert log.n_completed == 3000
    for t in range(len(log)):
        actions = [a for _, a in log.trace(t)]
        assert actions.count("insert") == 1 and actions[-1] == "deliver"
        assert actions.count("deliver") == 1
        assert actions.index("insert") < len(actions) - 1
        assert actions.count("forward") == log.forwards[t]
        ins = actions.index("insert")
        assert log.trace(t)[ins][0] == log.contributor[t]
        assert log.trace(t)[-1][0] == log.deliverer[t]
        np.testing.assert_array_equal(log.items_of(t), pop.likes(log.contributor[t]))


def test_determinism_and_thread_independence(backend):
    pop = population(40, seed=2)
    cfg = WalkConfig(2000, seed=17)
    a, ca = run_protocol(pop, cfg, backend=backend)
    b, cb = run_protocol(pop, cfg, backend=backend)
    c, cc = run_protocol(pop, cfg, threads=7, backend=backend)
    assert a.equals(b) and a.equals(c)
    assert ca.equals(cb) and ca.equals(cc)
    # any single round can be recomputed in isolation
    for t in (0, 1234, 1999):
        assert run_round(pop, cfg, t, backend=backend) == a.outcome(t)
    other, _ = run_protocol(pop, WalkConfig(2000, seed=18), backend=backend)
    assert not a.equals(other)


def test_counts_rebuilt_from_log_match():
    pop = population(25, seed=5)
    log, counts = run_protocol(pop, WalkConfig(1500, seed=2))
    assert counts_from_log(log).equals(counts)
    # independent count by hand
    from itertools import combinations
    pairs = {}
    for t in range(len(log)):
        for i, j in combinations(sorted(log.items_of(t).tolist()), 2):
            pairs[(i, j)] = pairs.get((i, j), 0) + 1
    got = dict(zip(zip(counts.pair_i.tolist(), counts.pair_j.tolist()), counts.pair_counts.tolist()))
    assert got == pairs


def test_server_view_has_no_contributor():
    pop = population(20)
    log, _ = run_protocol(pop, WalkConfig(200, seed=1))
    view = observer_view(log, SERVER)
    assert len(view.visible_events) == 200
    assert {f.name for f in fields(ServerEvent)} == {"round_index", "items", "deliverer"}
    ev = view.visible_events[5]
    assert ev.items == tuple(log.items_of(5).tolist()) and ev.deliverer == log.deliverer[5]
    with pytest.raises(ValueError):
        observer_view(log, 20)
    with pytest.raises(ValueError):
        observer_view(log, "admin")


def test_user_view_only_covers_held_rounds():
    pop = population(50, seed=6)
    log, _ = run_protocol(pop, WalkConfig(20, seed=3))
    holders = set(log.trace_holder.tolist())
    idle = next(u for u in range(50) if u not in holders)
    assert observer_view(log, idle).visible_events == ()
    busy = int(log.trace_holder[0])
    events = observer_view(log, busy).visible_events
    assert events and events[0].round_index == 0 and events[0].received_from == SERVER
    for ev in events:
        if ev.inserted_own:
            assert ev.received_items == ()


def test_contributor_distribution_single_round():
    pop = population(8)
    log, _ = run_protocol(pop, WalkConfig(1, seed=0))
    hist = contributor_distribution(log)
    assert hist.sum() == 1 and sorted(hist.tolist())[-1] == 1


def test_contributor_uniform_max_deviation(backend):
    pop = population(50)
    log, _ = run_protocol(pop, WalkConfig(50_000, seed=11), backend=backend)
    freq = contributor_distribution(log) / log.n_completed
    assert np.max(np.abs(freq - 1 / 50)) < 0.005


def test_contributor_uniform_chi_square():
    pop = population(100)
    log, _ = run_protocol(pop, WalkConfig(100_000, seed=0))
    hist = contributor_distribution(log)
    assert stats.chisquare(hist).pvalue > 0.01
    tv = 0.5 * np.abs(hist / hist.sum() - 0.01).sum()
    assert tv <= 0.02


def test_chi_square_pvalues_uniform_across_seeds():
    # a single run fails p > 0.01 about 1% of the time under the null; across
    # seeds the p-values themselves must look uniform
    pop = population(100)
    ps = [stats.chisquare(contributor_distribution(run_protocol(pop, WalkConfig(20_000, seed=s))[0])).pvalue
          for s in range(100)]
    assert stats.kstest(ps, "uniform").pvalue > 0.01
    assert np.mean(np.array(ps) < 0.01) <= 0.05


def test_heterogeneous_rho_over_represents_eager_user():
    pop = population(20, rho={0: 0.9, **{u: 0.1 for u in range(1, 20)}})
    log, _ = run_protocol(pop, WalkConfig(40_000, seed=4))
    freq = contributor_distribution(log) / log.n_completed
    assert freq[0] > 2 / 20


@pytest.mark.parametrize("n,rho", [(50, 0.5), (10, 0.3), (2, 0.8)])
def test_deliverer_equals_contributor_rate_closed_form(n, rho):
    # the inserter delivers itself with probability rho; after any forward the
    # holder is uniform, so P(deliverer == contributor) = rho + (1 - rho) / n
    pop = population(n, rho=rho)
    log, _ = run_protocol(pop, WalkConfig(50_000, seed=n))
    assert deliverer_is_contributor_rate(log) == pytest.approx(rho + (1 - rho) / n, abs=0.01)


def test_contributor_given_deliverer():
    # conditional on the deliverer d, the contributor is d with probability
    # rho + (1 - rho)/n and uniform over the other n - 1 users otherwise
    n, rho = 50, 0.5
    log, _ = run_protocol(population(n), WalkConfig(100_000, seed=21))
    c, d = log.contributor, log.deliverer
    others = c != d
    offsets = np.bincount(((c - d) % n)[others], minlength=n)[1:]
    tv = 0.5 * np.abs(offsets / offsets.sum() - 1 / (n - 1)).sum()
    assert tv <= 0.03
    assert np.mean(~others) == pytest.approx(rho + (1 - rho) / n, abs=0.01)


def test_no_self_forward_variant():
    pop = population(5)
    log, _ = run_protocol(pop, WalkConfig(2000, seed=1, allow_self_forward=False))
    for t in range(len(log)):
        tr = log.trace(t)
        for (h, a), (h2, _) in zip(tr, tr[1:]):
            if a == "forward":
                assert h != h2


def test_timeout_skip_and_abort(backend):
    pop = population(10, rho=1e-6)
    with pytest.raises(ProtocolTimeout):
        run_round(pop, WalkConfig(1, max_hops=5), 0, backend=backend)
    log, counts = run_protocol(pop, WalkConfig(20, max_hops=5), backend=backend)
    assert log.n_completed == 0 and counts.k_rounds == 0
    assert np.all(log.forwards[~log.completed] == 5)
    with pytest.raises(ProtocolTimeout):
        run_protocol(pop, WalkConfig(20, max_hops=5, on_timeout="abort"), backend=backend)


def test_roundlog_jsonl(tmp_path):
    pop = population(10)
    log, _ = run_protocol(pop, WalkConfig(30, seed=2))
    full, red = tmp_path / "full.jsonl", tmp_path / "red.jsonl"
    write_roundlog_jsonl(log, full)
    write_roundlog_jsonl(log, red, redacted=True)
    rows = [json.loads(l) for l in full.read_text().splitlines()]
    assert len(rows) == 30
    assert rows[3] == {"round": 3, "contributor": int(log.contributor[3]),
                       "deliverer": int(log.deliverer[3]), "hops": int(log.forwards[3]),
                       "items": log.items_of(3).tolist()}
    assert all("contributor" not in json.loads(l) for l in red.read_text().splitlines())
