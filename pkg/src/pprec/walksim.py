"""In-process simulation of the anonymous random-walk collection protocol.

Each round the server hands an empty token to a uniformly chosen user. The
holder draws a uniform number: below its acceptance probability it either
inserts its own like-set (token still empty) or delivers the token to the
server (token filled); otherwise it forwards the token to a uniformly chosen
user. The server only ever sees the delivered set and who delivered it.

Every round draws from its own counter-based stream keyed by
``(seed, round_index)``, so rounds can run in any order or in parallel.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from pprec import kernels
from pprec.similarity import CoocCounts

_log = logging.getLogger(__name__)

INSERT, FORWARD, DELIVER = "insert", "forward", "deliver"
_ACTION_NAMES = {kernels.ACTION_INSERT: INSERT, kernels.ACTION_FORWARD: FORWARD,
                 kernels.ACTION_DELIVER: DELIVER}
SERVER = "server"


class ProtocolTimeout(RuntimeError):
    def __init__(self, round_index, max_hops):
        super().__init__(f"round {round_index} exceeded {max_hops} forwards")
        self.round_index = round_index


@dataclass(frozen=True, eq=False)
class Population:
    """Users taking part in the walk: their like-sets and acceptance probabilities."""

    n_users: int
    n_items: int
    likes_indptr: np.ndarray
    likes_items: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        if self.n_users < 1:
            raise ValueError("population must be non-empty")
        rho = np.ascontiguousarray(self.rho, dtype=np.float64)
        if rho.shape != (self.n_users,):
            raise ValueError("need one acceptance probability per user")
        if np.any(rho <= 0.0) or np.any(rho >= 1.0):
            raise ValueError("acceptance probabilities must lie strictly inside (0, 1)")
        object.__setattr__(self, "rho", rho)

    @classmethod
    def from_dataset(cls, ds, rho=0.5, default_rho=0.5):
        """``rho`` is a scalar, a per-user array, or a ``{user: rho}`` override
        map; users missing from the map get ``default_rho``."""
        if isinstance(rho, dict):
            arr = np.full(ds.n_users, float(default_rho))
            for user, value in rho.items():
                arr[user] = value
        else:
            arr = np.broadcast_to(np.asarray(rho, dtype=np.float64), (ds.n_users,)).copy()
        return cls(ds.n_users, ds.n_items, ds.likes_indptr, ds.likes_items, arr)

    def likes(self, user):
        return self.likes_items[self.likes_indptr[user]:self.likes_indptr[user + 1]]


@dataclass(frozen=True)
class WalkConfig:
    k_rounds: int
    seed: int = 0
    max_hops: int = 1000
    default_rho: float = 0.5
    allow_self_forward: bool = True
    on_timeout: str = "skip"

    def __post_init__(self):
        if self.k_rounds < 1:
            raise ValueError("k_rounds must be >= 1")
        if self.max_hops < 1:
            raise ValueError("max_hops must be >= 1")
        if not 0.0 < self.default_rho < 1.0:
            raise ValueError("default_rho must lie strictly inside (0, 1)")
        if self.on_timeout not in ("skip", "abort"):
            raise ValueError("on_timeout must be 'skip' or 'abort'")

    @property
    def base_key(self):
        return kernels.mix64(self.seed & kernels.MASK64)


@dataclass(frozen=True)
class RoundOutcome:
    round_index: int
    contributed_set: tuple
    contributor: int  # audit only
    delivering_user: int
    hop_trace: tuple  # ((holder, action), ...)

    @property
    def hops(self):
        return sum(1 for _, a in self.hop_trace if a == FORWARD)


@dataclass(frozen=True, eq=False)
class RoundLog:
    """Complete audit record of a protocol run (flat arrays, one entry per round)."""

    n_users: int
    n_items: int
    seed: int
    round_index: np.ndarray
    contributor: np.ndarray
    deliverer: np.ndarray
    forwards: np.ndarray
    status: np.ndarray
    trace_indptr: np.ndarray
    trace_holder: np.ndarray
    trace_action: np.ndarray
    items_indptr: np.ndarray
    items: np.ndarray

    def __len__(self):
        return len(self.round_index)

    @property
    def completed(self):
        return self.status == kernels.STATUS_OK

    @property
    def n_completed(self):
        return int(np.count_nonzero(self.completed))

    def trace(self, t):
        lo, hi = self.trace_indptr[t], self.trace_indptr[t + 1]
        return tuple((int(h), _ACTION_NAMES[int(a)])
                     for h, a in zip(self.trace_holder[lo:hi], self.trace_action[lo:hi]))

    def items_of(self, t):
        return self.items[self.items_indptr[t]:self.items_indptr[t + 1]]

    def outcome(self, t):
        return RoundOutcome(
            round_index=int(self.round_index[t]),
            contributed_set=tuple(self.items_of(t).tolist()),
            contributor=int(self.contributor[t]),
            delivering_user=int(self.deliverer[t]),
            hop_trace=self.trace(t),
        )

    def equals(self, other):
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("round_index", "contributor", "deliverer", "forwards", "status",
                      "trace_indptr", "trace_holder", "trace_action", "items_indptr", "items")
        ) and (self.n_users, self.n_items, self.seed) == (other.n_users, other.n_items, other.seed)


def _simulate(pop, cfg, first_round, n_rounds, backend=None):
    fn = kernels.get("walk_rounds", backend)
    if not cfg.allow_self_forward and pop.n_users < 2:
        raise ValueError("forwarding without self-loops needs at least two users")
    return fn(pop.n_users, pop.rho, cfg.base_key, first_round, n_rounds,
              cfg.max_hops, bool(cfg.allow_self_forward))


def _build_log(pop, cfg, first_round, parts):
    contributor, deliverer, forwards, status, indptr, holder, action = parts
    n_rounds = len(contributor)
    ok = status == kernels.STATUS_OK
    sizes = np.where(ok, np.diff(pop.likes_indptr)[np.maximum(contributor, 0)], 0)
    items_indptr = np.zeros(n_rounds + 1, dtype=np.int64)
    np.cumsum(sizes, out=items_indptr[1:])
    if items_indptr[-1]:
        starts = pop.likes_indptr[contributor[ok]]
        gather = np.repeat(starts - items_indptr[:-1][ok], sizes[ok]) + np.arange(items_indptr[-1])
        items = pop.likes_items[gather]
    else:
        items = np.zeros(0, dtype=np.int64)
    return RoundLog(
        n_users=pop.n_users, n_items=pop.n_items, seed=cfg.seed,
        round_index=np.arange(first_round, first_round + n_rounds, dtype=np.int64),
        contributor=contributor, deliverer=deliverer, forwards=forwards, status=status,
        trace_indptr=indptr, trace_holder=holder, trace_action=action,
        items_indptr=items_indptr, items=np.ascontiguousarray(items, dtype=np.int64),
    )


def run_round(pop, cfg, round_index, backend=None):
    """Execute a single round; raises :class:`ProtocolTimeout` on hop overflow."""
    log = _build_log(pop, cfg, round_index, _simulate(pop, cfg, round_index, 1, backend))
    if log.status[0] != kernels.STATUS_OK:
        raise ProtocolTimeout(round_index, cfg.max_hops)
    return log.outcome(0)


def _concat_logs(logs):
    first = logs[0]
    if len(logs) == 1:
        return first

    def offsets(name):
        out, base = [np.zeros(1, dtype=np.int64)], 0
        for lg in logs:
            ptr = getattr(lg, name)
            out.append(ptr[1:] + base)
            base += ptr[-1]
        return np.concatenate(out)

    cat = lambda name: np.concatenate([getattr(lg, name) for lg in logs])  # noqa: E731
    return RoundLog(
        n_users=first.n_users, n_items=first.n_items, seed=first.seed,
        round_index=cat("round_index"), contributor=cat("contributor"),
        deliverer=cat("deliverer"), forwards=cat("forwards"), status=cat("status"),
        trace_indptr=offsets("trace_indptr"), trace_holder=cat("trace_holder"),
        trace_action=cat("trace_action"), items_indptr=offsets("items_indptr"),
        items=cat("items"),
    )


def counts_from_log(log, backend=None):
    """Co-occurrence counts over the completed rounds of ``log``."""
    ok = log.completed
    # timed-out rounds hold no items, so dropping their pointers is enough
    indptr = np.concatenate([[0], log.items_indptr[1:][ok]]).astype(np.int64)
    return CoocCounts.from_sets(log.n_items, indptr, log.items, k_rounds=int(ok.sum()),
                                backend=backend)


def run_protocol(pop, cfg, threads=1, backend=None):
    """Run ``cfg.k_rounds`` rounds and aggregate pair/item counts.

    Timed-out rounds are either recorded and skipped (default) or abort the
    run. Output is identical for any ``threads`` value.
    """
    k = cfg.k_rounds
    if threads <= 1:
        chunks = [(0, k)]
    else:
        edges = np.linspace(0, k, min(threads, k) + 1).astype(np.int64)
        chunks = [(int(a), int(b - a)) for a, b in zip(edges[:-1], edges[1:]) if b > a]

    def work(chunk):
        start, n = chunk
        return _build_log(pop, cfg, start, _simulate(pop, cfg, start, n, backend))

    if len(chunks) == 1:
        logs = [work(chunks[0])]
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            logs = list(pool.map(work, chunks))
    log = _concat_logs(logs)
    timeouts = np.flatnonzero(~log.completed)
    if len(timeouts):
        if cfg.on_timeout == "abort":
            raise ProtocolTimeout(int(log.round_index[timeouts[0]]), cfg.max_hops)
        _log.warning("%d of %d rounds timed out and were skipped", len(timeouts), k)
    return log, counts_from_log(log, backend)


@dataclass(frozen=True)
class ServerEvent:
    round_index: int
    items: tuple
    deliverer: int


@dataclass(frozen=True)
class UserEvent:
    round_index: int
    step: int
    received_from: object  # SERVER, a user id, or None when continuing its own holding
    received_items: tuple
    action: str
    sent_to: object  # SERVER, a user id, or None after an insert
    inserted_own: bool


@dataclass(frozen=True)
class ObservationRecord:
    party: object
    visible_events: tuple = field(default_factory=tuple)


def observer_view(log, party):
    """What ``party`` (``"server"`` or a user id) sees of the run in ``log``.

    The server sees delivered sets and the deliverer only. A user sees, for
    every step it held the token, who handed it over, the set as received,
    its own action and the next recipient.
    """
    if party == SERVER:
        events = tuple(
            ServerEvent(int(log.round_index[t]), tuple(log.items_of(t).tolist()), int(log.deliverer[t]))
            for t in np.flatnonzero(log.completed)
        )
        return ObservationRecord(SERVER, events)
    if not isinstance(party, (int, np.integer)) or not 0 <= party < log.n_users:
        raise ValueError(f"unknown party {party!r}")
    party = int(party)
    events = []
    holder_hits = np.flatnonzero(log.trace_holder == party)
    rounds = np.searchsorted(log.trace_indptr, holder_hits, side="right") - 1
    for t in np.unique(rounds):
        trace = log.trace(t)
        items = tuple(log.items_of(t).tolist())
        filled = False
        for step, (holder, action) in enumerate(trace):
            if holder == party:
                if step == 0:
                    src = SERVER
                elif trace[step - 1][1] == FORWARD:
                    src = trace[step - 1][0]
                else:
                    src = None
                if action == FORWARD:
                    dst = trace[step + 1][0] if step + 1 < len(trace) else None
                elif action == DELIVER:
                    dst = SERVER
                else:
                    dst = None
                events.append(UserEvent(int(log.round_index[t]), step, src,
                                        items if filled else (), action, dst, action == INSERT))
            if action == INSERT:
                filled = True
    return ObservationRecord(party, tuple(events))


def contributor_distribution(log):
    """Exact per-user count of completed rounds each user contributed to."""
    if len(log) == 0:
        raise ValueError("empty round log")
    return np.bincount(log.contributor[log.completed], minlength=log.n_users)


def deliverer_is_contributor_rate(log):
    ok = log.completed
    return float(np.mean(log.deliverer[ok] == log.contributor[ok]))


def write_roundlog_jsonl(log, path, redacted=False):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in range(len(log)):
            ok = bool(log.completed[t])
            rec = {"round": int(log.round_index[t])}
            if not redacted:
                rec["contributor"] = int(log.contributor[t]) if ok else None
            rec["deliverer"] = int(log.deliverer[t]) if ok else None
            rec["hops"] = int(log.forwards[t])
            rec["items"] = log.items_of(t).tolist()
            if not ok:
                rec["timeout"] = True
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def write_counts_csv(counts, pairs_path, items_path):
    with open(pairs_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("item_i,item_j,count\n")
        for i, j, c in zip(counts.pair_i.tolist(), counts.pair_j.tolist(), counts.pair_counts.tolist()):
            fh.write(f"{i},{j},{c}\n")
    with open(items_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("item,count\n")
        for i, c in enumerate(counts.item_counts.tolist()):
            fh.write(f"{i},{c}\n")
