"""Interaction loading, binarization and train/test splitting."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_log = logging.getLogger(__name__)

FORMATS = ("pairs-tsv", "movielens-csv", "lastfm-dat", "jester-csv")
JESTER_UNRATED = 99.0


class ParseError(ValueError):
    """A line of an input file could not be parsed."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


def _freeze(*arrays):
    for a in arrays:
        a.flags.writeable = False


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """Binary user->item likes in CSR form plus the transposed item->user index.

    ``likes_indptr/likes_items`` hold each user's sorted item ids and
    ``item_indptr/item_users`` each item's sorted user ids. ``user_ids`` and
    ``item_ids`` map dense ids back to raw ids.
    """

    n_users: int
    n_items: int
    likes_indptr: np.ndarray
    likes_items: np.ndarray
    item_indptr: np.ndarray
    item_users: np.ndarray
    user_ids: tuple
    item_ids: tuple

    @classmethod
    def from_pairs(cls, users, items, n_users, n_items, user_ids=None, item_ids=None):
        """Build from parallel dense-id arrays; duplicate pairs are collapsed."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if len(users) and (users.min() < 0 or users.max() >= n_users):
            raise ValueError("user id out of range")
        if len(items) and (items.min() < 0 or items.max() >= n_items):
            raise ValueError("item id out of range")
        key = np.unique(users * n_items + items)
        users, items = key // n_items, key % n_items
        likes_indptr = np.zeros(n_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(users, minlength=n_users), out=likes_indptr[1:])
        likes_items = items.copy()
        order = np.lexsort((users, items))
        item_indptr = np.zeros(n_items + 1, dtype=np.int64)
        np.cumsum(np.bincount(items, minlength=n_items), out=item_indptr[1:])
        item_users = users[order]
        _freeze(likes_indptr, likes_items, item_indptr, item_users)
        if user_ids is None:
            user_ids = tuple(range(n_users))
        if item_ids is None:
            item_ids = tuple(range(n_items))
        return cls(int(n_users), int(n_items), likes_indptr, likes_items,
                   item_indptr, item_users, tuple(user_ids), tuple(item_ids))

    @property
    def n_likes(self):
        return len(self.likes_items)

    def likes(self, user):
        return self.likes_items[self.likes_indptr[user]:self.likes_indptr[user + 1]]

    def users_of(self, item):
        return self.item_users[self.item_indptr[item]:self.item_indptr[item + 1]]

    def like_set(self, user):
        return set(self.likes(user).tolist())

    def user_set(self, item):
        return set(self.users_of(item).tolist())

    def pairs(self):
        """Dense ``(users, items)`` arrays in user-major order."""
        users = np.repeat(np.arange(self.n_users, dtype=np.int64), np.diff(self.likes_indptr))
        return users, self.likes_items

    def item_degrees(self):
        return np.diff(self.item_indptr)

    def with_pairs(self, users, items):
        """A dataset over the same id universe holding only the given pairs."""
        return InteractionDataset.from_pairs(users, items, self.n_users, self.n_items,
                                             self.user_ids, self.item_ids)

    def to_records(self):
        """Records that binarize back to this exact dataset.

        Users and items are introduced in dense-id order: at each step either
        the next user (whose smallest item is already known or is the next
        item) or the next item (liked by some known user) is added, followed by
        every pair it forms with what is already known.
        """
        out = []
        n_u = n_i = 0
        uid, iid = self.user_ids, self.item_ids
        while n_u < self.n_users or n_i < self.n_items:
            first = self.likes(n_u)[0] if n_u < self.n_users and self.likes(n_u).size else None
            if first is not None and first <= n_i:
                user = n_u
                n_u += 1
                out.append((uid[user], iid[first], 1.0))
                new_item = first == n_i
                if new_item:
                    n_i += 1
                for item in self.likes(user)[1:]:
                    if item >= n_i:
                        break
                    out.append((uid[user], iid[item], 1.0))
                if new_item:
                    for other in self.users_of(first):
                        if other >= user:
                            break
                        out.append((uid[other], iid[first], 1.0))
                continue
            users = self.users_of(n_i) if n_i < self.n_items else ()
            if len(users) == 0 or users[0] >= n_u:
                raise ValueError("dataset with empty users or items has no record form")
            for other in users:
                if other >= n_u:
                    break
                out.append((uid[other], iid[n_i], 1.0))
            n_i += 1
        return out


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_likes: int
    density: float


@dataclass(frozen=True, eq=False)
class SplitPair:
    train: InteractionDataset
    test: InteractionDataset
    seed: int
    ratio: float


def load_raw(path, format):
    """Read ``(raw_user, raw_item, rating)`` records from ``path``.

    Raw ids are kept as strings; ratings are floats (1.0 when the format has
    no rating column).
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {', '.join(FORMATS)}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    loader = {
        "pairs-tsv": _load_pairs_tsv,
        "movielens-csv": _load_movielens_csv,
        "lastfm-dat": _load_lastfm_dat,
        "jester-csv": _load_jester_csv,
    }[format]
    with open(path, newline="", encoding="utf-8") as fh:
        records = loader(path, fh)
    _log.info("loaded %d records from %s", len(records), path)
    return records


def _rating(path, lineno, text):
    try:
        return float(text)
    except ValueError:
        raise ParseError(path, lineno, f"bad rating {text!r}") from None


def _load_pairs_tsv(path, fh):
    out = []
    for lineno, line in enumerate(fh, 1):
        line = line.rstrip("\r\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
            raise ParseError(path, lineno, "expected 'user<TAB>item[<TAB>rating]'")
        rating = _rating(path, lineno, parts[2]) if len(parts) == 3 else 1.0
        out.append((parts[0], parts[1], rating))
    return out


def _load_movielens_csv(path, fh):
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:3]] != ["userId", "movieId", "rating"]:
        raise ParseError(path, 1, "expected header 'userId,movieId,rating,timestamp'")
    out = []
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        if len(row) < 3 or not row[0].strip() or not row[1].strip():
            raise ParseError(path, lineno, f"malformed row {','.join(row)!r}")
        out.append((row[0].strip(), row[1].strip(), _rating(path, lineno, row[2].strip())))
    return out


def _load_lastfm_dat(path, fh):
    header = fh.readline()
    if not header.lower().startswith("userid"):
        raise ParseError(path, 1, "expected header 'userID<TAB>artistID<TAB>weight'")
    out = []
    for lineno, line in enumerate(fh, 2):
        line = line.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(path, lineno, "expected 'userID<TAB>artistID<TAB>weight'")
        out.append((parts[0], parts[1], _rating(path, lineno, parts[2])))
    return out


def _load_jester_csv(path, fh):
    out = []
    for lineno, row in enumerate(csv.reader(fh), 1):
        if not row:
            continue
        if len(row) < 2:
            raise ParseError(path, lineno, "expected count followed by joke ratings")
        _rating(path, lineno, row[0])
        user = str(lineno)
        for col, cell in enumerate(row[1:], 1):
            value = _rating(path, lineno, cell.strip())
            if value != JESTER_UNRATED:
                out.append((user, str(col), value))
    return out


def binarize(records):
    """Turn rating records into likes; any rating value (even negative) is a like."""
    user_map, item_map = {}, {}
    users, items = [], []
    for user, item, _rating_value in records:
        users.append(user_map.setdefault(user, len(user_map)))
        items.append(item_map.setdefault(item, len(item_map)))
    if not users:
        raise ValueError("cannot binarize an empty record set")
    return InteractionDataset.from_pairs(users, items, len(user_map), len(item_map),
                                         tuple(user_map), tuple(item_map))


def subsample(records, max_users=None, max_items=None, seed=0):
    """Deterministically restrict raw records before binarization.

    ``max_users`` keeps a seeded uniform sample of distinct users;
    ``max_items`` then keeps the most frequent items (ties by first appearance).
    """
    if max_users is not None:
        seen = list(dict.fromkeys(r[0] for r in records))
        if len(seen) > max_users:
            rng = np.random.default_rng(seed)
            keep = set(seen[i] for i in rng.choice(len(seen), size=max_users, replace=False))
            records = [r for r in records if r[0] in keep]
    if max_items is not None:
        counts = {}
        for r in records:
            counts[r[1]] = counts.get(r[1], 0) + 1
        if len(counts) > max_items:
            order = sorted(counts, key=lambda it: -counts[it])  # stable: first appearance
            keep = set(order[:max_items])
            records = [r for r in records if r[1] in keep]
    return records


def split_train_test(ds, ratio=0.8, seed=0):
    """Assign every like to train with probability ``ratio``, independently."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    rng = np.random.Generator(np.random.PCG64(seed))
    users, items = ds.pairs()
    in_train = rng.random(ds.n_likes) < ratio
    return SplitPair(
        train=ds.with_pairs(users[in_train], items[in_train]),
        test=ds.with_pairs(users[~in_train], items[~in_train]),
        seed=seed,
        ratio=ratio,
    )


def stats(ds):
    return DatasetStats(ds.n_users, ds.n_items, ds.n_likes,
                        ds.n_likes / (ds.n_users * ds.n_items))


def write_pairs_tsv(ds, path):
    """Write the canonical binarized interchange file (raw ids, no rating column).

    When every user and item has a like, reloading the file reproduces ``ds``
    exactly. Otherwise (e.g. one half of a split) likes are written in
    user-major order and users or items without likes are not represented.
    """
    try:
        records = [(u, i) for u, i, _ in ds.to_records()]
    except ValueError:
        users, items = ds.pairs()
        records = [(ds.user_ids[u], ds.item_ids[i]) for u, i in zip(users.tolist(), items.tolist())]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for user, item in records:
            fh.write(f"{user}\t{item}\n")


def same_dataset(a, b):
    """Exact structural equality, including id maps."""
    return (
        a.n_users == b.n_users
        and a.n_items == b.n_items
        and np.array_equal(a.likes_indptr, b.likes_indptr)
        and np.array_equal(a.likes_items, b.likes_items)
        and np.array_equal(a.item_indptr, b.item_indptr)
        and np.array_equal(a.item_users, b.item_users)
        and a.user_ids == b.user_ids
        and a.item_ids == b.item_ids
    )
