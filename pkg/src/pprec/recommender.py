"""Client-side scoring and top-N ranking from a shared similarity matrix.

A client only needs its own likes and the item similarities the server
publishes; nothing here touches another user's data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

# scores are compared after rounding so that mathematically equal sums
# computed in different orders still tie and fall back to item id order
SCORE_DECIMALS = 9


class ContractError(ValueError):
    pass


class UndefinedPrediction(ValueError):
    """Weighted prediction with zero similarity mass."""


@dataclass(frozen=True)
class RecommendationList:
    user: int
    items: tuple
    scores: tuple
    n: int

    def __iter__(self):
        return iter(zip(self.items, self.scores))

    def __len__(self):
        return len(self.items)


def predict_binary(user_likes, sims, candidate):
    user_likes = set(int(j) for j in user_likes)
    if candidate in user_likes:
        raise ContractError(f"candidate {candidate} is already liked")
    return float(sum(sims.lookup(candidate, j) for j in sorted(user_likes)))


def predict_weighted(user_ratings, sims, candidate):
    if candidate in user_ratings:
        raise ContractError(f"candidate {candidate} is already rated")
    num = den = 0.0
    for j, r in sorted(user_ratings.items()):
        s = sims.lookup(candidate, j)
        num += r * s
        den += s
    if den <= 0.0:
        raise UndefinedPrediction(f"no similarity mass for candidate {candidate}")
    return num / den


def score_vector(user_likes, sims):
    """Binary-rating scores of every item for one user (liked items included)."""
    x = np.zeros(sims.n_items)
    x[np.asarray(list(user_likes), dtype=np.int64)] = 1.0
    return np.round(sims.symmetric() @ x, SCORE_DECIMALS)


def _rank(scores, candidates, n, pad):
    if not pad:
        candidates = candidates[scores[candidates] > 0]
    order = np.lexsort((candidates, -scores[candidates]))
    top = candidates[order[:n]]
    return top, scores[top]


def top_n(user, user_likes, sims, n=10, candidates=None, pad=True):
    """Top ``n`` unliked candidates by score, ties by ascending item id."""
    if n < 1:
        raise ValueError("n must be >= 1")
    liked = np.asarray(sorted(set(int(j) for j in user_likes)), dtype=np.int64)
    scores = score_vector(liked, sims)
    if candidates is None:
        mask = np.ones(sims.n_items, dtype=bool)
    else:
        mask = np.zeros(sims.n_items, dtype=bool)
        mask[np.asarray(list(candidates), dtype=np.int64)] = True
    mask[liked] = False
    items, vals = _rank(scores, np.flatnonzero(mask), n, pad)
    return RecommendationList(int(user), tuple(items.tolist()), tuple(vals.tolist()), n)


def recommend_all(train, sims, n=10, pad=True, users=None, block=512, exclude_liked=True):
    """Top-``n`` lists for every user of ``train`` (or the given ``users``).

    Scores for a block of users come from one sparse product; ranking matches
    :func:`top_n` exactly. ``exclude_liked=False`` keeps liked items eligible.
    """
    s = sims.symmetric()
    if users is None:
        users = np.arange(train.n_users)
    out = []
    x = sp.csr_matrix(
        (np.ones(train.n_likes), train.likes_items, train.likes_indptr),
        shape=(train.n_users, train.n_items),
    )
    for lo in range(0, len(users), block):
        chunk = users[lo:lo + block]
        scores = np.round((x[chunk] @ s).toarray(), SCORE_DECIMALS)
        for row, u in enumerate(chunk):
            mask = np.ones(train.n_items, dtype=bool)
            if exclude_liked:
                mask[train.likes(u)] = False
            items, vals = _rank(scores[row], np.flatnonzero(mask), n, pad)
            out.append(RecommendationList(int(u), tuple(items.tolist()), tuple(vals.tolist()), n))
    return out


def write_recommendations_csv(recs, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("user,rank,item,score\n")
        for rec in recs:
            for rank, (item, score) in enumerate(rec, 1):
                fh.write(f"{rec.user},{rank},{item},{score:.10g}\n")
