"""Equal-mass discretization of difficulty scores into K ordered buckets.

Thresholds are empirical quantiles with lower interpolation: threshold j
(1-based, j = 1..K-1) is the sorted score at index ceil(j*N/K)-1. A score
falls in quantile bin q(s) = number of thresholds strictly below s, so a
score equal to a threshold lands in the lower bin. Bucket ids then follow
the ordering policy:

* ``hard_to_easy``  b = K-1-q(s): hardest (highest) scores get bucket 0
* ``easy_to_hard``  b = q(s)
* ``random``        b drawn from a hash of (seed, example index, token index)

Lower bucket id means earlier decoding stage. Quantiles make the
assignment invariant to positive rescaling of the scores.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .corpus import Example
from .errors import ConfigError, DataError

ORDERINGS = ("hard_to_easy", "easy_to_hard", "random")

_RANDOM_SALT = 5


@dataclass
class BucketTable:
    k: int
    thresholds: np.ndarray
    ordering: str = "hard_to_easy"
    random_seed: int = 0

    def validate(self):
        if self.k < 1:
            raise ConfigError(f"bucket count must be >= 1, got {self.k}")
        if len(self.thresholds) != self.k - 1:
            raise ConfigError(
                f"expected {self.k - 1} thresholds for K={self.k}, got {len(self.thresholds)}"
            )
        if np.any(np.diff(self.thresholds) < 0):
            raise ConfigError("thresholds must be non-decreasing")
        if self.ordering not in ORDERINGS:
            raise ConfigError(f"ordering must be one of {ORDERINGS}, got {self.ordering!r}")


def compute_thresholds(all_scores, k: int, ordering: str = "hard_to_easy",
                       random_seed: int = 0) -> BucketTable:
    """Quantile thresholds splitting the score distribution into K equal masses."""
    if k < 1:
        raise ConfigError(f"bucket count must be >= 1, got {k}")
    scores = np.asarray(all_scores, dtype=np.float64).ravel()
    n = scores.size
    if n < k:
        raise ConfigError(f"need at least K={k} scores to form K buckets, got {n}")
    ordered = np.sort(scores)
    idx = [math.ceil(j * n / k) - 1 for j in range(1, k)]
    table = BucketTable(k=k, thresholds=ordered[idx] if idx else np.empty(0),
                        ordering=ordering, random_seed=random_seed)
    table.validate()
    return table


def assign_buckets(scores, table: BucketTable, example_index: int = 0) -> np.ndarray:
    """Bucket ids in {0..K-1} for one example's scores.

    ``example_index`` only matters for the random ordering, which keys each
    token's draw on (random_seed, example index, token index) so assignments
    do not depend on iteration order.
    """
    table.validate()
    scores = np.asarray(scores, dtype=np.float64)
    if table.ordering == "random":
        return np.array(
            [int(np.random.default_rng(
                (table.random_seed, _RANDOM_SALT, example_index, i)).integers(table.k))
             for i in range(len(scores))], dtype=np.int64)
    q = np.searchsorted(table.thresholds, scores, side="left").astype(np.int64)
    if table.ordering == "hard_to_easy":
        return table.k - 1 - q
    return q


def bucket_corpus(examples: list[Example], table: BucketTable) -> list[Example]:
    """Attach bucket ids to every scored example; errors carry the index."""
    out = []
    for i, ex in enumerate(examples):
        if ex.scores is None:
            raise DataError(f"example {i}: no scores; run scoring before bucketing")
        out.append(Example(
            task_kind=ex.task_kind,
            prompt_tokens=ex.prompt_tokens,
            completion_tokens=ex.completion_tokens,
            answer_span=ex.answer_span,
            scores=ex.scores,
            bucket_ids=assign_buckets(ex.scores, table, example_index=i),
        ))
    return out


def save_bucket_table(path: str, table: BucketTable) -> None:
    table.validate()
    rec = {
        "k": table.k,
        "thresholds": [float(t) for t in table.thresholds],
        "ordering": table.ordering,
        "random_seed": table.random_seed,
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
        f.write("\n")


def load_bucket_table(path: str) -> BucketTable:
    if not os.path.exists(path):
        raise DataError(f"bucket table not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            rec = json.loads(f.read())
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: corrupt bucket table: {e}")
    try:
        table = BucketTable(
            k=int(rec["k"]),
            thresholds=np.asarray(rec["thresholds"], dtype=np.float64),
            ordering=rec["ordering"],
            random_seed=int(rec["random_seed"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path}: bad bucket table record: {e}")
    table.validate()
    return table
