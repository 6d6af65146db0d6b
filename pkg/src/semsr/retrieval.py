"""Exact cosine top-K search over item vectors, plus the re-ranking stage
that reorders a candidate head with a second model's scores.

Candidate lists travel between commands as JSON-lines, one test example
per line: {"example": <int>, "items": [<int>...], "scores": [<float>...]}.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass
class RankedList:
    """Items ordered by descending score; ties broken by ascending index."""

    items: np.ndarray  # (k,) int64
    scores: np.ndarray  # (k,) float64

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.items.shape != self.scores.shape:
            raise DataError("ranked list items and scores differ in length")
        if np.unique(self.items).size != self.items.size:
            raise DataError("ranked list contains duplicate items")

    def __len__(self) -> int:
        return self.items.size


@dataclass
class VectorIndex:
    """Unit-normalized item vectors in dense-index order."""

    matrix: np.ndarray  # (n, w), rows unit norm

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def width(self) -> int:
        return self.matrix.shape[1]


def build_index(table: np.ndarray) -> VectorIndex:
    """Normalize rows into a cosine index. Zero rows are rejected."""
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] < 1:
        raise DataError("index table must be a non-empty 2-d matrix")
    if not np.all(np.isfinite(table)):
        raise DataError("index table contains non-finite values")
    norms = np.linalg.norm(table, axis=1)
    zero = np.nonzero(norms == 0)[0]
    if zero.size:
        raise DataError(f"zero-norm row for item {int(zero[0])}")
    return VectorIndex(matrix=table / norms[:, None])


def rank_descending(scores: np.ndarray) -> np.ndarray:
    # Stable sort on the negated scores keeps ascending index among ties.
    return np.argsort(-scores, kind="stable")


def query(index: VectorIndex, vector: np.ndarray, k: int) -> RankedList:
    """Exact top-k rows by cosine similarity to the query vector."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (index.width,):
        raise DataError(f"query width {vector.shape} != index width {index.width}")
    if not 1 <= k <= index.n:
        raise DataError(f"k={k} out of range 1..{index.n}")
    norm = np.linalg.norm(vector)
    if norm == 0:
        raise DataError("zero query vector")
    scores = index.matrix @ (vector / norm)
    order = rank_descending(scores)[:k]
    return RankedList(items=order, scores=scores[order])


def rerank(candidates: RankedList, ranker_scores: np.ndarray, k: int) -> RankedList:
    """Reorder the first k candidates by the ranker's scores (descending,
    ties by ascending item index). The returned item set equals the input
    head's item set, so recall at k is unchanged by construction."""
    if not 1 <= k <= len(candidates):
        raise DataError(f"k={k} exceeds candidate list length {len(candidates)}")
    ranker_scores = np.asarray(ranker_scores, dtype=np.float64)
    head = candidates.items[:k]
    if head.max() >= ranker_scores.shape[0]:
        raise DataError(f"candidate item {int(head.max())} has no ranker score")
    head_scores = ranker_scores[head]
    if not np.all(np.isfinite(head_scores)):
        raise DataError("non-finite ranker score for a candidate item")
    order = np.lexsort((head, -head_scores))
    return RankedList(items=head[order], scores=head_scores[order])


def write_candidates(path, ranked_lists: list[RankedList]) -> None:
    with Path(path).open("w") as fh:
        for i, rl in enumerate(ranked_lists):
            rec = {"example": i, "items": rl.items.tolist(), "scores": rl.scores.tolist()}
            fh.write(json.dumps(rec) + "\n")


def read_candidates(path) -> list[RankedList]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"candidate file not found: {path}")
    out: dict[int, RankedList] = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                rl = RankedList(items=np.array(rec["items"]), scores=np.array(rec["scores"]))
                out[int(rec["example"])] = rl
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed candidate record") from exc
    if not out:
        raise DataError(f"candidate file is empty: {path}")
    return [out[i] for i in sorted(out)]
