"""Recall@K and MRR@K over ranked lists.

Ranks are 1-based; a target outside the top K contributes 0 to both
metrics (truncated MRR). Means use exact summation so results do not
depend on example order.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError


def _item_array(ranked) -> np.ndarray:
    items = getattr(ranked, "items", ranked)
    return np.asarray(items, dtype=np.int64)


def recall_at_k(ranked, target: int, k: int) -> int:
    """1 if the target appears within the first k entries, else 0."""
    if k < 1:
        raise DataError("k must be >= 1")
    return int(np.any(_item_array(ranked)[:k] == target))


def rr_at_k(ranked, target: int, k: int) -> float:
    """Reciprocal of the target's 1-based rank if within k, else 0."""
    if k < 1:
        raise DataError("k must be >= 1")
    hits = np.nonzero(_item_array(ranked)[:k] == target)[0]
    return 1.0 / (int(hits[0]) + 1) if hits.size else 0.0


@dataclass
class EvalResult:
    per_k: dict[int, dict[str, float]]
    n_examples: int

    def to_json_dict(self) -> dict:
        return {
            "K": {str(k): {"recall": v["recall"], "mrr": v["mrr"]} for k, v in sorted(self.per_k.items())},
            "n_examples": self.n_examples,
        }

    def render_text(self) -> str:
        lines = [f"{'K':>6}  {'recall':>10}  {'mrr':>10}"]
        for k in sorted(self.per_k):
            v = self.per_k[k]
            lines.append(f"{k:>6}  {v['recall']:>10.4f}  {v['mrr']:>10.4f}")
        lines.append(f"examples: {self.n_examples}")
        return "\n".join(lines)


def evaluate(ranked_lists, targets, ks=(20, 100)) -> EvalResult:
    """Mean Recall@K and MRR@K over (ranked list, target) pairs."""
    ranked_lists = list(ranked_lists)
    targets = list(targets)
    if not ranked_lists:
        raise DataError("empty test set")
    if len(ranked_lists) != len(targets):
        raise DataError("ranked lists and targets differ in length")
    per_k = {}
    for k in ks:
        recalls = [recall_at_k(rl, t, k) for rl, t in zip(ranked_lists, targets)]
        rrs = [rr_at_k(rl, t, k) for rl, t in zip(ranked_lists, targets)]
        per_k[int(k)] = {
            "recall": math.fsum(recalls) / len(recalls),
            "mrr": math.fsum(rrs) / len(rrs),
        }
    return EvalResult(per_k=per_k, n_examples=len(ranked_lists))


def write_report(path, result: EvalResult, extra: dict | None = None) -> None:
    payload = result.to_json_dict()
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
