"""Shared fixture builders for the test suite."""

import numpy as np

from semsr.dataset import Catalog, Example, ItemMeta
from semsr.embeddings import SemanticItemTable, encode_text, pseudo_semantic_table


def make_catalog(n: int, tag: str = "t") -> Catalog:
    items = [
        ItemMeta(id=f"item-{tag}-{j}", title=f"product {tag} {j}", brand=f"brand{j % 3}")
        for j in range(n)
    ]
    return Catalog(items=items)


def make_semantic(catalog: Catalog, d2: int) -> SemanticItemTable:
    return pseudo_semantic_table(catalog, d2)


def clustered_semantic(n: int, n_clusters: int, d2: int, noise: float, tag: str = "c") -> tuple[SemanticItemTable, np.ndarray]:
    """Semantic vectors = unit(cluster centroid + noise * item vector), both
    drawn from the deterministic text encoder. Returns (table, cluster ids)."""
    assert n % n_clusters == 0
    clusters = np.repeat(np.arange(n_clusters), n // n_clusters)
    centroids = np.stack([encode_text(f"cluster {tag} {c}", d2) for c in range(n_clusters)])
    rows = []
    for j in range(n):
        v = centroids[clusters[j]] + noise * encode_text(f"item {tag} {j}", d2)
        rows.append(v / np.linalg.norm(v))
    return SemanticItemTable(matrix=np.stack(rows)), clusters


def random_examples(rng: np.random.Generator, n_items: int, count: int, max_len: int = 6) -> list[Example]:
    out = []
    for _ in range(count):
        length = int(rng.integers(1, max_len + 1))
        prefix = [int(x) for x in rng.integers(0, n_items, size=length)]
        out.append(Example(prefix=prefix, target=int(rng.integers(0, n_items))))
    return out
