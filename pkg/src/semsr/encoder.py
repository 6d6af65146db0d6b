"""Session encoders.

Two views of a session are produced from the same soft-attention
mechanism at different widths:

  semantic view  -- attention over frozen semantic rows (width d2)
  backbone view  -- pluggable f(.; theta); the reference "attn-niser"
                    backbone runs the attention at width d1 over
                    L2-normalized trainable rows and L2-normalizes its
                    output

Attention over a prefix (e_1..e_L): the last item is the query. For
j = 1..L-1, raw weight a_j = q^T sigmoid(W1 e_L + W2 e_j + c); the a_j are
softmax-normalized into alpha, pooled into s' = sum_j alpha_j e_j, and the
output is W3 [s'; e_L]. A length-1 prefix has an empty attention set, so
s' = 0 and the output is W3 [0; e_L].

Forward passes return caches consumed by the matching backward passes;
gradients are derived by hand (no autodiff anywhere in the package).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Piecewise form avoids overflow in exp for large |x|.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=axis, keepdims=True)


@dataclass
class AttentionParams:
    q: np.ndarray  # (w,)
    c: np.ndarray  # (w,)
    W1: np.ndarray  # (w, w)
    W2: np.ndarray  # (w, w)
    W3: np.ndarray  # (w, 2w)

    @property
    def width(self) -> int:
        return self.q.shape[0]


ATTENTION_TENSORS = ("q", "c", "W1", "W2", "W3")


def init_attention_tensors(width: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    # Uniform(-1/sqrt(w), 1/sqrt(w)) for every tensor, the usual SR init.
    stdv = 1.0 / np.sqrt(width)
    shapes = {"q": (width,), "c": (width,), "W1": (width, width), "W2": (width, width), "W3": (width, 2 * width)}
    return {name: rng.uniform(-stdv, stdv, size=shapes[name]) for name in ATTENTION_TENSORS}


def attention_forward(rows: np.ndarray, p: AttentionParams):
    """Run the attention encoder over prefix rows (L, w).

    Returns (out, alphas, cache). alphas is empty for L = 1.
    """
    L, w = rows.shape
    last = rows[-1]
    if L == 1:
        alphas = np.zeros(0)
        s_prime = np.zeros(w)
        h = np.zeros((0, w))
    else:
        head = rows[:-1]  # (L-1, w)
        u = head @ p.W2.T + (p.W1 @ last + p.c)  # (L-1, w)
        h = sigmoid(u)
        raw = h @ p.q  # (L-1,)
        alphas = softmax(raw)
        s_prime = alphas @ head  # (w,)
    cat = np.concatenate([s_prime, last])  # (2w,)
    out = p.W3 @ cat  # (w,)
    cache = {"rows": rows, "h": h, "alphas": alphas, "cat": cat, "params": p}
    return out, alphas, cache


def attention_backward(cache: dict, d_out: np.ndarray):
    """Backward pass of attention_forward.

    Returns (grads, d_rows): grads maps q/c/W1/W2/W3 to their gradients and
    d_rows (L, w) is the gradient with respect to the input rows.
    """
    p: AttentionParams = cache["params"]
    rows, h, alphas, cat = cache["rows"], cache["h"], cache["alphas"], cache["cat"]
    L, w = rows.shape
    last = rows[-1]

    dW3 = np.outer(d_out, cat)
    dcat = p.W3.T @ d_out
    ds_prime, dlast = dcat[:w], dcat[w:].copy()

    grads = {"W3": dW3}
    d_rows = np.zeros_like(rows)
    if L > 1:
        head = rows[:-1]
        dalphas = head @ ds_prime  # (L-1,)
        dhead = np.outer(alphas, ds_prime)  # (L-1, w)
        # softmax jacobian: da = alpha * (dalpha - <alpha, dalpha>)
        draw = alphas * (dalphas - alphas @ dalphas)
        grads["q"] = h.T @ draw
        dh = np.outer(draw, p.q)
        du = dh * h * (1.0 - h)
        grads["W1"] = np.outer(du.sum(axis=0), last)
        grads["W2"] = du.T @ head
        grads["c"] = du.sum(axis=0)
        dlast += p.W1.T @ du.sum(axis=0)
        dhead += du @ p.W2
        d_rows[:-1] = dhead
    else:
        grads["q"] = np.zeros_like(p.q)
        grads["c"] = np.zeros_like(p.c)
        grads["W1"] = np.zeros_like(p.W1)
        grads["W2"] = np.zeros_like(p.W2)
    d_rows[-1] += dlast
    return grads, d_rows


def encode_semantic_session(prefix, semantic_table, attn: AttentionParams):
    """Semantic session embedding s_l (d2,) plus the attention weights."""
    if len(prefix) == 0:
        raise DataError("prefix must be non-empty")
    rows = semantic_table.matrix[np.asarray(prefix, dtype=np.intp)]
    out, alphas, _ = attention_forward(rows, attn)
    return out, alphas


def _normalize_rows(rows: np.ndarray, what: str):
    norms = np.linalg.norm(rows, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise NumericError(f"zero-norm row in {what}")
    return rows / norms, norms


@dataclass
class BackboneParams:
    """Opaque parameter collection theta for a registered backbone."""

    key: str
    tensors: dict[str, np.ndarray]
    scale: float = 16.0

    def __post_init__(self):
        if self.scale <= 0:
            raise DataError("backbone scale must be positive")


class AttnNiserBackbone:
    """Reference backbone: the attention encoder at width d1 over
    L2-normalized trainable rows, output L2-normalized."""

    key = "attn-niser"

    @staticmethod
    def init_params(d1: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return init_attention_tensors(d1, rng)

    @staticmethod
    def forward(raw_rows: np.ndarray, tensors: dict[str, np.ndarray]):
        v, norms = _normalize_rows(raw_rows, "trainable item table")
        p = AttentionParams(**{k: tensors[k] for k in ATTENTION_TENSORS})
        z, _, attn_cache = attention_forward(v, p)
        zn = np.linalg.norm(z)
        if zn == 0:
            raise NumericError("zero-norm backbone output before normalization")
        s_m = z / zn
        cache = {"attn": attn_cache, "v": v, "norms": norms, "z_norm": zn, "s_m": s_m}
        return s_m, cache

    @staticmethod
    def backward(cache: dict, d_out: np.ndarray):
        s_m, zn = cache["s_m"], cache["z_norm"]
        dz = (d_out - s_m * (s_m @ d_out)) / zn
        grads, dv = attention_backward(cache["attn"], dz)
        v, norms = cache["v"], cache["norms"]
        d_raw = (dv - v * np.sum(v * dv, axis=1, keepdims=True)) / norms
        return grads, d_raw


BACKBONES: dict[str, type] = {AttnNiserBackbone.key: AttnNiserBackbone}


def register_backbone(cls) -> type:
    """Class decorator adding a backbone implementation to the registry."""
    BACKBONES[cls.key] = cls
    return cls


def get_backbone(key: str):
    if key not in BACKBONES:
        raise DataError(f"unknown backbone {key!r}; registered: {sorted(BACKBONES)}")
    return BACKBONES[key]


def encode_backbone_session(prefix, trainable_matrix: np.ndarray, bp: BackboneParams) -> np.ndarray:
    """Data-driven session embedding s_m (d1,) from the configured backbone."""
    if len(prefix) == 0:
        raise DataError("prefix must be non-empty")
    rows = trainable_matrix[np.asarray(prefix, dtype=np.intp)]
    s_m, _ = get_backbone(bp.key).forward(rows, bp.tensors)
    return s_m
