"""Cross-entropy training with hand-derived reverse-mode gradients.

The loss for one example is -log p_target with p = softmax(logits). The
backward pass threads that through:

  scoring        d(logits) = p - y, then for base/sem-i through the scale
                 and the per-row normalization of the item table, or for
                 sem-f through W5/W4 and the fused embeddings
  session side   the backbone backward (normalization jacobians around
                 the attention core) and, for sem-f, the semantic
                 attention backward

The softmax over all n items gives every item-table row a gradient (the
scoring side is dense); prefix rows additionally receive the sparse
session-side contribution. Gradients are batch means. The semantic table
is frozen and never receives a gradient.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .embeddings import SemanticItemTable
from .encoder import ATTENTION_TENSORS, attention_backward, attention_forward, get_backbone
from .errors import DataError, NumericError
from .metrics import recall_at_k
from .model import ModelParams, normalized_item_matrix, rank_examples


@dataclass
class LossReport:
    mean_loss: float
    batch_size: int
    grad_norm: float


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class TrainingDiverged(NumericError):
    """Raised when the loss goes non-finite; carries the last good params."""

    def __init__(self, message: str, params: ModelParams, history: list):
        super().__init__(message)
        self.params = params
        self.history = history


def _map_ordered(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def loss_and_grad(
    batch,
    params: ModelParams,
    semantic: SemanticItemTable | None = None,
    threads: int = 1,
):
    """Mean cross-entropy over the batch plus gradients for every trainable
    tensor. Per-example passes can run on a thread pool; the reduction
    order is fixed, so results are identical to the sequential path."""
    if not batch:
        raise DataError("empty batch")
    n = params.n
    for ex in batch:
        if len(ex.prefix) == 0:
            raise DataError("example with empty prefix")
        if not 0 <= ex.target < n:
            raise DataError(f"target {ex.target} out of range 0..{n - 1}")
    B = len(batch)
    sem_f = params.variant == "sem-f"
    if sem_f and semantic is None:
        raise DataError("sem-f training needs the semantic table")
    backbone = get_backbone(params.backbone)
    bb_tensors = {k: params.tensors[f"bb.{k}"] for k in ATTENTION_TENSORS}
    attn = params.attention_params() if sem_f else None
    item_table = params.tensors["item_table"]

    def forward_one(ex):
        idx = np.asarray(ex.prefix, dtype=np.intp)
        s_m, bb_cache = backbone.forward(item_table[idx], bb_tensors)
        if not sem_f:
            return s_m, bb_cache, None, None
        s_l, _, attn_cache = attention_forward(semantic.matrix[idx], attn)
        return s_m, bb_cache, s_l, attn_cache

    fwd = _map_ordered(forward_one, batch, threads)
    S_m = np.stack([f[0] for f in fwd])  # (B, d1)
    targets = np.array([ex.target for ex in batch])

    if sem_f:
        S_l = np.stack([f[2] for f in fwd])  # (B, d2)
        cat_s = np.concatenate([S_m, S_l], axis=1)  # (B, d1+d2)
        S = cat_s @ params.tensors["W4"].T  # (B, d)
        cat_i = np.concatenate([item_table, semantic.matrix], axis=1)  # (n, d1+d2)
        F = cat_i @ params.tensors["W5"].T  # (n, d)
        logits = S @ F.T  # (B, n)
    else:
        G, norms = normalized_item_matrix(params)
        logits = params.scale * (S_m @ G.T)  # (B, n)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")

    mx = logits.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(logits - mx).sum(axis=1))
    losses = lse - logits[np.arange(B), targets]
    mean_loss = float(losses.mean())
    if not math.isfinite(mean_loss):
        raise NumericError("non-finite loss")

    P = np.exp(logits - lse[:, None])
    delta = P.copy()
    delta[np.arange(B), targets] -= 1.0
    delta /= B  # (B, n): gradient of the mean loss wrt logits

    grads = {name: np.zeros_like(t) for name, t in params.tensors.items()}

    if sem_f:
        dS = delta @ F  # (B, d)
        dF = delta.T @ S  # (n, d)
        grads["W5"] += dF.T @ cat_i
        grads["item_table"] += dF @ params.tensors["W5"][:, : params.d1]
        grads["W4"] += dS.T @ cat_s
        dcat_s = dS @ params.tensors["W4"]  # (B, d1+d2)
        dS_m = dcat_s[:, : params.d1]
        dS_l = dcat_s[:, params.d1 :]
    else:
        dS_m = params.scale * (delta @ G)  # (B, d1)
        dG = params.scale * (delta.T @ S_m)  # (n, d1)
        # normalization jacobian per row: dr = (dG - g <g, dG>) / |r|
        grads["item_table"] += (dG - G * np.sum(G * dG, axis=1, keepdims=True)) / norms

    def backward_one(i):
        _, bb_cache, _, attn_cache = fwd[i]
        bb_grads, d_raw = backbone.backward(bb_cache, dS_m[i])
        attn_grads = attention_backward(attn_cache, dS_l[i])[0] if sem_f else None
        return bb_grads, d_raw, attn_grads

    for i, (bb_grads, d_raw, attn_grads) in enumerate(_map_ordered(backward_one, range(B), threads)):
        np.add.at(grads["item_table"], np.asarray(batch[i].prefix, dtype=np.intp), d_raw)
        for k in ATTENTION_TENSORS:
            grads[f"bb.{k}"] += bb_grads[k]
            if attn_grads is not None:
                grads[f"attn.{k}"] += attn_grads[k]

    grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    return LossReport(mean_loss=mean_loss, batch_size=B, grad_norm=grad_norm), grads


def init_adam(
    params: ModelParams,
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
    state.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    state.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    return state


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, applied in place to every trainable
    tensor. Tensors absent from the parameter set are never touched."""
    state.step += 1
    t = state.step
    for name, tensor in params.tensors.items():
        if name not in grads:
            raise DataError(f"missing gradient for tensor {name}")
        g = grads[name]
        if g.shape != tensor.shape:
            raise DataError(f"gradient shape {g.shape} != tensor shape {tensor.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        tensor -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


def fit(
    train_examples,
    val_examples,
    params: ModelParams,
    semantic: SemanticItemTable | None = None,
    *,
    epochs: int = 30,
    batch_size: int = 100,
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
    patience: int = 5,
    seed: int = 0,
    val_k: int = 100,
    threads: int = 1,
):
    """Epoch loop with seeded shuffling, keeping the checkpoint that is
    best on validation recall. Returns (best_params, history).

    Early-stops after `patience` epochs without improvement. A non-finite
    loss aborts with TrainingDiverged carrying the last good checkpoint.
    """
    if not train_examples:
        raise DataError("empty training set")
    state = init_adam(params, lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
    rng = np.random.default_rng(seed)
    k_eval = min(val_k, params.n)
    history: list[dict] = []
    best_tensors = {k: v.copy() for k, v in params.tensors.items()}
    best_metric = -math.inf
    best_step = params.step
    since_best = 0

    def best_params() -> ModelParams:
        out = params.copy()
        out.tensors = {k: v.copy() for k, v in best_tensors.items()}
        out.step = best_step
        return out

    for epoch in range(1, epochs + 1):
        perm = rng.permutation(len(train_examples))
        loss_sum = 0.0
        seen = 0
        for start in range(0, len(train_examples), batch_size):
            chunk = [train_examples[i] for i in perm[start : start + batch_size]]
            try:
                report, grads = loss_and_grad(chunk, params, semantic, threads=threads)
            except NumericError as exc:
                raise TrainingDiverged(str(exc), best_params(), history) from exc
            adam_step(params, grads, state)
            params.step += 1
            loss_sum += report.mean_loss * report.batch_size
            seen += report.batch_size
        entry = {"epoch": epoch, "train_loss": loss_sum / seen, "step": params.step}
        if val_examples:
            ranked = rank_examples(params, semantic, val_examples, k_eval)
            hits = [recall_at_k(rl, ex.target, k_eval) for rl, ex in zip(ranked, val_examples)]
            entry["val_recall"] = math.fsum(hits) / len(hits)
            entry["val_k"] = k_eval
            if entry["val_recall"] > best_metric:
                best_metric = entry["val_recall"]
                best_tensors = {k: v.copy() for k, v in params.tensors.items()}
                best_step = params.step
                since_best = 0
            else:
                since_best += 1
        else:
            best_tensors = {k: v.copy() for k, v in params.tensors.items()}
            best_step = params.step
        history.append(entry)
        if val_examples and since_best >= patience:
            break
    return best_params(), history
