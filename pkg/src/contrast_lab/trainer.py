"""Deterministic desk-scale contrastive training.

A one- or two-layer encoder with a hand-derived backward pass is trained with
SGD + momentum on two augmented views per sample, using either symmetric
in-batch negatives or a momentum encoder with a FIFO negative queue.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    DimensionMismatch,
    InvalidConfig,
    LossSpec,
    NonFiniteLoss,
    NonFiniteOutput,
    ShapeMismatch,
    UnitEmbeddingBatch,
    Variant,
    ZeroNormRow,
    check_tau,
    make_unit_batch,
    row_norms,
)
from .datagen import AugmentConfig, LabeledDataset, augment_views, stream
from .losses import BatchLossResult, inbatch_partner
from .temperature import adaptive_temperature

INBATCH = "INBATCH"
QUEUE = "QUEUE"


@dataclass(eq=False)
class EncoderParams:
    """Affine layers ``(W, b)`` with ``W`` of shape (out, in); ReLU between layers."""

    layers: list

    def __post_init__(self):
        if len(self.layers) not in (1, 2):
            raise ShapeMismatch("encoder must have one or two layers")
        self.layers = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)) for W, b in self.layers]
        for (W, b), (W_next, _) in zip(self.layers, self.layers[1:]):
            if W_next.shape[1] != W.shape[0]:
                raise ShapeMismatch("layer widths do not chain")
        for W, b in self.layers:
            if b.shape != (W.shape[0],):
                raise ShapeMismatch(f"bias shape {b.shape} does not match weight {W.shape}")
        if self.m < 2:
            raise ShapeMismatch(f"embedding dimension must be >= 2, got {self.m}")

    @property
    def d_in(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def m(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def hidden(self) -> int | None:
        return self.layers[0][0].shape[0] if len(self.layers) == 2 else None

    def arrays(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in layer]

    def copy(self) -> "EncoderParams":
        return EncoderParams([(W.copy(), b.copy()) for W, b in self.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec) -> "EncoderParams":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        expected = sum(a.size for a in self.arrays())
        if vec.size != expected:
            raise ShapeMismatch(f"flat vector has {vec.size} entries, expected {expected}")
        out, pos = [], 0
        for W, b in self.layers:
            nw, nb = W.size, b.size
            out.append((vec[pos : pos + nw].reshape(W.shape), vec[pos + nw : pos + nw + nb].copy()))
            pos += nw + nb
        return EncoderParams(out)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def same_shape(self, other: "EncoderParams") -> bool:
        return [a.shape for a in self.arrays()] == [a.shape for a in other.arrays()]


def init_encoder(d_in: int, m: int, hidden: int | None, rng: np.random.Generator) -> EncoderParams:
    dims = [d_in, m] if hidden is None else [d_in, hidden, m]
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        layers.append((rng.standard_normal((fan_out, fan_in)) / math.sqrt(fan_in), np.zeros(fan_out)))
    return EncoderParams(layers)


@dataclass(eq=False)
class ForwardCache:
    x: np.ndarray
    pre: np.ndarray | None  # hidden pre-activation
    act: np.ndarray | None  # hidden activation
    z: np.ndarray
    norms: np.ndarray
    u: np.ndarray
    params: EncoderParams


def encoder_forward(params: EncoderParams, batch) -> tuple[UnitEmbeddingBatch, ForwardCache]:
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.shape[1] != params.d_in:
        raise DimensionMismatch(f"batch has {x.shape[1]} columns, encoder expects {params.d_in}")
    pre = act = None
    h = x
    # overflow is detected below and reported as NonFiniteOutput
    with np.errstate(over="ignore", invalid="ignore"):
        if len(params.layers) == 2:
            W1, b1 = params.layers[0]
            pre = x @ W1.T + b1
            act = np.maximum(pre, 0.0)
            h = act
        W, b = params.layers[-1]
        z = h @ W.T + b
    if not np.all(np.isfinite(z)):
        raise NonFiniteOutput("encoder produced non-finite pre-normalization output")
    try:
        emb = make_unit_batch(z)
    except ZeroNormRow as exc:
        raise NonFiniteOutput(f"encoder output row {exc.index} has zero norm") from exc
    norms = row_norms(z)[0]
    if not np.all(np.isfinite(norms)):
        raise NonFiniteOutput("encoder output norm overflows")
    return emb, ForwardCache(x, pre, act, z, norms, emb.data, params)


def normalize_backward(u: np.ndarray, norms: np.ndarray, d_u: np.ndarray) -> np.ndarray:
    """Pull ``d_u`` back through ``u = z/||z||``: ``(I - u u^T) d_u / ||z||`` per row."""
    return (d_u - u * np.einsum("ij,ij->i", u, d_u)[:, None]) / norms[:, None]


def encoder_backward(cache: ForwardCache, d_embeddings) -> EncoderParams:
    """Parameter gradients given the upstream gradient on the unit embeddings."""
    d_u = np.asarray(d_embeddings, dtype=np.float64)
    if d_u.shape != cache.u.shape:
        raise ShapeMismatch(f"upstream gradient {d_u.shape} != embeddings {cache.u.shape}")
    dz = normalize_backward(cache.u, cache.norms, d_u)
    params = cache.params
    W, _ = params.layers[-1]
    h = cache.x if cache.act is None else cache.act
    grads = [(dz.T @ h, dz.sum(axis=0))]
    if cache.act is not None:
        d_pre = (dz @ W) * (cache.pre > 0)
        grads.insert(0, (d_pre.T @ cache.x, d_pre.sum(axis=0)))
    return EncoderParams(grads)


def momentum_step(online: EncoderParams, target: EncoderParams, m_enc: float) -> EncoderParams:
    """Exponential moving average ``target <- m target + (1 - m) online``."""
    if not online.same_shape(target):
        raise ShapeMismatch("online and target encoders differ in shape")
    if not 0.0 <= m_enc < 1.0:
        raise InvalidConfig(f"momentum must lie in [0, 1), got {m_enc}")
    return EncoderParams(
        [(m_enc * Wt + (1.0 - m_enc) * Wo, m_enc * bt + (1.0 - m_enc) * bo)
         for (Wo, bo), (Wt, bt) in zip(online.layers, target.layers)]
    )


@dataclass(frozen=True, eq=False)
class NegativeQueue:
    """FIFO of detached key embeddings, oldest first."""

    data: np.ndarray

    @property
    def capacity(self) -> int:
        return self.data.shape[0]


def init_queue(Q: int, m: int, rng: np.random.Generator) -> NegativeQueue:
    if Q < 1:
        raise InvalidConfig(f"queue size must be >= 1, got {Q}")
    return NegativeQueue(make_unit_batch(rng.standard_normal((Q, m))).data)


def queue_push(queue: NegativeQueue, keys) -> NegativeQueue:
    keys = keys.data if isinstance(keys, UnitEmbeddingBatch) else np.atleast_2d(np.asarray(keys, dtype=np.float64))
    if keys.shape[1] != queue.data.shape[1]:
        raise DimensionMismatch(f"key dim {keys.shape[1]} != queue dim {queue.data.shape[1]}")
    return NegativeQueue(np.concatenate([queue.data, keys])[-queue.capacity :].copy())


def _row_terms(gaps: np.ndarray, spec: LossSpec, tau: float, V_fixed=None):
    """Per-row loss and logit gradients from gaps ``(s_neg - s_pos)/tau``.

    ``gaps`` is (rows, slots); masked slots hold ``-inf``. Returns
    ``(loss, coef_pos, coef_neg, W, V)`` where ``coef_*`` are derivatives of
    each row's loss with respect to the raw similarities.
    """
    top = gaps.max(axis=1)
    shift = np.maximum(top, 0.0)
    e = np.exp(gaps - shift[:, None])
    e_sum = e.sum(axis=1)
    e_pos = np.exp(-shift)
    denom = e_pos + e_sum
    W = e_sum / denom
    if spec.variant is Variant.DCL:
        p_hat = np.exp(gaps - top[:, None])
        z = p_hat.sum(axis=1)
        loss = top + np.log(z)
        coef_neg = p_hat / z[:, None] / tau
        coef_pos = -np.ones(gaps.shape[0]) / tau
        return loss, coef_pos, coef_neg, W, np.ones(gaps.shape[0])
    nll = np.where(shift == 0.0, np.log1p(e_sum), shift + np.log(denom))
    if spec.uses_reweight:
        V = np.asarray(V_fixed, dtype=np.float64) if V_fixed is not None else 1.0 / W
    else:
        V = np.ones(gaps.shape[0])
    coef_neg = (V / tau)[:, None] * (e / denom[:, None])
    coef_pos = -V * W / tau
    return V * nll, coef_pos, coef_neg, W, V


def _batch_tau(pos: np.ndarray, spec: LossSpec, tau_fixed):
    A = float(np.mean(pos))
    if tau_fixed is not None:
        return check_tau(tau_fixed), A, False
    if spec.uses_adaptive:
        tau, clamped = adaptive_temperature(min(1.0, max(-1.0, A)), spec.temperature)
        return tau, A, clamped
    return check_tau(spec.temperature.tau0), A, False


def inbatch_loss_and_grad(z, spec: LossSpec, tau_fixed=None, V_fixed=None):
    """Symmetric in-batch loss over stacked views ``z`` (2N x m) and its gradient w.r.t. ``z``.

    Each embedding's gradient aggregates its roles as anchor, positive key and
    negative key. ``tau_fixed`` / ``V_fixed`` pin the detached quantities.
    """
    z = np.asarray(z, dtype=np.float64)
    rows = z.shape[0]
    if rows % 2 or rows < 4:
        raise ShapeMismatch(f"need 2N stacked embeddings with N >= 2, got {rows}")
    n = rows // 2
    partner = inbatch_partner(n)
    idx = np.arange(rows)
    S = z @ z.T
    pos = S[idx, partner]
    tau, A, clamped = _batch_tau(pos, spec, tau_fixed)

    gaps = (S - pos[:, None]) / tau
    gaps[idx, idx] = -np.inf
    gaps[idx, partner] = -np.inf
    loss, coef_pos, coef_neg, W, V = _row_terms(gaps, spec, tau, V_fixed)

    G = coef_neg
    G[idx, partner] = coef_pos
    G /= rows
    dz = (G + G.T) @ z
    result = BatchLossResult(
        mean_loss=float(np.mean(loss)),
        per_anchor_loss=loss,
        tau_used=tau,
        A_batch=A,
        V=V,
        clamped=clamped,
    )
    return result, dz


def queue_loss_and_grad(q, k, queue, spec: LossSpec, tau_fixed=None, V_fixed=None):
    """Loss of queries ``q`` against their keys ``k`` and a shared negative queue.

    Keys and queue are detached: only the gradient w.r.t. ``q`` is returned.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    queue = np.asarray(queue, dtype=np.float64)
    if q.shape != k.shape or queue.shape[1] != q.shape[1]:
        raise DimensionMismatch(f"queries {q.shape}, keys {k.shape}, queue {queue.shape}")
    pos = np.einsum("ij,ij->i", q, k)
    tau, A, clamped = _batch_tau(pos, spec, tau_fixed)
    negs = q @ queue.T
    gaps = (negs - pos[:, None]) / tau
    loss, coef_pos, coef_neg, W, V = _row_terms(gaps, spec, tau, V_fixed)
    n = q.shape[0]
    dq = (coef_pos[:, None] * k + coef_neg @ queue) / n
    result = BatchLossResult(
        mean_loss=float(np.mean(loss)),
        per_anchor_loss=loss,
        tau_used=tau,
        A_batch=A,
        V=V,
        clamped=clamped,
    )
    return result, dq


def _add_params(a: EncoderParams, b: EncoderParams) -> EncoderParams:
    return EncoderParams([(Wa + Wb, ba + bb) for (Wa, ba), (Wb, bb) in zip(a.layers, b.layers)])


def inbatch_step_grads(params: EncoderParams, view_a, view_b, spec: LossSpec, tau_fixed=None, V_fixed=None):
    """Loss and parameter gradients of one in-batch step (both views through ``params``)."""
    e1, c1 = encoder_forward(params, view_a)
    e2, c2 = encoder_forward(params, view_b)
    result, dz = inbatch_loss_and_grad(np.vstack([e1.data, e2.data]), spec, tau_fixed, V_fixed)
    n = e1.N
    grads = _add_params(encoder_backward(c1, dz[:n]), encoder_backward(c2, dz[n:]))
    return result, grads


def queue_step_grads(params: EncoderParams, target: EncoderParams, view_a, view_b, queue: NegativeQueue,
                     spec: LossSpec, tau_fixed=None, V_fixed=None):
    """Loss, online-encoder gradients and the detached keys of one queue step."""
    eq, cq = encoder_forward(params, view_a)
    ek, _ = encoder_forward(target, view_b)
    result, dq = queue_loss_and_grad(eq.data, ek.data, queue.data, spec, tau_fixed, V_fixed)
    return result, encoder_backward(cq, dq), ek


@dataclass(frozen=True)
class TrainConfig:
    spec: LossSpec = field(default_factory=LossSpec)
    framework: str = INBATCH
    batch_size: int = 64
    queue_size: int = 256
    momentum: float = 0.99
    lr: float = 0.5
    lr_schedule: str = "constant"
    sgd_momentum: float = 0.9
    epochs: int = 30
    seed: int = 0
    eval_k: int = 200
    m: int = 16
    hidden: int | None = None
    eval_subset: int = 2048

    def __post_init__(self):
        if self.framework not in (INBATCH, QUEUE):
            raise InvalidConfig(f"framework must be INBATCH or QUEUE, got {self.framework!r}")
        if self.framework == INBATCH and self.batch_size < 2:
            raise InvalidConfig("INBATCH training needs batch_size >= 2")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if self.framework == QUEUE:
            if self.queue_size < 1:
                raise InvalidConfig("QUEUE training needs queue_size >= 1")
            if not 0.0 <= self.momentum < 1.0:
                raise InvalidConfig(f"encoder momentum must lie in [0, 1), got {self.momentum}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise InvalidConfig(f"lr_schedule must be constant or cosine, got {self.lr_schedule!r}")
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise InvalidConfig(f"lr must be finite and > 0, got {self.lr}")
        if not 0.0 <= self.sgd_momentum < 1.0:
            raise InvalidConfig(f"sgd_momentum must lie in [0, 1), got {self.sgd_momentum}")
        if self.epochs < 0 or self.eval_k < 1 or self.m < 2 or self.eval_subset < 2:
            raise InvalidConfig("epochs >= 0, eval_k >= 1, m >= 2 and eval_subset >= 2 required")
        if self.hidden is not None and self.hidden < 1:
            raise InvalidConfig("hidden width must be >= 1")


@dataclass(frozen=True)
class EvalResult:
    alignment_loss: float
    uniformity: float
    knn_accuracy: float


def eval_indices(n: int, subset: int, seed: int) -> np.ndarray:
    if n <= subset:
        return np.arange(n)
    return np.sort(stream(seed, "eval").choice(n, size=subset, replace=False))


def uniformity(emb: np.ndarray) -> float:
    """``log mean_{i<j} exp(-2 ||u_i - u_j||^2)`` over distinct pairs."""
    n = emb.shape[0]
    if n < 2:
        raise InvalidConfig("uniformity needs at least two points")
    # on the sphere -2 ||u - v||^2 = 4 u.v - 4, which lies in [-8, 0]
    G = np.minimum(emb @ emb.T, 1.0)
    E = np.exp(4.0 * G - 4.0)
    off_diag = E.sum() - np.trace(E)
    return float(np.log(off_diag / (n * (n - 1))))


def knn_accuracy(emb: np.ndarray, labels: np.ndarray, k: int, C: int) -> float:
    """Leave-one-out majority vote among the ``k`` cosine-nearest neighbours.

    Neighbour ties at the k-th similarity go to the lower index; vote ties go
    to the lower class id.
    """
    n = emb.shape[0]
    if not 1 <= k <= n - 1:
        raise InvalidConfig(f"k must lie in [1, {n - 1}], got {k}")
    S = emb @ emb.T
    np.fill_diagonal(S, -np.inf)
    kth = np.partition(S, n - k, axis=1)[:, n - k][:, None]
    above = S > kth
    tied = S == kth
    need = k - above.sum(axis=1, keepdims=True)
    chosen = above | tied
    crowded = np.flatnonzero(tied.sum(axis=1, keepdims=True)[:, 0] > need[:, 0])
    if crowded.size:
        t = tied[crowded]
        chosen[crowded] = above[crowded] | (t & (np.cumsum(t, axis=1) <= need[crowded]))
    votes = chosen.astype(np.float64) @ np.eye(C)[labels]
    pred = np.argmax(votes, axis=1)
    return float(np.mean(pred == labels))


def effective_k(eval_k: int, n_eval: int) -> int:
    return max(1, min(eval_k, n_eval // 2))


def evaluate(params: EncoderParams, data: LabeledDataset, eval_k: int, aug: AugmentConfig | None = None,
             seed: int = 0, subset: int = 2048) -> EvalResult:
    """Alignment (fresh augmentation pass), uniformity and leave-one-out kNN accuracy
    on a fixed subset of at most ``subset`` points."""
    idx = eval_indices(data.n, subset, seed)
    x = data.points[idx]
    labels = data.labels[idx]
    emb, _ = encoder_forward(params, x)
    if aug is None:
        align = 0.0
    else:
        va, vb = augment_views(x, aug, stream(seed, "eval", 1))
        ea, _ = encoder_forward(params, va)
        eb, _ = encoder_forward(params, vb)
        diff = ea.data - eb.data
        align = float(np.mean(np.einsum("ij,ij->i", diff, diff)))
    return EvalResult(
        alignment_loss=align,
        uniformity=uniformity(emb.data),
        knn_accuracy=knn_accuracy(emb.data, labels, effective_k(eval_k, idx.size), data.C),
    )


SERIES = ("loss", "A_batch", "tau_used", "clamp_count", "alignment_loss", "uniformity", "knn_accuracy")


@dataclass(eq=False)
class RunRecord:
    loss: list = field(default_factory=list)
    A_batch: list = field(default_factory=list)
    tau_used: list = field(default_factory=list)
    clamp_count: list = field(default_factory=list)
    alignment_loss: list = field(default_factory=list)
    uniformity: list = field(default_factory=list)
    knn_accuracy: list = field(default_factory=list)
    params: EncoderParams | None = None

    def to_dict(self) -> dict:
        out = {name: list(getattr(self, name)) for name in SERIES}
        out["epochs"] = len(self.loss)
        out["param_shapes"] = [list(a.shape) for a in self.params.arrays()] if self.params else []
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def params_bytes(self) -> bytes:
        return b"".join(a.astype("<f8").tobytes() for a in self.params.arrays())


def _lr_at(cfg: TrainConfig, step: int, total: int) -> float:
    if cfg.lr_schedule == "cosine" and total > 0:
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / total))
    return cfg.lr


def train_run(data: LabeledDataset, aug: AugmentConfig, cfg: TrainConfig) -> RunRecord:
    """Train an encoder and record per-epoch metrics. Deterministic in ``(data, aug, cfg)``."""
    N = cfg.batch_size
    if data.n < N:
        raise InvalidConfig(f"dataset has {data.n} points, fewer than batch_size {N}")
    params = init_encoder(data.d, cfg.m, cfg.hidden, stream(cfg.seed, "init"))
    record = RunRecord(params=params.copy())
    target = queue = None
    if cfg.framework == QUEUE:
        target = params.copy()
        queue = init_queue(cfg.queue_size, cfg.m, stream(cfg.seed, "queue"))
    velocity = [np.zeros_like(a) for a in params.arrays()]
    n_batches = data.n // N
    total = cfg.epochs * n_batches
    step = 0
    aug_key = int(aug.seed) % 2**32

    for epoch in range(cfg.epochs):
        perm = stream(cfg.seed, "shuffle", epoch).permutation(data.n)
        aug_rng = stream(cfg.seed, "augment", aug_key, epoch)
        losses, As, taus, clamps = [], [], [], 0
        for b in range(n_batches):
            x = data.points[perm[b * N : (b + 1) * N]]
            va, vb = augment_views(x, aug, aug_rng)
            try:
                if cfg.framework == INBATCH:
                    result, grads = inbatch_step_grads(params, va, vb, cfg.spec)
                    keys = None
                else:
                    result, grads, keys = queue_step_grads(params, target, va, vb, queue, cfg.spec)
            except NonFiniteOutput as exc:
                raise NonFiniteLoss(f"epoch {epoch} batch {b}: {exc}", epoch, b) from exc
            if not math.isfinite(result.mean_loss) or not grads.is_finite():
                raise NonFiniteLoss(f"epoch {epoch} batch {b}: non-finite loss or gradient", epoch, b)

            lr = _lr_at(cfg, step, total)
            new = []
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is caught just below
                for a, g, v in zip(params.arrays(), grads.arrays(), velocity):
                    v *= cfg.sgd_momentum
                    v += g
                    new.append(a - lr * v)
            params = EncoderParams(list(zip(new[::2], new[1::2])))
            if not params.is_finite():
                raise NonFiniteLoss(f"epoch {epoch} batch {b}: parameters diverged", epoch, b)
            if cfg.framework == QUEUE:
                target = momentum_step(params, target, cfg.momentum)
                queue = queue_push(queue, keys)

            losses.append(result.mean_loss)
            As.append(result.A_batch)
            taus.append(result.tau_used)
            clamps += int(result.clamped)
            step += 1

        try:
            ev = evaluate(params, data, cfg.eval_k, aug, cfg.seed, cfg.eval_subset)
        except NonFiniteOutput as exc:
            raise NonFiniteLoss(f"epoch {epoch} evaluation: {exc}", epoch, None) from exc
        record.loss.append(float(np.mean(losses)))
        record.A_batch.append(float(np.mean(As)))
        record.tau_used.append(float(np.mean(taus)))
        record.clamp_count.append(clamps)
        record.alignment_loss.append(ev.alignment_loss)
        record.uniformity.append(ev.uniformity)
        record.knn_accuracy.append(ev.knn_accuracy)
    record.params = params.copy()
    return record
