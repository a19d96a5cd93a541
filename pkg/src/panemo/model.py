"""Pyramid attention network forward pass.

Embedding lookup -> spatial dropout -> two stacked bidirectional GRU layers
(hidden size 50 per direction) -> two attention pooling layers, the first
over (H1, X) and the second over (H2, H1, X) -> concatenation -> dropout ->
dense sigmoid head over 11 emotion classes.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .textprep import EmbeddingMatrix, NUM_EMOTIONS, PAD_INDEX


@dataclass
class GruDirectionParams:
    """Gate weights and biases for one GRU scan direction."""

    W_ir: Tensor
    W_iz: Tensor
    W_in: Tensor
    W_hr: Tensor
    W_hz: Tensor
    W_hn: Tensor
    b_ir: Tensor
    b_iz: Tensor
    b_in: Tensor
    b_hr: Tensor
    b_hz: Tensor
    b_hn: Tensor

    def named(self, prefix: str):
        return [(f"{prefix}.{f.name}", getattr(self, f.name)) for f in fields(self)]


@dataclass
class AttentionParams:
    """Affine per-position scorer: e_i = u_i . w_a + b."""

    w_a: Tensor  # (d_u, 1)
    b: Tensor  # (1,)

    def named(self, prefix: str):
        return [(f"{prefix}.w_a", self.w_a), (f"{prefix}.b", self.b)]


@dataclass
class ModelConfig:
    d_emb: int = 300
    hidden: int = 50  # per direction
    n_labels: int = NUM_EMOTIONS

    @property
    def d_h(self) -> int:
        return 2 * self.hidden

    @property
    def d_u1(self) -> int:
        return self.d_h + self.d_emb

    @property
    def d_u2(self) -> int:
        return 2 * self.d_h + self.d_emb

    @property
    def d_v(self) -> int:
        return self.d_u1 + self.d_u2


@dataclass
class ModelParams:
    """All parameters: frozen embedding plus the trainable stack."""

    embedding: Tensor  # (|vocab|, d_emb), trainable=False
    gru1_fwd: GruDirectionParams
    gru1_bwd: GruDirectionParams
    gru2_fwd: GruDirectionParams
    gru2_bwd: GruDirectionParams
    attn1: AttentionParams
    attn2: AttentionParams
    W_d: Tensor
    b_d: Tensor
    config: ModelConfig

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """Every tensor once, in canonical checkpoint order."""
        out = [("embedding", self.embedding)]
        out += self.gru1_fwd.named("gru1.fwd")
        out += self.gru1_bwd.named("gru1.bwd")
        out += self.gru2_fwd.named("gru2.fwd")
        out += self.gru2_bwd.named("gru2.bwd")
        out += self.attn1.named("attn1")
        out += self.attn2.named("attn2")
        out += [("dense.W_d", self.W_d), ("dense.b_d", self.b_d)]
        return out

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.named_parameters() if t.trainable]

    def weight_matrices(self) -> list[Tensor]:
        """Trainable 2-D weights (L2 targets); biases and embedding excluded."""
        return [t for n, t in self.trainable_parameters() if t.data.ndim == 2]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _init_gru_direction(rng, d_in: int, hidden: int) -> GruDirectionParams:
    def w(fan_in, fan_out):
        return Tensor(_glorot(rng, fan_in, fan_out), trainable=True)

    def b():
        return Tensor(np.zeros(hidden), trainable=True)

    return GruDirectionParams(
        W_ir=w(d_in, hidden), W_iz=w(d_in, hidden), W_in=w(d_in, hidden),
        W_hr=w(hidden, hidden), W_hz=w(hidden, hidden), W_hn=w(hidden, hidden),
        b_ir=b(), b_iz=b(), b_in=b(), b_hr=b(), b_hz=b(), b_hn=b(),
    )


def init_params(embedding: EmbeddingMatrix, config: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform matrices, zero biases, seeded; embedding frozen."""
    if embedding.dim != config.d_emb:
        raise ShapeError(
            f"embedding dim {embedding.dim} != configured d_emb {config.d_emb}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))  # init stream
    h = config.hidden
    return ModelParams(
        embedding=Tensor(embedding.weights, trainable=False),
        gru1_fwd=_init_gru_direction(rng, config.d_emb, h),
        gru1_bwd=_init_gru_direction(rng, config.d_emb, h),
        gru2_fwd=_init_gru_direction(rng, config.d_h, h),
        gru2_bwd=_init_gru_direction(rng, config.d_h, h),
        attn1=AttentionParams(
            w_a=Tensor(_glorot(rng, config.d_u1, 1), trainable=True),
            b=Tensor(np.zeros(1), trainable=True),
        ),
        attn2=AttentionParams(
            w_a=Tensor(_glorot(rng, config.d_u2, 1), trainable=True),
            b=Tensor(np.zeros(1), trainable=True),
        ),
        W_d=Tensor(_glorot(rng, config.d_v, config.n_labels), trainable=True),
        b_d=Tensor(np.zeros(config.n_labels), trainable=True),
        config=config,
    )


def embed(indices: np.ndarray, embedding: Tensor) -> list[Tensor]:
    """Row lookup of a (B, T) index batch; returns T tensors of shape (B, d_emb).

    Equivalent to one-hot matmul against the embedding table. No gradient
    flows to the (frozen) table.
    """
    indices = np.asarray(indices)
    if indices.max(initial=0) >= embedding.data.shape[0] or indices.min(initial=0) < 0:
        raise IndexError(
            f"token index out of range for vocabulary of {embedding.data.shape[0]}"
        )
    return [Tensor(embedding.data[indices[:, t]]) for t in range(indices.shape[1])]


def gru_cell(x_t: Tensor, h_prev: Tensor, p: GruDirectionParams) -> Tensor:
    """One GRU step.

    r = sigma(W_ir x + b_ir + W_hr h + b_hr)
    z = sigma(W_iz x + b_iz + W_hz h + b_hz)
    n = tanh(W_in x + b_in + r * (W_hn h + b_hn))   # r gates the affine hidden term
    h' = (1 - z) * n + z * h
    """
    r = ad.sigmoid(
        ad.add(ad.add(ad.matmul(x_t, p.W_ir), p.b_ir), ad.add(ad.matmul(h_prev, p.W_hr), p.b_hr))
    )
    z = ad.sigmoid(
        ad.add(ad.add(ad.matmul(x_t, p.W_iz), p.b_iz), ad.add(ad.matmul(h_prev, p.W_hz), p.b_hz))
    )
    n = ad.tanh(
        ad.add(
            ad.add(ad.matmul(x_t, p.W_in), p.b_in),
            ad.mul(ad.add(ad.matmul(h_prev, p.W_hn), p.b_hn), r),
        )
    )
    # (1 - z) * n + z * h_prev, written without a standalone ones tensor
    return ad.add(ad.sub(n, ad.mul(n, z)), ad.mul(h_prev, z))


def bigru_layer(
    xs: list[Tensor],
    fwd: GruDirectionParams,
    bwd: GruDirectionParams,
    mask: np.ndarray,
) -> list[Tensor]:
    """Bidirectional scan over T per-position tensors of shape (B, d_in).

    Returns T tensors of shape (B, 2*hidden): [h_fwd ; h_bwd] per position.
    Masked positions emit zeros and leave the carried hidden state unchanged,
    so batch padding cannot alter the valid prefix.
    """
    mask = np.asarray(mask, dtype=np.float64)
    T = len(xs)
    B = xs[0].data.shape[0]
    hidden = fwd.W_hr.data.shape[0]

    def scan(order, params):
        h = Tensor(np.zeros((B, hidden)))
        outs = {}
        for t in order:
            m_t = mask[:, t : t + 1]
            h_new = gru_cell(xs[t], h, params)
            # carried state: h_new where valid, previous h where masked
            h = ad.add(ad.mul_const(h_new, m_t), ad.mul_const(h, 1.0 - m_t))
            outs[t] = ad.mul_const(h_new, m_t)
        return [outs[t] for t in range(T)]

    hs_fwd = scan(range(T), fwd)
    hs_bwd = scan(range(T - 1, -1, -1), bwd)
    return [ad.concat_features([hs_fwd[t], hs_bwd[t]]) for t in range(T)]


def attention_pool(
    us: list[Tensor], p: AttentionParams, mask: np.ndarray
) -> tuple[Tensor, np.ndarray]:
    """Softmax-weighted sum of per-position features.

    ``us`` holds T tensors of shape (B, d_u). Returns the pooled (B, d_u)
    tensor and the (B, T) attention weights for inspection.
    """
    scores = ad.concat_features(
        [ad.add(ad.matmul(u, p.w_a), p.b) for u in us]
    )  # (B, T)
    weights = ad.masked_softmax(scores, mask)
    pooled = None
    for t, u in enumerate(us):
        term = ad.mul(u, _column(weights, t))
        pooled = term if pooled is None else ad.add(pooled, term)
    return pooled, weights.data.copy()


def _column(x: Tensor, t: int) -> Tensor:
    """Differentiable (B, 1) column slice of a (B, T) tensor."""
    out = Tensor(x.data[:, t : t + 1])

    def bwd():
        g = out.grad
        if g is None:
            return
        full = np.zeros_like(x.data)
        full[:, t : t + 1] = g
        ad.accumulate_grad(x, full)

    ad.record(bwd, out)
    return out


def forward(
    indices: np.ndarray,
    mask: np.ndarray,
    params: ModelParams,
    mode: str = "eval",
    dropout_dense: float = 0.0,
    spatial_dropout: float = 0.0,
    rng=None,
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Full forward pass over a (B, T) batch.

    Returns (yhat (B, n_labels), attention weights layer 1 (B, T), layer 2).
    In train mode ``rng`` drives the dropout masks: either a single Generator
    or anything with ``.spatial`` / ``.dense`` Generator attributes. Both
    attention layers see the same post-spatial-dropout X that feeds GRU
    layer 1.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    from .training import dropout_mask, spatial_dropout_mask  # local: avoids cycle

    spatial_rng = getattr(rng, "spatial", rng)
    dense_rng = getattr(rng, "dense", rng)

    mask = np.asarray(mask, dtype=np.float64)
    xs = embed(indices, params.embedding)

    if mode == "train" and spatial_dropout > 0.0:
        ch_mask = spatial_dropout_mask(
            (xs[0].data.shape[0], params.config.d_emb), spatial_dropout, spatial_rng
        )
        xs = [ad.mul_const(x, ch_mask) for x in xs]

    h1 = bigru_layer(xs, params.gru1_fwd, params.gru1_bwd, mask)
    h2 = bigru_layer(h1, params.gru2_fwd, params.gru2_bwd, mask)

    u1 = [ad.concat_features([h1[t], xs[t]]) for t in range(len(xs))]
    u2 = [ad.concat_features([h2[t], h1[t], xs[t]]) for t in range(len(xs))]
    v1, a1 = attention_pool(u1, params.attn1, mask)
    v2, a2 = attention_pool(u2, params.attn2, mask)
    v = ad.concat_features([v1, v2])

    if mode == "train" and dropout_dense > 0.0:
        v = ad.mul_const(v, dropout_mask(v.data.shape, dropout_dense, dense_rng))

    yhat = ad.sigmoid(ad.add(ad.matmul(v, params.W_d), params.b_d))
    return yhat, a1, a2


def predict_scores(dataset_indices, dataset_mask, params, batch_size: int = 64):
    """Eval-mode scores over a whole dataset, batched."""
    n = dataset_indices.shape[0]
    out = np.zeros((n, params.config.n_labels))
    for start in range(0, n, batch_size):
        end = min(start + batch_size, n)
        yhat, _, _ = forward(dataset_indices[start:end], dataset_mask[start:end], params)
        out[start:end] = yhat.data
    return out
