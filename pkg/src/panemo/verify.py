"""Self-verification harnesses: downsized gradient check, invariant suites,
brute-force metric oracles, and a synthetic overfit dataset.

The brute-force oracles here are deliberately written as plain Python loops
over individual cells, independent of the vectorized implementations in
``metrics``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .metrics import f1_scores, jaccard_accuracy
from .model import ModelConfig, ModelParams, forward, init_params
from .textprep import Dataset, Example, NUM_EMOTIONS, random_embeddings
from .training import l2_penalty, weighted_bce


# ---------------------------------------------------------------------------
# downsized model + gradient check
# ---------------------------------------------------------------------------

DOWNSIZED = dict(vocab_size=20, d_emb=8, hidden=4, T=5, batch=2)


def build_downsized(seed: int, emb_scale: float = 0.05, **overrides) -> ModelParams:
    cfg = {**DOWNSIZED, **overrides}
    emb = random_embeddings(cfg["vocab_size"], cfg["d_emb"], seed, scale=emb_scale)
    return init_params(emb, ModelConfig(d_emb=cfg["d_emb"], hidden=cfg["hidden"]), seed)


def downsized_gradcheck(seed: int = 0, eps: float = 1e-5, l2_coeff: float = 1e-3) -> float:
    """Max relative error of analytic vs central-difference gradients on a
    downsized model with all regularizer randomness disabled."""
    cfg = DOWNSIZED
    params = build_downsized(seed)
    rng = np.random.default_rng(seed + 1)
    indices = rng.integers(0, cfg["vocab_size"], size=(cfg["batch"], cfg["T"]))
    lengths = rng.integers(2, cfg["T"] + 1, size=cfg["batch"])
    mask = np.array([[1.0] * n + [0.0] * (cfg["T"] - n) for n in lengths])
    indices = indices * (mask.astype(np.int64))  # padded positions -> PAD
    labels = rng.integers(0, 2, size=(cfg["batch"], NUM_EMOTIONS)).astype(np.float64)

    def loss_fn():
        yhat, _, _ = forward(indices, mask, params)
        return ad.add_scalars(
            [weighted_bce(yhat, labels, 2.0), l2_penalty(params, l2_coeff)]
        )

    trainable = [t for _, t in params.trainable_parameters()]
    return ad.grad_check(loss_fn, trainable, eps=eps)


# ---------------------------------------------------------------------------
# synthetic keyword dataset (overfit oracle)
# ---------------------------------------------------------------------------


def make_synthetic_dataset(n: int = 64, T: int = 5, vocab_size: int = 20, seed: int = 0) -> Dataset:
    """Random token sequences; label j is 1 iff keyword token (2 + j) appears.

    Indices 0/1 are PAD/UNK, 2..12 are the eleven keywords, the rest filler.
    """
    assert vocab_size >= 2 + NUM_EMOTIONS
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        toks = rng.integers(2, vocab_size, size=T).tolist()
        labels = [1 if (2 + j) in toks else 0 for j in range(NUM_EMOTIONS)]
        examples.append(Example(indices=toks, mask=[1] * T, labels=labels, id=f"syn-{i}"))
    return Dataset(examples=examples)


def overfit_harness(seed: int = 1):
    """Downsized model + config tuned to memorize the synthetic keyword set.

    Embeddings use unit scale: at the pretrained-vector 0.05 scale the frozen
    random tokens are nearly indistinguishable and the loss plateaus.
    """
    from .training import TrainingConfig

    dataset = make_synthetic_dataset(64, T=DOWNSIZED["T"], seed=seed)
    params = build_downsized(seed, emb_scale=1.0)
    config = TrainingConfig(
        batch_size=16,
        lr_init=0.02,
        lr_floor=0.002,
        dropout_dense=0.0,
        spatial_dropout=0.0,
        weight_noise_std=0.0,
        l2_coeff=0.0,
        max_epochs=300,
        early_stop_patience=300,
        seed=seed,
    )
    return dataset, params, config


# ---------------------------------------------------------------------------
# brute-force metric oracles (plain Python, cell by cell)
# ---------------------------------------------------------------------------


def brute_force_jaccard(pred, gold) -> float:
    total = 0.0
    n = len(pred)
    for row_p, row_g in zip(pred, gold):
        p = {i for i, v in enumerate(row_p) if v == 1}
        g = {i for i, v in enumerate(row_g) if v == 1}
        union = p | g
        total += len(p & g) / len(union) if union else 1.0
    return total / n


def brute_force_f1(pred, gold):
    n_classes = len(pred[0])
    f1s, tp_all, fp_all, fn_all = [], 0, 0, 0
    for c in range(n_classes):
        tp = fp = fn = 0
        for row_p, row_g in zip(pred, gold):
            if row_p[c] == 1 and row_g[c] == 1:
                tp += 1
            elif row_p[c] == 1 and row_g[c] == 0:
                fp += 1
            elif row_p[c] == 0 and row_g[c] == 1:
                fn += 1
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
        tp_all, fp_all, fn_all = tp_all + tp, fp_all + fp, fn_all + fn
    micro_p = tp_all / (tp_all + fp_all) if tp_all + fp_all else 0.0
    micro_r = tp_all / (tp_all + fn_all) if tp_all + fn_all else 0.0
    micro = 2 * micro_p * micro_r / (micro_p + micro_r) if micro_p + micro_r else 0.0
    return micro, sum(f1s) / n_classes


# ---------------------------------------------------------------------------
# invariant suites (used by the selftest command and the acceptance tests)
# ---------------------------------------------------------------------------


def check_softmax_invariants(n_trials: int = 500, seed: int = 0) -> float:
    """Worst deviation across softmax invariants over random masked inputs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_trials):
        T = int(rng.integers(1, 12))
        n_valid = int(rng.integers(1, T + 1))
        mask = np.array([1.0] * n_valid + [0.0] * (T - n_valid))
        scores = ad.Tensor(rng.uniform(-5, 5, size=T))
        a = ad.masked_softmax(scores, mask).data
        worst = max(worst, abs(a[mask > 0].sum() - 1.0))
        worst = max(worst, float(np.abs(a[mask == 0]).max(initial=0.0)))
        if a.min() < 0:
            worst = max(worst, -float(a.min()))
        # shift invariance over valid positions
        shifted = ad.Tensor(scores.data + 3.7)
        a2 = ad.masked_softmax(shifted, mask).data
        worst = max(worst, float(np.abs(a - a2).max()))
    return worst


def check_attention_convex_hull(n_trials: int = 500, seed: int = 0) -> float:
    """How far any pooled component escapes the valid rows' min/max (0 = never)."""
    from .model import attention_pool, AttentionParams

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_trials):
        T = int(rng.integers(1, 8))
        d = int(rng.integers(1, 6))
        n_valid = int(rng.integers(1, T + 1))
        mask = np.array([[1.0] * n_valid + [0.0] * (T - n_valid)])
        us = [ad.Tensor(rng.uniform(-2, 2, size=(1, d))) for _ in range(T)]
        p = AttentionParams(
            w_a=ad.Tensor(rng.uniform(-1, 1, size=(d, 1)), trainable=True),
            b=ad.Tensor(rng.uniform(-1, 1, size=1), trainable=True),
        )
        v, _ = attention_pool(us, p, mask)
        valid = np.stack([us[t].data[0] for t in range(n_valid)])
        lo, hi = valid.min(axis=0), valid.max(axis=0)
        worst = max(worst, float(np.maximum(lo - v.data[0], v.data[0] - hi).max(initial=0.0)))
    return worst


def check_padding_invariance(params: ModelParams, n_trials: int = 50, seed: int = 0) -> float:
    """Max |Δŷ| from appending 3 PAD tokens, eval mode."""
    rng = np.random.default_rng(seed)
    vocab_size = params.embedding.data.shape[0]
    worst = 0.0
    for _ in range(n_trials):
        T = int(rng.integers(1, 7))
        idx = rng.integers(2, vocab_size, size=(1, T))
        mask = np.ones((1, T))
        y1, _, _ = forward(idx, mask, params)
        idx_pad = np.concatenate([idx, np.zeros((1, 3), dtype=np.int64)], axis=1)
        mask_pad = np.concatenate([mask, np.zeros((1, 3))], axis=1)
        y2, _, _ = forward(idx_pad, mask_pad, params)
        worst = max(worst, float(np.abs(y1.data - y2.data).max()))
    return worst


def check_metric_oracles(n_trials: int = 1000, n: int = 50, seed: int = 0) -> float:
    """Worst |fast - brute force| over random prediction/gold pairs.

    Includes all-zero rows (empty sets) and zero-support classes by
    construction of the random draws.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(n_trials):
        density = rng.uniform(0.05, 0.6)
        pred = (rng.random((n, NUM_EMOTIONS)) < density).astype(np.int64)
        gold = (rng.random((n, NUM_EMOTIONS)) < density).astype(np.int64)
        if trial % 10 == 0:
            pred[0] = 0
            gold[0] = 0  # empty/empty edge case
        if trial % 7 == 0:
            gold[:, trial % NUM_EMOTIONS] = 0  # zero-support class
        worst = max(worst, abs(jaccard_accuracy(pred, gold) - brute_force_jaccard(pred, gold)))
        micro, macro, _ = f1_scores(pred, gold)
        bf_micro, bf_macro = brute_force_f1(pred, gold)
        worst = max(worst, abs(micro - bf_micro), abs(macro - bf_macro))
    return worst


def run_selftest(seed: int = 0, quick: bool = False) -> list[tuple[str, float, float, bool]]:
    """Run the invariant suites; returns (name, worst_error, tolerance, passed)."""
    n = 100 if quick else 500
    n_metrics = 200 if quick else 1000
    params = build_downsized(seed)
    results = []
    for name, worst, tol in [
        ("masked_softmax invariants", check_softmax_invariants(n, seed), 1e-12),
        ("attention convex hull", check_attention_convex_hull(n, seed), 1e-12),
        ("padding invariance", check_padding_invariance(params, max(n // 10, 20), seed), 1e-12),
        ("metric oracle equivalence", check_metric_oracles(n_metrics, seed=seed), 1e-12),
    ]:
        results.append((name, worst, tol, worst < tol))
    return results
