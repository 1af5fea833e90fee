"""Acceptance checks; each prints one PASS/FAIL line.

Run with pytest (lines appear in the terminal summary) or directly:
``python3 tests/test_acceptance.py``. Criterion 7 needs the Chameleon node
dataset directory in ``SIGNGT_CHAMELEON_DIR`` and is skipped otherwise.
"""

import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import random_graph, record_criterion  # noqa: E402

from signgt import autodiff as ad  # noqa: E402
from signgt.autodiff import Tensor  # noqa: E402
from signgt.cli import main as cli_main  # noqa: E402
from signgt.data import generate_csbm, load_node_dataset, read_attention_tsv  # noqa: E402
from signgt.graph import Graph, adjacency_power, homophily, operator_norm  # noqa: E402
from signgt.model import (  # noqa: E402
    ModelConfig,
    SignGTModel,
    attention_scores,
    layer_norm,
    linear,
    model_forward,
    original_softmax,
    sffn_forward,
    signed_softmax,
)
from signgt.training import TrainConfig, cross_entropy, default_model_config, fit  # noqa: E402

# ---------------------------------------------------------------------------
# 1. signed-softmax invariants


def test_criterion_1_signed_softmax_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_l1 = worst_cone = 0.0
    sign_ok = mono_ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 65))
        s = rng.uniform(-5, 5, (n, n))
        m = signed_softmax(Tensor(s)).data
        worst_l1 = max(worst_l1, float(np.max(np.abs(np.abs(m).sum(axis=1) - 1))))
        sign_ok &= bool(np.array_equal(np.sign(m), np.where(s < 0, -1.0, 1.0)))
        for a_row, m_row in zip(np.abs(s), np.abs(m)):
            order = np.argsort(a_row, kind="stable")
            mono_ok &= bool(np.all(np.diff(m_row[order]) >= 0))
        pos = np.abs(s)
        cone = np.max(np.abs(signed_softmax(Tensor(pos)).data - original_softmax(Tensor(pos)).data))
        worst_cone = max(worst_cone, float(cone))
    secs = time.perf_counter() - t0
    ok = worst_l1 <= 1e-9 and sign_ok and worst_cone <= 1e-12 and mono_ok and secs < 10
    record_criterion(
        1,
        ok,
        f"l1 err {worst_l1:.1e} (<=1e-9), signs {'exact' if sign_ok else 'BROKEN'}, "
        f"cone err {worst_cone:.1e} (<=1e-12), monotone {'exact' if mono_ok else 'BROKEN'}, {secs:.1f}s (<10s)",
    )
    assert ok


# ---------------------------------------------------------------------------
# 2. gradient fidelity


def _near_kink(model, g, margin=1e-3):
    """True if any attention score or ReLU pre-activation lies within ``margin`` of zero."""
    lp = model.layers[0]
    cfg = model.config
    h = linear(Tensor(g.features), model.proj_w, model.proj_b)
    z = layer_norm(h, lp.norm1)
    for wq, wk in zip(lp.wq, lp.wk):
        if np.min(np.abs(attention_scores(z, wq, wk, cfg.attention).data)) < margin:
            return True
    from signgt.model import multi_head

    h1 = ad.add(h, multi_head(z, lp, cfg.attention))
    pre = ad.matmul_const(g.structural_bias(cfg.k).matrix, linear(layer_norm(h1, lp.norm2), lp.w1, lp.b1))
    if np.min(np.abs(pre.data)) < margin:
        return True
    h2 = ad.add(h1, sffn_forward(layer_norm(h1, lp.norm2), g.structural_bias(cfg.k), lp))
    head_pre = linear(layer_norm(h2, model.final_norm), model.head_w1, model.head_b1)
    return bool(np.min(np.abs(head_pre.data)) < margin)


def test_criterion_2_gradient_fidelity():
    t0 = time.perf_counter()
    worst, resampled, draw = 0.0, 0, 0
    for trial in range(20):
        while True:
            g = random_graph(12, 0.3, d=5, seed=10_000 + draw, num_classes=3)
            model = SignGTModel.init(ModelConfig(5, 3, d_model=8, num_heads=2, num_layers=1, k=2), draw)
            draw += 1
            if not _near_kink(model, g):
                break
            resampled += 1
        params = model.parameters()
        f = lambda ps, m=model, gr=g: cross_entropy(model_forward(m, gr), gr.labels)  # noqa: E731
        for a, n in zip(ad.analytic_grad(f, params), ad.numeric_grad(f, params)):
            rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
            worst = max(worst, float(rel.max()))
    secs = time.perf_counter() - t0
    ok = worst < 1e-4 and secs < 60
    record_criterion(2, ok, f"max rel err {worst:.1e} (<1e-4) over 20 graphs, {resampled} resampled, {secs:.1f}s (<60s)")
    assert ok


# ---------------------------------------------------------------------------
# 3. SFFN oracle


def _sffn_literal(h, bias, lp):
    w1, b1, w2, b2 = (t.data for t in (lp.w1, lp.b1, lp.w2, lp.b2))
    n = h.shape[0]
    out = np.empty((n, w2.shape[1]))
    for i in range(n):
        acc = np.zeros(w1.shape[1])
        for j in range(n):
            acc += bias[i, j] * (h[j] @ w1 + b1[0])
        out[i] = np.maximum(acc, 0.0) @ w2 + b2[0]
    return out


def test_criterion_3_sffn_oracle():
    rng = np.random.default_rng(3)
    worst = worst_k0 = 0.0
    for t in range(100):
        n = int(rng.integers(1, 21))
        k = t % 4
        g = random_graph(n, float(rng.uniform(0.05, 0.6)), seed=t)
        lp = SignGTModel.init(ModelConfig(4, 2, d_model=8, num_heads=2), t).layers[0]
        lp.b1.data[...] = rng.standard_normal(lp.b1.shape)
        lp.b2.data[...] = rng.standard_normal(lp.b2.shape)
        h = rng.standard_normal((n, 8))
        bias = g.structural_bias(k)
        out = sffn_forward(Tensor(h), bias, lp).data
        worst = max(worst, float(np.max(np.abs(out - _sffn_literal(h, bias.dense(), lp)))))
        plain = np.maximum(h @ lp.w1.data + lp.b1.data, 0) @ lp.w2.data + lp.b2.data
        k0 = sffn_forward(Tensor(h), g.structural_bias(0), lp).data
        worst_k0 = max(worst_k0, float(np.max(np.abs(k0 - plain))))
    ok = worst <= 1e-10 and worst_k0 <= 1e-12
    record_criterion(3, ok, f"matrix vs per-node err {worst:.1e} (<=1e-10), k=0 vs FFN err {worst_k0:.1e} (<=1e-12)")
    assert ok


# ---------------------------------------------------------------------------
# 4. graph math


def test_criterion_4_graph_math():
    rng = np.random.default_rng(4)
    sym_ok, worst_norm, worst_pow = True, 0.0, 0.0
    for t in range(30):
        n = int(rng.integers(2, 51))
        g = random_graph(n, float(rng.uniform(0.02, 0.5)), seed=100 + t)
        a = g.normalized_adjacency()
        sym_ok &= bool(abs(a - a.T).max() == 0) if a.nnz else True
        powers = [adjacency_power(a, k).dense() for k in range(6)]
        for k in range(6):
            worst_norm = max(worst_norm, operator_norm(powers[k], steps=100, seed=t))
        for j in range(4):
            for k in range(4 - j):
                err = np.max(np.abs(adjacency_power(a, j + k).dense() - powers[j] @ powers[k]))
                worst_pow = max(worst_pow, float(err))
    tri = Graph(3, [[0, 1], [1, 2], [0, 2]], np.zeros((3, 1)), [0, 0, 1])
    h_tri = homophily(tri)
    ok = sym_ok and worst_norm <= 1 + 1e-8 and worst_pow <= 1e-10 and h_tri == 1 / 3
    record_criterion(
        4,
        ok,
        f"symmetric {sym_ok}, max ||A^k|| {worst_norm:.10f} (<=1+1e-8), "
        f"power err {worst_pow:.1e} (<=1e-10), triangle homophily {h_tri!r} (==1/3)",
    )
    assert ok


# ---------------------------------------------------------------------------
# 5. permutation equivariance / invariance


def test_criterion_5_permutation():
    rng = np.random.default_rng(5)
    worst_node = worst_graph = 0.0
    for t in range(20):
        n = int(rng.integers(3, 25))
        g = random_graph(n, 0.3, seed=200 + t)
        variant = ("signed", "original", "tanh")[t % 3]
        node_m = SignGTModel.init(ModelConfig(4, 3, d_model=8, num_heads=2, num_layers=2, k=t % 4, variant=variant), t)
        graph_m = SignGTModel.init(ModelConfig(4, 3, d_model=8, num_heads=2, k=t % 4, variant=variant, task="graph"), t)
        perm = rng.permutation(n)
        gp = g.permuted(perm)
        worst_node = max(worst_node, float(np.max(np.abs(model_forward(node_m, gp).data - model_forward(node_m, g).data[perm]))))
        worst_graph = max(worst_graph, float(np.max(np.abs(model_forward(graph_m, gp).data - model_forward(graph_m, g).data))))
    ok = worst_node <= 1e-10 and worst_graph <= 1e-10
    record_criterion(5, ok, f"node logits err {worst_node:.1e}, graph logits err {worst_graph:.1e} (<=1e-10, 20 trials)")
    assert ok


# ---------------------------------------------------------------------------
# 6. synthetic ablation

# protocol fixed before running; see the decisions ledger
ABLATION_SEEDS = range(5)
ABLATION_MODEL = dict(d_model=32, num_heads=2, num_layers=1, k=1, dropout=0.1)
ABLATION_TRAIN = dict(learning_rate=5e-3, weight_decay=5e-4, max_epochs=200, patience=50)


def _ablation(p_in, p_out):
    accs = {"signed": [], "original": []}
    hom = []
    for seed in ABLATION_SEEDS:
        ds = generate_csbm(1000, 2, p_in, p_out, 16, 0.15, seed=seed)
        hom.append(homophily(ds.graph))
        for variant in accs:
            model = SignGTModel.init(default_model_config(ds, variant=variant, **ABLATION_MODEL), seed)
            model, hist = fit(model, ds, TrainConfig(seed=seed, **ABLATION_TRAIN))
            accs[variant].append(hist.best_test_acc)
    return float(np.mean(hom)), {v: 100 * float(np.mean(a)) for v, a in accs.items()}


@pytest.mark.slow
def test_criterion_6_synthetic_ablation():
    t0 = time.perf_counter()
    h_het, het = _ablation(0.002, 0.02)
    h_hom, hom = _ablation(0.02, 0.002)
    secs = time.perf_counter() - t0
    gap_het = het["signed"] - het["original"]
    gap_hom = hom["signed"] - hom["original"]
    ok = gap_het >= 5 and gap_hom >= -2 and secs < 600
    record_criterion(
        6,
        ok,
        f"heterophilic (H={h_het:.2f}) signed {het['signed']:.2f} vs original {het['original']:.2f}, "
        f"gap {gap_het:+.2f} (>=+5); homophilic (H={h_hom:.2f}) gap {gap_hom:+.2f} (>=-2); {secs:.0f}s (<600s)",
    )
    assert ok


# ---------------------------------------------------------------------------
# 7. Chameleon (conditional)

CHAMELEON_GRID = {"k": (1, 2, 3), "learning_rate": (5e-3,), "weight_decay": (5e-4,), "dropout_rate": (0.5,)}


@pytest.mark.slow
def test_criterion_7_chameleon():
    root = os.environ.get("SIGNGT_CHAMELEON_DIR")
    if not root or not Path(root).is_dir():
        record_criterion(7, None, "dataset absent; set SIGNGT_CHAMELEON_DIR to a Chameleon node dataset directory")
        pytest.skip("Chameleon dataset not supplied")
    from signgt.training import grid_search, split_grid_point

    t0 = time.perf_counter()
    ds0 = load_node_dataset(root, seed=0)
    h = homophily(ds0.graph)
    base = dict(d_model=128, num_heads=2, num_layers=1)
    train = TrainConfig(max_epochs=300, patience=50)

    def run(variant, point):
        model_kw, train_kw = split_grid_point(point)
        accs = []
        for seed in range(10):
            ds = load_node_dataset(root, seed=seed)
            m = SignGTModel.init(default_model_config(ds, variant=variant, **base, **model_kw), seed)
            _, hist = fit(m, ds, TrainConfig(**{**train.__dict__, "seed": seed, **train_kw}))
            accs.append(hist.best_test_acc)
        return 100 * float(np.mean(accs))

    def make(variant):
        return lambda **kw: default_model_config(ds0, variant=variant, **{**base, **kw})

    best_s, _ = grid_search(make("signed"), ds0, train, CHAMELEON_GRID)
    best_o, _ = grid_search(make("original"), ds0, train, CHAMELEON_GRID)
    acc_s, acc_o = run("signed", best_s), run("original", best_o)
    secs = time.perf_counter() - t0
    ok = abs(h - 0.24) <= 0.01 and abs(acc_s - 74.31) <= 3.0 and acc_s - acc_o >= 15 and secs < 1800
    record_criterion(
        7,
        ok,
        f"homophily {h:.2f} (0.24±0.01), signed {acc_s:.2f} (74.31±3.0), "
        f"gain over original {acc_s - acc_o:+.2f} (>=15), {secs:.0f}s (<1800s)",
    )
    assert ok


# ---------------------------------------------------------------------------
# 8. training sanity


def test_criterion_8_training_sanity():
    ds = generate_csbm(50, 2, 0.2, 0.02, 8, 3.0, seed=0)
    cfg = dict(d_model=16, num_heads=2, k=1)
    _, hist = fit(
        SignGTModel.init(default_model_config(ds, **cfg), 0),
        ds,
        TrainConfig(learning_rate=1e-2, weight_decay=0.0, max_epochs=200, patience=200),
    )
    hit = next((i + 1 for i, a in enumerate(hist.train_acc) if a == 1.0), None)
    _, first = fit(SignGTModel.init(default_model_config(ds, zero_init_head=True, **cfg), 0), ds, TrainConfig(max_epochs=1))
    loss_err = abs(first.train_loss[0] - math.log(2))
    runs = []
    for _ in range(2):
        m, h = fit(SignGTModel.init(default_model_config(ds, dropout=0.3, **cfg), 1), ds, TrainConfig(max_epochs=30, seed=1))
        runs.append((h, m.state_dict()))
    identical = runs[0][0] == runs[1][0] and all(
        np.array_equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1]
    )
    ok = hit is not None and loss_err <= 0.05 and identical
    record_criterion(
        8,
        ok,
        f"100% train acc at epoch {hit} (<=200), |loss_1 - ln 2| {loss_err:.4f} (<=0.05), "
        f"repeat run {'bit-identical' if identical else 'DIFFERS'}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 9. attention dump


def test_criterion_9_attention_dump(tmp_path):
    import json

    cfg = {
        "generator": dict(n=300, num_classes=2, p_in=0.005, p_out=0.05, feat_dim=16, feat_signal=0.5, seed=0),
        "d_model": 16,
        "num_heads": 2,
        "max_epochs": 50,
        "patience": 50,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "dump"
    code = cli_main(["attn-dump", "--config", str(path), "--node", "0", "--out", str(out)])
    signed = read_attention_tsv(out / "signed" / "attention_node_0.tsv")
    orig = read_attention_tsv(out / "original" / "attention_node_0.tsv")
    n_neg = int((signed < 0).sum())
    ok = code == 0 and n_neg > 0 and bool((orig > 0).all())
    record_criterion(
        9, ok, f"signed dump has {n_neg}/{signed.size} negative values (>0), original min {orig.min():.2e} (>0)"
    )
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
