"""Acceptance gate: nine pinned criteria, printed one pass/fail line each.

Each test enforces one criterion at its stated tolerance and wall budget.
Run with ``pytest -v`` (one line per criterion) or ``-s`` to see the
``[PASS]`` prints.
"""
import dataclasses
import time

import numpy as np
import pytest

from crossseg import tensor as T
from crossseg.blocks import (CrossScanNet, DecoderStage, EncoderStub,
                             FusionDecoder, MultiScaleBlock, ParallelAttention,
                             SerialAttention, column_exchange, load_model,
                             row_exchange)
from crossseg.config import AugmentConfig, ModelConfig, TrainConfig, desk_config
from crossseg.data import load_split, synth_generate
from crossseg.metrics import dice_iou, evaluate_dataset, evaluate_pair
from crossseg.reference import scan_reference
from crossseg.scan import (ANTI_DIAG_BR, ANTI_DIAG_TL, MAIN_DIAG_BL,
                           MAIN_DIAG_TR, SCAN_VARIANTS, DiagonalScanBlock,
                           build_scan_order, selective_scan)
from crossseg.tensor import as_tensor
from crossseg.train import (CHECKPOINT_NAME, lr_at, predict_probs, seg_loss,
                            train_loop)

from conftest import leaf, param_grad_check
from test_metrics import random_pairs, worst_route_disagreement


def _line(num, text):
    print(f"[PASS] criterion {num}: {text}")


@pytest.fixture(scope="module")
def desk_data(tmp_path_factory):
    """The desk-scale dataset: 200 samples at 64x64, generator seed 0."""
    root = tmp_path_factory.mktemp("desk")
    synth_generate(desk_config().dataset, root)
    return load_split(root, "train"), load_split(root, "test")


# -- criterion 1: scan-order bijectivity ------------------------------------

def test_criterion_1_scan_bijectivity():
    t0 = time.monotonic()
    for h in range(1, 17):
        for w in range(1, 17):
            for variant in SCAN_VARIANTS:
                order = build_scan_order(h, w, variant)
                assert sorted(order.forward.tolist()) == list(range(h * w)), \
                    (h, w, variant)
                np.testing.assert_array_equal(order.inverse[order.forward],
                                              np.arange(h * w))
            np.testing.assert_array_equal(
                build_scan_order(h, w, ANTI_DIAG_BR).forward,
                build_scan_order(h, w, ANTI_DIAG_TL).forward[::-1])
            np.testing.assert_array_equal(
                build_scan_order(h, w, MAIN_DIAG_BL).forward,
                build_scan_order(h, w, MAIN_DIAG_TR).forward[::-1])
    elapsed = time.monotonic() - t0
    assert elapsed < 5.0, f"bijectivity sweep took {elapsed:.1f}s"
    _line(1, f"all four orders bijective and reversal-paired for H,W in 1..16 "
             f"({elapsed:.2f}s)")


# -- criterion 2: recurrence forward oracle ---------------------------------

def test_criterion_2_selective_scan_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        g = int(rng.integers(1, 5))
        ell = int(rng.integers(1, 65))
        ch = int(rng.integers(1, 9))
        n = int(rng.integers(1, 9))
        u = rng.standard_normal((g, ell, ch))
        delta = rng.uniform(0.001, 0.6, (g, ell, ch))
        a_log = rng.uniform(-1.5, 1.5, (ch, n))
        b = rng.standard_normal((g, ell, n))
        c = rng.standard_normal((g, ell, n))
        d = rng.standard_normal(ch)
        got = selective_scan(*map(as_tensor, (u, delta, a_log, b, c, d))).data
        expect = scan_reference(u, delta, a_log, b, c, d)
        worst = max(worst, float(np.max(np.abs(got - expect))))
    assert worst <= 1e-10, f"worst deviation {worst:.3e}"
    _line(2, f"100 random cases agree with the loop reference "
             f"(worst {worst:.2e} <= 1e-10)")


# -- criterion 3: gradient suite --------------------------------------------

def _weighted(out, w):
    return T.sum_all(T.mul(out, as_tensor(w)))


def _block_case(block, call, shapes, seed, sample=3):
    rng = np.random.default_rng(seed)
    leaves = [leaf(f"x{i}", rng.standard_normal(s) * 0.5)
              for i, s in enumerate(shapes)]
    params = leaves + list(block.parameters())
    weights = rng.standard_normal(call(*leaves).shape)
    return param_grad_check(lambda: _weighted(call(*leaves), weights), params,
                            sample=sample, seed=seed + 1, rel_tol=1e-3, step=1e-6)


def test_criterion_3_gradient_suite():
    t0 = time.monotonic()
    rng = np.random.default_rng(3)
    worst = 0.0

    # pixel exchanges (function-level, both outputs weighted)
    for exchange in (row_exchange, column_exchange):
        x = leaf("x", rng.standard_normal((1, 2, 4, 4)))
        y = leaf("y", rng.standard_normal((1, 2, 4, 4)))
        wa, wb = rng.standard_normal((2, 1, 2, 4, 4))

        def loss(exchange=exchange, x=x, y=y, wa=wa, wb=wb):
            s, d = exchange(x, y)
            return T.add(_weighted(s, wa), _weighted(d, wb))

        worst = max(worst, param_grad_check(loss, [x, y], sample=6, seed=30))

    mk = lambda s: np.random.default_rng(s)
    worst = max(worst, _block_case(
        a := ParallelAttention("gab", 4, 2, mk(31), np.float64),
        lambda t: a(t), [(1, 4, 5, 5)], seed=32))
    worst = max(worst, _block_case(
        c := SerialAttention("cbam", 4, 2, mk(33), np.float64),
        lambda t: c(t), [(1, 4, 5, 5)], seed=34))
    worst = max(worst, _block_case(
        m := MultiScaleBlock("msa", 4, 2, 2, "gab", mk(35), np.float64),
        lambda t: m(t), [(1, 4, 7, 7)], seed=36))
    worst = max(worst, _block_case(
        s := DecoderStage("cmd", 2, 4, 2, 2, "gab", True, mk(37), np.float64),
        lambda a_, b_: s(a_, b_), [(1, 2, 4, 4), (1, 4, 2, 2)], seed=38))
    worst = max(worst, _block_case(
        f := FusionDecoder("fd", 2, 4, 8, mk(39), np.float64),
        lambda a_, b_, c_: f(a_, b_, c_),
        [(1, 2, 8, 8), (1, 4, 4, 4), (1, 8, 2, 2)], seed=40))
    worst = max(worst, _block_case(
        v := DiagonalScanBlock("vss", 2, 2, mk(41), np.float64),
        lambda t: v(t), [(1, 2, 3, 4)], seed=42, sample=2))
    enc = EncoderStub("enc", (2, 4, 8, 16), mk(43), np.float64)
    worst = max(worst, _block_case(
        enc, lambda t: enc(t)[3], [(1, 3, 32, 32)], seed=44, sample=2))

    # deep-supervision loss w.r.t. logits
    z = leaf("z", rng.standard_normal((2, 1, 6, 6)))
    gt = (rng.random((2, 1, 6, 6)) > 0.5).astype(np.float64)
    worst = max(worst, param_grad_check(lambda: seg_loss([z], gt), [z],
                                        sample=8, seed=45))

    # full model at 64x64 (reduced widths), every parameter probed
    cfg = ModelConfig(input_size=64, channels=(4, 8, 16, 32), state_size=2,
                      shuffle_groups=2, attention_reduction=2)
    model = CrossScanNet(cfg, seed=0, dtype=np.float64)
    params = list(model.parameters())
    x64 = rng.random((1, 3, 64, 64))
    g64 = (rng.random((1, 1, 64, 64)) > 0.5).astype(np.float64)
    worst = max(worst, param_grad_check(
        lambda: seg_loss(model(x64, train=True), g64), params,
        sample=2, seed=46, rel_tol=1e-3, step=1e-5))

    elapsed = time.monotonic() - t0
    assert elapsed < 600.0, f"gradient suite took {elapsed:.0f}s"
    assert worst < 1e-3
    _line(3, f"all blocks + full {cfg.input_size}x{cfg.input_size} model: "
             f"worst rel err {worst:.2e} < 1e-3 over {len(params)} params "
             f"({elapsed:.0f}s)")


# -- criterion 4: exact algebraic identities --------------------------------

def test_criterion_4_exact_algebra():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 6, 7))
    y = rng.standard_normal((2, 3, 6, 7))
    for exchange in (row_exchange, column_exchange):
        s, d = exchange(as_tensor(x), as_tensor(y))
        x2, y2 = exchange(s, d)
        np.testing.assert_array_equal(x2.data, x)
        np.testing.assert_array_equal(y2.data, y)

    attn = ParallelAttention("a", 4, 2, rng, np.float64)
    m = as_tensor(rng.standard_normal((2, 4, 5, 5)))
    out = attn.combine(as_tensor(np.ones((2, 4, 1, 1))),
                       as_tensor(np.ones((2, 1, 5, 5))), m)
    np.testing.assert_array_equal(out.data, 2.0 * m.data)

    fd = FusionDecoder("f", 2, 4, 8, rng, np.float64)
    d1 = rng.standard_normal((1, 2, 8, 8))
    passed = fd(as_tensor(d1), as_tensor(np.zeros((1, 4, 4, 4))),
                as_tensor(np.zeros((1, 8, 2, 2))))
    np.testing.assert_array_equal(passed.data, d1)

    z = rng.standard_normal((1, 6, 3, 3))
    np.testing.assert_array_equal(
        T.channel_shuffle(T.channel_shuffle(as_tensor(z), 2), 3).data, z)

    order = build_scan_order(5, 7, MAIN_DIAG_TR)
    seq = rng.standard_normal((2, 35, 3))
    back = T.gather_seq(T.gather_seq(as_tensor(seq), order.forward, order.inverse),
                        order.inverse, order.forward)
    np.testing.assert_array_equal(back.data, seq)
    _line(4, "exchange involutions, uniform-gate doubling, zero-deep "
             "passthrough, shuffle/gather inverses all bit-exact")


# -- criterion 5: metric oracles --------------------------------------------

def test_criterion_5_metric_oracles():
    pairs = random_pairs(100, seed=55, min_size=7, max_size=32)
    worst = worst_route_disagreement(pairs)
    assert worst <= 1e-8, f"routes disagree by {worst:.3e}"

    gt = np.zeros((10, 10)); gt[2:7, 3:9] = 1.0
    scores = evaluate_pair(gt.copy(), gt)
    assert all(scores[k] == pytest.approx(1.0, abs=1e-12)
               for k in ("mdice", "miou", "fbw", "s_alpha", "e_xi"))
    assert scores["mae"] == 0.0

    for pred, g in pairs[:20]:
        dice, iou = dice_iou(pred, g)
        if iou > 0:
            assert dice == pytest.approx(2 * iou / (1 + iou), rel=1e-12)
    _line(5, f"100 pairs, both routes within {worst:.2e} <= 1e-8; "
             f"perfect-score and dice/iou identities hold")


# -- criterion 6: desk-scale training reaches target ------------------------

def test_criterion_6_desk_training(desk_data, tmp_path):
    train_samples, test_samples = desk_data
    cfg = desk_config()
    train_cfg = dataclasses.replace(cfg.train, seed=1, max_steps=200)
    model = CrossScanNet(cfg.model, seed=train_cfg.seed)
    t0 = time.monotonic()
    out = train_loop(model, train_samples, test_samples, train_cfg,
                     cfg.augment, out_dir=tmp_path)
    elapsed = time.monotonic() - t0
    assert elapsed < 900.0, f"desk training took {elapsed:.0f}s"

    history = out["history"]
    best = out["best_val_mdice"]
    ratio = history[-1]["mean_loss"] / history[0]["mean_loss"]
    assert best >= 0.85, f"test-split mDice {best:.4f} < 0.85"
    assert ratio < 0.5, f"final/first loss ratio {ratio:.3f} >= 0.5"
    _line(6, f"desk recipe: test mDice {best:.4f} >= 0.85, "
             f"loss ratio {ratio:.3f} < 0.5 ({elapsed:.0f}s, {out['steps']} steps)")


# -- criterion 7: ablation ordering -----------------------------------------

def test_criterion_7_ablation_ordering(desk_data, tmp_path):
    train_samples, test_samples = desk_data
    desk = desk_config()
    variants = {
        "full": {},
        "no_cmd": {"use_cmd": False},
        "no_msa": {"use_msa": False},
        "no_fd": {"use_fd": False},
        "cbam": {"attention": "cbam"},
    }
    seeds = (0, 1, 2)
    results = {}
    t0 = time.monotonic()
    for name, tweaks in variants.items():
        for seed in seeds:
            mc = dataclasses.replace(desk.model, **tweaks)
            tc = dataclasses.replace(desk.train, epochs=5, seed=seed,
                                     max_steps=100)
            model = CrossScanNet(mc, seed=seed)
            out_dir = tmp_path / f"{name}_{seed}" if name == "full" else None
            out = train_loop(model, train_samples, test_samples, tc,
                             desk.augment, out_dir=out_dir)
            results[(name, seed)] = out["best_val_mdice"]

    # one complete train -> checkpoint -> eval cycle must run clean
    ckpt = tmp_path / "full_1" / CHECKPOINT_NAME
    reloaded, _meta = load_model(ckpt)
    preds = [predict_probs(reloaded, s.image[None])[0, 0] for s in test_samples]
    report = evaluate_dataset(preds, [s.mask for s in test_samples])
    assert all(np.isfinite(v) for v in report.means.values())

    wins = {}
    for abl in ("no_cmd", "no_msa", "no_fd", "cbam"):
        wins[abl] = sum(results[("full", s)] >= results[(abl, s)] for s in seeds)
        assert wins[abl] >= 2, (
            f"full beat {abl} in only {wins[abl]}/3 seeds: "
            + ", ".join(f"s{s} {results[('full', s)]:.3f} vs {results[(abl, s)]:.3f}"
                        for s in seeds))
    elapsed = time.monotonic() - t0
    summary = ", ".join(f">= {a} {w}/3" for a, w in wins.items())
    _line(7, f"100-step harness over seeds {seeds}: full {summary}; "
             f"eval cycle clean ({elapsed:.0f}s)")


# -- criterion 8: learning-rate schedule ------------------------------------

def test_criterion_8_lr_schedule():
    assert lr_at(0) == 1e-4
    assert lr_at(50) == 5e-5
    assert lr_at(100) == 2.5e-5
    _line(8, "halving schedule hits 1e-4 / 5e-5 / 2.5e-5 at epochs 0/50/100")


# -- criterion 9: bit-identical reruns --------------------------------------

def test_criterion_9_determinism(tmp_path, tiny_splits):
    train_samples, test_samples = tiny_splits
    cfg = ModelConfig(input_size=32, channels=(4, 8, 16, 32), state_size=2,
                      shuffle_groups=2, attention_reduction=2)
    tc = TrainConfig(epochs=2, batch_size=4, lr=1e-3, seed=3)
    ac = AugmentConfig(flip_prob=0.5, rotation_degrees=10.0, brightness=0.1,
                       contrast=0.1)
    artifacts = []
    for run in ("a", "b"):
        out_dir = tmp_path / run
        model = CrossScanNet(cfg, seed=tc.seed)
        train_loop(model, train_samples, test_samples, tc, ac, out_dir=out_dir)
        reloaded, _ = load_model(out_dir / CHECKPOINT_NAME)
        preds = [predict_probs(reloaded, s.image[None])[0, 0]
                 for s in test_samples]
        report = evaluate_dataset(preds, [s.mask for s in test_samples])
        artifacts.append(((out_dir / CHECKPOINT_NAME).read_bytes(),
                          report.to_json()))
    assert artifacts[0][0] == artifacts[1][0], "checkpoints differ between runs"
    assert artifacts[0][1] == artifacts[1][1], "metric reports differ between runs"
    _line(9, "re-running one seed+config reproduces checkpoint bytes and "
             "metric report exactly")
