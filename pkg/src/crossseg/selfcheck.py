"""Release-gate oracle suites runnable from the command line.

Each suite re-derives expected behavior from an independent route (loop
references, finite differences, exact algebra) and reports pass/fail; the
whole battery runs in well under a minute on a laptop CPU.
"""

import time

import numpy as np

from . import tensor as T
from .blocks import (CrossScanNet, FusionDecoder, MultiScaleBlock,
                     ParallelAttention, column_exchange, row_exchange)
from .config import ModelConfig
from .metrics import dice_iou, e_measure, evaluate_pair, s_measure, weighted_fbeta
from .reference import (compare_grads, e_measure_reference,
                        finite_difference_grads, s_measure_reference,
                        scan_reference, weighted_fbeta_reference)
from .scan import SCAN_VARIANTS, build_scan_order, selective_scan
from .train import seg_loss


def _check_scan_bijectivity(inject_fault=None):
    for h in range(1, 17):
        for w in range(1, 17):
            orders = {v: build_scan_order(h, w, v) for v in SCAN_VARIANTS}
            for variant, order in orders.items():
                forward = order.forward.copy()
                if inject_fault == "scan" and (h, w) == (4, 5) and forward.size > 1:
                    forward[0], forward[1] = forward[1], forward[0]
                if sorted(forward.tolist()) != list(range(h * w)):
                    return False, f"{variant} {h}x{w}: forward is not a permutation"
                if not np.array_equal(order.inverse[forward], np.arange(h * w)):
                    return False, f"{variant} {h}x{w}: inverse does not undo forward"
            for a, b in ((SCAN_VARIANTS[0], SCAN_VARIANTS[2]), (SCAN_VARIANTS[1], SCAN_VARIANTS[3])):
                if not np.array_equal(orders[a].forward[::-1], orders[b].forward):
                    return False, f"{h}x{w}: {b} is not the reversal of {a}"
    return True, "all orders bijective for H,W in 1..16"


def _check_selective_scan_oracle(inject_fault=None):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        length = int(rng.integers(1, 65))
        channels = int(rng.integers(1, 9))
        state = int(rng.integers(1, 9))
        u = rng.normal(0, 1, (1, length, channels))
        delta = rng.uniform(0.01, 0.4, (1, length, channels))
        a_log = rng.uniform(-2, 1, (channels, state))
        b = rng.normal(0, 1, (1, length, state))
        c = rng.normal(0, 1, (1, length, state))
        d = rng.normal(0, 1, channels)
        got = selective_scan(T.as_tensor(u), T.as_tensor(delta), T.as_tensor(a_log),
                             T.as_tensor(b), T.as_tensor(c), T.as_tensor(d)).data
        want = scan_reference(u, delta, a_log, b, c, d)
        worst = max(worst, float(np.max(np.abs(got - want))))
    ok = worst <= 1e-10
    return ok, f"worst |scan - reference| = {worst:.2e} over 20 cases (tol 1e-10)"


def _grad_case(block, arrays, apply_fn, sample, rng):
    params = list(block.parameters()) if hasattr(block, "parameters") else list(block)
    tensors = [T.Parameter(f"x{i}", a, dtype=np.float64) for i, a in enumerate(arrays)]
    with T.record() as tape:
        loss = T.sum_all(apply_fn(*tensors))
        grads = tape.backward(loss, list(tensors) + params)

    def loss_at(*probe):
        saved = [p.data.copy() for p in params]
        for p, a in zip(params, probe[len(arrays):]):
            p.data = a
        with T.record():
            value = T.sum_all(apply_fn(*[T.as_tensor(a) for a in probe[:len(arrays)]])).item()
        for p, s in zip(params, saved):
            p.data = s
        return value

    probes = [t.data for t in tensors] + [p.data for p in params]
    numeric = finite_difference_grads(loss_at, probes, sample=sample, rng=rng)
    worst = 0.0
    for holder, num in zip(list(tensors) + params, numeric):
        worst = max(worst, compare_grads(grads[holder.name], num))
    return worst


def _check_gradients(inject_fault=None):
    rng = np.random.default_rng(3)
    worst = 0.0
    gab = ParallelAttention("gab", 4, 2, rng, np.float64)
    worst = max(worst, _grad_case(gab, [rng.normal(0, 1, (1, 4, 6, 6))],
                                  lambda x: gab(x), 30, rng))
    msa = MultiScaleBlock("msa", 4, 2, 2, "gab", rng, np.float64)
    worst = max(worst, _grad_case(msa, [rng.normal(0, 1, (1, 4, 6, 6))],
                                  lambda x: msa(x), 30, rng))
    fd = FusionDecoder("fd", 2, 3, 4, rng, np.float64)
    worst = max(worst, _grad_case(
        fd,
        [rng.normal(0, 1, (1, 2, 8, 8)), rng.normal(0, 1, (1, 3, 4, 4)),
         rng.normal(0, 1, (1, 4, 2, 2))],
        lambda a, b, c: fd(a, b, c), 30, rng))
    gt = (rng.random((1, 1, 8, 8)) < 0.5).astype(float)
    worst = max(worst, _grad_case(
        [], [rng.normal(0, 1, (1, 1, 8, 8))],
        lambda z: seg_loss([z], gt), 40, rng))
    ok = worst < 1e-3
    return ok, f"worst finite-difference rel err = {worst:.2e} (tol 1e-3)"


def _check_metric_oracles(inject_fault=None):
    rng = np.random.default_rng(11)
    worst = 0.0
    for i in range(30):
        gt = (rng.random((16, 16)) < rng.uniform(0.1, 0.9)).astype(float)
        pred = rng.random((16, 16)) if i % 2 else np.clip(gt + rng.normal(0, 0.3, gt.shape), 0, 1)
        worst = max(worst, abs(weighted_fbeta(pred, gt) - weighted_fbeta_reference(pred, gt)))
        worst = max(worst, abs(s_measure(pred, gt) - s_measure_reference(pred, gt)))
        worst = max(worst, abs(e_measure(pred, gt) - e_measure_reference(pred, gt)))
        dice, iou = dice_iou(pred, gt)
        if abs(dice - 2 * iou / (1 + iou)) > 1e-12:
            return False, "dice does not equal 2*iou/(1+iou)"
    gt = np.zeros((16, 16))
    gt[4:12, 5:13] = 1
    scores = evaluate_pair(gt.copy(), gt)
    perfect = all(abs(scores[k] - 1) < 1e-9 for k in ("mdice", "miou", "fbw", "s_alpha", "e_xi"))
    if not (perfect and scores["mae"] == 0):
        return False, f"perfect prediction scored {scores}"
    ok = worst <= 1e-8
    return ok, f"worst |metric - reference| = {worst:.2e} over 30 pairs (tol 1e-8)"


def _check_exact_algebra(inject_fault=None):
    rng = np.random.default_rng(5)
    a = T.as_tensor(rng.normal(0, 1, (1, 3, 4, 6)))
    b = T.as_tensor(rng.normal(0, 1, (1, 3, 4, 6)))
    for exchange in (row_exchange, column_exchange):
        e1, e2 = exchange(a, b)
        r1, r2 = exchange(e1, e2)
        if not (np.array_equal(r1.data, a.data) and np.array_equal(r2.data, b.data)):
            return False, f"{exchange.__name__} is not an involution"
    gab = ParallelAttention("gab", 3, 1, rng, np.float64)
    m = T.as_tensor(rng.normal(0, 1, (2, 3, 5, 5)))
    ones_c = T.as_tensor(np.ones((2, 3, 1, 1)))
    ones_s = T.as_tensor(np.ones((2, 1, 5, 5)))
    out = gab.combine(ones_c, ones_s, m)
    if not np.allclose(out.data, 2 * m.data, atol=1e-12):
        return False, "uniform attention weights do not double the input"
    fd = FusionDecoder("fd", 2, 3, 4, rng, np.float64)
    d1 = T.as_tensor(rng.normal(0, 1, (1, 2, 8, 8)))
    z2 = T.as_tensor(np.zeros((1, 3, 4, 4)))
    z3 = T.as_tensor(np.zeros((1, 4, 2, 2)))
    if not np.array_equal(fd(d1, z2, z3).data, d1.data):
        return False, "zero deep features do not pass the shallow map through"
    return True, "exchange involution, doubled-output attention, zero passthrough all exact"


SUITES = (
    ("scan_bijectivity", _check_scan_bijectivity),
    ("selective_scan_oracle", _check_selective_scan_oracle),
    ("gradient_checks", _check_gradients),
    ("metric_oracles", _check_metric_oracles),
    ("exact_algebra", _check_exact_algebra),
)


def run_selfcheck(inject_fault=None) -> list:
    """Run every suite; returns [(name, passed, detail, seconds)]."""
    results = []
    for name, fn in SUITES:
        start = time.time()
        try:
            ok, detail = fn(inject_fault=inject_fault)
        except Exception as exc:  # a crashed suite is a failed suite
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail, time.time() - start))
    return results


def format_report(results) -> str:
    width = max(len(name) for name, *_ in results)
    lines = []
    for name, ok, detail, seconds in results:
        status = "PASS" if ok else "FAIL"
        lines.append(f"{name:<{width}}  {status}  {seconds:6.2f}s  {detail}")
    total = sum(s for *_, s in results)
    failed = sum(1 for _, ok, *_ in results if not ok)
    lines.append(f"{len(results)} suites, {failed} failed, {total:.2f}s total")
    return "\n".join(lines)
