"""Diagonal traversal orders and the selective-state-space recurrence."""
import numpy as np
import pytest

from crossseg import tensor as T
from crossseg.errors import ShapeError
from crossseg.reference import scan_reference
from crossseg.scan import (ANTI_DIAG_BR, ANTI_DIAG_TL, MAIN_DIAG_BL,
                           MAIN_DIAG_TR, SCAN_VARIANTS, DiagonalScanBlock,
                           ScanPath, build_scan_order, cross_scan,
                           selective_scan)
from crossseg.tensor import as_tensor

from conftest import leaf, param_grad_check


# -- traversal orders -------------------------------------------------------

def test_forced_2x3_orders():
    assert build_scan_order(2, 3, ANTI_DIAG_TL).forward.tolist() == [0, 1, 3, 2, 4, 5]
    assert build_scan_order(2, 3, MAIN_DIAG_TR).forward.tolist() == [2, 1, 5, 0, 4, 3]
    assert build_scan_order(2, 3, ANTI_DIAG_BR).forward.tolist() == [5, 4, 2, 3, 1, 0]
    assert build_scan_order(2, 3, MAIN_DIAG_BL).forward.tolist() == [3, 4, 0, 5, 1, 2]


def test_orders_are_bijective_and_paired():
    for h in range(1, 9):
        for w in range(1, 9):
            for variant in SCAN_VARIANTS:
                order = build_scan_order(h, w, variant)
                fwd = order.forward
                assert sorted(fwd.tolist()) == list(range(h * w))
                np.testing.assert_array_equal(order.inverse[fwd], np.arange(h * w))
            tl = build_scan_order(h, w, ANTI_DIAG_TL).forward
            br = build_scan_order(h, w, ANTI_DIAG_BR).forward
            np.testing.assert_array_equal(br, tl[::-1])
            tr = build_scan_order(h, w, MAIN_DIAG_TR).forward
            bl = build_scan_order(h, w, MAIN_DIAG_BL).forward
            np.testing.assert_array_equal(bl, tr[::-1])


def test_order_cache_returns_same_object():
    a = build_scan_order(5, 7, ANTI_DIAG_TL)
    b = build_scan_order(5, 7, ANTI_DIAG_TL)
    assert a is b


def test_order_argument_errors():
    with pytest.raises(ShapeError):
        build_scan_order(0, 3, ANTI_DIAG_TL)
    with pytest.raises(ShapeError):
        build_scan_order(2, 2, "zigzag")


# -- selective scan ---------------------------------------------------------

def _random_scan_case(rng, g=2, ell=5, ch=3, n=2):
    u = rng.standard_normal((g, ell, ch))
    delta = rng.uniform(0.01, 0.5, (g, ell, ch))
    a_log = rng.uniform(-1.0, 1.0, (ch, n))
    b = rng.standard_normal((g, ell, n))
    c = rng.standard_normal((g, ell, n))
    d = rng.standard_normal(ch)
    return u, delta, a_log, b, c, d


def test_recurrence_hand_oracle():
    # single channel, single state, two steps, worked by hand:
    # h1 = dt1*b1*u1; y1 = c1*h1 + d*u1
    # h2 = exp(-exp(a)*dt2)*h1 + dt2*b2*u2; y2 = c2*h2 + d*u2
    u = np.array([[[2.0], [-1.0]]])
    delta = np.array([[[0.3], [0.2]]])
    a_log = np.array([[0.5]])
    b = np.array([[[1.5], [0.7]]])
    c = np.array([[[0.9], [-1.1]]])
    d = np.array([0.25])
    h1 = 0.3 * 1.5 * 2.0
    y1 = 0.9 * h1 + 0.25 * 2.0
    h2 = np.exp(-np.exp(0.5) * 0.2) * h1 + 0.2 * 0.7 * -1.0
    y2 = -1.1 * h2 + 0.25 * -1.0
    out = selective_scan(*map(as_tensor, (u, delta, a_log, b, c, d)))
    np.testing.assert_allclose(out.data[0, :, 0], [y1, y2], rtol=1e-12)


def test_zero_timestep_reduces_to_skip():
    rng = np.random.default_rng(0)
    u, delta, a_log, b, c, d = _random_scan_case(rng)
    delta = np.zeros_like(delta)
    out = selective_scan(*map(as_tensor, (u, delta, a_log, b, c, d)))
    np.testing.assert_allclose(out.data, u * d[None, None, :], rtol=1e-12)


def test_selective_scan_matches_loop_reference():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(10):
        g = int(rng.integers(1, 4))
        ell = int(rng.integers(1, 40))
        ch = int(rng.integers(1, 6))
        n = int(rng.integers(1, 5))
        args = _random_scan_case(rng, g, ell, ch, n)
        got = selective_scan(*map(as_tensor, args)).data
        expect = scan_reference(*args)
        worst = max(worst, float(np.max(np.abs(got - expect))))
    assert worst <= 1e-12, worst


def test_unbatched_promotion():
    rng = np.random.default_rng(2)
    u, delta, a_log, b, c, d = _random_scan_case(rng, g=1)
    batched = selective_scan(*map(as_tensor, (u, delta, a_log, b, c, d))).data
    flat = selective_scan(as_tensor(u[0]), as_tensor(delta[0]), as_tensor(a_log),
                          as_tensor(b[0]), as_tensor(c[0]), as_tensor(d)).data
    np.testing.assert_array_equal(flat, batched[0])


def test_selective_scan_shape_errors():
    rng = np.random.default_rng(3)
    u, delta, a_log, b, c, d = _random_scan_case(rng)
    t = as_tensor
    with pytest.raises(ShapeError):
        selective_scan(t(u[0]), t(delta), t(a_log), t(b), t(c), t(d))   # mixed batching
    with pytest.raises(ShapeError):
        selective_scan(t(u), t(delta[:, :1]), t(a_log), t(b), t(c), t(d))
    with pytest.raises(ShapeError):
        selective_scan(t(u), t(delta), t(a_log[:1]), t(b), t(c), t(d))
    with pytest.raises(ShapeError):
        selective_scan(t(u), t(delta), t(a_log), t(b[..., :1]), t(c), t(d))
    with pytest.raises(ShapeError):
        selective_scan(t(u), t(delta), t(a_log), t(b), t(c), t(d[:1]))


def test_selective_scan_gradients():
    rng = np.random.default_rng(4)
    u, delta, a_log, b, c, d = _random_scan_case(rng, g=2, ell=4, ch=2, n=2)
    names = ("u", "delta", "a_log", "b", "c", "d")
    params = [leaf(n, a) for n, a in zip(names, (u, delta, a_log, b, c, d))]
    weights = rng.standard_normal(u.shape)
    param_grad_check(
        lambda: T.sum_all(T.mul(selective_scan(*params), as_tensor(weights))),
        params, sample=5, seed=5, rel_tol=1e-4, step=1e-6)


# -- scan path and block ----------------------------------------------------

def test_scan_path_shape_and_gradients():
    rng = np.random.default_rng(5)
    path = ScanPath("p", channels=4, state_size=2, variant=ANTI_DIAG_TL,
                    rng=rng, dtype=np.float64)
    x = leaf("x", rng.standard_normal((2, 4, 3, 5)) * 0.5)
    out = path(x)
    assert out.shape == (2, 4, 3, 5)
    params = [x] + list(path.parameters())
    weights = rng.standard_normal(out.shape)
    param_grad_check(
        lambda: T.sum_all(T.mul(path(x), as_tensor(weights))),
        params, sample=2, seed=6, rel_tol=1e-3, step=1e-6)


def test_cross_scan_sums_paths():
    rng = np.random.default_rng(6)
    paths = [ScanPath(f"p{i}", 2, 2, v, rng, np.float64)
             for i, v in enumerate(SCAN_VARIANTS)]
    x = as_tensor(rng.standard_normal((1, 2, 3, 3)))
    total = cross_scan(x, paths).data
    manual = sum(p(x).data for p in paths)
    np.testing.assert_allclose(total, manual, rtol=1e-12)


def test_diagonal_scan_block_residual_form():
    rng = np.random.default_rng(7)
    blk = DiagonalScanBlock("blk", channels=4, state_size=2, rng=rng, dtype=np.float64)
    x = rng.standard_normal((1, 4, 4, 6))
    out = blk(as_tensor(x))
    assert out.shape == (1, 4, 4, 6)
    # zeroing the output projection leaves only the residual branch
    blk.w_out.data = np.zeros_like(blk.w_out.data)
    np.testing.assert_array_equal(blk(as_tensor(x)).data, x)


def test_diagonal_scan_block_gradients():
    rng = np.random.default_rng(8)
    blk = DiagonalScanBlock("blk", channels=2, state_size=2, rng=rng, dtype=np.float64)
    x = leaf("x", rng.standard_normal((1, 2, 3, 4)) * 0.5)
    params = [x] + list(blk.parameters())
    weights = rng.standard_normal((1, 2, 3, 4))
    param_grad_check(
        lambda: T.sum_all(T.mul(blk(x), as_tensor(weights))),
        params, sample=2, seed=9, rel_tol=1e-3, step=1e-6)


def test_scan_block_determinism():
    x = np.random.default_rng(11).standard_normal((1, 4, 5, 5))
    outs = []
    for _ in range(2):
        blk = DiagonalScanBlock("blk", 4, 2, np.random.default_rng(3), np.float64)
        outs.append(blk(as_tensor(x)).data)
    np.testing.assert_array_equal(outs[0], outs[1])
