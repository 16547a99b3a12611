"""The finite-difference oracle, and every primitive checked against it."""

import numpy as np
import pytest

from moesumm.gradcheck import finite_diff_check
from moesumm.tensor import (Tensor, add, concat_last, embedding, exp,
                            gather_last, gelu, layernorm, log, log_softmax,
                            matmul, mean, mul, pow_int, relu, reshape,
                            scalar_mul, slice_last, softmax, sum_, transpose)


def test_linear_function_exact():
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    rep = finite_diff_check(lambda: sum_(x), [("x", x)])
    assert rep.passed
    assert rep.max_rel_err < 1e-9


def test_quadratic_analytic_six():
    x = Tensor(np.array([3.0]), requires_grad=True)
    rep = finite_diff_check(lambda: sum_(mul(x, x)), [("x", x)])
    assert rep.passed
    coord = rep.coords[0]
    assert abs(coord.analytic - 6.0) < 1e-12
    assert abs(coord.numeric - 6.0) < 1e-9


def test_invalid_h_rejected():
    x = Tensor([1.0], requires_grad=True)
    with pytest.raises(ValueError):
        finite_diff_check(lambda: sum_(x), [("x", x)], h=0.0)
    with pytest.raises(ValueError):
        finite_diff_check(lambda: sum_(x), [("x", x)], tol=-1.0)


def test_nonfinite_probe_reported_not_raised():
    # log goes non-finite when the probe pushes x across zero
    x = Tensor([1e-6], requires_grad=True)
    rep = finite_diff_check(lambda: sum_(log(x)), [("x", x)], h=1e-5)
    assert not rep.passed
    assert any(not c.finite for c in rep.coords)


def test_params_restored_bitwise():
    x = Tensor(np.array([0.1, 0.2, 0.3]), requires_grad=True)
    before = x.data.copy()
    finite_diff_check(lambda: sum_(mul(x, x)), [("x", x)])
    assert np.array_equal(x.data, before)
    assert x.data.dtype == np.float64


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_primitive_randomized(seed):
    """Composite graph touching each primitive, shapes up to 8x8."""
    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(size=(8, 8)), requires_grad=True)
    b = Tensor(rng.normal(size=8), requires_grad=True)
    g = Tensor(rng.uniform(0.5, 1.5, size=8), requires_grad=True)
    o = Tensor(rng.normal(size=8), requires_grad=True)
    table = Tensor(rng.normal(size=(5, 8)), requires_grad=True)
    ids = rng.integers(0, 5, size=(2, 4))
    gidx = rng.integers(0, 8, size=(2, 4))

    def f():
        h = embedding(table, ids)                      # [2, 4, 8]
        h = layernorm(matmul(h, w), g, o)
        h = add(h, b)
        h = gelu(h)
        h = add(relu(h), scalar_mul(h, 0.25))
        left = slice_last(h, 0, 3)
        right = slice_last(h, 3, 8)
        h = concat_last([left, right])
        h = transpose(reshape(h, (2, 4, 2, 4)), (0, 2, 1, 3))
        h = reshape(h, (2, 2, 16))
        sm = softmax(h)
        lsm = log_softmax(h)
        picked = gather_last(reshape(mul(sm, lsm), (2, 4, 8)), gidx)
        between = exp(scalar_mul(mean(h), 0.1))
        poly = sum_(pow_int(mean(sm, axis=-1), 3))
        return add(add(sum_(picked), between), poly)

    rep = finite_diff_check(
        f, [("w", w), ("b", b), ("g", g), ("o", o), ("table", table)])
    assert rep.passed, rep.worst
    assert rep.max_rel_err < 1e-4


def test_sampled_coordinates_cover_every_tensor():
    rng = np.random.default_rng(0)
    ts = [(f"t{i}", Tensor(rng.normal(size=(4, 4)), requires_grad=True))
          for i in range(3)]

    def f():
        return sum_(concat_last([mul(t, t) for _, t in ts]))

    rep = finite_diff_check(f, ts, max_coords_per_tensor=2)
    assert rep.passed
    assert {c.tensor for c in rep.coords} == {"t0", "t1", "t2"}
    assert len(rep.coords) == 6
