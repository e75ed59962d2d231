import numpy as np
import pytest
from hypothesis import given, strategies as st

from kronattn import grad
from kronattn.attention import AttnConfig, OPERATORS, attn
from kronattn.grad import GradCheckReport, attn_backward, backward_attn, gradcheck, gradcheck_op, numerical_gradient
from kronattn.tensor import ShapeError
from kronattn.verify import GRAD_CASES, gradcheck_suite, random_config

BACKWARDS = {
    "regular": grad.backward_nonlocal_2d,
    "pooled": grad.backward_attn_pooled_2d,
    "kao_kv": grad.backward_kao_kv,
    "kao_qkv": grad.backward_kao_qkv,
}


def test_zero_upstream_gives_zero(rng):
    q, k, v = rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
    for g in backward_attn(q, k, v, np.zeros((3, 3))):
        np.testing.assert_array_equal(g, 0.0)
    for kind, bwd in BACKWARDS.items():
        t = rng.normal(size=(3, 3, 2))
        np.testing.assert_array_equal(bwd(t, np.zeros_like(t)), 0.0)


def test_single_key_kills_similarity_gradients(rng):
    q, k, v = rng.normal(size=(2, 3)), rng.normal(size=(2, 1)), rng.normal(size=(4, 1))
    up = rng.normal(size=(4, 3))
    dq, dk, dv = backward_attn(q, k, v, up)
    np.testing.assert_allclose(dq, 0.0, atol=1e-15)
    np.testing.assert_allclose(dk, 0.0, atol=1e-15)
    np.testing.assert_allclose(dv, up.sum(axis=1, keepdims=True))


@pytest.mark.parametrize("which", [0, 1, 2])
def test_attn_random_inputs(which, rng):
    args = [rng.normal(size=(3, 4)) for _ in range(3)]
    up = rng.normal(size=(3, 4))

    def fwd(z):
        a = list(args)
        a[which] = z
        return attn(*a)

    def bwd(z, g):
        a = list(args)
        a[which] = z
        return backward_attn(*a, g)[which]

    assert gradcheck_op(fwd, bwd, args[which], up).max_rel_error < 1e-6


@pytest.mark.parametrize("kind", sorted(OPERATORS))
def test_operator_gradients(kind, rng):
    t = rng.normal(size=(3, 3, 2))
    up = rng.normal(size=t.shape)
    report = gradcheck_op(OPERATORS[kind], BACKWARDS[kind], t, up)
    assert report.max_rel_error < 1e-6


@pytest.mark.parametrize("kind", sorted(OPERATORS))
def test_operator_gradients_constant_input(kind):
    t = np.full((3, 2, 2), 0.4)
    up = np.ones_like(t)
    assert gradcheck_op(OPERATORS[kind], BACKWARDS[kind], t, up).max_rel_error < 1e-6


@pytest.mark.parametrize("kind", sorted(OPERATORS))
def test_operator_weight_gradients(kind, rng):
    t = rng.normal(size=(3, 4, 2))
    cfg = random_config(rng, 2)
    up = rng.normal(size=t.shape)
    _, wgrads = grad.OPERATOR_GRADS[kind](t, up, cfg)
    for key in ("wq", "wk", "wv"):
        def with_w(z):
            return AttnConfig(**{"wq": cfg.wq, "wk": cfg.wk, "wv": cfg.wv, "coeff_norm": cfg.coeff_norm, key: z})
        report = gradcheck(lambda z: float(np.sum(up * OPERATORS[kind](t, with_w(z)))), getattr(cfg, key),
                           wgrads["d" + key])
        assert report.passed, (key, report)


def test_linear_function_exact(rng):
    a = rng.normal(size=(3, 4))
    report = gradcheck(lambda x: float(np.sum(a * x)), rng.normal(size=(3, 4)), a)
    assert report.max_rel_error < 1e-10


def test_wrong_gradient_detected(rng):
    args = [rng.normal(size=(2, 3)) for _ in range(3)]
    up = rng.normal(size=(2, 3))
    report = gradcheck_op(lambda z: attn(z, args[1], args[2]),
                          lambda z, g: 2 * backward_attn(z, args[1], args[2], g)[0], args[0], up)
    assert not report.passed
    assert isinstance(report, GradCheckReport)


def test_epsilon_range_enforced(rng):
    x = rng.normal(size=3)
    with pytest.raises(ValueError):
        gradcheck(lambda z: float(z.sum()), x, np.ones(3), epsilon=1e-9)
    with pytest.raises(ValueError):
        gradcheck(lambda z: float(z.sum()), x, np.ones(3), epsilon=1e-2)


def test_analytic_shape_checked(rng):
    with pytest.raises(ShapeError):
        gradcheck(lambda z: float(z.sum()), rng.normal(size=3), np.ones(4))


def test_upstream_shape_checked(rng):
    with pytest.raises(ShapeError):
        grad.backward_kao_kv(rng.normal(size=(3, 3, 2)), rng.normal(size=(3, 3, 3)))
    with pytest.raises(ShapeError):
        attn_backward(np.eye(2), np.eye(2), np.eye(2), np.zeros((3, 2)))


def test_numerical_gradient_quadratic():
    g = numerical_gradient(lambda x: float(np.sum(x ** 2)), np.array([1.0, -2.0]))
    np.testing.assert_allclose(g, [2.0, -4.0], atol=1e-8)


def test_suite_covers_everything():
    assert {"regular", "pooled", "kao_kv", "kao_qkv", "attn.wv", "softmax_columns"} <= set(GRAD_CASES)
    results = gradcheck_suite(seeds=2, seed=99)
    assert all(r.passed for r in results), [r for r in results if not r.passed]


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_adjoint_identities(h, w, c, seed):
    """<A x, y> == <x, A* y> for the linear primitives."""
    from kronattn import tensor as T

    r = np.random.default_rng(seed)
    x = r.normal(size=(h, w, c))
    y = r.normal(size=(c, w + h))
    assert np.sum(T.juxtapose_context(x) * y) == pytest.approx(np.sum(x * grad.juxtapose_context_backward(y, h, w)))
    yp = r.normal(size=(T.pooled_size(h), T.pooled_size(w), c))
    assert np.sum(T.avg_pool(x) * yp) == pytest.approx(np.sum(x * grad.avg_pool_backward(yp, h, w)))
    yu = r.normal(size=(c, h * w))
    assert np.sum(T.unfold_mode3(x) * yu) == pytest.approx(np.sum(x * grad.unfold_mode3_backward(yu, h, w)))
