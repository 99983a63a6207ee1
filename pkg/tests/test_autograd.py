import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from djlab.autograd import Tape, finite_diff_check, relative_error

PRIMITIVE_TOL = 1e-6
# a larger step than the model checks: primitives are smooth away from their kinks and the
# tighter tolerance is limited by roundoff on small gradient entries at h = 1e-5


def away_from_zero(rng, shape, margin=0.1):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def run(build, params, weights):
    """Scalar sum(build(...) * weights) and its tape gradients."""
    tape = Tape()
    P = {k: tape.param(v, k) for k, v in params.items()}
    out = build(tape, P)
    loss = out if out.shape == () else tape.sum(tape.mul(out, weights))
    return float(loss.value), tape.backward(loss)


def check(build, params, seed=0, h=1e-4):
    rng = np.random.default_rng(seed)
    tape = Tape()
    probe = build(tape, {k: tape.const(v) for k, v in params.items()})
    weights = away_from_zero(rng, probe.shape) if probe.shape != () else None
    _, grads = run(build, params, weights)
    errs = finite_diff_check(lambda p: run(build, p, weights)[0], params, grads, h)
    return max(errs.values())


shapes = st.tuples(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8))


@settings(max_examples=40, deadline=None)
@given(shapes, st.integers(0, 10_000))
def test_matmul(s, seed):
    rng = np.random.default_rng(seed)
    p = {"a": rng.standard_normal(s[:2]), "b": rng.standard_normal(s[1:])}
    assert check(lambda t, P: t.matmul(P["a"], P["b"]), p, seed) <= PRIMITIVE_TOL


@settings(max_examples=40, deadline=None)
@given(shapes, st.integers(0, 10_000))
def test_elementwise_binary(s, seed):
    rng = np.random.default_rng(seed)
    p = {"a": away_from_zero(rng, s[:2]), "b": rng.uniform(0.5, 2.0, s[:2]), "r": away_from_zero(rng, (1, s[1]))}
    assert check(lambda t, P: t.add(P["a"], P["r"]), p, seed) <= PRIMITIVE_TOL
    assert check(lambda t, P: t.sub(P["a"], P["b"]), p, seed) <= PRIMITIVE_TOL
    assert check(lambda t, P: t.mul(P["a"], P["r"]), p, seed) <= PRIMITIVE_TOL
    assert check(lambda t, P: t.div(P["a"], P["b"]), p, seed) <= PRIMITIVE_TOL
    assert check(lambda t, P: t.scale(t.transpose(P["a"]), -1.7), p, seed) <= PRIMITIVE_TOL


@settings(max_examples=40, deadline=None)
@given(shapes, st.integers(0, 10_000))
def test_elementwise_unary(s, seed):
    rng = np.random.default_rng(seed)
    p = {"a": away_from_zero(rng, s[:2])}
    assert check(lambda t, P: t.exp(P["a"]), p, seed) <= PRIMITIVE_TOL
    assert check(lambda t, P: t.tanh(P["a"]), p, seed) <= PRIMITIVE_TOL
    assert check(lambda t, P: t.relu(P["a"]), p, seed) <= PRIMITIVE_TOL


@settings(max_examples=40, deadline=None)
@given(shapes, st.integers(0, 10_000))
def test_masked_softmax_reductions(s, seed):
    rng = np.random.default_rng(seed)
    n = s[0]
    p = {"a": rng.standard_normal(s[:2]), "q": rng.standard_normal((n, n))}
    mask = rng.random(s[:2]) < 0.5
    assert check(lambda t, P: t.masked(P["a"], mask), p, seed) <= PRIMITIVE_TOL
    assert check(lambda t, P: t.softmax(P["a"]), p, seed) <= PRIMITIVE_TOL
    assert check(lambda t, P: t.trace(P["q"]), p, seed) <= PRIMITIVE_TOL
    assert check(lambda t, P: t.sum(P["a"]), p, seed) <= PRIMITIVE_TOL
    assert check(lambda t, P: t.frob2(P["a"]), p, seed) <= PRIMITIVE_TOL


@settings(max_examples=40, deadline=None)
@given(shapes, st.integers(0, 10_000))
def test_concat_column(s, seed):
    rng = np.random.default_rng(seed)
    p = {"a": rng.standard_normal(s[:2]), "b": rng.standard_normal((s[0], s[2]))}
    assert check(lambda t, P: t.concat([P["a"], P["b"], P["a"]], axis=1), p, seed) <= PRIMITIVE_TOL
    j = int(rng.integers(0, s[1]))
    assert check(lambda t, P: t.column(P["a"], j), p, seed) <= PRIMITIVE_TOL


@settings(max_examples=40, deadline=None)
@given(shapes, st.integers(0, 10_000), st.floats(0.1, 0.7))
def test_dropout_fixed_mask(s, seed, rate):
    rng = np.random.default_rng(seed)
    p = {"a": rng.standard_normal(s[:2])}
    # the mask is re-drawn from the same seed on every evaluation
    build = lambda t, P: t.dropout(P["a"], rate, np.random.default_rng(seed))
    assert check(build, p, seed) <= PRIMITIVE_TOL


@settings(max_examples=40, deadline=None)
@given(shapes, st.integers(0, 10_000))
def test_cross_entropy(s, seed):
    rng = np.random.default_rng(seed)
    n, C = s[0], s[1] + 1
    targets = rng.integers(0, C, n)
    mask = rng.random(n) < 0.6
    mask[0] = True
    p = {"z": 2 * rng.standard_normal((n, C))}
    assert check(lambda t, P: t.cross_entropy(P["z"], targets, mask), p, seed) <= PRIMITIVE_TOL


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(1, 4), st.integers(0, 10_000), st.booleans())
def test_pairwise_dist(n, p_, seed, squared):
    rng = np.random.default_rng(seed)
    # keep rows apart: the distance is not differentiable where two rows meet
    p = {"u": np.arange(n)[:, None] * 0.5 + 0.2 * rng.standard_normal((n, p_))}
    assert check(lambda t, P: t.pairwise_dist(P["u"], squared=squared), p, seed) <= PRIMITIVE_TOL


# -- backward semantics ----------------------------------------------------------------

def test_trace_quadratic_gradient():
    W = np.random.default_rng(0).standard_normal((4, 3))
    tape = Tape()
    w = tape.param(W, "W")
    g = tape.backward(tape.trace(tape.matmul(tape.transpose(w), w)))
    assert np.allclose(g["W"], 2 * W, atol=1e-14)


def test_softmax_ce_closed_form():
    tape = Tape()
    z = tape.param(np.zeros((1, 2)), "z")
    g = tape.backward(tape.cross_entropy(z, np.array([0])))
    assert np.allclose(g["z"], [[-0.5, 0.5]], atol=1e-15)


def test_unreachable_leaf_gets_zero():
    tape = Tape()
    a = tape.param(np.ones((2, 2)), "a")
    b = tape.param(np.ones((3,)), "b")
    g = tape.backward(tape.sum(a))
    assert np.array_equal(g["b"], np.zeros(3))


def test_nonscalar_loss_rejected():
    tape = Tape()
    a = tape.param(np.ones((2, 2)), "a")
    with pytest.raises(ValueError):
        tape.backward(a)


def test_relu_subgradient_at_zero():
    tape = Tape()
    a = tape.param(np.array([[-1.0, 0.0, 2.0]]), "a")
    g = tape.backward(tape.sum(tape.relu(a)))
    assert np.array_equal(g["a"], [[0.0, 0.0, 1.0]])


def test_pairwise_dist_zero_distance_gradient():
    tape = Tape()
    u = tape.param(np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]]), "u")
    g = tape.backward(tape.sum(tape.pairwise_dist(u)))
    assert np.all(np.isfinite(g["u"]))


def test_dropout_zero_is_identity():
    x = np.arange(6.0).reshape(2, 3)
    tape = Tape()
    assert np.array_equal(tape.dropout(tape.const(x), 0.0, np.random.default_rng(1)).value, x)
    assert np.array_equal(tape.dropout(tape.const(x), 0.5, None).value, x)


def test_replay_is_bit_identical():
    def once():
        rng = np.random.default_rng(3)
        X = rng.standard_normal((5, 4))
        tape = Tape()
        w = tape.param(np.ones((4, 2)), "w")
        h = tape.dropout(tape.matmul(X, w), 0.3, np.random.default_rng(9))
        return tape.backward(tape.frob2(tape.tanh(h)))["w"]

    assert np.array_equal(once(), once())


def test_cross_entropy_empty_mask():
    tape = Tape()
    with pytest.raises(ValueError):
        tape.cross_entropy(tape.const(np.zeros((2, 2))), np.array([0, 1]), np.zeros(2, bool))


# -- the checker itself -------------------------------------------------------------------

def test_linear_function_exact():
    c = np.random.default_rng(2).standard_normal((3, 4))
    x = {"x": np.random.default_rng(3).standard_normal((3, 4))}
    errs = finite_diff_check(lambda p: float(np.sum(c * p["x"])), x, {"x": c})
    assert max(errs.values()) <= 1e-10


def test_checker_reports_wrong_gradient():
    x = {"x": np.ones(3)}
    errs = finite_diff_check(lambda p: float(np.sum(p["x"] ** 2)), x, {"x": np.ones(3)})
    assert errs["x"] == pytest.approx(0.5, abs=1e-8)


def test_checker_nan():
    with pytest.raises(FloatingPointError):
        finite_diff_check(lambda p: float("nan"), {"x": np.ones(1)}, {"x": np.ones(1)})


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-12]))[0] == pytest.approx(1e-4)
