import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffret import numerics as nx
from diffret.exceptions import ContractError, DimensionError, NumericError
from diffret.numerics import Adam, SeededRng, Tape, Tensor, gaussian

from conftest import grad_error

SEEDS = range(10)


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-9) * gap + x, x)


# each entry: name -> (input builder(rng), loss builder(tensors))
MASK = np.array([[True, True, False, True], [True, False, True, True], [False, True, True, True]])
OPS = {
    "add": (lambda r: {"a": r.normal(size=(3, 4)), "b": r.normal(size=(4,))},
            lambda t: nx.tsum(nx.square(t["a"] + t["b"]))),
    "sub": (lambda r: {"a": r.normal(size=(3, 1)), "b": r.normal(size=(3, 4))},
            lambda t: nx.tsum(nx.square(t["a"] - t["b"]))),
    "mul": (lambda r: {"a": r.normal(size=(2, 3)), "b": r.normal(size=(2, 3))},
            lambda t: nx.tsum(nx.tanh(t["a"] * t["b"]))),
    "div": (lambda r: {"a": r.normal(size=(2, 3)), "b": 1.5 + r.random((1, 3))},
            lambda t: nx.tsum(nx.tanh(t["a"] / t["b"]))),
    "neg": (lambda r: {"a": r.normal(size=(5,))}, lambda t: nx.tsum(nx.exp(-t["a"]))),
    "matmul": (lambda r: {"a": r.normal(size=(3, 4)), "b": r.normal(size=(4, 2))},
               lambda t: nx.tsum(nx.tanh(t["a"] @ t["b"]))),
    "matmul_batched": (lambda r: {"a": r.normal(size=(2, 3, 4)), "b": r.normal(size=(4, 2))},
                       lambda t: nx.tsum(nx.tanh(nx.matmul(t["a"], t["b"])))),
    "exp": (lambda r: {"a": r.normal(size=(4,))}, lambda t: nx.tsum(nx.exp(t["a"]))),
    "log": (lambda r: {"a": 0.5 + r.random(4)}, lambda t: nx.tsum(nx.square(nx.log(t["a"])))),
    "sqrt": (lambda r: {"a": 0.5 + r.random(4)}, lambda t: nx.tsum(nx.sqrt(t["a"]) * t["a"])),
    "square": (lambda r: {"a": r.normal(size=(4,))}, lambda t: nx.tsum(nx.square(t["a"]))),
    "relu": (lambda r: {"a": _away_from_zero(r, (6,))}, lambda t: nx.tsum(nx.square(nx.relu(t["a"])))),
    "tanh": (lambda r: {"a": r.normal(size=(6,))}, lambda t: nx.tsum(nx.tanh(t["a"]))),
    "clip": (lambda r: {"a": _away_from_zero(r, (6,)) + 0.0},
             lambda t: nx.tsum(nx.square(nx.clip(t["a"] * 1.0, -0.7, 0.7 + 1e-3)))),
    "mean": (lambda r: {"a": r.normal(size=(3, 4))}, lambda t: nx.tsum(nx.square(nx.mean(t["a"], axis=0)))),
    "amax": (lambda r: {"a": r.normal(size=(3, 4))},
             lambda t: nx.tsum(nx.square(nx.amax(t["a"], axis=1, mask=MASK)))),
    "softmax": (lambda r: {"a": r.normal(size=(3, 4)), "w": r.normal(size=(3, 4))},
                lambda t: nx.tsum(nx.softmax(t["a"], axis=1) * t["w"])),
    "softmax_masked": (lambda r: {"a": r.normal(size=(3, 4)), "w": r.normal(size=(3, 4))},
                       lambda t: nx.tsum(nx.softmax(t["a"], axis=1, mask=MASK) * t["w"])),
    "log_softmax": (lambda r: {"a": r.normal(size=(3, 4)), "w": r.normal(size=(3, 4))},
                    lambda t: nx.tsum(nx.log_softmax(t["a"], axis=0) * t["w"])),
    "log_softmax_masked": (lambda r: {"a": r.normal(size=(3, 4)), "w": r.normal(size=(3, 4))},
                           lambda t: nx.tsum(nx.log_softmax(t["a"], axis=1, mask=MASK) * t["w"])),
    "l2_normalize": (lambda r: {"a": r.normal(size=(3, 4)), "w": r.normal(size=(3, 4))},
                     lambda t: nx.tsum(nx.l2_normalize(t["a"]) * t["w"])),
    "reshape_swapaxes": (lambda r: {"a": r.normal(size=(2, 6))},
                         lambda t: nx.tsum(nx.tanh(nx.swapaxes(nx.reshape(t["a"], (2, 3, 2)), 0, 2))
                                           * np.arange(12.0).reshape(2, 3, 2))),
    "expand_broadcast": (lambda r: {"a": r.normal(size=(3,))},
                         lambda t: nx.tsum(nx.tanh(nx.broadcast_to(nx.expand_dims(t["a"], 0), (4, 3))
                                                   * np.arange(12.0).reshape(4, 3)))),
    "concat": (lambda r: {"a": r.normal(size=(2, 3)), "b": r.normal(size=(2, 2))},
               lambda t: nx.tsum(nx.tanh(nx.concat([t["a"], t["b"]], axis=1)) * np.arange(10.0).reshape(2, 5))),
    "getitem": (lambda r: {"a": r.normal(size=(4, 4))},
                lambda t: nx.tsum(nx.square(nx.getitem(t["a"], (np.array([0, 1, 1, 3]), np.array([2, 0, 0, 3])))))),
    "softmax_cross_entropy": (lambda r: {"a": r.normal(size=(4, 5))},
                              lambda t: -nx.mean(nx.getitem(nx.log_softmax(t["a"], axis=1),
                                                            (np.arange(4), np.array([0, 3, 1, 4]))))),
}


@pytest.mark.parametrize("op", sorted(OPS))
def test_op_gradients_match_central_differences(op):
    make, build = OPS[op]
    for seed in SEEDS:
        err = grad_error(build, make(np.random.default_rng(seed)))
        assert err < 1e-4, f"{op} seed {seed}: relative error {err:.2e}"


def test_matmul_identity_and_annihilator():
    m = np.random.default_rng(0).normal(size=(3, 5))
    np.testing.assert_array_equal((Tensor(np.eye(3)) @ Tensor(m)).value, m)
    assert np.all((Tensor(np.zeros((1, 5))) @ Tensor(m.T)).value == 0)


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    ref = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                ref[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(nx.matmul(a, b).value, ref, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        nx.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_softmax_examples():
    np.testing.assert_allclose(nx.softmax(np.zeros(3)).value, np.full(3, 1 / 3), atol=1e-15)
    c, a = 7.25, 0.4
    np.testing.assert_allclose(nx.softmax(np.array([c, c + a, c + 2 * a])).value,
                               nx.softmax(np.array([0, a, 2 * a])).value, atol=1e-12)
    e = np.exp([1.0, 2.0, 3.0])
    np.testing.assert_allclose(nx.softmax(np.array([1.0, 2.0, 3.0])).value, e / e.sum(), atol=1e-15)


def test_softmax_empty_axis():
    with pytest.raises(DimensionError):
        nx.softmax(np.zeros((2, 0)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(x, c):
    p = nx.softmax(x, axis=1).value
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(nx.softmax(x + c, axis=1).value, p, atol=1e-9)


def test_backward_sum_gives_ones():
    p = Tensor(np.random.default_rng(0).normal(size=(2, 3)), requires_grad=True)
    with Tape():
        g = nx.backward(nx.tsum(p), {"p": p})
    np.testing.assert_array_equal(g["p"], np.ones((2, 3)))


def test_backward_disconnected_parameter_is_zero():
    p = Tensor(np.ones(3), requires_grad=True)
    q = Tensor(np.ones(2), requires_grad=True)
    with Tape():
        g = nx.backward(nx.tsum(p * 2.0), {"p": p, "q": q})
    np.testing.assert_array_equal(g["q"], np.zeros(2))
    np.testing.assert_array_equal(g["p"], np.full(3, 2.0))


def test_backward_rejects_non_scalar():
    p = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        with pytest.raises(ContractError):
            nx.backward(p * 2.0, {"p": p})


def test_tape_is_topological():
    p = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        nx.tsum(nx.exp(p * 2.0) + p)
    for out, ins, _ in tape.entries:
        assert all(i is None or i < out for i in ins)


def test_non_finite_result_raises():
    with pytest.raises(NumericError):
        nx.exp(np.array([1000.0]))
    with pytest.raises(NumericError):
        nx.log(np.array([0.0]))


def test_no_tape_means_no_graph():
    p = Tensor(np.ones(3), requires_grad=True)
    out = nx.exp(p)
    assert out.node is None


# ---- Adam

def test_adam_zero_gradient_leaves_parameter():
    p = {"w": Tensor(np.array([1.0, -2.0]))}
    Adam(lr=0.1).step(p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"].value, [1.0, -2.0])


def test_adam_first_step_is_lr_times_sign():
    p = {"w": Tensor(np.array([1.0, 1.0, 1.0]))}
    g = np.array([0.3, -4.0, 1e-3])
    Adam(lr=0.01).step(p, {"w": g})
    np.testing.assert_allclose(p["w"].value, 1.0 - 0.01 * np.sign(g), atol=1e-7)


def test_adam_scalar_recursion_on_quadratic():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    p = {"x": Tensor(np.array([1.0]))}
    opt = Adam(lr, b1, b2, eps)
    x, m, v, traj = 1.0, 0.0, 0.0, []
    for t in range(1, 51):
        g = 2 * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        opt.step(p, {"x": 2 * p["x"].value})
        traj.append(x)
        assert p["x"].value[0] == pytest.approx(x, abs=1e-12)
    assert opt.t == 50
    # |x| shrinks step by step while the iterate approaches the minimum
    first_cross = next(i for i, v in enumerate(traj) if v <= 0) if any(v <= 0 for v in traj) else len(traj)
    assert all(abs(traj[i + 1]) < abs(traj[i]) for i in range(first_cross - 1))


def test_adam_checks_shapes_and_finiteness():
    p = {"w": Tensor(np.ones(3))}
    with pytest.raises(DimensionError):
        Adam().step(p, {"w": np.ones(2)})
    with pytest.raises(NumericError):
        Adam().step(p, {"w": np.array([1.0, np.nan, 0.0])})


# ---- random numbers

def test_gaussian_is_deterministic_per_seed():
    a = gaussian(SeededRng(5), (4, 3)).value
    b = gaussian(SeededRng(5), (4, 3)).value
    c = gaussian(SeededRng(6), (4, 3)).value
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_gaussian_moments():
    x = gaussian(SeededRng(11), 100_000).value
    assert abs(x.mean()) < 0.02
    assert 0.97 <= x.var() <= 1.03


def test_gaussian_zero_size():
    with pytest.raises(DimensionError):
        gaussian(SeededRng(0), (3, 0))


def test_child_streams_do_not_depend_on_parent_use():
    root = SeededRng(9)
    a = root.child("x").normal(4)
    root.normal(100)
    np.testing.assert_array_equal(root.child("x").normal(4), a)
    assert not np.array_equal(root.child("y").normal(4), a)


def test_rng_state_round_trip():
    r = SeededRng(2)
    r.normal(7)
    state = r.get_state()
    want = r.normal(5)
    other = SeededRng(2)
    other.set_state(state)
    np.testing.assert_array_equal(other.normal(5), want)
