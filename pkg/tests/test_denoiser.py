import math

import numpy as np
import pytest

from diffret import numerics as nx
from diffret.denoiser import init_denoiser, predict_x0, sinusoidal_embedding, timestep_embed
from diffret.exceptions import ConfigError, ContractError, InputError
from diffret.numerics import SeededRng, Tensor

from conftest import grad_error

D, K = 4, 10


@pytest.fixture
def params():
    return init_denoiser(SeededRng(2), D, K)


def _relu(x):
    return np.maximum(x, 0)


def hand_predict(q, cands, x_k, k, p, direction="t2v", scaled=False):
    """The query-candidate attention denoiser written with explicit loops."""
    t = {n: v.value for n, v in p.tensors.items()}
    half = D // 2
    freqs = [10000 ** (-i / half) for i in range(half)]
    e = np.array([math.sin(k * f) for f in freqs] + [math.cos(k * f) for f in freqs])
    proj = _relu(e @ t["time.w1"] + t["time.b1"]) @ t["time.w2"] + t["time.b2"]
    Q = (q + proj) @ t[f"{direction}.q"]
    logits = []
    V = []
    for c in cands:
        logits.append(Q @ ((c + proj) @ t[f"{direction}.k"]))
        V.append((c + proj) @ t[f"{direction}.v"])
    logits = np.array(logits) / (math.sqrt(D) if scaled else 1.0) + x_k
    w = np.exp(logits - logits.max())
    w /= w.sum()
    E = sum(wi * vi for wi, vi in zip(w, V))
    out = []
    for c in cands:
        h = _relu(np.concatenate([c, E]) @ t[f"{direction}.dec_w1"] + t[f"{direction}.dec_b1"])
        out.append((h @ t[f"{direction}.dec_w2"] + t[f"{direction}.dec_b2"])[0])
    return np.array(out)


@pytest.mark.parametrize("direction", ["t2v", "v2t"])
@pytest.mark.parametrize("scaled", [False, True])
def test_matches_hand_computation(direction, scaled):
    p = init_denoiser(SeededRng(2), D, K, scaled_attention=scaled)
    rng = np.random.default_rng(0)
    q, cands, x_k = rng.normal(size=D), rng.normal(size=(5, D)), rng.normal(size=5)
    got = predict_x0(q, cands, x_k, 3, p, direction).value
    np.testing.assert_allclose(got, hand_predict(q, cands, x_k, 3, p, direction, scaled), atol=1e-12)


@pytest.mark.parametrize("n", [1, 7, 64])
def test_output_length(params, n):
    rng = np.random.default_rng(n)
    assert predict_x0(rng.normal(size=D), rng.normal(size=(n, D)), rng.normal(size=n), 5, params).shape == (n,)


def test_shift_invariance_in_x_k(params):
    rng = np.random.default_rng(1)
    q, cands, x_k = rng.normal(size=D), rng.normal(size=(6, D)), rng.normal(size=6)
    a = predict_x0(q, cands, x_k, 4, params).value
    b = predict_x0(q, cands, x_k + 3.7, 4, params).value
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_permutation_equivariance(params):
    rng = np.random.default_rng(2)
    q, cands, x_k = rng.normal(size=D), rng.normal(size=(5, D)), rng.normal(size=5)
    base = predict_x0(q, cands, x_k, 7, params).value
    for _ in range(10):
        perm = rng.permutation(5)
        out = predict_x0(q, cands[perm], x_k[perm], 7, params).value
        np.testing.assert_allclose(out, base[perm], atol=1e-9)


def test_batched_queries_match_single(params):
    rng = np.random.default_rng(3)
    qs, cands, x_k = rng.normal(size=(3, D)), rng.normal(size=(3, 5, D)), rng.normal(size=(3, 5))
    ks = np.array([1, 5, 10])
    batch = predict_x0(qs, cands, x_k, ks, params).value
    for i in range(3):
        np.testing.assert_allclose(batch[i], predict_x0(qs[i], cands[i], x_k[i], ks[i], params).value,
                                   atol=1e-12)


def test_timestep_embedding(params):
    a = timestep_embed(4, K, params).value
    np.testing.assert_array_equal(a, timestep_embed(4, K, params).value)
    e0, eK = timestep_embed(0, K, params).value, timestep_embed(K, K, params).value
    assert e0 @ eK / (np.linalg.norm(e0) * np.linalg.norm(eK)) < 0.999
    for k in (0, 3, 10):
        want = [math.sin(k * 10000 ** (-i / 2)) for i in range(2)] + \
               [math.cos(k * 10000 ** (-i / 2)) for i in range(2)]
        np.testing.assert_allclose(sinusoidal_embedding(k, D), want, atol=1e-15)
    with pytest.raises(ContractError):
        timestep_embed(K + 1, K, params)


def test_errors(params):
    with pytest.raises(InputError):
        predict_x0(np.ones(D), np.zeros((0, D)), np.zeros(0), 1, params)
    with pytest.raises(ContractError):
        predict_x0(np.ones(D), np.ones((2, D)), np.zeros(2), 0, params)
    one_way = init_denoiser(SeededRng(2), D, K, directions=("t2v",))
    with pytest.raises(ConfigError):
        predict_x0(np.ones(D), np.ones((2, D)), np.zeros(2), 1, one_way, "v2t")


def test_directions_have_separate_parameters(params):
    rng = np.random.default_rng(4)
    q, cands, x_k = rng.normal(size=D), rng.normal(size=(4, D)), rng.normal(size=4)
    assert not np.allclose(predict_x0(q, cands, x_k, 2, params, "t2v").value,
                           predict_x0(q, cands, x_k, 2, params, "v2t").value)


@pytest.mark.parametrize("seed", range(10))
def test_parameter_gradients(seed):
    p = init_denoiser(SeededRng(seed), D, K, hidden=6)
    rng = np.random.default_rng(seed)
    q, cands, x_k = rng.normal(size=(2, D)), rng.normal(size=(2, 4, D)), rng.normal(size=(2, 4))
    target = rng.normal(size=(2, 4))
    names = [n for n in p.tensors if not n.startswith("v2t")]
    arrays = {n: p.tensors[n].value.copy() for n in names}

    def build(ts):
        tensors = dict(p.tensors)
        tensors.update(ts)
        pp = type(p)(tensors, steps=p.steps, scaled_attention=p.scaled_attention)
        out = predict_x0(Tensor(q), Tensor(cands), x_k, np.array([2, 9]), pp, "t2v")
        return nx.tsum(nx.square(out - target))

    # small step so central differences do not straddle a relu kink
    assert grad_error(build, arrays, h=1e-5) < 1e-4
