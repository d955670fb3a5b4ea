import math

import numpy as np
import pytest

from diffret.exceptions import ConfigError, ContractError
from diffret.numerics import SeededRng
from diffret.schedule import ddim_subsequence, forward_diffuse, make_schedule


def test_single_step_linear():
    s = make_schedule("linear", 1)
    assert s.betas[0] == pytest.approx(1e-4)
    assert s.alpha_bars[0] == pytest.approx(0.9999)


def test_cosine_matches_closed_form():
    s = make_schedule("cosine", 50)
    f = [math.cos(((k / 50) + 0.008) / 1.008 * math.pi / 2) ** 2 for k in range(51)]
    for k in range(1, 51):
        beta = min(1 - (f[k] / f[0]) / (f[k - 1] / f[0]), 0.999)
        assert s.betas[k - 1] == pytest.approx(beta, abs=1e-12)
    assert s.alpha_bar(50) < s.alpha_bar(25) < s.alpha_bar(1) < 1.0
    assert s.alpha_bar(0) == 1.0


@pytest.mark.parametrize("kind", ["linear", "cosine"])
@pytest.mark.parametrize("steps", [1, 10, 50, 1000])
def test_schedule_invariants(kind, steps):
    s = make_schedule(kind, steps)
    assert np.all((s.betas > 0) & (s.betas < 1))
    np.testing.assert_allclose(s.alphas, 1 - s.betas, atol=1e-12)
    np.testing.assert_allclose(s.alpha_bars, np.cumprod(1 - s.betas), atol=1e-12)
    if steps > 1:
        assert np.all(np.diff(s.alpha_bars) < 0)
        assert s.alpha_bar(steps) < s.alpha_bar(1)


def test_bad_schedule_config():
    with pytest.raises(ConfigError):
        make_schedule("cosine", 0)
    with pytest.raises(ConfigError):
        make_schedule("cosine", 10, signal_scale=0.0)
    with pytest.raises(ConfigError):
        make_schedule("sigmoid", 10)


def test_forward_diffuse_without_noise():
    s = make_schedule("cosine", 50)
    x0 = np.array([1.0, -1.0, -1.0])
    np.testing.assert_allclose(forward_diffuse(s, x0, 20, np.zeros(3)), np.sqrt(s.alpha_bar(20)) * x0)


def test_forward_diffuse_large_k_is_noise():
    s = make_schedule("linear", 1000)
    eps = SeededRng(0).normal(5)
    np.testing.assert_allclose(forward_diffuse(s, np.ones(5), 1000, eps), eps, atol=0.01)


def test_forward_diffuse_per_row_steps():
    s = make_schedule("cosine", 10)
    x0 = np.ones((2, 3))
    out = forward_diffuse(s, x0, np.array([1, 10]), np.zeros((2, 3)))
    np.testing.assert_allclose(out[0], np.sqrt(s.alpha_bar(1)))
    np.testing.assert_allclose(out[1], np.sqrt(s.alpha_bar(10)))


def test_forward_diffuse_range():
    s = make_schedule("cosine", 10)
    for k in (0, 11):
        with pytest.raises(ContractError):
            forward_diffuse(s, np.ones(2), k, np.zeros(2))


def iterate_chain(s, x0, k, rng):
    """Markov noising one step at a time."""
    x = np.broadcast_to(x0, (10_000, x0.size)).copy()
    for j in range(1, k + 1):
        beta = s.betas[j - 1]
        x = np.sqrt(1 - beta) * x + np.sqrt(beta) * rng.normal(x.shape)
    return x


@pytest.mark.parametrize("k", [1, 10, 25, 50])
def test_iterated_chain_matches_closed_form(k):
    s = make_schedule("cosine", 50)
    x0 = np.array([1.0, -1.0, -1.0, -1.0])
    it = iterate_chain(s, x0, k, SeededRng(1).child(k))
    shot = forward_diffuse(s, np.broadcast_to(x0, it.shape), k, SeededRng(2).child(k).normal(it.shape))
    assert np.max(np.abs(it.mean(0) - shot.mean(0))) < 0.05
    ratio = it.var(0) / shot.var(0)
    assert np.all((ratio > 0.9) & (ratio < 1.1))
    np.testing.assert_allclose(shot.var(0), 1 - s.alpha_bar(k), rtol=0.1)


def test_ddim_subsequence_examples():
    assert ddim_subsequence(50, 50) == list(range(50, 0, -1))
    assert ddim_subsequence(10, 1) == [10]
    sub = ddim_subsequence(50, 10)
    want = [int(math.floor(50 - i * 49 / 9 + 0.5)) for i in range(10)]
    assert sub == want
    assert sub[0] == 50 and sub[-1] == 1


@pytest.mark.parametrize("K", [1, 2, 7, 50, 100])
def test_ddim_subsequence_strictly_decreasing(K):
    for n in range(1, K + 1):
        sub = ddim_subsequence(K, n)
        assert len(sub) == n
        assert all(1 <= v <= K for v in sub)
        assert all(a > b for a, b in zip(sub, sub[1:]))


def test_ddim_subsequence_too_many_steps():
    with pytest.raises(ConfigError):
        ddim_subsequence(10, 11)
