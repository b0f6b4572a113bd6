import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from talc.errors import ConfigError
from talc.numerics import Rng
from talc.schedule import (
    add_noise, ancestral_step, from_step_variances, make_schedule, respace, strided_timesteps,
)


def cumulative_alpha_oracle(T, lo, hi):
    prod, out = 1.0, []
    for i in range(T):
        var = lo + (hi - lo) * i / (T - 1) if T > 1 else lo
        prod *= 1.0 - var
        out.append(math.sqrt(prod))
    return out


def test_single_step_closed_form():
    s = make_schedule(1, 0.3, 0.3)
    assert s.signal(1) == pytest.approx(math.sqrt(0.7), abs=1e-15)


def test_default_schedule_reaches_noise():
    s = make_schedule(1000, 1e-4, 2e-2)
    oracle = cumulative_alpha_oracle(1000, 1e-4, 2e-2)
    np.testing.assert_allclose(s.alpha, oracle, rtol=1e-10)
    assert s.signal(1000) < 0.1
    assert s.signal(1) == pytest.approx(1.0, abs=1e-4)


def test_variance_preserving_and_monotone():
    s = make_schedule(1000)
    assert np.max(np.abs(s.alpha**2 + s.beta**2 - 1.0)) < 1e-12
    assert (np.diff(s.alpha) < 0).all() and (np.diff(s.beta) > 0).all()
    assert (np.diff(s.snr()) < 0).all()


@pytest.mark.parametrize("args", [(0, 1e-4, 2e-2), (10, 0.0, 0.1), (10, 0.2, 0.1), (10, 0.1, 1.0)])
def test_invalid_bounds(args):
    with pytest.raises(ConfigError):
        make_schedule(*args)


def test_add_noise_cases():
    rng = Rng(1)
    clean = from_step_variances([0.0, 0.5])
    z, eps = rng.normal((2, 3, 4, 4)), rng.normal((2, 3, 4, 4))
    np.testing.assert_array_equal(add_noise(z, 1, eps, clean), z)
    s = make_schedule(50)
    np.testing.assert_array_equal(add_noise(np.zeros_like(z), 7, eps, s), s.noise(7) * eps)
    tau = 31
    oracle = np.empty_like(z)
    for idx in np.ndindex(z.shape):
        oracle[idx] = s.alpha[tau - 1] * z[idx] + s.beta[tau - 1] * eps[idx]
    np.testing.assert_allclose(add_noise(z, tau, eps, s), oracle, atol=1e-12, rtol=0)


def test_tau_out_of_range():
    s = make_schedule(10)
    with pytest.raises(IndexError):
        add_noise(np.zeros(2), 0, np.zeros(2), s)
    with pytest.raises(IndexError):
        ancestral_step(np.zeros(2), np.zeros(2), 11, s)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 1000), st.integers(0, 2**32 - 1))
def test_round_trip(tau, seed):
    s = make_schedule(1000)
    rng = Rng(seed)
    z, eps = rng.normal((3, 5)), rng.normal((3, 5))
    back = (add_noise(z, tau, eps, s) - s.noise(tau) * eps) / s.signal(tau)
    assert np.max(np.abs(back - z)) < 1e-10


def test_final_step_is_deterministic_and_inverts():
    s = make_schedule(1, 0.2, 0.2)
    rng = Rng(2)
    z0, eps = rng.normal((4, 4)), rng.normal((4, 4))
    zt = add_noise(z0, 1, eps, s)
    a = ancestral_step(zt, eps, 1, s, Rng(9))
    b = ancestral_step(zt, eps, 1, s, Rng(10))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a, (zt - s.noise(1) * eps) / s.signal(1), atol=1e-14)
    np.testing.assert_allclose(a, z0, atol=1e-12)


def test_ten_step_chain_with_oracle_noise_recovers_clean():
    s = make_schedule(10, 1e-2, 0.2)
    rng = Rng(3)
    z0 = rng.normal((2, 3, 4, 4))
    z = add_noise(z0, 10, rng.normal(z0.shape), s)
    for tau in range(10, 0, -1):
        eps_oracle = (z - s.signal(tau) * z0) / s.noise(tau)
        z = ancestral_step(z, eps_oracle, tau, s, rng)
    assert np.max(np.abs(z - z0)) < 1e-8


def test_zero_prediction_is_rescaling():
    s = make_schedule(100)
    z = Rng(4).normal((3, 3))
    out = ancestral_step(z, np.zeros_like(z), 50, s, noise=np.zeros_like(z))
    ratio = out / z
    assert np.allclose(ratio, ratio.flat[0]) and ratio.flat[0] > 0


def test_strided_timesteps():
    ts = strided_timesteps(1000, 100)
    assert ts[0] == 1 and ts[-1] == 1000 and len(ts) == 100
    assert (np.diff(ts) > 0).all()
    assert strided_timesteps(10, 50).tolist() == list(range(1, 11))


def test_respace_preserves_signal_levels():
    s = make_schedule(1000)
    r = respace(s, 100)
    np.testing.assert_allclose(r.alpha, s.alpha[r.timesteps - 1], rtol=1e-12)
    assert r.num_steps == 100
    full = respace(s, 1000)
    np.testing.assert_allclose(full.alpha, s.alpha, rtol=1e-12)


def test_clip_bounds_clean_estimate():
    s = make_schedule(100)
    rng = Rng(6)
    z, eps = rng.normal((3, 4, 4)) * 3, rng.normal((3, 4, 4))
    out = ancestral_step(z, eps, 1, s, clip=1.0)
    assert np.max(np.abs(out)) <= 1.0
    np.testing.assert_array_equal(out, np.clip(ancestral_step(z, eps, 1, s), -1, 1))
    free = ancestral_step(z * 0.1, eps * 0, 30, s, noise=np.zeros_like(z), clip=10.0)
    np.testing.assert_array_equal(free, ancestral_step(z * 0.1, eps * 0, 30, s, noise=np.zeros_like(z)))
