import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stealthsim.control import sample_ball
from stealthsim.sensing import PerceptionMap, TanhError, perceive, perceive_attacked

CP_VEHICLE = [[0.0, 1.0, 0.0, 0.0]]


def test_perfect_perception_is_linear():
    pm = PerceptionMap.tanh(CP_VEHICLE, 0.0, 1.0)
    x = np.array([0.3, -0.7, 0.1, 2.0])
    assert np.array_equal(perceive(pm, x), [-0.7])


def test_error_vanishes_at_origin():
    pm = PerceptionMap.tanh(CP_VEHICLE, 0.05, 1.0, seed=3)
    assert np.array_equal(perceive(pm, np.zeros(4)), [0.0])


def test_vehicle_lateral_readout_within_gamma():
    pm = PerceptionMap.tanh(CP_VEHICLE, 0.01, 1.0, seed=1, depends_on=[1])
    out = perceive(pm, [0.0, 0.5, 0.0, 0.0])
    assert abs(out[0] - 0.5) <= 0.01


@pytest.mark.parametrize("p,n,seed", [(1, 2, 0), (1, 4, 1), (3, 5, 2), (2, 2, 9)])
def test_bound_on_safe_set(p, n, seed):
    rng = np.random.default_rng(seed)
    C_p = rng.standard_normal((p, n))
    gamma, R = 0.02, 1.5
    pm = PerceptionMap.tanh(C_p, gamma, R, seed=seed)
    X = sample_ball(rng, 1000, n, R)
    err = np.linalg.norm(perceive(pm, X) - X @ pm.C_p.T, axis=1)
    assert err.max() <= gamma
    # the scaling makes the bound nearly tight at the boundary
    Xb = X / np.linalg.norm(X, axis=1, keepdims=True) * R
    assert np.linalg.norm(pm.error_fn(Xb), axis=1).max() > 0.5 * gamma / np.sqrt(p)


@given(st.lists(st.floats(-1.0, 1.0), min_size=4, max_size=4))
@settings(max_examples=60, deadline=None)
def test_error_deterministic(xs):
    pm = PerceptionMap.tanh(CP_VEHICLE, 0.01, 1.0, seed=5)
    x = np.array(xs)
    assert np.array_equal(pm.error_fn(x), pm.error_fn(x.copy()))


def test_depends_on_restricts_error():
    pm = PerceptionMap.tanh(CP_VEHICLE, 0.01, 1.0, seed=2, depends_on=[1])
    a = perceive(pm, [0.0, 0.3, 0.0, 0.0])
    b = perceive(pm, [5.0, 0.3, -0.2, 1.0])
    assert np.array_equal(a, b)


def test_attacked_equals_plain_at_fake_state():
    pm = PerceptionMap.tanh(CP_VEHICLE, 0.01, 1.0, seed=7)
    x = np.array([0.1, 0.2, 0.05, 0.0])
    assert np.array_equal(perceive_attacked(pm, x), perceive(pm, x))
    pm0 = PerceptionMap.tanh(CP_VEHICLE, 0.0, 1.0)
    assert np.array_equal(perceive_attacked(pm0, [0.0, -0.3, 0.0, 0.0]), [-0.3])


def test_attacked_bound_on_safe_set():
    pm = PerceptionMap.tanh(CP_VEHICLE, 0.01, 1.0, seed=4)
    E = sample_ball(np.random.default_rng(0), 1000, 4, 1.0)
    assert np.abs(perceive_attacked(pm, E) - E @ pm.C_p.T).max() <= 0.01


def test_batched_shape():
    pm = PerceptionMap.tanh([[1.0, 0.0], [0.0, 1.0]], 0.01, 1.0)
    assert perceive(pm, np.zeros((7, 3, 2))).shape == (7, 3, 2)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        PerceptionMap.tanh(CP_VEHICLE, -0.1, 1.0)
    with pytest.raises(ValueError):
        PerceptionMap(C_p=CP_VEHICLE, gamma=0.1, safe_radius=0.0)
    with pytest.raises(ValueError):
        TanhError.build(1, 4, 0.1, 1.0, 0, depends_on=[])
