"""The numba and numpy kernel variants must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from mdelm import _kernels as K
from mdelm.elm import one_hot_targets
from mdelm.press import build_press

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")


def test_rbf_agree():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 7))
    C = rng.normal(size=(25, 7))
    a = K.nb_rbf_activations(X, C, 1.3)
    b = K.np_rbf_activations(X, C, 1.3)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


def press_fixture(seed=0, n=60, D=12, C=4):
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(n, D))
    labels = rng.integers(0, C, n)
    return build_press(H, one_hot_targets(labels, C), 1.0), labels, rng


def test_flip_delta_agree():
    s, labels, rng = press_fixture()
    idx = np.array([3, 40])
    delta = np.array([[1.0, -1.0, 0, 0], [0, 0, -1.0, 1.0]])
    E = np.ascontiguousarray(s.press_residuals())
    a = K.nb_flip_delta_sse(E, s.inv_gap, s.hat_rows(idx), idx, delta)
    b = K.np_flip_delta_sse(E, s.inv_gap, s.hat_rows(idx), idx, delta)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_trial_block_agree(k):
    s, labels, rng = press_fixture(1)
    m = 500
    idx = np.stack([rng.choice(60, k, replace=False) for _ in range(m)]).astype(np.int64)
    new = ((labels[idx] + rng.integers(1, 4, size=idx.shape)) % 4).astype(np.int64)
    is_art = np.zeros(60, bool)
    is_art[:5] = True
    E = np.ascontiguousarray(s.press_residuals())
    out = []
    for fn in (K.nb_trial_block, K.np_trial_block):
        scores = np.zeros(60, dtype=np.int64)
        res = fn(E, s.inv_gap, s.hat, labels.astype(np.int64), idx, new, is_art, scores, 0, 1e18)
        out.append((res, scores))
    assert out[0][0] == out[1][0]
    assert np.array_equal(out[0][1], out[1][1])


def test_trial_block_identity_never_accepted():
    s, labels, _ = press_fixture(2)
    idx = np.array([[0, 1]], dtype=np.int64)
    new = labels[idx].astype(np.int64)
    scores = np.zeros(60, dtype=np.int64)
    E = np.ascontiguousarray(s.press_residuals())
    done, acc, _ = K.nb_trial_block(E, s.inv_gap, s.hat, labels.astype(np.int64), idx, new,
                                    np.zeros(60, bool), scores, 0, 1e18)
    assert (done, acc) == (1, 0)


def test_sgd_epoch_agree():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(80, 6))
    y = rng.integers(0, 3, 80).astype(np.int64)
    sw = rng.uniform(0.5, 2, 80)
    order = rng.permutation(80).astype(np.int64)
    states = []
    for fn in (K.nb_sgd_epoch, K.np_sgd_epoch):
        W, b, q = np.zeros((3, 6)), np.zeros(3), np.zeros((3, 6))
        t, u = 0.0, 0.0
        for _ in range(3):
            t, u = fn(X, y, sw, order, W, b, q, t, u, 0.05, 0.5, 0.01)
        states.append((W, b, q, t, u))
    a, b_ = states
    assert np.allclose(a[0], b_[0], rtol=1e-10, atol=1e-12)
    assert np.array_equal(a[0] == 0, b_[0] == 0)
    assert np.allclose(a[1], b_[1], rtol=1e-10, atol=1e-12)
    assert a[3:] == pytest.approx(b_[3:])


def test_env_flag_selects_numpy():
    code = "from mdelm import _kernels as K; print(K.backend())"
    env = dict(os.environ, MDELM_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
    env["MDELM_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numba"
