"""Both kernel paths must agree: exactly for integer data, tightly for floats."""

import numpy as np
import pytest

from cipher_vit import backend, kernels


@pytest.fixture
def rng():
    return np.random.default_rng(99)


def both_paths(fn):
    """Run fn once per backend path; returns (numpy_result, numba_result)."""
    prev = backend.set_numba_enabled(False)
    try:
        plain = fn()
    finally:
        backend.set_numba_enabled(prev)
    if not backend.HAVE_NUMBA:
        pytest.skip("numba not installed")
    prev = backend.set_numba_enabled(True)
    try:
        jitted = fn()
    finally:
        backend.set_numba_enabled(prev)
    return plain, jitted


def test_gelu_paths_agree(rng):
    x = rng.standard_normal((64, 32))
    g = rng.standard_normal((64, 32))
    (y0, d0), (y1, d1) = both_paths(lambda: (kernels.gelu_forward(x.copy()),
                                             kernels.gelu_backward(x.copy(), g.copy())))
    np.testing.assert_allclose(y0, y1, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(d0, d1, rtol=1e-12, atol=1e-12)


def test_softmax_paths_agree(rng):
    x = rng.standard_normal((40, 17)) * 6
    g = rng.standard_normal((40, 17))

    def run():
        y = kernels.softmax_forward(x.copy())
        return y, kernels.softmax_backward(y, g.copy())

    (y0, d0), (y1, d1) = both_paths(run)
    np.testing.assert_allclose(y0, y1, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(d0, d1, rtol=1e-12, atol=1e-14)


def test_layer_norm_paths_agree(rng):
    x = rng.standard_normal((30, 24))
    gamma = rng.standard_normal(24)
    beta = rng.standard_normal(24)
    g = rng.standard_normal((30, 24))

    def run():
        y, xhat, inv_std = kernels.layer_norm_forward(x.copy(), gamma, beta, 1e-6)
        dx, dgamma, dbeta = kernels.layer_norm_backward(xhat, inv_std, gamma, g.copy())
        return y, xhat, inv_std, dx, dgamma, dbeta

    plain, jitted = both_paths(run)
    for a, b in zip(plain, jitted):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_adam_paths_agree(rng):
    def run():
        p = np.linspace(-1, 1, 50)
        g = np.sin(np.arange(50.0))
        m = np.zeros(50)
        v = np.zeros(50)
        for step in (1, 2, 3):
            kernels.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, step)
        return p, m, v

    plain, jitted = both_paths(run)
    for a, b in zip(plain, jitted):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_permute_columns_paths_byte_equal(rng):
    blocks = rng.integers(0, 256, size=(20, 48), dtype=np.uint8)
    perm = rng.permutation(48)
    plain, jitted = both_paths(lambda: kernels.permute_columns(blocks, perm))
    assert np.array_equal(plain, jitted)
    assert np.array_equal(plain, blocks[:, perm])


def test_resize_paths_byte_equal(rng):
    img = rng.integers(0, 256, size=(3, 32, 32), dtype=np.uint8)
    for target in (16, 32, 224):
        b0, b1 = both_paths(lambda t=target: kernels.bilinear_resize(img, t))
        assert np.array_equal(b0, b1), f"bilinear target {target}"
        n0, n1 = both_paths(lambda t=target: kernels.nearest_resize(img, t))
        assert np.array_equal(n0, n1), f"nearest target {target}"


def test_adam_first_step_magnitude():
    # bias correction makes the first update ~lr per coordinate
    p = np.array([1.0])
    g = np.array([0.37])
    m = np.zeros(1)
    v = np.zeros(1)
    kernels.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1)
    assert abs(1.0 - p[0]) == pytest.approx(1e-3, rel=1e-4)


def test_backend_env_resolution(monkeypatch):
    for value, expected in [("0", False), ("off", False), ("false", False),
                            ("numpy", False)]:
        monkeypatch.setenv("CIPHER_VIT_NUMBA", value)
        assert backend._resolve(value) is False, value
    if backend.HAVE_NUMBA:
        for value in ("1", "on", "true", "numba"):
            assert backend._resolve(value) is True, value


def test_backend_toggle_restores():
    prev = backend.set_numba_enabled(False)
    assert backend.numba_enabled() is False
    backend.set_numba_enabled(prev)
    assert backend.numba_enabled() is prev
