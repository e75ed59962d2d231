import os
import subprocess
import sys

import numpy as np
import pytest

from kronattn import _pykernels, available_backends

BACKENDS = available_backends()


@pytest.fixture(params=sorted(BACKENDS))
def kernels(request):
    return BACKENDS[request.param]


def test_compiled_backend_built():
    assert "cython" in BACKENDS, "the compiled extension should be built by the editable install"


@pytest.mark.parametrize("shape", [(1, 1, 1), (3, 4, 5), (17, 9, 33), (70, 65, 3)])
def test_matmul_matches_numpy(kernels, rng, shape):
    a = rng.normal(size=shape[:2])
    b = rng.normal(size=shape[1:])
    np.testing.assert_allclose(kernels.matmul(a, b), a @ b, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(kernels.matmul_blocked(a, b, 16), a @ b, rtol=1e-12, atol=1e-12)


def test_float32_preserved(kernels, rng):
    a = rng.normal(size=(5, 4)).astype(np.float32)
    e = rng.normal(size=(6, 3)).astype(np.float32)
    assert kernels.matmul(a, a.T).dtype == np.float32
    assert kernels.softmax_columns(e).dtype == np.float32
    np.testing.assert_allclose(kernels.matmul(a, a.T), a @ a.T, rtol=1e-5)


def test_softmax_matches_reference(kernels, rng):
    e = rng.normal(size=(40, 30)) * 20
    z = np.exp(e - e.max(axis=0))
    np.testing.assert_allclose(kernels.softmax_columns(e), z / z.sum(axis=0), rtol=1e-12)


def test_non_contiguous_inputs(kernels, rng):
    a = rng.normal(size=(8, 6))[::2, ::-1]
    np.testing.assert_allclose(kernels.matmul(a, a.T), a @ a.T, atol=1e-12)


def test_errors(kernels):
    with pytest.raises(ValueError):
        kernels.matmul(np.zeros((2, 3)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        kernels.matmul_blocked(np.zeros((2, 2)), np.zeros((2, 2)), 0)


def test_backends_agree(rng):
    if len(BACKENDS) < 2:
        pytest.skip("only one backend available")
    a, b = rng.normal(size=(30, 20)), rng.normal(size=(20, 25))
    np.testing.assert_allclose(BACKENDS["cython"].matmul(a, b), _pykernels.matmul(a, b), atol=1e-12)


def test_env_var_forces_fallback():
    env = dict(os.environ, KRONATTN_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "import kronattn; print(kronattn.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
