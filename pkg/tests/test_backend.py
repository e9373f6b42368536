import os
import subprocess
import sys

import numpy as np
import pytest

from cvpbench import _backend, _kernels_py

compiled = pytest.importorskip("cvpbench._ckernels")


def _pairs(rng, n=500, scale=3.0):
    return rng.uniform(-scale, scale, (n, 2)), rng.uniform(-scale, scale, (n, 2))


def test_auto_selects_compiled():
    if os.environ.get("CVP_BACKEND", "auto") == "python":
        pytest.skip("numpy backend forced")
    assert _backend.BACKEND == "cython"


def test_gaussian_backends_agree(rng):
    X, Y = _pairs(rng)
    a = compiled.gaussian_pair_derivs(X, Y, 4.5)
    b = _kernels_py.gaussian_pair_derivs(X, Y, 4.5)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-13, atol=1e-300)


@pytest.mark.parametrize("slope", [0.0, 1.0])
def test_lattice_backends_agree(rng, slope):
    X, Y = _pairs(rng)
    a = compiled.lattice_pair_derivs(X, Y, 1.0, 1.7, 1.3, slope, 0.2)
    b = _kernels_py.lattice_pair_derivs(X, Y, 1.0, 1.7, 1.3, slope, 0.2)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-14)


def test_scatter_backends_agree(rng):
    n, d, m = 6, 3, 40
    I, J = rng.integers(0, n, m), rng.integers(0, n, m)
    coef, B = rng.standard_normal(m), rng.standard_normal((m, d, d))
    dense, stack = [], []
    for impl in (compiled, _kernels_py):
        out = np.zeros((n * d, n * d))
        impl.scatter_blocks(out, I.astype(np.int64), J.astype(np.int64), coef, B)
        dense.append(out)
        blocks = np.zeros((n, d, d))
        impl.scatter_diag_blocks(blocks, I.astype(np.int64), coef, B)
        stack.append(blocks)
    np.testing.assert_allclose(dense[0], dense[1], rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(stack[0], stack[1], rtol=1e-13, atol=1e-14)
    assert np.abs(dense[0]).max() > 0


def test_read_only_inputs(rng):
    X, Y = _pairs(rng, 10)
    X.setflags(write=False)
    Y.setflags(write=False)
    compiled.gaussian_pair_derivs(X, Y, 4.5)
    compiled.lattice_pair_derivs(X, Y, 1.0, 1.7, 1.3, 0.0, 0.2)


def _backend_in_subprocess(value):
    env = dict(os.environ, CVP_BACKEND=value)
    return subprocess.run([sys.executable, "-c", "from cvpbench import _backend; print(_backend.BACKEND)"],
                          env=env, capture_output=True, text=True)


def test_env_selects_backend():
    assert _backend_in_subprocess("python").stdout.strip() == "python"
    assert _backend_in_subprocess("cython").stdout.strip() == "cython"
    bad = _backend_in_subprocess("fortran")
    assert bad.returncode != 0 and "CVP_BACKEND" in bad.stderr
