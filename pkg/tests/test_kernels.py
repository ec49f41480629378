import os
import subprocess
import sys

import numpy as np
import pytest

from whfl import _kernels_py, kernels
from whfl.numerics import RngStream


def _case(R=3, J=5, N=7, seed=0):
    g = np.random.default_rng(seed)
    x = g.standard_normal((J, N)) + 1j * g.standard_normal((J, N))
    amp = g.uniform(0.1, 1.0, (R, J))
    own = g.random((R, J)) < 0.5
    return x, amp, own


def test_reference_matches_explicit_formula():
    R, J, N, K = 2, 3, 4, 5
    x, amp, own = _case(R, J, N)
    gen = RngStream(1).generator()
    y = _kernels_py.ota_combine(gen, x, amp, own, K, 0.7, 1.3)
    g = RngStream(1).generator().standard_normal((R, K, J + 1, 2, N))
    h = amp[:, None, :, None] * (g[:, :, :J, 0] + 1j * g[:, :, :J, 1])
    z = 0.7 * (g[:, :, J, 0] + 1j * g[:, :, J, 1])
    s = (h * own[:, None, :, None]).sum(axis=2)
    rx = 1.3 * np.einsum("rkjn,jn->rkn", h, x) + z
    ref = (s.conj() * rx).mean(axis=1)
    assert np.allclose(y, ref, rtol=1e-12, atol=1e-14)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled core not built")
def test_compiled_matches_fallback():
    x, amp, own = _case(4, 6, 33, seed=3)
    a = kernels.ota_combine(RngStream(9).generator(), x, amp, own, 11, 0.4, 2.0)
    b = _kernels_py.ota_combine(RngStream(9).generator(), x, amp, own, 11, 0.4, 2.0)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-13)


def test_chunking_does_not_change_result(monkeypatch):
    x, amp, own = _case(2, 4, 5)
    a = _kernels_py.ota_combine(RngStream(2).generator(), x, amp, own, 9, 0.3, 1.0)
    monkeypatch.setattr(_kernels_py, "_BLOCK_DOUBLES", 1)
    b = _kernels_py.ota_combine(RngStream(2).generator(), x, amp, own, 9, 0.3, 1.0)
    assert np.allclose(a, b, rtol=1e-13)


def test_env_var_forces_fallback():
    env = dict(os.environ, WHFL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from whfl import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
