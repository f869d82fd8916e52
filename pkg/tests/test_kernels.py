import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from synthtrial import _kernels
from synthtrial._kernels import fallback

compiled = _kernels.BACKENDS.get("compiled")
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def _sample(seed, n, ties):
    rng = np.random.default_rng(seed)
    t = rng.integers(1, 5, n).astype(float) if ties else rng.exponential(1.0, n)
    return t, rng.integers(0, 2, n), rng.integers(0, 2, n), rng.normal(size=n)


@needs_compiled
@given(st.integers(0, 2**32 - 1), st.integers(1, 200), st.booleans())
def test_backends_agree(seed, n, ties):
    t, d, g, r = _sample(seed, n, ties)
    for a, b in zip(fallback.km_counts(t, d), compiled.km_counts(t, d)):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(fallback.logrank_counts(t, d, g), compiled.logrank_counts(t, d, g), rtol=1e-12, atol=1e-12)
    assert fallback.concordance_counts(r, t, d) == compiled.concordance_counts(r, t, d)


def test_default_backend_is_compiled_when_available():
    assert _kernels.BACKEND == ("compiled" if compiled is not None else "python")


def test_env_var_forces_fallback():
    code = "import synthtrial._kernels as k; print(k.BACKEND)"
    env = dict(os.environ, SYNTHTRIAL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_km_counts_shapes():
    t, r, d = fallback.km_counts(np.array([3.0, 1.0, 1.0, 2.0]), np.array([1, 1, 0, 0]))
    assert t.tolist() == [1.0, 3.0] and r.tolist() == [4, 1] and d.tolist() == [1, 1]
