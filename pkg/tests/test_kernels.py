import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpsfalsify import _pykernels, kernels

BACKENDS = [pytest.param(_pykernels, id="python")]
try:
    from cpsfalsify import _ckernels
    BACKENDS.append(pytest.param(_ckernels, id="cython"))
except ImportError:  # pragma: no cover - extension not built
    BACKENDS.append(pytest.param(None, id="cython",
                                 marks=pytest.mark.skip(reason="extension not built")))


def naive_window(a, lo, hi, fn):
    return np.array([fn(a[t + lo:t + hi + 1]) for t in range(max(len(a) - hi, 0))])


def naive_until(a, b, lo, hi):
    n = min(len(a), len(b))
    return np.array([max(min(b[k], min(a[t:k + 1])) for k in range(t + lo, t + hi + 1))
                     for t in range(max(n - hi, 0))])


windows = st.tuples(st.lists(st.floats(-1e6, 1e6), min_size=0, max_size=40),
                    st.integers(0, 10), st.integers(0, 10)).filter(lambda c: c[1] <= c[2])


@pytest.mark.parametrize("impl", BACKENDS)
@settings(max_examples=200, deadline=None)
@given(windows)
def test_window_min_max_match_naive(impl, case):
    a, lo, hi = case
    a = np.asarray(a, dtype=np.float64)
    assert np.array_equal(impl.window_min(a, lo, hi), naive_window(a, lo, hi, np.min))
    assert np.array_equal(impl.window_max(a, lo, hi), naive_window(a, lo, hi, np.max))


@pytest.mark.parametrize("impl", BACKENDS)
@settings(max_examples=200, deadline=None)
@given(windows, st.integers(0, 2**32 - 1))
def test_until_matches_naive(impl, case, seed):
    a, lo, hi = case
    a = np.asarray(a, dtype=np.float64)
    b = np.random.default_rng(seed).normal(size=a.size)
    assert np.array_equal(impl.until(a, b, lo, hi), naive_until(a, b, lo, hi))


@pytest.mark.parametrize("impl", BACKENDS)
def test_infinities_pass_through(impl):
    a = np.array([np.inf, -np.inf, 1.0, np.inf])
    assert np.array_equal(impl.window_min(a, 0, 1), [-np.inf, -np.inf, 1.0])
    assert np.array_equal(impl.window_max(a, 1, 2), [1.0, np.inf])


@pytest.mark.parametrize("impl", BACKENDS)
def test_radical_inverse_by_hand(impl):
    assert np.allclose(impl.radical_inverse(np.arange(1, 6), 2), [0.5, 0.25, 0.75, 0.125, 0.625])
    assert np.allclose(impl.radical_inverse(np.arange(1, 4), 3), [1 / 3, 2 / 3, 1 / 9])
    assert impl.radical_inverse(np.array([0]), 5)[0] == 0.0


@pytest.mark.parametrize("impl", BACKENDS)
@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10**9), min_size=1, max_size=30),
       st.sampled_from([2, 3, 5, 7, 11, 13]))
def test_radical_inverse_in_unit_interval(impl, idx, base):
    v = impl.radical_inverse(np.array(idx), base)
    assert np.all((v >= 0) & (v < 1))
    assert np.array_equal(v, _pykernels.radical_inverse(np.array(idx), base))


def test_backends_agree_on_long_inputs():
    if kernels.BACKEND != "cython":
        pytest.skip("extension not built")
    a = np.random.default_rng(0).normal(size=5000)
    b = np.random.default_rng(1).normal(size=5000)
    assert np.array_equal(kernels.window_min(a, 3, 40), _pykernels.window_min(a, 3, 40))
    assert np.array_equal(kernels.until(a, b, 2, 30), _pykernels.until(a, b, 2, 30))


def test_pure_python_switch():
    env = dict(os.environ, CPSFALSIFY_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import cpsfalsify; print(cpsfalsify.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
