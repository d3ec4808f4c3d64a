from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dswap import _kernels_py as ref
from dswap import kernels

compiled = pytest.importorskip("dswap._kernels")


def _vec(seed: int, nq: int) -> np.ndarray:
    r = np.random.default_rng(seed)
    return r.normal(size=2**nq) + 1j * r.normal(size=2**nq)


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")


@settings(max_examples=60, deadline=None)
@given(nq=st.integers(1, 8), data=st.data(), seed=st.integers(0, 2**31))
def test_apply_1q_matches(nq, data, seed):
    bit = data.draw(st.integers(0, nq - 1))
    m = np.random.default_rng(seed).normal(size=4) + 1j * np.random.default_rng(seed + 1).normal(size=4)
    a, b = _vec(seed, nq), _vec(seed, nq)
    ref.apply_1q(a, bit, *m)
    compiled.apply_1q(b, bit, *m)
    np.testing.assert_allclose(a, b, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(nq=st.integers(2, 8), data=st.data(), seed=st.integers(0, 2**31))
def test_controlled_kernels_match(nq, data, seed):
    bits = data.draw(st.permutations(range(nq)))
    nctrl = data.draw(st.integers(0, nq - 2))
    mask = sum(1 << b for b in bits[:nctrl])
    a, b = _vec(seed, nq), _vec(seed, nq)
    ref.apply_mcx(a, mask, bits[-1])
    compiled.apply_mcx(b, mask, bits[-1])
    np.testing.assert_allclose(a, b, atol=1e-12)
    if nq >= 3 and nctrl <= nq - 2:
        mask = sum(1 << q for q in bits[:nctrl] if q not in bits[-2:])
        ref.apply_mcswap(a, mask, bits[-2], bits[-1])
        compiled.apply_mcswap(b, mask, bits[-2], bits[-1])
        np.testing.assert_allclose(a, b, atol=1e-12)
    ph = np.exp(1j * (seed % 7))
    ref.apply_phase(a, mask | 1, ph)
    compiled.apply_phase(b, mask | 1, ph)
    np.testing.assert_allclose(a, b, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(nq=st.integers(1, 8), data=st.data(), seed=st.integers(0, 2**31), outcome=st.integers(0, 1))
def test_measure_kernels_match(nq, data, seed, outcome):
    bit = data.draw(st.integers(0, nq - 1))
    a = _vec(seed, nq)
    assert ref.prob_one(a, bit) == pytest.approx(compiled.prob_one(a, bit), rel=1e-12)
    np.testing.assert_allclose(ref.collapse_remove(a, bit, outcome, 0.5),
                               compiled.collapse_remove(a, bit, outcome, 0.5), atol=1e-12)


def test_prob_one_known_value():
    psi = np.array([0.6, 0, 0, 0.8], complex)
    assert compiled.prob_one(psi, 0) == pytest.approx(0.64)
    assert ref.prob_one(psi, 1) == pytest.approx(0.64)


def test_collapse_keeps_other_bits():
    psi = np.arange(8, dtype=complex)
    # drop bit 1 with outcome 1: indices 2,3,6,7
    np.testing.assert_array_equal(compiled.collapse_remove(psi, 1, 1, 1.0), [2, 3, 6, 7])
    np.testing.assert_array_equal(ref.collapse_remove(psi, 1, 1, 1.0), [2, 3, 6, 7])
