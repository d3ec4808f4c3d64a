from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_state
from dswap import (PartySpec, Scheme, entanglement_spectrum, estimate_trace, oracle_trace, renyi_entropy,
                   spectrum_from_power_sums, virtual_expectation)
from dswap.errors import CapacityError, EstimationError, InvalidParameter
from dswap.estimator import IM_SIGN, RE_SIGN, IllConditionedSpectrum, as_ensemble

KET0 = np.array([1, 0])
PLUS = np.array([1, 1]) / np.sqrt(2)
PLUS_I = np.array([1, 1j]) / np.sqrt(2)
MIX = np.diag([0.75, 0.25])


def three_states():
    return PartySpec.pure([KET0, PLUS, PLUS_I])


class TestOracle:
    def test_closed_form(self):
        # <0|+><+|+i><+i|0> = (1/sqrt2)(1+i)/2 (1/sqrt2)
        assert oracle_trace(three_states()) == pytest.approx(0.25 + 0.25j)

    def test_matrix_list(self):
        assert oracle_trace([MIX, MIX, MIX]) == pytest.approx(0.75**3 + 0.25**3)

    def test_vector_list(self):
        assert oracle_trace([KET0, KET0]) == pytest.approx(1.0)

    def test_order_matters(self):
        a = oracle_trace(PartySpec.pure([KET0, PLUS, PLUS_I]))
        b = oracle_trace(PartySpec.pure([KET0, PLUS_I, PLUS]))
        assert a == pytest.approx(b.conjugate())

    def test_capacity(self):
        big = np.zeros(2**11)
        big[0] = 1
        with pytest.raises(CapacityError):
            oracle_trace(PartySpec.pure([big, big]))


def test_sign_calibration_constants():
    assert (RE_SIGN, IM_SIGN) == (1, -1)


def test_frozen_compiled_estimate():
    est = estimate_trace(three_states(), Scheme.parse("teledata"), shots=4000, seed=11)
    assert (est.re, est.im) == (0.2365, 0.259)
    assert est.within(0.25 + 0.25j)
    assert est.stderr_re == pytest.approx(math.sqrt((1 - 0.2365**2) / 4000), rel=1e-3)


def test_frozen_macro_estimate():
    est = estimate_trace(three_states(), None, shots=4000, seed=11)
    assert (est.re, est.im) == (0.2325, 0.26)
    assert est.scheme == "macro"


def test_record_is_json():
    est = estimate_trace(three_states(), None, shots=100, seed=0)
    d = json.loads(est.to_record())
    assert d["shots"] == 100 and d["sign_calibration"] == [1, -1] and d["k"] == 3


def test_real_only():
    est = estimate_trace(three_states(), None, shots=100, seed=0, imaginary=False)
    assert est.im == 0.0 and est.stderr_im == 0.0


def test_too_few_shots():
    with pytest.raises(InvalidParameter):
        estimate_trace(three_states(), shots=1)


@settings(max_examples=10, deadline=None)
@given(k=st.integers(2, 6), seed=st.integers(0, 10_000))
def test_macro_estimate_tracks_oracle(k, seed):
    rng = np.random.default_rng(seed)
    spec = PartySpec.pure([random_state(rng, 1) for _ in range(k)])
    est = estimate_trace(spec, None, shots=20_000, seed=seed)
    target = oracle_trace(spec)
    assert abs(est.re - target.real) < 6 * est.stderr_re + 1e-9
    assert abs(est.im - target.imag) < 6 * est.stderr_im + 1e-9


@pytest.mark.parametrize("scheme", ["telegate", "teledata", "naive"])
def test_mixed_inputs(scheme):
    spec = PartySpec(3, 1, [[(0.75, KET0), (0.25, np.array([0, 1]))]] * 3)
    est = estimate_trace(spec, Scheme.parse(scheme), shots=20_000, seed=1)
    assert est.within(oracle_trace(spec))


class TestSpectrum:
    def test_exact_power_sums(self):
        s = spectrum_from_power_sums([1.0, 0.75**2 + 0.25**2])
        assert s.eigenvalues == pytest.approx([0.75, 0.25])
        assert s.residual < 1e-12

    def test_three_levels(self):
        lam = np.array([0.5, 0.3, 0.2])
        s = spectrum_from_power_sums([float((lam**m).sum()) for m in (1, 2, 3)])
        assert s.eigenvalues == pytest.approx([0.5, 0.3, 0.2])

    def test_complex_roots_warn(self):
        with pytest.warns(IllConditionedSpectrum):
            spectrum_from_power_sums([1.0, 0.2])

    def test_estimated(self):
        s = entanglement_spectrum(MIX, 2, shots=40_000, seed=3)
        assert s.eigenvalues == pytest.approx([0.75, 0.25], abs=0.03)
        assert json.loads(s.to_record())["power_sums"]["1"] == 1.0


class TestRenyi:
    def test_pure_state_has_zero_entropy(self):
        est = renyi_entropy(PLUS, 2, shots=2000, seed=0)
        assert est.value == pytest.approx(0.0, abs=1e-12)

    def test_local_unitary_invariance(self):
        u = np.linalg.qr(np.random.default_rng(8).normal(size=(2, 2)) + 1j)[0]
        a = renyi_entropy(MIX, 2, shots=40_000, seed=1)
        b = renyi_entropy(u @ MIX @ u.conj().T, 2, shots=40_000, seed=2)
        assert abs(a.value - b.value) < 5 * math.hypot(a.stderr, b.stderr)

    def test_order_checked(self):
        with pytest.raises(InvalidParameter):
            renyi_entropy(MIX, 1)

    def test_nonpositive_trace(self):
        # 2 shots on a maximally mixed qubit can easily average to <= 0
        with pytest.raises(EstimationError):
            for seed in range(50):
                renyi_entropy(np.eye(2) / 2, 2, shots=2, seed=seed)


class TestVirtual:
    def test_value(self):
        rho = np.diag([0.9, 0.1])
        est = virtual_expectation(rho, "Z", 2, shots=40_000, seed=5)
        assert abs(est.value - (0.81 - 0.01) / 0.82) < 5 * est.stderr

    def test_bad_observable(self):
        with pytest.raises(InvalidParameter):
            virtual_expectation(MIX, "ZZ", 2)
        with pytest.raises(InvalidParameter):
            virtual_expectation(MIX, "Z", 1)


@pytest.mark.parametrize("rho", [PLUS, MIX, [(0.5, KET0), (0.5, PLUS)]])
def test_as_ensemble_reproduces_density(rho):
    ens = as_ensemble(rho)
    dens = sum(w * np.outer(v, v.conj()) for w, v in ens)
    if isinstance(rho, list):
        want = sum(w * np.outer(v, v.conj()) for w, v in rho)
    elif np.asarray(rho).ndim == 1:
        want = np.outer(rho, np.conj(rho))
    else:
        want = rho
    np.testing.assert_allclose(dens, want, atol=1e-12)
