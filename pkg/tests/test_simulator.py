from __future__ import annotations

import numpy as np
import pytest

from dswap import (NoiseModel, PartySpec, Scheme, build_fanout_test, build_swap_test, compile_swap_test,
                   inject_sampled_error, run_pauli_frame, run_statevector)
from dswap.circuit import Kind, Op, QubitId, bellprep, g1, measure, new_circuit
from dswap.compiler import build_cswap_test, set_input_state
from dswap.errors import AbstractionError, CapacityError, EngineError, InjectionError, InvalidParameter
from dswap.simulator import (PauliHistogram, PauliString, branch_average, channel_density, classical_fidelity,
                             sample_final_densities)

PLUS = np.array([1, 1]) / np.sqrt(2)
PAULI = {"I": np.eye(2), "X": np.array([[0, 1], [1, 0]]), "Y": np.array([[0, -1j], [1j, 0]]), "Z": np.diag([1, -1])}


def bell_circuit(basis="Z"):
    c = new_circuit(2, 1)
    a, b = c.add_qubit(QubitId(0, Kind.BELL_HALF, 0)), c.add_qubit(QubitId(1, Kind.BELL_HALF, 0))
    c.append(bellprep(a, b))
    for q in (a, b):
        c.append(measure(q, c.new_clbit(), basis))
    return c


def fanout_on_plus(expand: bool, readout: bool = True):
    """Control in |+>, four targets in |0>: the Fanout makes a 5-qubit GHZ state."""
    c = build_fanout_test(4, expand)
    qs = [q for q in c.qubits if q.kind is Kind.DATA]
    set_input_state(c, [qs[0]], PLUS)
    if readout:
        top = len(c.layers)
        c.meta["xbits"] = []
        for q in qs:
            b = c.new_clbit()
            c.place(measure(q, b, "X"), top)
            c.meta["xbits"].append(b)
    return c, qs


def x_parity(c, noise=None, shots=5000, seed=0):
    r = run_statevector(c, noise, shots, seed, allow_macros=c.has_macros())
    return 1 - 2 * r.parity(c.meta["xbits"]).mean()


class TestNoiseModel:
    def test_from_level(self):
        assert NoiseModel.from_level(0.01) == NoiseModel(0.001, 0.01, 0.01, 0.01)
        assert NoiseModel.from_level(0.01, p_bell=0).p_bell == 0

    @pytest.mark.parametrize("field", ["p1", "p2", "p_meas", "p_bell"])
    def test_range(self, field):
        with pytest.raises(InvalidParameter):
            NoiseModel(**{field: 1.5})

    def test_is_zero(self):
        assert NoiseModel().is_zero and not NoiseModel(p_meas=0.1).is_zero


@pytest.mark.parametrize("basis", ["Z", "X"])
def test_bell_pair_correlations(basis):
    r = run_statevector(bell_circuit(basis), shots=2000, seed=3)
    assert np.all(r.bits[:, 0] == r.bits[:, 1])
    assert 0.45 < r.bits[:, 0].mean() < 0.55


def test_bell_pair_y_anticorrelated():
    r = run_statevector(bell_circuit("Y"), shots=500, seed=3)
    assert np.all(r.bits[:, 0] != r.bits[:, 1])


def test_readout_noise_breaks_correlation():
    r = run_statevector(bell_circuit(), NoiseModel(p_meas=0.2), shots=4000, seed=1)
    mismatch = (r.bits[:, 0] != r.bits[:, 1]).mean()
    assert mismatch == pytest.approx(2 * 0.2 * 0.8, abs=0.03)


def test_same_seed_same_bits():
    spec = PartySpec.pure([np.array([1, 0]), PLUS, np.array([0.6, 0.8j])])
    c = compile_swap_test(spec, Scheme.parse("telegate"))
    a = run_statevector(c, shots=3000, seed=9)
    b = run_statevector(c, shots=3000, seed=9)
    assert a.to_csv() == b.to_csv()
    assert not np.array_equal(a.bits, run_statevector(c, shots=3000, seed=10).bits)


@pytest.mark.parametrize("noise", [None, NoiseModel.from_level(0.01)])
def test_thread_count_does_not_change_bits(noise):
    spec = PartySpec.pure([np.array([1, 0]), PLUS, PLUS])
    c = compile_swap_test(spec, Scheme.parse("teledata"))
    one = run_statevector(c, noise, shots=600, seed=4, threads=1)
    many = run_statevector(c, noise, shots=600, seed=4, threads=4)
    np.testing.assert_array_equal(one.bits, many.bits)


def test_cap_enforced():
    c = compile_swap_test(PartySpec.pure([np.eye(4)[0]] * 3), Scheme.parse("telegate"))
    with pytest.raises(CapacityError):
        run_statevector(c, shots=10, cap=6)


def test_macros_need_permission():
    c = build_swap_test(PartySpec.pure([np.array([1, 0])] * 2))
    with pytest.raises(AbstractionError):
        run_statevector(c, shots=10)
    run_statevector(c, shots=10, allow_macros=True)


def test_identical_states_give_parity_one():
    c = build_swap_test(PartySpec.pure([PLUS] * 3))
    r = run_statevector(c, shots=500, seed=0, allow_macros=True)
    assert not r.parity(c.meta["readout"]["ghz_bits"]).any()


def test_shot_result_csv_header():
    text = run_statevector(bell_circuit(), shots=3, seed=0).to_csv().splitlines()
    assert text[0] == "shot,bits,members" and len(text) == 4


class TestBranches:
    def test_teleport_channel_is_identity(self):
        from dswap.compiler import build_gadget
        low, ref, out, ref_q = build_gadget("teleport", 1)
        v = np.array([0.6, 0.8j])
        set_input_state(low, ref_q, v)
        branches = branch_average(low, out)
        assert len(branches) == 4
        assert sum(w for w, _, _ in branches) == pytest.approx(1.0)
        np.testing.assert_allclose(channel_density(low, out), np.outer(v, v.conj()), atol=1e-12)

    def test_bell_noise_branches(self):
        from dswap.compiler import build_gadget
        low, _, out, ref_q = build_gadget("teleport", 1)
        set_input_state(low, ref_q, np.array([1, 0]))
        rho = channel_density(low, out, noise=NoiseModel(p_bell=0.2))
        # a uniformly random Pauli with prob p flips |0> half the time
        assert rho[1, 1].real == pytest.approx(0.1)

    def test_gate_noise_not_enumerated(self):
        with pytest.raises(InvalidParameter):
            branch_average(bell_circuit(), [], NoiseModel(p1=0.1))

    def test_sampled_densities_are_states(self):
        c, qs = fanout_on_plus(True, readout=False)
        for rho in sample_final_densities(c, qs, NoiseModel.from_level(0.01), shots=5, seed=2):
            assert np.trace(rho).real == pytest.approx(1.0)


class TestPauliFrame:
    def test_rejects_non_clifford(self):
        c = new_circuit(2, 1)
        c.append(g1(Op.T, c.add_qubit(QubitId(0, Kind.DATA, 0))))
        with pytest.raises(EngineError):
            run_pauli_frame(c, shots=10)

    def test_noiseless_is_identity(self):
        h = run_pauli_frame(build_fanout_test(4), shots=1000)
        assert h.counts == {"IIIII": 1000}
        assert h.top_errors() == []

    def test_frozen_histogram(self):
        h = run_pauli_frame(build_fanout_test(4), NoiseModel.from_level(0.001), shots=20_000, seed=0)
        assert h.ranked()[:4] == [("IIIII", 19780, 0.989), ("ZIIII", 62, 0.0031), ("IXXXX", 27, 0.00135),
                                  ("IIIXX", 20, 0.001)]

    def test_threads_and_csv(self):
        a = run_pauli_frame(build_fanout_test(6), NoiseModel.from_level(0.003), shots=20_000, seed=5, threads=1)
        b = run_pauli_frame(build_fanout_test(6), NoiseModel.from_level(0.003), shots=20_000, seed=5, threads=4)
        assert a.to_csv() == b.to_csv()
        assert a.to_csv().splitlines()[0] == "pauli_string,count,probability"

    def test_merge(self):
        a = run_pauli_frame(build_fanout_test(2), NoiseModel.from_level(0.01), shots=100, seed=1)
        b = run_pauli_frame(build_fanout_test(2), NoiseModel.from_level(0.01), shots=300, seed=2)
        m = a.merge(b)
        assert m.shots == 400 and sum(m.counts.values()) == 400

    def test_agrees_with_statevector(self):
        """Infidelity of the noisy GHZ output: sum of p_E (1 - |<E>|^2) vs direct trajectories."""
        p = 0.003
        c, qs = fanout_on_plus(True, readout=False)
        ghz = np.zeros(32)
        ghz[0] = ghz[-1] = 1 / np.sqrt(2)
        fids = [float(np.real(ghz @ rho @ ghz))
                for rho in sample_final_densities(c, qs, NoiseModel.from_level(p), shots=3000, seed=4)]
        sv, se = 1 - np.mean(fids), np.std(fids) / np.sqrt(len(fids))
        h = run_pauli_frame(build_fanout_test(4), NoiseModel.from_level(p), shots=200_000, seed=1)

        def kept(s):
            m = np.array([[1.0]])
            for ch in s:
                m = np.kron(m, PAULI[ch])
            return abs(ghz @ m @ ghz) ** 2

        frame = sum(pr * (1 - kept(s)) for s, pr in h.probabilities().items())
        assert abs(sv - frame) <= 4 * se + 0.002


def test_pauli_string_checks():
    assert str(PauliString("XZ")) == "XZ"
    with pytest.raises(InvalidParameter):
        PauliString("XQ")


def test_histogram_merge_mismatch():
    a = PauliHistogram((QubitId(0, Kind.DATA, 0),), {"I": 1}, 1)
    b = PauliHistogram((QubitId(0, Kind.DATA, 1),), {"I": 1}, 1)
    with pytest.raises(InvalidParameter):
        a.merge(b)


class TestInjection:
    def test_identity_injection_changes_nothing(self):
        c, qs = fanout_on_plus(False)
        assert x_parity(inject_sampled_error(c, 0, {"IIIII": 1.0}, qs), shots=500) == 1.0

    def test_z_on_control_flips_parity(self):
        c, qs = fanout_on_plus(False)
        assert x_parity(inject_sampled_error(c, 0, {"ZIIII": 1.0}, qs), shots=500) == -1.0

    def test_operand_order_respected(self):
        c, qs = fanout_on_plus(False)
        # X on a target commutes with the X readout
        assert x_parity(inject_sampled_error(c, 0, {"IIIIX": 1.0}, qs), shots=200) == 1.0

    def test_sampled_noise_sits_between(self):
        h = run_pauli_frame(build_fanout_test(4), NoiseModel.from_level(0.003), shots=100_000, seed=1)
        c, _ = fanout_on_plus(False)
        injected = x_parity(inject_sampled_error(c, 0, h), shots=5000, seed=2)
        full, _ = fanout_on_plus(True)
        worse = x_parity(full, NoiseModel.from_level(0.005), shots=5000, seed=2)
        assert worse < injected < 1.0

    @pytest.mark.parametrize("site,dist", [(5, {"IIIII": 1.0}), (0, {"II": 1.0})])
    def test_bad_injections(self, site, dist):
        c, qs = fanout_on_plus(False)
        with pytest.raises(InjectionError):
            inject_sampled_error(c, site, dist, qs)

    def test_needs_qubits(self):
        c, _ = fanout_on_plus(False)
        with pytest.raises(InjectionError):
            inject_sampled_error(c, 0, {"IIIII": 1.0})


class TestClassicalFidelity:
    @pytest.mark.parametrize("scheme", ["telegate", "teledata"])
    def test_noiseless_is_one(self, scheme):
        assert classical_fidelity(build_cswap_test(1, Scheme.parse(scheme)), shots=300).value == 1.0

    def test_frozen(self):
        c = build_cswap_test(1, Scheme.parse("telegate"))
        est = classical_fidelity(c, NoiseModel.from_level(0.003), shots=1000, seed=2)
        assert est.value == 0.948

    def test_needs_readout(self):
        with pytest.raises(InvalidParameter):
            classical_fidelity(bell_circuit())
