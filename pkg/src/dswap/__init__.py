"""Distributed multi-party SWAP test: compiler, simulators, estimators and resource models."""
from __future__ import annotations

from .circuit import Circuit, Gate, Kind, Level, Op, PartySpec, QubitId, deserialize, serialize, validate
from .compiler import Scheme, Variant, build_fanout_test, build_gadget, build_swap_test, compile_swap_test
from .errors import DswapError
from .estimator import (entanglement_spectrum, estimate_trace, oracle_trace, renyi_entropy,
                        spectrum_from_power_sums, virtual_expectation)
from .kernels import BACKEND
from .netnoise import bell_fidelity_bounds, k_max, overall_fidelity_estimate, total_fidelity
from .resources import account, closed_form, compare
from .simulator import (NoiseModel, PauliString, classical_fidelity, inject_sampled_error, run_pauli_frame,
                        run_statevector)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Circuit", "DswapError", "Gate", "Kind", "Level", "NoiseModel", "Op", "PartySpec", "PauliString",
    "QubitId", "Scheme", "Variant", "account", "bell_fidelity_bounds", "build_fanout_test", "build_gadget",
    "build_swap_test", "classical_fidelity", "closed_form", "compare", "compile_swap_test", "deserialize",
    "entanglement_spectrum", "estimate_trace", "inject_sampled_error", "k_max", "oracle_trace",
    "overall_fidelity_estimate", "renyi_entropy", "run_pauli_frame", "run_statevector", "serialize",
    "spectrum_from_power_sums", "total_fidelity", "validate", "virtual_expectation",
]
