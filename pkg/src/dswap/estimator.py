"""Trace estimates from swap-test shots, and the applications built on them."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .circuit import Circuit, PartySpec
from .compiler import Scheme, Variant, build_swap_test, compile_swap_test
from .errors import CapacityError, EstimationError, InvalidParameter
from .simulator import DEFAULT_CAP, NoiseModel, ShotResult, ValueEstimate, run_statevector

# Frozen sign calibration. The X-basis run gives Re<W> and the Y-basis run
# (S-dagger then H on the first GHZ qubit) gives Im<W>, where W is the cyclic
# shift built by the two CSWAP rounds. On the interleaved line W runs the cycle
# against party order, so <W> is the conjugate of Tr(rho_0 rho_1 ... rho_{k-1}).
# Checked on |0> inputs (re = +1) and on random k = 3..6 chiral inputs.
RE_SIGN = 1
IM_SIGN = -1

ORACLE_MAX_N = 10


class IllConditionedSpectrum(UserWarning):
    pass


@dataclass
class TraceEstimate:
    re: float
    im: float
    stderr_re: float
    stderr_im: float
    shots_per_basis: int
    sign_calibration: tuple[int, int] = (RE_SIGN, IM_SIGN)
    k: int = 0
    n: int = 0
    scheme: str = ""
    noise: dict = field(default_factory=dict)

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)

    def within(self, target: complex, sigmas: float = 5.0) -> bool:
        ok_re = abs(self.re - target.real) <= sigmas * max(self.stderr_re, 1e-12)
        ok_im = abs(self.im - target.imag) <= sigmas * max(self.stderr_im, 1e-12)
        return ok_re and ok_im

    def to_record(self) -> str:
        d = asdict(self)
        d["shots"] = d.pop("shots_per_basis")
        d["sign_calibration"] = list(self.sign_calibration)
        return json.dumps(d, sort_keys=True)


@dataclass
class Spectrum:
    eigenvalues: list[float]
    residual: float
    power_sums: list[float] = field(default_factory=list)

    def to_record(self) -> str:
        return json.dumps({"power_sums": {str(m + 1): p for m, p in enumerate(self.power_sums)},
                           "roots": self.eigenvalues, "residual": self.residual}, sort_keys=True)


# parity statistics

def parity_mean(result: ShotResult, circuit: Circuit) -> tuple[float, float]:
    """Mean of the +-1 parity over GHZ (and observable) bits, with its standard error."""
    ro = circuit.meta["readout"]
    vals = 1.0 - 2.0 * result.parity(list(ro["ghz_bits"]) + list(ro["obs_bits"]))
    n = len(vals)
    if n == 0:
        raise EstimationError("no shots")
    mean = float(vals.mean())
    std = float(vals.std(ddof=1)) if n > 1 else 1.0
    return mean, std / math.sqrt(n)


def _circuit(spec: PartySpec, scheme: Scheme | None, basis: str, observable: str | None = None) -> Circuit:
    if scheme is None:
        return build_swap_test(spec, None, basis, observable)
    return compile_swap_test(spec, scheme, basis, observable)


def _run(c: Circuit, noise, shots, seed, stream, threads, cap) -> ShotResult:
    return run_statevector(c, noise, shots, seed, threads=threads, cap=cap,
                           allow_macros=c.has_macros(), stream=stream)


def estimate_trace(spec: PartySpec, scheme: Scheme | None = None, noise: NoiseModel | None = None,
                   shots: int = 10_000, seed: int = 0, threads: int = 1, cap: int = DEFAULT_CAP,
                   imaginary: bool = True) -> TraceEstimate:
    """Estimate Tr(rho_0 ... rho_{k-1}). ``scheme=None`` simulates the macro-level test."""
    if shots < 2:
        raise InvalidParameter("need at least 2 shots per basis")
    cx = _circuit(spec, scheme, "X")
    re, se_re = parity_mean(_run(cx, noise, shots, seed, 0, threads, cap), cx)
    im, se_im = 0.0, 0.0
    if imaginary:
        cy = _circuit(spec, scheme, "Y")
        im, se_im = parity_mean(_run(cy, noise, shots, seed, 1, threads, cap), cy)
    label = "macro" if scheme is None else scheme.variant.value
    return TraceEstimate(RE_SIGN * re, IM_SIGN * im, se_re, se_im, shots, (RE_SIGN, IM_SIGN), spec.k, spec.n,
                         label, asdict(noise) if noise is not None else {})


def oracle_trace(spec: PartySpec | Sequence[np.ndarray]) -> complex:
    """Exact Tr(rho_0 rho_1 ... rho_{k-1}) by dense products."""
    if not isinstance(spec, PartySpec):
        mats = [np.asarray(r, dtype=complex) for r in spec]
        if mats and mats[0].ndim == 1:
            spec = PartySpec.pure(mats)
        else:
            n = int(round(math.log2(mats[0].shape[0])))
            if n > ORACLE_MAX_N:
                raise CapacityError(f"dense oracle limited to n <= {ORACLE_MAX_N}")
            prod = np.eye(mats[0].shape[0], dtype=complex)
            for r in mats:
                prod = prod @ r
            return complex(np.trace(prod))
    if spec.n > ORACLE_MAX_N:
        raise CapacityError(f"dense oracle limited to n <= {ORACLE_MAX_N}")
    prod = np.eye(2**spec.n, dtype=complex)
    for i in range(spec.k):
        prod = prod @ spec.density(i)
    value = complex(np.trace(prod))
    if spec.is_pure():
        vs = [e[0][1] for e in spec.states]
        chain = complex(np.prod([np.vdot(vs[i], vs[(i + 1) % spec.k]) for i in range(spec.k)]))
        if abs(chain - value) > 1e-9:
            raise EstimationError(f"oracle paths disagree: {value} vs {chain}")
    return value


# applications

def as_ensemble(rho) -> list[tuple[float, np.ndarray]]:
    """Accept an ensemble [(w, vec)], a state vector or a density matrix."""
    if isinstance(rho, (list, tuple)) and rho and isinstance(rho[0], tuple):
        return [(float(w), np.asarray(v, dtype=complex)) for w, v in rho]
    a = np.asarray(rho, dtype=complex)
    if a.ndim == 1:
        return [(1.0, a / np.linalg.norm(a))]
    if a.ndim == 2 and a.shape[0] == a.shape[1]:
        w, v = np.linalg.eigh((a + a.conj().T) / 2)
        return [(float(wi), v[:, i]) for i, wi in enumerate(w) if wi > 1e-12]
    raise InvalidParameter("state must be an ensemble, a vector or a square matrix")


def _copies(rho, k: int) -> PartySpec:
    ens = as_ensemble(rho)
    total = sum(w for w, _ in ens)
    ens = [(w / total, v) for w, v in ens]
    n = int(round(math.log2(len(ens[0][1]))))
    return PartySpec(k, n, [list(ens) for _ in range(k)])


def renyi_entropy(rho, order: int, scheme: Scheme | None = None, noise: NoiseModel | None = None,
                  shots: int = 10_000, seed: int = 0, threads: int = 1) -> ValueEstimate:
    """Order-`order` Renyi entropy in bits from a swap test on `order` copies."""
    if order < 2:
        raise InvalidParameter("Renyi order must be at least 2")
    est = estimate_trace(_copies(rho, order), scheme, noise, shots, seed, threads, imaginary=False)
    if est.re <= 0:
        raise EstimationError(f"estimated Tr(rho^{order}) = {est.re:.4g} +- {est.stderr_re:.2g} is not positive")
    val = math.log2(est.re) / (1 - order)
    se = est.stderr_re / (abs(1 - order) * est.re * math.log(2))
    return ValueEstimate(val, se)


def spectrum_from_power_sums(power_sums: Sequence[float], tol: float = 1e-6) -> Spectrum:
    """Newton's identities then companion-matrix roots. power_sums[m-1] = Tr(rho^m)."""
    p = [float(x) for x in power_sums]
    d = len(p)
    e = [1.0]
    for m in range(1, d + 1):
        e.append(sum((-1) ** (i - 1) * e[m - i] * p[i - 1] for i in range(1, m + 1)) / m)
    coeffs = [(-1) ** j * e[j] for j in range(d + 1)]
    roots = np.roots(coeffs) if d else np.array([])
    bad = [r for r in roots if abs(r.imag) > tol * max(1.0, abs(r))]
    residual = float(max([abs(r.imag) for r in roots], default=0.0))
    vals = sorted((min(1.0, max(0.0, float(r.real))) for r in roots), reverse=True)
    residual = max(residual, abs(sum(vals) - (p[0] if p else 1.0)))
    if bad:
        warnings.warn(f"characteristic polynomial has complex roots (residual {residual:.3g})",
                      IllConditionedSpectrum, stacklevel=2)
    return Spectrum(vals, residual, p)


def entanglement_spectrum(rho, max_order: int, scheme: Scheme | None = None, noise: NoiseModel | None = None,
                          shots: int = 10_000, seed: int = 0, threads: int = 1) -> Spectrum:
    if max_order < 1:
        raise InvalidParameter("max_order must be at least 1")
    sums = [1.0]
    for m in range(2, max_order + 1):
        est = estimate_trace(_copies(rho, m), scheme, noise, shots, seed + m, threads, imaginary=False)
        sums.append(est.re)
    return spectrum_from_power_sums(sums)


def virtual_expectation(rho, observable: str, copies: int, scheme: Scheme | None = None,
                        noise: NoiseModel | None = None, shots: int = 10_000, seed: int = 0,
                        threads: int = 1) -> ValueEstimate:
    """Tr(O rho^m) / Tr(rho^m), with O measured on the first party alongside the GHZ readout."""
    if copies < 2:
        raise InvalidParameter("need at least 2 copies")
    spec = _copies(rho, copies)
    if len(observable) != spec.n or set(observable) - set("IXYZ"):
        raise InvalidParameter(f"observable must be a Pauli string of length {spec.n}")
    co = _circuit(spec, scheme, "X", observable)
    num, se_num = parity_mean(_run(co, noise, shots, seed, 2, threads, DEFAULT_CAP), co)
    den = estimate_trace(spec, scheme, noise, shots, seed, threads, imaginary=False)
    if abs(den.re) <= 3 * den.stderr_re:
        raise EstimationError("Tr(rho^m) is within 3 standard errors of zero")
    r = num / den.re
    se = abs(r) * math.sqrt((se_num / num) ** 2 + (den.stderr_re / den.re) ** 2) if num else se_num / abs(den.re)
    return ValueEstimate(r, se)


DEFAULT_SCHEME = Scheme(Variant.TELEDATA, True)
