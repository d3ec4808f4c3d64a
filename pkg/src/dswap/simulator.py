"""Statevector and Pauli-frame engines for compiled circuits.

The statevector engine keeps only live qubits in the state: a qubit is
allocated on first touch and removed when measured. Terminal measurements
(nothing depends on them afterwards) are sampled from the final state, so
noiseless runs need only a handful of trajectories per ensemble member
combination.
"""
from __future__ import annotations

import csv
import io
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .circuit import CLIFFORD, MACROS, Circuit, Gate, Kind, Op, QubitId
from .errors import AbstractionError, CapacityError, EngineError, InjectionError, InvalidParameter

DEFAULT_CAP = 24
NOISY_BLOCK = 256
NOISELESS_BLOCK = 25_000
FRAME_BLOCK = 8192

_H = 1 / math.sqrt(2)
_PHASES = {Op.Z: -1.0, Op.S: 1j, Op.SDG: -1j, Op.T: np.exp(1j * np.pi / 4), Op.TDG: np.exp(-1j * np.pi / 4)}


@dataclass(frozen=True)
class NoiseModel:
    p1: float = 0.0
    p2: float = 0.0
    p_meas: float = 0.0
    p_bell: float = 0.0

    def __post_init__(self):
        for name in ("p1", "p2", "p_meas", "p_bell"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidParameter(f"{name}={v} outside [0, 1]")

    @classmethod
    def from_level(cls, p: float, p_bell: float | None = None) -> NoiseModel:
        """Single-knob model: p/10 on one-qubit gates, p on two-qubit gates and readout."""
        return cls(p / 10, p, p, p if p_bell is None else p_bell)

    @property
    def is_zero(self) -> bool:
        return self.p1 == self.p2 == self.p_meas == self.p_bell == 0.0


NOISELESS = NoiseModel()


@dataclass(frozen=True)
class PauliString:
    letters: str
    qubits: tuple[QubitId, ...] = ()

    def __post_init__(self):
        if set(self.letters) - set("IXYZ"):
            raise InvalidParameter(f"bad Pauli string {self.letters!r}")
        if self.qubits and len(self.qubits) != len(self.letters):
            raise InvalidParameter("Pauli string length differs from its qubit list")

    def __str__(self):
        return self.letters


@dataclass
class PauliHistogram:
    qubits: tuple[QubitId, ...]
    counts: Counter
    shots: int

    def probabilities(self) -> dict[str, float]:
        return {s: c / self.shots for s, c in self.counts.items()}

    def ranked(self) -> list[tuple[str, int, float]]:
        rows = sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return [(s, c, c / self.shots) for s, c in rows]

    def top_errors(self, m: int = 4) -> list[tuple[str, float]]:
        ident = "I" * len(self.qubits)
        return [(s, p) for s, _, p in self.ranked() if s != ident][:m]

    def merge(self, other: PauliHistogram) -> PauliHistogram:
        if other.qubits != self.qubits:
            raise InvalidParameter("cannot merge histograms over different qubits")
        return PauliHistogram(self.qubits, self.counts + other.counts, self.shots + other.shots)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pauli_string", "count", "probability"])
        for s, c, p in self.ranked():
            w.writerow([s, c, f"{p:.6f}"])
        return buf.getvalue()


@dataclass
class ValueEstimate:
    value: float
    stderr: float

    def __float__(self):
        return float(self.value)


@dataclass
class ShotResult:
    bits: np.ndarray  # shots x num_clbits, uint8
    members: np.ndarray  # shots x registers, sampled ensemble member per register
    seed: int
    stream: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def shots(self) -> int:
        return self.bits.shape[0]

    def parity(self, clbits: Sequence[int]) -> np.ndarray:
        if not clbits:
            return np.zeros(self.shots, dtype=np.uint8)
        return np.bitwise_xor.reduce(self.bits[:, list(clbits)], axis=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["shot", "bits", "members"])
        for i in range(self.shots):
            w.writerow([i, "".join(map(str, self.bits[i])), " ".join(map(str, self.members[i]))])
        return buf.getvalue()


# compiled program

# op codes
_U1, _X, _PH, _CX, _MCX, _CSW, _FAN, _MEAS, _RESET, _BELL, _CORR, _PAULI = range(12)


@dataclass
class _Op:
    code: int
    qs: tuple[int, ...]
    arg: object = None
    noise: int = 0  # 0 none, 1 one-qubit, 2 multi-qubit, 3 bell, 4 measurement
    inject: tuple | None = None
    gate: Gate | None = None


def _registers(circuit: Circuit):
    regs = []
    for entry in circuit.meta.get("init", []):
        ens = [(w, np.asarray(re, float) + 1j * np.asarray(im, float)) for w, re, im in entry["ensemble"]]
        regs.append((tuple(entry["qubits"]), ens))
    return regs


class _Program:
    def __init__(self, circuit: Circuit, allow_macros: bool = False):
        if circuit.has_macros() and not allow_macros:
            raise AbstractionError("circuit still holds macro gates; expand them or allow macro simulation")
        self.circuit = circuit
        self.nq = len(circuit.qubits)
        self.num_clbits = circuit.num_clbits
        self.registers = _registers(circuit)
        self.reg_of = {}
        for r, (qs, _) in enumerate(self.registers):
            for q in qs:
                self.reg_of[q] = r
        injections = {}
        for inj in circuit.meta.get("injections", []):
            injections[(inj["layer"], tuple(inj["qubits"]))] = inj
        raw = []
        for li, layer in enumerate(circuit.layers):
            for g in layer:
                op = self._lower(g)
                qs = op.qs
                key = (li, tuple(circuit.qubit_index(q) for q in g.operands))
                if key in injections:
                    inj = injections[key]
                    letters = list(inj["dist"].keys())
                    probs = np.array([inj["dist"][s] for s in letters], float)
                    op.inject = (key[1], letters, np.cumsum(probs / probs.sum()))
                    op.noise = 0  # the sampled error replaces the gate's own noise
                raw.append(op)
        self.ops, self.terminal = self._order(raw)

    def _lower(self, g: Gate) -> _Op:
        idx = self.circuit.qubit_index
        qs = tuple(idx(q) for q in g.operands)
        op = g.op
        if op is Op.H:
            return _Op(_U1, qs, (_H, _H, _H, -_H), 1, gate=g)
        if op is Op.X:
            return _Op(_X, qs, None, 1, gate=g)
        if op is Op.Y:
            return _Op(_PAULI, qs, "Y", 1, gate=g)
        if op in _PHASES:
            return _Op(_PH, qs, _PHASES[op], 1, gate=g)
        if op is Op.CNOT:
            return _Op(_CX, qs, None, 2, gate=g)
        if op is Op.TOFFOLI:
            return _Op(_MCX, qs, None, 2, gate=g)
        if op is Op.CSWAP:
            return _Op(_CSW, qs, None, 2, gate=g)
        if op is Op.FANOUT:
            return _Op(_FAN, qs, None, 2, gate=g)
        if op is Op.MEASURE:
            return _Op(_MEAS, qs, (g.basis, g.clbit), 4, gate=g)
        if op is Op.RESET:
            return _Op(_RESET, qs, None, 0, gate=g)
        if op is Op.BELLPREP:
            return _Op(_BELL, qs, None, 3, gate=g)
        if op is Op.PAULICORRECT:
            return _Op(_CORR, qs, (g.pauli, g.condition), 1, gate=g)
        raise EngineError(f"no statevector rule for {op.value}")

    def _order(self, raw: list[_Op]):
        """Demand-driven order: repeatedly run the cheapest pending measurement
        together with whatever it still depends on, so qubits live briefly."""
        used_bits = set()
        for o in raw:
            if o.code == _CORR:
                used_bits.update(o.arg[1])
        last_touch = {}
        for i, o in enumerate(raw):
            for q in o.qs:
                last_touch[q] = i
        terminal = [i for i, o in enumerate(raw)
                    if o.code == _MEAS and last_touch[o.qs[0]] == i and o.arg[1] not in used_bits]
        term_set = set(terminal)
        # ancestor bitmasks and static allocation counts
        anc = [0] * len(raw)
        alloc = [0] * len(raw)
        prev_q: dict[int, int] = {}
        producer: dict[int, int] = {}
        for i, o in enumerate(raw):
            a = 0
            for q in o.qs:
                j = prev_q.get(q)
                if j is None or raw[j].code in (_MEAS, _RESET) or o.code == _BELL:
                    alloc[i] += 1
                if j is not None:
                    a |= anc[j] | (1 << j)
                prev_q[q] = i
            if o.code == _CORR:
                for b in o.arg[1]:
                    j = producer[b]
                    a |= anc[j] | (1 << j)
            if o.code == _MEAS:
                producer[o.arg[1]] = i
            anc[i] = a
        alloc_mask = 0
        for i, v in enumerate(alloc):
            if v:
                alloc_mask |= 1 << i
        pending = [i for i, o in enumerate(raw) if o.code in (_MEAS, _RESET) and i not in term_set]
        done = 0
        order: list[int] = []

        def take(mask: int):
            nonlocal done
            idx = []
            m = mask
            while m:
                low = m & -m
                idx.append(low.bit_length() - 1)
                m ^= low
            order.extend(idx)  # ascending original index is a valid topological order
            done |= mask

        while pending:
            best, best_cost = None, None
            for i in pending:
                need = (anc[i] | (1 << i)) & ~done
                cost = sum(alloc[j] for j in _bits(need & alloc_mask))
                if best_cost is None or cost < best_cost:
                    best, best_cost = i, cost
            take((anc[best] | (1 << best)) & ~done)
            pending = [i for i in pending if not (done >> i) & 1]
        rest = ((1 << len(raw)) - 1) & ~done
        for i in terminal:
            rest &= ~(1 << i)
        take(rest)
        return [raw[i] for i in order], [raw[i] for i in terminal]


def _bits(m: int):
    while m:
        low = m & -m
        yield low.bit_length() - 1
        m ^= low


# statevector state

class _State:
    __slots__ = ("psi", "bit_of", "at", "cap", "reg_done")

    def __init__(self, cap: int):
        self.psi = np.ones(1, dtype=np.complex128)
        self.bit_of: dict[int, int] = {}
        self.at: list[int] = []
        self.cap = cap
        self.reg_done: set[int] = set()

    def copy(self) -> _State:
        s = _State(self.cap)
        s.psi = self.psi.copy()
        s.bit_of = dict(self.bit_of)
        s.at = list(self.at)
        s.reg_done = set(self.reg_done)
        return s

    def _grow(self, m: int):
        if len(self.at) + m > self.cap:
            raise CapacityError(f"live qubit count would exceed the cap of {self.cap}")

    def alloc_zero(self, q: int):
        self._grow(1)
        n = self.psi.shape[0]
        new = np.zeros(2 * n, dtype=np.complex128)
        new[:n] = self.psi
        self.psi = new
        self.bit_of[q] = len(self.at)
        self.at.append(q)

    def alloc_register(self, qs: Sequence[int], amps: np.ndarray):
        self._grow(len(qs))
        self.psi = np.kron(np.asarray(amps, dtype=np.complex128), self.psi)
        base = len(self.at)
        m = len(qs)
        for j, q in enumerate(qs):
            self.bit_of[q] = base + m - 1 - j
        self.at.extend(reversed(qs))

    def remove(self, q: int, outcome: int, prob: float):
        b = self.bit_of.pop(q)
        self.psi = kernels.collapse_remove(self.psi, b, outcome, 1.0 / math.sqrt(prob))
        self.at.pop(b)
        for i in range(b, len(self.at)):
            self.bit_of[self.at[i]] = i

    def prob_one(self, q: int) -> float:
        return min(1.0, max(0.0, kernels.prob_one(self.psi, self.bit_of[q])))


class _Runner:
    """Executes a program on one trajectory."""

    def __init__(self, prog: _Program, noise: NoiseModel, rng: np.random.Generator, cap: int):
        self.prog = prog
        self.noise = noise
        self.rng = rng
        self.cap = cap

    # state helpers

    def ensure(self, st: _State, q: int, members):
        if q in st.bit_of:
            return
        r = self.prog.reg_of.get(q)
        if r is not None and r not in st.reg_done:
            st.reg_done.add(r)
            qs, ens = self.prog.registers[r]
            st.alloc_register(qs, ens[members[r]][1])
        else:
            st.alloc_zero(q)

    def pauli(self, st: _State, q: int, letter: str):
        b = st.bit_of[q]
        if letter in "XY":
            kernels.apply_mcx(st.psi, 0, b)
        if letter in "ZY":
            kernels.apply_phase(st.psi, 1 << b, -1.0)

    def depolarize(self, st: _State, qs: Sequence[int]):
        rng = self.rng
        while True:
            letters = ["IXYZ"[v] for v in rng.integers(0, 4, len(qs))]
            if any(c != "I" for c in letters):
                break
        for q, c in zip(qs, letters):
            if c != "I":
                self.pauli(st, q, c)

    def rotate_for(self, st: _State, q: int, basis: str):
        b = st.bit_of[q]
        if basis == "Y":
            kernels.apply_phase(st.psi, 1 << b, -1j)
        if basis in "XY":
            kernels.apply_1q(st.psi, b, _H, _H, _H, -_H)

    def measure(self, st: _State, q: int, basis: str, forced: int | None = None) -> tuple[int, float]:
        self.rotate_for(st, q, basis)
        p1 = st.prob_one(q)
        if forced is None:
            out = 1 if self.rng.random() < p1 else 0
        else:
            out = forced
        p = p1 if out else 1.0 - p1
        if p <= 0.0:
            return out, 0.0
        st.remove(q, out, p)
        return out, p

    def discard(self, st: _State, q: int):
        if q in st.bit_of:
            self.measure(st, q, "Z")

    def apply(self, st: _State, o: _Op, bits: np.ndarray, members, fault: bool):
        code, qs = o.code, o.qs
        if code == _BELL:
            for q in qs:
                self.ensure(st, q, members)
                self.discard(st, q)
            a, b = qs
            st.alloc_zero(a)
            st.alloc_zero(b)
            ba, bb = st.bit_of[a], st.bit_of[b]
            kernels.apply_1q(st.psi, ba, _H, _H, _H, -_H)
            kernels.apply_mcx(st.psi, 1 << ba, bb)
            if fault:
                c = "IXYZ"[int(self.rng.integers(0, 4))]
                if c != "I":
                    self.pauli(st, b, c)
            return
        for q in qs:
            self.ensure(st, q, members)
        bo = st.bit_of
        if code == _U1:
            m = o.arg
            kernels.apply_1q(st.psi, bo[qs[0]], m[0], m[1], m[2], m[3])
        elif code == _X:
            kernels.apply_mcx(st.psi, 0, bo[qs[0]])
        elif code == _PH:
            kernels.apply_phase(st.psi, 1 << bo[qs[0]], o.arg)
        elif code == _PAULI:
            self.pauli(st, qs[0], o.arg)
        elif code == _CX:
            kernels.apply_mcx(st.psi, 1 << bo[qs[0]], bo[qs[1]])
        elif code == _MCX:
            kernels.apply_mcx(st.psi, (1 << bo[qs[0]]) | (1 << bo[qs[1]]), bo[qs[2]])
        elif code == _FAN:
            mask = 1 << bo[qs[0]]
            for t in qs[1:]:
                kernels.apply_mcx(st.psi, mask, bo[t])
        elif code == _CSW:
            n = (len(qs) - 1) // 2
            mask = 1 << bo[qs[0]]
            for l in range(n):
                kernels.apply_mcswap(st.psi, mask, bo[qs[1 + l]], bo[qs[1 + n + l]])
        elif code == _MEAS:
            basis, clbit = o.arg
            out, _ = self.measure(st, qs[0], basis)
            bits[clbit] = out ^ (1 if fault else 0)
            return
        elif code == _RESET:
            self.discard(st, qs[0])
            return
        elif code == _CORR:
            letter, cond = o.arg
            if int(np.bitwise_xor.reduce(bits[list(cond)])) & 1:
                self.pauli(st, qs[0], letter)
        if fault:
            self.depolarize(st, qs)
        if o.inject is not None:
            self.inject(st, o)

    def inject(self, st: _State, o: _Op):
        qs, letters, cum = o.inject
        s = letters[int(np.searchsorted(cum, self.rng.random(), side="right").clip(0, len(letters) - 1))]
        for q, c in zip(qs, s):
            if c != "I":
                self.pauli(st, q, c)

    def fault_mask(self, ops: Sequence[_Op]) -> np.ndarray:
        nz = self.noise
        probs = np.array([(0.0, nz.p1, nz.p2, nz.p_bell, nz.p_meas)[o.noise] for o in ops])
        if not probs.any():
            return np.zeros(len(ops), dtype=bool)
        return self.rng.random(len(ops)) < probs

    def trajectory(self, members, nshots: int) -> np.ndarray:
        prog = self.prog
        st = _State(self.cap)
        bits = np.zeros(prog.num_clbits, dtype=np.uint8)
        faults = self.fault_mask(prog.ops)
        for o, f in zip(prog.ops, faults):
            self.apply(st, o, bits, members, bool(f))
        out = np.tile(bits, (nshots, 1))
        term = prog.terminal
        if not term:
            return out
        for o in term:
            self.ensure(st, o.qs[0], members)
            self.rotate_for(st, o.qs[0], o.arg[0])
        probs = np.abs(st.psi) ** 2
        tb = [st.bit_of[o.qs[0]] for o in term]
        L = len(st.at)
        # marginal over the terminal bits, axis j of the reshaped array is bit L-1-j
        t = probs.reshape((2,) * L) if L else probs
        keep_axes = [L - 1 - b for b in tb]
        drop = tuple(ax for ax in range(L) if ax not in keep_axes)
        marg = t.sum(axis=drop) if drop else t
        # reorder remaining axes to follow `term`
        remaining = sorted(keep_axes)
        marg = np.transpose(marg, [remaining.index(ax) for ax in keep_axes])
        flat = marg.reshape(-1)
        flat = flat / flat.sum()
        picks = self.rng.choice(flat.shape[0], size=nshots, p=flat)
        m = len(term)
        for j, o in enumerate(term):
            col = (picks >> (m - 1 - j)) & 1
            if self.noise.p_meas > 0:
                col = col ^ (self.rng.random(nshots) < self.noise.p_meas)
            out[:, o.arg[1]] = col
        return out

    def final_state(self, members) -> tuple[_State, np.ndarray]:
        """Run every op, terminal measurements included, and return the state."""
        st = _State(self.cap)
        bits = np.zeros(self.prog.num_clbits, dtype=np.uint8)
        ops = list(self.prog.ops) + list(self.prog.terminal)
        faults = self.fault_mask(ops)
        for o, f in zip(ops, faults):
            self.apply(st, o, bits, members, bool(f))
        return st, bits


def _sample_members(prog: _Program, rng: np.random.Generator, shots: int) -> np.ndarray:
    cols = []
    for _, ens in prog.registers:
        w = np.array([e[0] for e in ens], float)
        cols.append(rng.choice(len(ens), size=shots, p=w / w.sum()) if len(ens) > 1 else np.zeros(shots, int))
    return np.stack(cols, axis=1) if cols else np.zeros((shots, 0), int)


def run_statevector(circuit: Circuit, noise: NoiseModel | None = None, shots: int = 1000, seed: int = 0,
                    threads: int = 1, cap: int = DEFAULT_CAP, allow_macros: bool = False,
                    trajectories: int = 2, stream: int = 0) -> ShotResult:
    """Sample `shots` runs. Same (circuit, noise, seed, stream) gives the same result at any thread count."""
    noise = noise or NOISELESS
    prog = _Program(circuit, allow_macros)
    noisy = not noise.is_zero or bool(circuit.meta.get("injections"))
    size = NOISY_BLOCK if noisy else NOISELESS_BLOCK
    blocks = [(b, min(size, shots - b)) for b in range(0, shots, size)]

    def work(ib: int):
        start, count = blocks[ib]
        rng = np.random.default_rng([seed, stream, ib])
        runner = _Runner(prog, noise, rng, cap)
        members = _sample_members(prog, rng, count)
        bits = np.zeros((count, prog.num_clbits), dtype=np.uint8)
        if noisy:
            for s in range(count):
                bits[s] = runner.trajectory(members[s], 1)[0]
            return bits, members
        keys, inverse = np.unique(members, axis=0, return_inverse=True) if members.shape[1] else (
            np.zeros((1, 0), int), np.zeros(count, int))
        inverse = np.asarray(inverse).reshape(-1)
        for g, key in enumerate(keys):
            idx = np.flatnonzero(inverse == g)
            chunks = np.array_split(idx, min(trajectories, len(idx)))
            for ch in chunks:
                bits[ch] = runner.trajectory(key, len(ch))
        return bits, members

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, range(len(blocks))))
    else:
        parts = [work(i) for i in range(len(blocks))]
    bits = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, prog.num_clbits), np.uint8)
    members = np.concatenate([p[1] for p in parts]) if parts else np.zeros((0, len(prog.registers)), int)
    return ShotResult(bits, members, seed, stream)


# exact channel checks

def _reduced(st: _State, keep: Sequence[int]) -> np.ndarray:
    """Density matrix of `keep` (first entry most significant) from the live state."""
    L = len(st.at)
    t = st.psi.reshape((2,) * L) if L else st.psi
    axes = [L - 1 - st.bit_of[q] for q in keep]
    rest = [ax for ax in range(L) if ax not in axes]
    m = np.transpose(t, axes + rest).reshape(2 ** len(keep), -1)
    return m @ m.conj().T


def _enumerate(runner: _Runner, ops, i, st, bits, members, weight, keep, acc, forced_faults):
    prog = runner.prog
    while i < len(ops):
        o = ops[i]
        if o.code == _MEAS:
            for q in o.qs:
                runner.ensure(st, q, members)
            basis, clbit = o.arg
            runner.rotate_for(st, o.qs[0], basis)
            p1 = st.prob_one(o.qs[0])
            for out, p in ((0, 1.0 - p1), (1, p1)):
                if p < 1e-14:
                    continue
                s2 = st.copy()
                s2.remove(o.qs[0], out, p)
                b2 = bits.copy()
                b2[clbit] = out
                _enumerate(runner, ops, i + 1, s2, b2, members, weight * p, keep, acc, forced_faults)
            return
        if o.code == _BELL and runner.noise.p_bell > 0:
            pb = runner.noise.p_bell
            for c, w in (("I", 1 - 3 * pb / 4), ("X", pb / 4), ("Y", pb / 4), ("Z", pb / 4)):
                s2 = st.copy()
                runner.apply(s2, o, bits, members, False)
                if c != "I":
                    runner.pauli(s2, o.qs[1], c)
                _enumerate(runner, ops, i + 1, s2, bits.copy(), members, weight * w, keep, acc, forced_faults)
            return
        runner.apply(st, o, bits, members, False)
        i += 1
    for q in keep:
        runner.ensure(st, q, members)
    acc.append((weight, _reduced(st, keep), bits))


def branch_average(circuit: Circuit, keep: Sequence[QubitId], noise: NoiseModel | None = None,
                   members: Sequence[int] | None = None, cap: int = DEFAULT_CAP,
                   allow_macros: bool = False) -> list[tuple[float, np.ndarray, np.ndarray]]:
    """Every measurement branch (and Bell-pair Pauli branch) with its weight and
    the density matrix left on `keep`. Gate and readout noise are not enumerated."""
    noise = noise or NOISELESS
    if noise.p1 or noise.p2 or noise.p_meas:
        raise InvalidParameter("branch enumeration only covers Bell-pair noise")
    prog = _Program(circuit, allow_macros)
    runner = _Runner(prog, noise, np.random.default_rng(0), cap)
    members = list(members) if members is not None else [0] * len(prog.registers)
    keep_idx = [circuit.qubit_index(q) for q in keep]
    keep_set = set(keep_idx)
    # a final readout of a kept qubit would destroy what we want to look at
    ops = list(prog.ops) + [o for o in prog.terminal if o.qs[0] not in keep_set]
    acc: list = []
    _enumerate(runner, ops, 0, _State(cap), np.zeros(prog.num_clbits, np.uint8), members, 1.0, keep_idx, acc, None)
    return acc


def channel_density(circuit: Circuit, keep: Sequence[QubitId], **kw) -> np.ndarray:
    """Branch-averaged density matrix on `keep`."""
    return sum(w * rho for w, rho, _ in branch_average(circuit, keep, **kw))


def sample_final_densities(circuit: Circuit, keep: Sequence[QubitId], noise: NoiseModel | None = None,
                           shots: int = 100, seed: int = 0, cap: int = DEFAULT_CAP,
                           allow_macros: bool = False, members: Sequence[int] | None = None):
    """Monte-Carlo trajectories; yields the density matrix left on `keep` for each."""
    noise = noise or NOISELESS
    prog = _Program(circuit, allow_macros)
    keep_idx = [circuit.qubit_index(q) for q in keep]
    keep_set = set(keep_idx)
    rng = np.random.default_rng([seed, 7])
    runner = _Runner(prog, noise, rng, cap)
    ops = list(prog.ops) + [o for o in prog.terminal if o.qs[0] not in keep_set]
    mem_all = _sample_members(prog, rng, shots) if members is None else np.tile(members, (shots, 1))
    for s in range(shots):
        st = _State(cap)
        bits = np.zeros(prog.num_clbits, np.uint8)
        faults = runner.fault_mask(ops)
        for o, f in zip(ops, faults):
            runner.apply(st, o, bits, mem_all[s], bool(f))
        for q in keep_idx:
            runner.ensure(st, q, mem_all[s])
        yield _reduced(st, keep_idx)


# Pauli frame engine

_FRAME_OK = CLIFFORD


def run_pauli_frame(circuit: Circuit, noise: NoiseModel | None = None, shots: int = 100_000, seed: int = 0,
                    report: Sequence[QubitId] | None = None, threads: int = 1) -> PauliHistogram:
    """Sample the residual Pauli error on the reported qubits (default: every data
    and GHZ qubit that is not measured), relative to the noiseless run."""
    noise = noise or NOISELESS
    bad = sorted({g.op.value for g in circuit.gates() if g.op not in _FRAME_OK})
    if bad:
        raise EngineError(f"Pauli frame needs a Clifford circuit; found {', '.join(bad)}")
    ops = [g for layer in circuit.layers for g in layer]
    idx = circuit.qubit_index
    if report is None:
        measured = {g.operands[0] for g in ops if g.op is Op.MEASURE}
        report = [q for q in circuit.qubits if q.kind in (Kind.DATA, Kind.GHZ) and q not in measured]
    report = tuple(report)
    rep = [idx(q) for q in report]
    nq = len(circuit.qubits)
    size = FRAME_BLOCK
    blocks = [(b, min(size, shots - b)) for b in range(0, shots, size)]
    lowered = []
    for g in ops:
        lowered.append((g.op, tuple(idx(q) for q in g.operands), g))

    def work(ib: int) -> Counter:
        _, count = blocks[ib]
        rng = np.random.default_rng([seed, 11, ib])
        X = np.zeros((nq, count), bool)
        Z = np.zeros((nq, count), bool)
        rec = np.zeros((max(circuit.num_clbits, 1), count), bool)

        def dep1(q, p):
            if p <= 0:
                return
            hit = rng.random(count) < p
            k = rng.integers(1, 4, count)
            X[q] ^= hit & (k != 2)  # 1 = X, 2 = Z, 3 = Y
            Z[q] ^= hit & (k != 1)

        def depn(qs, p):
            if p <= 0:
                return
            hit = rng.random(count) < p
            k = rng.integers(1, 4 ** len(qs), count)
            for j, q in enumerate(qs):
                d = (k >> (2 * (len(qs) - 1 - j))) & 3
                X[q] ^= hit & ((d == 1) | (d == 3))
                Z[q] ^= hit & ((d == 2) | (d == 3))

        for op, qs, g in lowered:
            if op is Op.H:
                q = qs[0]
                X[q], Z[q] = Z[q].copy(), X[q].copy()
                dep1(q, noise.p1)
            elif op in (Op.S, Op.SDG):
                q = qs[0]
                Z[q] ^= X[q]
                dep1(q, noise.p1)
            elif op in (Op.X, Op.Y, Op.Z):
                dep1(qs[0], noise.p1)
            elif op is Op.CNOT:
                c, t = qs
                X[t] ^= X[c]
                Z[c] ^= Z[t]
                depn(qs, noise.p2)
            elif op is Op.MEASURE:
                q = qs[0]
                flip = rng.random(count) < noise.p_meas if noise.p_meas > 0 else np.zeros(count, bool)
                if g.basis == "Z":
                    rec[g.clbit] = X[q] ^ flip
                    Z[q] = False
                elif g.basis == "X":
                    rec[g.clbit] = Z[q] ^ flip
                    X[q] = False
                else:
                    rec[g.clbit] = (X[q] ^ Z[q]) ^ flip
                    X[q] = False
                    Z[q] = False
            elif op is Op.RESET:
                X[qs[0]] = False
                Z[qs[0]] = False
            elif op is Op.BELLPREP:
                a, b = qs
                X[a] = Z[a] = X[b] = Z[b] = False
                if noise.p_bell > 0:
                    hit = rng.random(count) < noise.p_bell
                    k = rng.integers(0, 4, count)
                    X[b] ^= hit & ((k == 1) | (k == 3))
                    Z[b] ^= hit & ((k == 2) | (k == 3))
            elif op is Op.PAULICORRECT:
                q = qs[0]
                par = np.bitwise_xor.reduce(rec[list(g.condition)], axis=0)
                if g.pauli in "XY":
                    X[q] ^= par
                if g.pauli in "ZY":
                    Z[q] ^= par
                dep1(q, noise.p1)
        codes = X[rep].astype(np.uint8) + 2 * Z[rep].astype(np.uint8)
        letters = np.array(list("IXZY"))
        strings = ["".join(row) for row in letters[codes.T]] if rep else [""] * count
        return Counter(strings)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, range(len(blocks))))
    else:
        parts = [work(i) for i in range(len(blocks))]
    total = Counter()
    for p in parts:
        total.update(p)
    return PauliHistogram(report, total, shots)


def inject_sampled_error(circuit: Circuit, site: int, distribution: PauliHistogram | dict,
                         qubits: Sequence[QubitId] | None = None) -> Circuit:
    """Copy of `circuit` where the gate at layer `site` acting on `qubits` is followed
    by a Pauli drawn from `distribution` on every shot."""
    if isinstance(distribution, PauliHistogram):
        qubits = distribution.qubits if qubits is None else qubits
        probs = distribution.probabilities()
    else:
        probs = dict(distribution)
    if qubits is None:
        raise InjectionError("need the qubit list the distribution refers to")
    if not 0 <= site < len(circuit.layers):
        raise InjectionError(f"no layer {site}")
    qubits = tuple(qubits)
    target = [g for g in circuit.layers[site] if set(g.operands) == set(qubits)]
    if not target:
        raise InjectionError("distribution qubits do not match any gate at that site")
    if any(len(s) != len(qubits) for s in probs):
        raise InjectionError("Pauli strings and qubit list differ in length")
    # reorder strings to the gate's operand order
    gate = target[0]
    perm = [qubits.index(q) for q in gate.operands]
    dist = {"".join(s[j] for j in perm): p for s, p in probs.items()}
    out = circuit.copy()
    out.meta.setdefault("injections", []).append(
        {"layer": site, "qubits": [circuit.qubit_index(q) for q in gate.operands], "dist": dist})
    return out


# derived checks

def classical_fidelity(circuit: Circuit, noise: NoiseModel | None = None, shots: int = 1000, seed: int = 0,
                       threads: int = 1, cap: int = DEFAULT_CAP) -> ValueEstimate:
    """Fraction of shots whose Z readout equals the ideal CSWAP of a random
    computational-basis input (circuit from compiler.build_cswap_test)."""
    info = circuit.meta.get("cswap")
    if not info or not info.get("out_bits"):
        raise InvalidParameter("circuit was not built by build_cswap_test with readout")
    noise = noise or NOISELESS
    prog = _Program(circuit, allow_macros=circuit.has_macros())
    ops = list(prog.ops) + list(prog.terminal)
    n = len(info["left"])
    order = [info["ctrl"], *info["left"], *info["right"]]
    reg_pos = {qs[0]: r for r, (qs, _) in enumerate(prog.registers)}
    regs = [reg_pos[q] for q in order]
    out_bits = info["out_bits"]
    injected = any(o.inject is not None for o in ops)
    blocks = [(b, min(NOISY_BLOCK, shots - b)) for b in range(0, shots, NOISY_BLOCK)]

    def work(ib: int) -> int:
        _, count = blocks[ib]
        rng = np.random.default_rng([seed, 3, ib])
        runner = _Runner(prog, noise, rng, cap)
        members = _sample_members(prog, rng, count)
        good = 0
        for s in range(count):
            faults = runner.fault_mask(ops)
            if not faults.any() and not injected:
                good += 1  # a fault-free run of a correct gadget is always right
                continue
            st = _State(cap)
            bits = np.zeros(prog.num_clbits, np.uint8)
            for o, f in zip(ops, faults):
                runner.apply(st, o, bits, members[s], bool(f))
            x = [int(members[s][r]) for r in regs]
            want = x[:1] + (x[1 + n:] + x[1:1 + n] if x[0] else x[1:])
            good += int(list(bits[out_bits]) == want)
        return good

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            total = sum(ex.map(work, range(len(blocks))))
    else:
        total = sum(work(i) for i in range(len(blocks)))
    f = total / shots
    return ValueEstimate(f, math.sqrt(max(f * (1 - f), 1.0 / shots) / shots))


def _pure_vector(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(rho)
    return v[:, -1]


def gadget_fidelity(lowered: Circuit, reference: Circuit, out: Sequence[QubitId], ref_out: Sequence[QubitId],
                    noise: NoiseModel | None = None, exhaustive_limit: int = 12, trajectories: int = 64,
                    seed: int = 0) -> tuple[float, float]:
    """(average fidelity, worst branch fidelity) of the lowered gadget's output
    against the reference's ideal output, for the inputs attached to both.

    Every measurement branch is enumerated when there are at most
    `exhaustive_limit` mid-circuit measurements; otherwise `trajectories`
    random branches are checked one by one."""
    ideal = channel_density(reference, ref_out, allow_macros=True)
    psi = _pure_vector(ideal)
    n_meas = sum(1 for g in lowered.gates() if g.op is Op.MEASURE and g.operands[0] not in set(out))
    if n_meas <= exhaustive_limit:
        branches = branch_average(lowered, out, noise, allow_macros=lowered.has_macros())
        fids = [float(np.real(psi.conj() @ rho @ psi)) / max(float(np.real(np.trace(rho))), 1e-300)
                for _, rho, _ in branches]
        avg = sum(w * float(np.real(psi.conj() @ rho @ psi)) for w, rho, _ in branches)
        return avg, min(fids)
    fids = [float(np.real(psi.conj() @ rho @ psi))
            for rho in sample_final_densities(lowered, out, noise, trajectories, seed,
                                              allow_macros=lowered.has_macros())]
    return float(np.mean(fids)), min(fids)
