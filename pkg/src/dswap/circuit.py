"""Distributed circuit IR: qubit bookkeeping, layered gates, depth and text format."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidParameter, SchedulingError, ValidationError

FORMAT_VERSION = 1


class Kind(str, enum.Enum):
    DATA = "data"
    GHZ = "ghz"
    ANCILLA = "ancilla"
    BELL_HALF = "bell_half"


class Op(str, enum.Enum):
    H = "H"
    X = "X"
    Y = "Y"
    Z = "Z"
    S = "S"
    SDG = "Sdg"
    T = "T"
    TDG = "Tdg"
    CNOT = "CNOT"
    TOFFOLI = "Toffoli"
    CSWAP = "CSwap"
    FANOUT = "Fanout"
    MEASURE = "Measure"
    RESET = "Reset"
    BELLPREP = "BellPrep"
    PAULICORRECT = "PauliCorrect"


SINGLE_QUBIT = frozenset({Op.H, Op.X, Op.Y, Op.Z, Op.S, Op.SDG, Op.T, Op.TDG})
MACROS = frozenset({Op.CSWAP, Op.FANOUT})
CLIFFORD = frozenset({Op.H, Op.X, Op.Y, Op.Z, Op.S, Op.SDG, Op.CNOT, Op.MEASURE,
                      Op.RESET, Op.BELLPREP, Op.PAULICORRECT})


class Level(str, enum.Enum):
    MACRO = "macro"
    PHYSICAL = "physical"


@dataclass(frozen=True, order=True)
class QubitId:
    qpu: int
    kind: Kind
    local_index: int

    def __str__(self) -> str:
        return f"{self.kind.value}[{self.qpu}.{self.local_index}]"


@dataclass(frozen=True)
class Gate:
    """One operation. ``condition`` is a tuple of classical bits whose XOR gates a PauliCorrect."""

    op: Op
    operands: tuple[QubitId, ...]
    basis: str | None = None
    condition: tuple[int, ...] | None = None
    clbit: int | None = None
    pauli: str | None = None
    step: str | None = None

    def __post_init__(self):
        n = len(self.operands)
        op = self.op
        if len(set(self.operands)) != n:
            raise ValidationError(f"{op.value}: repeated operand")
        if op in SINGLE_QUBIT or op in (Op.MEASURE, Op.RESET, Op.PAULICORRECT):
            ok = n == 1
        elif op in (Op.CNOT, Op.BELLPREP):
            ok = n == 2
        elif op is Op.TOFFOLI:
            ok = n == 3
        elif op is Op.CSWAP:
            ok = n >= 3 and n % 2 == 1
        else:
            ok = n >= 2
        if not ok:
            raise ValidationError(f"{op.value}: bad operand count {n}")
        if op is Op.MEASURE:
            if self.basis not in ("X", "Y", "Z") or self.clbit is None:
                raise ValidationError("Measure needs a basis and a classical bit")
        if op is Op.PAULICORRECT:
            if self.pauli not in ("X", "Y", "Z") or not self.condition:
                raise ValidationError("PauliCorrect needs a Pauli and a condition")

    @property
    def qpus(self) -> set[int]:
        return {q.qpu for q in self.operands}

    def with_step(self, step: str | None) -> Gate:
        return Gate(self.op, self.operands, self.basis, self.condition, self.clbit, self.pauli, step)


# gate constructors used everywhere else

def g1(op: Op, q: QubitId, step=None) -> Gate:
    return Gate(op, (q,), step=step)


def cnot(c: QubitId, t: QubitId, step=None) -> Gate:
    return Gate(Op.CNOT, (c, t), step=step)


def toffoli(c1: QubitId, c2: QubitId, t: QubitId, step=None) -> Gate:
    return Gate(Op.TOFFOLI, (c1, c2, t), step=step)


def fanout(c: QubitId, targets: Sequence[QubitId], step=None) -> Gate:
    return Gate(Op.FANOUT, (c, *targets), step=step)


def cswap(c: QubitId, left: Sequence[QubitId], right: Sequence[QubitId], step=None) -> Gate:
    if len(left) != len(right):
        raise ValidationError("CSwap registers differ in width")
    return Gate(Op.CSWAP, (c, *left, *right), step=step)


def measure(q: QubitId, clbit: int, basis: str = "Z", step=None) -> Gate:
    return Gate(Op.MEASURE, (q,), basis=basis, clbit=clbit, step=step)


def reset(q: QubitId, step=None) -> Gate:
    return Gate(Op.RESET, (q,), step=step)


def bellprep(a: QubitId, b: QubitId, step=None) -> Gate:
    """Bell pair on (a, b); b is the half that travelled over the link."""
    return Gate(Op.BELLPREP, (a, b), step=step)


def correct(pauli: str, q: QubitId, bits: Iterable[int], step=None) -> Gate:
    return Gate(Op.PAULICORRECT, (q,), condition=tuple(sorted(bits)), pauli=pauli, step=step)


def depth_of_layer(layer: Sequence[Gate]) -> int:
    # an empty layer is an idle time step; a layer of only Bell pairs is free
    return 0 if layer and all(g.op is Op.BELLPREP for g in layer) else 1


@dataclass
class PartySpec:
    """k input states of n qubits each; every entry is a list of (weight, amplitudes)."""

    k: int
    n: int
    states: list[list[tuple[float, np.ndarray]]]

    def __post_init__(self):
        if self.k < 2 or self.n < 1:
            raise InvalidParameter("need k >= 2 and n >= 1")
        if len(self.states) != self.k:
            raise InvalidParameter(f"expected {self.k} states, got {len(self.states)}")
        norm = []
        for ens in self.states:
            if isinstance(ens, np.ndarray) or (ens and not isinstance(ens[0], tuple)):
                ens = [(1.0, np.asarray(ens, dtype=complex))]
            ens = [(float(w), np.asarray(v, dtype=complex)) for w, v in ens]
            if any(w < 0 for w, _ in ens) or abs(sum(w for w, _ in ens) - 1) > 1e-12:
                raise InvalidParameter("ensemble weights must be nonnegative and sum to 1")
            for _, v in ens:
                if v.shape != (2**self.n,):
                    raise InvalidParameter(f"state has shape {v.shape}, want ({2**self.n},)")
                if abs(np.linalg.norm(v) - 1) > 1e-12:
                    raise InvalidParameter("state is not normalized")
            norm.append(ens)
        self.states = norm

    @classmethod
    def pure(cls, states: Sequence[np.ndarray]) -> PartySpec:
        states = [np.asarray(s, dtype=complex) for s in states]
        n = int(np.log2(len(states[0])))
        return cls(len(states), n, [[(1.0, s)] for s in states])

    def density(self, i: int) -> np.ndarray:
        return sum(w * np.outer(v, v.conj()) for w, v in self.states[i])

    def is_pure(self) -> bool:
        return all(len(e) == 1 for e in self.states)


def interleave_order(k: int) -> list[int]:
    """Line order 0, k-1, 1, k-2, ... (0-indexed parties)."""
    lo, hi, out = 0, k - 1, []
    while lo <= hi:
        out.append(lo)
        if hi != lo:
            out.append(hi)
        lo += 1
        hi -= 1
    return out


@dataclass
class Circuit:
    k: int
    n: int
    qubits: list[QubitId] = field(default_factory=list)
    layers: list[list[Gate]] = field(default_factory=list)
    num_clbits: int = 0
    level: Level = Level.MACRO
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._index = {q: i for i, q in enumerate(self.qubits)}
        self._busy: dict[QubitId, int] = {}
        self._clbit_layer: dict[int, int] = {}
        self._next: dict = {}
        for li, layer in enumerate(self.layers):
            for g in layer:
                for q in g.operands:
                    self._busy[q] = max(self._busy.get(q, -1), li)
                if g.op is Op.MEASURE:
                    self._clbit_layer[g.clbit] = li

    @property
    def topology(self) -> list[tuple[int, int]]:
        return [(i, i + 1) for i in range(self.k - 1)]

    # registries

    def add_qubit(self, q: QubitId) -> QubitId:
        if q not in self._index:
            self._index[q] = len(self.qubits)
            self.qubits.append(q)
        return q

    def fresh(self, qpu: int, kind: Kind, start: int = 0) -> QubitId:
        """Register an unused qubit of this kind on a QPU, with local index >= start."""
        key = (qpu, kind)
        idx = max(self._next.get(key, 0), start)
        while QubitId(qpu, kind, idx) in self._index:
            idx += 1
        self._next[key] = idx + 1
        return self.add_qubit(QubitId(qpu, kind, idx))

    def new_clbit(self) -> int:
        self.num_clbits += 1
        return self.num_clbits - 1

    def qubit_index(self, q: QubitId) -> int:
        return self._index[q]

    # scheduling

    def _check(self, gate: Gate):
        for q in gate.operands:
            if q not in self._index:
                raise SchedulingError(f"unknown qubit {q}")
        for b in gate.condition or ():
            if b not in self._clbit_layer:
                raise SchedulingError(f"condition bit {b} has no earlier measurement")

    def earliest_layer(self, gate: Gate) -> int:
        lo = 0
        for q in gate.operands:
            lo = max(lo, self._busy.get(q, -1) + 1)
        for b in gate.condition or ():
            lo = max(lo, self._clbit_layer[b] + 1)
        return lo

    def place(self, gate: Gate, layer: int) -> int:
        """Put a gate into a given layer, growing the layer list as needed."""
        self._check(gate)
        if gate.op is Op.MEASURE and gate.clbit in self._clbit_layer:
            raise SchedulingError(f"classical bit {gate.clbit} written twice")
        for b in gate.condition or ():
            if self._clbit_layer[b] >= layer:
                raise SchedulingError(f"condition bit {b} not yet measured at layer {layer}")
        while len(self.layers) <= layer:
            self.layers.append([])
        used = {q for g in self.layers[layer] for q in g.operands}
        if used.intersection(gate.operands):
            raise SchedulingError(f"operand collision in layer {layer}: {gate.op.value}")
        self.layers[layer].append(gate)
        for q in gate.operands:
            self._busy[q] = max(self._busy.get(q, -1), layer)
        if gate.op is Op.MEASURE:
            self._clbit_layer[gate.clbit] = layer
        return layer

    def append(self, gate: Gate, schedule: str = "earliest") -> Circuit:
        if schedule == "earliest":
            self.place(gate, self.earliest_layer(gate))
        elif schedule == "new_layer":
            self.place(gate, max(len(self.layers), self.earliest_layer(gate)))
        else:
            raise InvalidParameter(f"unknown schedule {schedule!r}")
        return self

    # queries

    def gates(self) -> Iterable[Gate]:
        for layer in self.layers:
            yield from layer

    def depth(self) -> int:
        return sum(depth_of_layer(layer) for layer in self.layers)

    def count(self, op: Op) -> int:
        return sum(1 for g in self.gates() if g.op is op)

    def copy(self) -> Circuit:
        return Circuit(self.k, self.n, list(self.qubits), [list(l) for l in self.layers],
                       self.num_clbits, self.level, json.loads(json.dumps(self.meta)))

    def structurally_equal(self, other: Circuit) -> bool:
        return (self.k, self.n, self.qubits, self.num_clbits, self.level, self.meta) == (
            other.k, other.n, other.qubits, other.num_clbits, other.level, other.meta
        ) and self.layers == other.layers

    def has_macros(self) -> bool:
        return any(g.op in MACROS for g in self.gates())


def new_circuit(k: int, n: int) -> Circuit:
    if k < 2 or n < 1:
        raise InvalidParameter(f"need k >= 2 and n >= 1, got k={k}, n={n}")
    return Circuit(k, n)


def depth(circuit: Circuit) -> int:
    return circuit.depth()


def append(circuit: Circuit, gate: Gate, schedule: str = "earliest") -> Circuit:
    return circuit.append(gate, schedule)


def validate(circuit: Circuit) -> list[str]:
    """Return a list of problems; empty means the circuit is well formed."""
    problems = []
    seen_bits: set[int] = set()
    halves: dict[QubitId, QubitId] = {}
    known = set(circuit.qubits)
    for li, layer in enumerate(circuit.layers):
        used: set[QubitId] = set()
        for g in layer:
            if used.intersection(g.operands):
                problems.append(f"layer {li}: operand collision at {g.op.value}")
            used.update(g.operands)
            if not known.issuperset(g.operands):
                problems.append(f"layer {li}: {g.op.value} uses unregistered qubit")
            if len(g.qpus) > 1 and g.op is not Op.BELLPREP:
                problems.append(f"layer {li}: {g.op.value} spans QPUs {sorted(g.qpus)}")
            if g.op is Op.BELLPREP:
                a, b = g.operands
                if a.qpu == b.qpu and circuit.k > 1 and not circuit.meta.get("single_qpu_fixture"):
                    problems.append(f"layer {li}: Bell pair inside QPU {a.qpu}")
                halves[a], halves[b] = b, a
            if circuit.level is Level.PHYSICAL and g.op in MACROS:
                problems.append(f"layer {li}: macro {g.op.value} in a physical circuit")
            for b in g.condition or ():
                if b not in seen_bits:
                    problems.append(f"layer {li}: condition on unmeasured bit {b}")
        for g in layer:
            if g.op is Op.MEASURE:
                seen_bits.add(g.clbit)
    return problems


def check(circuit: Circuit) -> Circuit:
    problems = validate(circuit)
    if problems:
        raise ValidationError("; ".join(problems[:5]))
    return circuit


# text format

def _q(q: QubitId) -> list:
    return [q.qpu, q.kind.value, q.local_index]


def serialize(circuit: Circuit) -> str:
    index = {q: i for i, q in enumerate(circuit.qubits)}
    layers = []
    for layer in circuit.layers:
        out = []
        for g in layer:
            d: dict = {"op": g.op.value, "q": [index[q] for q in g.operands]}
            for key in ("basis", "clbit", "pauli", "step"):
                if getattr(g, key) is not None:
                    d[key] = getattr(g, key)
            if g.condition is not None:
                d["cond"] = list(g.condition)
            out.append(d)
        layers.append(out)
    doc = {
        "format_version": FORMAT_VERSION,
        "k": circuit.k,
        "n": circuit.n,
        "level": circuit.level.value,
        "num_clbits": circuit.num_clbits,
        "qubits": [_q(q) for q in circuit.qubits],
        "layers": layers,
        "meta": circuit.meta,
    }
    # one gate per line keeps dumps diffable without being huge
    lines = ["{"]
    head = {k: v for k, v in doc.items() if k not in ("layers", "qubits", "meta")}
    for key, val in head.items():
        lines.append(f" {json.dumps(key)}: {json.dumps(val)},")
    lines.append(f' "qubits": {json.dumps(doc["qubits"])},')
    lines.append(f' "meta": {json.dumps(doc["meta"], sort_keys=True)},')
    lines.append(' "layers": [')
    for i, layer in enumerate(layers):
        body = ",\n   ".join(json.dumps(g, sort_keys=True) for g in layer)
        tail = "," if i < len(layers) - 1 else ""
        lines.append(f"  [\n   {body}\n  ]{tail}" if layer else f"  []{tail}")
    lines.append(" ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def deserialize(text: str) -> Circuit:
    doc = json.loads(text)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported format_version {doc.get('format_version')}")
    qubits = [QubitId(a, Kind(b), c) for a, b, c in doc["qubits"]]
    layers = []
    for layer in doc["layers"]:
        gates = []
        for d in layer:
            cond = d.get("cond")
            gates.append(Gate(Op(d["op"]), tuple(qubits[i] for i in d["q"]), d.get("basis"),
                              tuple(cond) if cond is not None else None, d.get("clbit"),
                              d.get("pauli"), d.get("step")))
        layers.append(gates)
    return Circuit(doc["k"], doc["n"], qubits, layers, doc["num_clbits"], Level(doc["level"]), doc["meta"])
