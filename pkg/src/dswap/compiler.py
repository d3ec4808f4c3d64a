"""Lowering a PartySpec onto k QPUs on a line.

Pipeline: ``swap_test`` builds the macro circuit (GHZ prep, two rounds of
CSwaps, readout); ``lower_telegate`` / ``lower_teledata`` replace each CSwap by
teleportation gadgets around a block of shared-control Toffolis;
``parallel_toffoli`` turns every such block into 8 layers with 4 Fanouts;
``expand_fanout`` replaces each Fanout by a depth-7 measurement gadget.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .circuit import (
    Circuit,
    Gate,
    Kind,
    Level,
    Op,
    PartySpec,
    QubitId,
    bellprep,
    cnot,
    correct,
    cswap,
    fanout,
    g1,
    interleave_order,
    measure,
    new_circuit,
    reset,
    toffoli,
)
from .errors import InvalidParameter, LoweringError

# step labels, in the priority used to name a layer holding gates from several steps
STEP_PRIORITY = ("fanout", "toffoli_nf", "cnot_tele", "toffoli_tele", "data_tele",
                 "distribute", "local", "ghz", "readout")


class Variant(str, enum.Enum):
    TELEGATE = "telegate"
    TELEDATA = "teledata"
    NAIVE = "naive"


@dataclass(frozen=True)
class Scheme:
    variant: Variant = Variant.TELEDATA
    fanout_expansion: bool = True

    @classmethod
    def parse(cls, name: str, fanout_expansion: bool = True) -> Scheme:
        try:
            return cls(Variant(name.lower()), fanout_expansion)
        except ValueError:
            raise InvalidParameter(f"unknown scheme {name!r}") from None


# qubit naming

def data_qubit(pos: int, lane: int) -> QubitId:
    return QubitId(pos, Kind.DATA, lane)


def ghz_qubit(pos: int, idx: int = 0) -> QubitId:
    return QubitId(pos, Kind.GHZ, idx)


def receiver(pos: int, lane: int, n: int) -> QubitId:
    # fanout ancillas use local indices 0..n-1, receivers sit right after them
    return QubitId(pos, Kind.ANCILLA, n + lane)


def ghz_ancilla(pos: int, n: int) -> QubitId:
    return QubitId(pos, Kind.ANCILLA, 2 * n)


class Block:
    """A sub-schedule: a list of layers that a pass splices into a circuit."""

    def __init__(self):
        self.layers: list[list[Gate]] = []

    def at(self, i: int, gate: Gate) -> Block:
        while len(self.layers) <= i:
            self.layers.append([])
        self.layers[i].append(gate)
        return self

    def __len__(self):
        return len(self.layers)


def _bell(c: Circuit, qa: int, qb: int, step: str) -> tuple[QubitId, QubitId, Gate]:
    a = c.fresh(qa, Kind.BELL_HALF)
    b = c.fresh(qb, Kind.BELL_HALF)
    return a, b, bellprep(a, b, step)


def _telegate_cnot(c: Circuit, blk: Block, base: int, ctrl: QubitId, tgt: QubitId, step: str,
                   bell_layer: int | None = None):
    """Remote CNOT in 3 layers: entangle both ends, measure, correct."""
    e, f, bp = _bell(c, ctrl.qpu, tgt.qpu, step)
    blk.at(base - 1 if bell_layer is None else bell_layer, bp)
    blk.at(base, cnot(ctrl, e, step))
    blk.at(base, cnot(f, tgt, step))
    me, mf = c.new_clbit(), c.new_clbit()
    blk.at(base + 1, measure(e, me, "Z", step))
    blk.at(base + 1, measure(f, mf, "X", step))
    blk.at(base + 2, correct("X", tgt, [me], step))
    blk.at(base + 2, correct("Z", ctrl, [mf], step))
    return me, mf


# GHZ preparation

def ghz_layout(k: int) -> tuple[list[int], list[int]]:
    """Positions holding GHZ qubits and the positions of the linking ancillas."""
    hosts = list(range(0, k, 2))
    links = [p + 1 for p in hosts[:-1]]
    return hosts, links


def build_ghz_prep(k: int, n: int = 1, c: Circuit | None = None) -> Circuit:
    """ceil(k/2)-qubit GHZ state over the even line positions, depth 9."""
    if k < 2:
        raise InvalidParameter("GHZ preparation needs k >= 2")
    c = c if c is not None else new_circuit(k, n)
    hosts, links = ghz_layout(k)
    g = [c.add_qubit(ghz_qubit(p)) for p in hosts]
    c.meta.setdefault("ghz", [])
    c.meta["ghz"] = sorted(set(c.meta["ghz"]) | {c.qubit_index(q) for q in g})
    blk = Block()
    blk.at(1, g1(Op.H, g[0], "ghz"))
    if len(g) == 1:
        _splice(c, _drop_empty_head(blk), len(c.layers))
        return c
    for q in g[1:]:
        blk.at(1, g1(Op.H, q, "ghz"))
    anc = [c.add_qubit(ghz_ancilla(p, n)) for p in links]
    outcomes = []
    for j, a in enumerate(anc):
        _telegate_cnot(c, blk, 2, g[j], a, "ghz", bell_layer=0)
        _telegate_cnot(c, blk, 5, g[j + 1], a, "ghz", bell_layer=0)
        s = c.new_clbit()
        blk.at(8, measure(a, s, "Z", "ghz"))
        outcomes.append(s)
    for j in range(1, len(g)):
        blk.at(9, correct("X", g[j], outcomes[:j], "ghz"))
    _splice(c, blk, len(c.layers))
    return c


def _drop_empty_head(blk: Block) -> Block:
    while blk.layers and not blk.layers[0]:
        blk.layers.pop(0)
    return blk


def _splice(c: Circuit, blk: Block, base: int):
    for i, layer in enumerate(blk.layers):
        for gate in layer:
            c.place(gate, base + i)
    while len(c.layers) < base + len(blk):
        c.layers.append([])


# swap test at macro level

def _rounds(k: int) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """CSwap partner pairs (alice, bob) by line position for the two rounds."""
    hosts, _ = ghz_layout(k)
    first = [(p, p + 1) for p in hosts if p + 1 < k]
    second = [(p, p - 1) for p in hosts if p >= 2]
    return first, second


def _state_meta(spec: PartySpec, order: list[int]) -> list:
    out = []
    for pos, party in enumerate(order):
        ens = [[w, [float(x) for x in v.real], [float(x) for x in v.imag]] for w, v in spec.states[party]]
        out.append({"party": party, "pos": pos, "ensemble": ens})
    return out


def build_swap_test(spec: PartySpec, scheme: Scheme | None = None, basis: str = "X",
                    observable: str | None = None) -> Circuit:
    """Macro-level multi-party SWAP test. ``observable`` is a Pauli string read on party 0."""
    if basis not in ("X", "Y", None):
        raise InvalidParameter(f"readout basis must be X or Y, got {basis!r}")
    if scheme is not None and scheme.variant is Variant.NAIVE:
        return build_naive_distribution(spec, basis=basis, observable=observable)
    k, n = spec.k, spec.n
    order = interleave_order(k)
    c = new_circuit(k, n)
    for p in range(k):
        for l in range(n):
            c.add_qubit(data_qubit(p, l))
    c.meta.update(order=order, init=[], scheme=(scheme.variant.value if scheme else "macro"))
    for entry in _state_meta(spec, order):
        entry["qubits"] = [c.qubit_index(data_qubit(entry["pos"], l)) for l in range(n)]
        c.meta["init"].append(entry)
    build_ghz_prep(k, n, c)
    ghz_end = len(c.layers)
    if basis == "Y":
        # S-dagger commutes with the controlled shifts, so it can sit in any idle slot
        c.append(g1(Op.SDG, ghz_qubit(0), "readout"))
    first, second = _rounds(k)
    for pairs in (first, second):
        if not pairs:
            continue
        lay = max(len(c.layers), ghz_end)
        for a, b in pairs:
            g = cswap(ghz_qubit(a), [data_qubit(a, l) for l in range(n)],
                      [data_qubit(b, l) for l in range(n)], "cswap")
            c.place(g, lay)
    _readout(c, basis, observable)
    return c


def _readout(c: Circuit, basis: str | None, observable: str | None):
    ghz = [c.qubits[i] for i in c.meta["ghz"]]
    obs_q: list[tuple[QubitId, str]] = []
    if observable is not None:
        if len(observable) != c.n or set(observable) - set("IXYZ"):
            raise InvalidParameter(f"observable must be a Pauli string of length {c.n}")
        home = c.meta.get("obs_home", [data_qubit(0, l) for l in range(c.n)])
        home = [c.qubits[i] if isinstance(i, int) else i for i in home]
        obs_q = [(home[l], p) for l, p in enumerate(observable) if p != "I"]
        for q, p in obs_q:
            if p == "Y":
                c.append(g1(Op.SDG, q, "readout"))
    c.meta["readout"] = {"basis": basis, "ghz_bits": [], "obs_bits": [], "observable": observable}
    if basis is None:
        return
    top = len(c.layers)
    for q in ghz:
        c.place(g1(Op.H, q, "readout"), top)
    for q, p in obs_q:
        if p in "XY":
            c.place(g1(Op.H, q, "readout"), top)
    for q in ghz:
        b = c.new_clbit()
        c.place(measure(q, b, "Z", "readout"), top + 1)
        c.meta["readout"]["ghz_bits"].append(b)
    for q, _ in obs_q:
        b = c.new_clbit()
        c.place(measure(q, b, "Z", "readout"), top + 1)
        c.meta["readout"]["obs_bits"].append(b)


# generic layer expansion

def expand_layers(c: Circuit, expander: Callable[[Gate, Circuit], Block | None]) -> Circuit:
    out = Circuit(c.k, c.n, list(c.qubits), [], c.num_clbits, c.level, dict(c.meta))
    out._next = dict(c._next)
    for layer in c.layers:
        subs, keep = [], []
        for g in layer:
            blk = expander(g, out)
            (keep if blk is None else subs).append(g if blk is None else blk)
        base = len(out.layers)
        if not subs:
            out.layers.append([])
            for g in keep:
                out.place(g, base)
            continue
        span = max(len(s) for s in subs)
        lead = 0
        while lead < span - 1 and all(lead >= len(s) or all(g.op is Op.BELLPREP for g in s.layers[lead])
                                      for s in subs):
            lead += 1
        for s in subs:
            _splice(out, s, base)
        while len(out.layers) < base + span:
            out.layers.append([])
        for g in keep:
            out.place(g, base + lead)
    return out


def _split_cswap(g: Gate):
    n = (len(g.operands) - 1) // 2
    return g.operands[0], list(g.operands[1:1 + n]), list(g.operands[1 + n:])


def _check_cswap(g: Gate):
    ctrl, left, right = _split_cswap(g)
    a = {ctrl.qpu, *(q.qpu for q in left)}
    b = {q.qpu for q in right}
    if len(a) != 1 or len(b) != 1 or a == b:
        raise LoweringError("CSwap must have control and left register on one QPU and the right register on another")
    return ctrl, left, right


def _toffoli_block(blk: Block, base: int, ctrl: QubitId, mids: Sequence[QubitId], tgts: Sequence[QubitId]) -> int:
    """n shared-control Toffolis, one per layer, left for the parallel-Toffoli pass."""
    for l, (b, t) in enumerate(zip(mids, tgts)):
        blk.at(base + l, toffoli(ctrl, b, t, "toffoli_block"))
    return base + len(mids)


def lower_cswap_telegate(c: Circuit, g: Gate) -> Block:
    phi, rho_i, rho_j = _check_cswap(g)
    A, B = phi.qpu, rho_j[0].qpu
    n = len(rho_i)
    blk = Block()
    # CNOT(rho_j -> rho_i) by gate teleportation; H on rho_j rides along in the measure layer
    for l in range(n):
        _telegate_cnot(c, blk, 1, rho_j[l], rho_i[l], "cnot_tele", bell_layer=0)
    _swap_last_z_for_x(blk, 3, rho_j)
    for l in range(n):
        blk.at(2, g1(Op.H, rho_j[l], "toffoli_tele"))
    # Toffoli(phi, rho_i -> rho_j) = H CCZ H with rho_j copied into a local Bell half
    es, vs = [], []
    for l in range(n):
        e, f, bp = _bell(c, A, B, "toffoli_tele")
        blk.at(0, bp)
        u = c.new_clbit()
        blk.at(4, cnot(rho_j[l], f, "toffoli_tele"))
        blk.at(5, measure(f, u, "Z", "toffoli_tele"))
        blk.at(6, correct("X", e, [u], "toffoli_tele"))
        es.append(e)
    for e in es:
        blk.at(7, g1(Op.H, e, "toffoli_block"))
    end = _toffoli_block(blk, 8, phi, rho_i, es)
    for e in es:
        blk.at(end, g1(Op.H, e, "toffoli_block"))
    for l, e in enumerate(es):
        v = c.new_clbit()
        vs.append(v)
        blk.at(end + 1, measure(e, v, "X", "toffoli_tele"))
        blk.at(end + 2, correct("Z", rho_j[l], [v], "toffoli_tele"))
        blk.at(end + 3, g1(Op.H, rho_j[l], "toffoli_tele"))
    for l in range(n):
        _telegate_cnot(c, blk, end + 4, rho_j[l], rho_i[l], "cnot_tele", bell_layer=0)
    return blk


def _swap_last_z_for_x(blk: Block, layer: int, qubits: Sequence[QubitId]):
    # a Z correction that now lands after an H must become an X correction
    qs = set(qubits)
    blk.layers[layer] = [
        Gate(Op.PAULICORRECT, g.operands, condition=g.condition, pauli="X", step=g.step)
        if g.op is Op.PAULICORRECT and g.pauli == "Z" and g.operands[0] in qs else g
        for g in blk.layers[layer]
    ]


def _teleport(c: Circuit, blk: Block, base: int, src: QubitId, dst_half: QubitId, src_half: QubitId, step: str):
    """Move src onto dst_half, given a Bell pair (src_half, dst_half). 4 layers."""
    x, z = c.new_clbit(), c.new_clbit()
    blk.at(base, cnot(src, src_half, step))
    blk.at(base + 1, measure(src, x, "X", step))
    blk.at(base + 1, measure(src_half, z, "Z", step))
    blk.at(base + 2, correct("X", dst_half, [z], step))
    blk.at(base + 3, correct("Z", dst_half, [x], step))


def lower_cswap_teledata(c: Circuit, g: Gate) -> Block:
    phi, rho_i, rho_j = _check_cswap(g)
    A, B = phi.qpu, rho_j[0].qpu
    n = len(rho_i)
    blk = Block()
    recv = [c.add_qubit(receiver(A, l, c.n)) for l in range(n)]
    for l in range(n):
        b = c.fresh(B, Kind.BELL_HALF)
        blk.at(0, bellprep(recv[l], b, "data_tele"))
        _teleport(c, blk, 1, rho_j[l], recv[l], b, "data_tele")
        blk.at(3, reset(rho_j[l], "data_tele"))
    for l in range(n):
        blk.at(5, cnot(recv[l], rho_i[l], "data_tele"))
    end = _toffoli_block(blk, 6, phi, rho_i, recv)
    back = []
    for l in range(n):
        blk.at(end, cnot(recv[l], rho_i[l], "data_tele"))
        a = c.fresh(A, Kind.BELL_HALF)
        blk.at(4, bellprep(a, rho_j[l], "data_tele"))
        back.append(a)
    for l in range(n):
        _teleport(c, blk, end + 1, recv[l], rho_j[l], back[l], "data_tele")
    return blk


def lower_cswaps(c: Circuit, variant: Variant) -> Circuit:
    fn = lower_cswap_telegate if variant is Variant.TELEGATE else lower_cswap_teledata
    out = expand_layers(c, lambda g, cc: fn(cc, g) if g.op is Op.CSWAP else None)
    out.meta["scheme"] = variant.value
    out.level = Level.MACRO if out.has_macros() else Level.PHYSICAL
    return out


# parallel Toffoli rewrite

_PHASE_WORDS = {0: [], 1: [Op.T], 2: [Op.S], 3: [Op.S, Op.T], 4: [Op.Z], 5: [Op.Z, Op.T],
                6: [Op.SDG], 7: [Op.TDG]}


def control_phase_gates(n: int) -> list[Op]:
    """Gates realising T^n on the shared control (each lane contributes one T)."""
    return list(_PHASE_WORDS[n % 8])


def parallel_ccz_block(a: QubitId, bs: Sequence[QubitId], cs: Sequence[QubitId]) -> Block:
    """n CCZ(a, b_l, c_l) sharing a: 4 single-qubit/CNOT layers and 4 Fanouts."""
    blk = Block()
    nf = "toffoli_nf"
    for b, c in zip(bs, cs):
        blk.at(0, cnot(b, c, nf))
        blk.at(1, g1(Op.TDG, c, nf))
        blk.at(3, g1(Op.T, b, nf))
        blk.at(3, g1(Op.T, c, nf))
        blk.at(4, cnot(b, c, nf))
        blk.at(5, g1(Op.TDG, c, nf))
        blk.at(6, g1(Op.TDG, b, nf))
        blk.at(7, g1(Op.T, c, nf))
    blk.at(2, fanout(a, cs, "fanout"))
    blk.at(5, fanout(a, bs, "fanout"))
    blk.at(6, fanout(a, cs, "fanout"))
    blk.at(7, fanout(a, bs, "fanout"))
    for slot, op in zip((0, 1, 3, 4), control_phase_gates(len(bs))):
        blk.at(slot, g1(op, a, nf))
    return blk


def parallel_toffoli_block(a: QubitId, bs: Sequence[QubitId], cs: Sequence[QubitId]) -> Block:
    """n Toffoli(a, b_l -> c_l) sharing a, same 8-layer shape with H on the targets."""
    blk = Block()
    nf = "toffoli_nf"
    for b, c in zip(bs, cs):
        blk.at(0, g1(Op.H, c, nf))
        blk.at(1, g1(Op.TDG, b, nf))
        blk.at(1, g1(Op.T, c, nf))
        blk.at(2, cnot(c, b, nf))
        blk.at(3, g1(Op.T, b, nf))
        blk.at(4, g1(Op.TDG, c, nf))
        blk.at(5, g1(Op.TDG, b, nf))
        blk.at(6, cnot(c, b, nf))
        blk.at(7, g1(Op.T, b, nf))
        blk.at(7, g1(Op.H, c, nf))
    blk.at(0, fanout(a, bs, "fanout"))
    blk.at(3, fanout(a, cs, "fanout"))
    blk.at(4, fanout(a, bs, "fanout"))
    blk.at(5, fanout(a, cs, "fanout"))
    for slot, op in zip((1, 2, 6, 7), control_phase_gates(len(bs))):
        blk.at(slot, g1(op, a, nf))
    return blk


def rewrite_parallel_toffoli(c: Circuit) -> Circuit:
    layers = [list(l) for l in c.layers]
    out_layers: list[list[Gate]] = []
    i = 0
    while i < len(layers):
        layer = layers[i]
        if not layer or any(g.op is not Op.TOFFOLI for g in layer):
            out_layers.append(layer)
            i += 1
            continue
        j = i
        while j < len(layers) and layers[j] and all(g.op is Op.TOFFOLI for g in layers[j]):
            j += 1
        groups: dict[QubitId, list[Gate]] = {}
        for lay in layers[i:j]:
            for g in lay:
                groups.setdefault(g.operands[0], []).append(g)
        prev = out_layers[-1] if out_layers else []
        nxt = layers[j] if j < len(layers) else []
        prev_was, nxt_was = bool(prev), bool(nxt)
        blocks = []
        for a, gs in groups.items():
            bs = [g.operands[1] for g in gs]
            ts = [g.operands[2] for g in gs]
            touched = bs + ts
            if len(set(touched)) != len(touched) or a in touched:
                raise LoweringError("Toffoli run is not a shared-control block")
            h_before = {g.operands[0] for g in prev if g.op is Op.H}
            h_after = {g.operands[0] for g in nxt if g.op is Op.H}
            if set(ts) <= h_before and set(ts) <= h_after:
                prev[:] = [g for g in prev if not (g.op is Op.H and g.operands[0] in ts)]
                nxt[:] = [g for g in nxt if not (g.op is Op.H and g.operands[0] in ts)]
                blocks.append(parallel_ccz_block(a, bs, ts))
            else:
                blocks.append(parallel_toffoli_block(a, bs, ts))
        if out_layers and prev_was and not prev:
            out_layers.pop()
        merged: list[list[Gate]] = [[] for _ in range(8)]
        for blk in blocks:
            for k_, lay in enumerate(blk.layers):
                merged[k_].extend(lay)
        out_layers.extend(merged)
        if j < len(layers) and nxt_was and not layers[j]:
            j += 1
        i = j
    out = Circuit(c.k, c.n, list(c.qubits), [], c.num_clbits, c.level, dict(c.meta))
    out._next = dict(c._next)
    for li, lay in enumerate(out_layers):
        out.layers.append([])
        for g in lay:
            out.place(g, li)
    out.level = Level.MACRO if out.has_macros() else Level.PHYSICAL
    return out


# Fanout expansion

def fanout_gadget(c: Circuit, ctrl: QubitId, targets: Sequence[QubitId], ancillas: Sequence[QubitId]) -> Block:
    """Constant-depth Fanout: pair ancillas into Bell pairs, join them into a cat
    state of copies of the control, copy onto targets, then undo with X-basis
    measurements. Exactly 7 layers for any number of targets."""
    m = len(targets)
    if len(ancillas) != m:
        raise LoweringError("Fanout needs one ancilla per target")
    a = list(ancillas)
    st = "fanout"
    blk = Block()
    blk.layers = [[] for _ in range(7)]
    paired = [i for i in range(0, m - 1, 2)]  # 0-based first members of full pairs
    for i in paired:
        blk.at(0, g1(Op.H, a[i], st))
        blk.at(1, cnot(a[i], a[i + 1], st))
    blk.at(2, cnot(ctrl, a[0], st))
    for i in range(1, m - 1, 2):
        blk.at(2, cnot(a[i], a[i + 1], st))
    # copies: odd 0-based indices, plus the last ancilla when m is odd
    if m == 1:
        copies = {0: [0]}
        joins: list[int] = []
    else:
        copies = {i: [i - 1, i] for i in range(1, m, 2)}
        if m % 2:
            copies[m - 1] = [m - 1]
        joins = [i for i in range(0, m, 2) if i not in copies]
    join_bits = {}
    for i in joins:
        s = c.new_clbit()
        join_bits[i] = s
        blk.at(3, measure(a[i], s, "Z", st))
    for i, ts in copies.items():
        blk.at(3, cnot(a[i], targets[ts[0]], st))
        if len(ts) > 1:
            blk.at(4, cnot(a[i], targets[ts[1]], st))
    zbits = []
    for i in copies:
        o = c.new_clbit()
        zbits.append(o)
        blk.at(5, measure(a[i], o, "X", st))
    for i, ts in copies.items():
        bits = [join_bits[j] for j in joins if j < i]
        for t in ts:
            if bits:
                blk.at(6, correct("X", targets[t], bits, st))
    blk.at(6, correct("Z", ctrl, zbits, st))
    for q in a:
        blk.at(6, reset(q, st))
    return blk


def expand_fanout(c: Circuit) -> Circuit:
    """Replace Fanouts; concurrent Fanouts on one QPU take disjoint slices of its ancilla pool."""
    base = c.meta.get("fanout_base", 0)
    state = {"layer": None, "used": {}}

    def expander(g: Gate, out: Circuit):
        if g.op is not Op.FANOUT:
            return None
        if state["layer"] != len(out.layers):
            state["layer"], state["used"] = len(out.layers), {}
        ctrl, targets = g.operands[0], g.operands[1:]
        q = ctrl.qpu
        if any(t.qpu != q for t in targets):
            raise LoweringError("Fanout targets must share the control's QPU")
        start = base + state["used"].get(q, 0)
        state["used"][q] = start - base + len(targets)
        anc = [out.add_qubit(QubitId(q, Kind.ANCILLA, start + i)) for i in range(len(targets))]
        return fanout_gadget(out, ctrl, targets, anc)

    out = expand_layers(c, expander)
    out.level = Level.MACRO if out.has_macros() else Level.PHYSICAL
    return out


# naive distribution

def _long_teleport(c: Circuit, blk: Block, base: int, src: QubitId, dst_qpu: int, step: str,
                   dst: QubitId | None = None) -> QubitId:
    """Teleport src to dst_qpu over the line by entanglement swapping (4 layers).

    Returns the qubit now holding the state. ``dst`` reuses a given qubit as
    the far Bell half (it must be free by then)."""
    path = list(range(src.qpu, dst_qpu, 1 if dst_qpu > src.qpu else -1)) + [dst_qpu]
    halves = []
    for u, v in zip(path, path[1:]):
        x = c.fresh(u, Kind.BELL_HALF)
        y = dst if (dst is not None and v == dst_qpu) else c.fresh(v, Kind.BELL_HALF)
        blk.at(base - 1, bellprep(x, y, step))
        halves.append((x, y))
    zs, xs = [], []
    xb, zb = c.new_clbit(), c.new_clbit()
    blk.at(base, cnot(src, halves[0][0], step))
    blk.at(base + 1, measure(src, xb, "X", step))
    blk.at(base + 1, measure(halves[0][0], zb, "Z", step))
    xs.append(xb)
    zs.append(zb)
    for (_, y_in), (x_out, _) in zip(halves, halves[1:]):
        xb, zb = c.new_clbit(), c.new_clbit()
        blk.at(base, cnot(y_in, x_out, step))
        blk.at(base + 1, measure(y_in, xb, "X", step))
        blk.at(base + 1, measure(x_out, zb, "Z", step))
        xs.append(xb)
        zs.append(zb)
    far = halves[-1][1]
    blk.at(base + 2, correct("X", far, zs, step))
    blk.at(base + 3, correct("Z", far, xs, step))
    return far


def naive_slices(n: int, k: int) -> list[list[int]]:
    """Qubit indices handled by each QPU; the last QPUs idle when n < k."""
    w = math.ceil(n / k)
    return [list(range(j * w, min(n, (j + 1) * w))) for j in range(k)]


def build_naive_distribution(spec: PartySpec, basis: str | None = "X", observable: str | None = None) -> Circuit:
    """Gather the l-th qubit of every state on one QPU, run local multi-party
    SWAP tests there (one shared-control Toffoli block per local control), and
    send the qubits home again. Local Toffoli blocks stay as macros for the
    parallel-Toffoli and Fanout passes."""
    k, n = spec.k, spec.n
    order = interleave_order(k)
    c = new_circuit(k, n)
    for p in range(k):
        for l in range(n):
            c.add_qubit(data_qubit(p, l))
    c.meta.update(order=order, init=[], scheme="naive", teleports=[])
    for entry in _state_meta(spec, order):
        entry["qubits"] = [c.qubit_index(data_qubit(entry["pos"], l)) for l in range(n)]
        c.meta["init"].append(entry)
    slices = naive_slices(n, k)
    active = [j for j in range(k) if slices[j]]
    n_ctrl = math.ceil(k / 2)
    fan_w = max(len(s) for s in slices)
    # local ancilla pools: fanout ancillas from 0, everything else above them
    c.meta["fanout_base"] = 0
    reserved = n_ctrl * fan_w + 1

    blk = Block()
    # 1. distribute slices and build the global GHZ over active QPUs, in parallel
    where: dict[tuple[int, int], QubitId] = {}
    for pos in range(k):
        for l in range(n):
            dest = next(j for j in range(k) if l in slices[j])
            q = data_qubit(pos, l)
            if dest == pos:
                where[(pos, l)] = q
            else:
                where[(pos, l)] = _long_teleport(c, blk, 1, q, dest, "distribute")
                c.meta["teleports"].append({"src": pos, "dst": dest, "dist": abs(dest - pos), "dir": "out"})
    g = [c.add_qubit(ghz_qubit(j, 0)) for j in active]
    blk.at(1, g1(Op.H, g[0], "ghz"))
    bits = []
    for j in range(1, len(g)):
        blk.at(1, g1(Op.H, g[j], "ghz"))
        a = c.fresh(active[j], Kind.ANCILLA, start=reserved)
        _telegate_cnot(c, blk, 2, g[j - 1], a, "ghz", bell_layer=0)
        blk.at(5, cnot(g[j], a, "ghz"))
        s = c.new_clbit()
        blk.at(6, measure(a, s, "Z", "ghz"))
        bits.append(s)
    for j in range(1, len(g)):
        blk.at(7, correct("X", g[j], bits[:j], "ghz"))
    t = len(blk)
    # 2. local controls: copy each QPU's GHZ member onto ceil(k/2)-1 fresh GHZ qubits
    ctrls: dict[int, list[QubitId]] = {}
    for j, gj in zip(active, g):
        extra = [c.add_qubit(ghz_qubit(j, i)) for i in range(1, n_ctrl)]
        ctrls[j] = [gj] + extra
        if extra:
            blk.at(t, fanout(gj, extra, "local"))
    if any(len(v) > 1 for v in ctrls.values()):
        t += 1
    # 3. two rounds of local CSwaps, register at local position p = order[p]'s qubit
    first, second = _rounds(k)
    for pairs in (first, second):
        if not pairs:
            continue
        for j in active:
            for a_pos, b_pos in pairs:
                for l in slices[j]:
                    blk.at(t, cnot(where[(b_pos, l)], where[(a_pos, l)], "local"))
                    blk.at(t + 1 + fan_w, cnot(where[(b_pos, l)], where[(a_pos, l)], "local"))
            for a_pos, b_pos in pairs:
                ctl = ctrls[j][a_pos // 2]
                _toffoli_block(blk, t + 1, ctl, [where[(a_pos, l)] for l in slices[j]],
                               [where[(b_pos, l)] for l in slices[j]])
        t += 2 + fan_w
    # 4. send every moved qubit home
    home = {}
    for pos in range(k):
        for l in range(n):
            q = where[(pos, l)]
            if q.qpu != pos:
                home[(pos, l)] = _long_teleport(c, blk, t + 1, q, pos, "distribute", dst=data_qubit(pos, l))
                c.meta["teleports"].append({"src": q.qpu, "dst": pos, "dist": abs(q.qpu - pos), "dir": "back"})
    c.meta["ghz"] = [c.qubit_index(q) for j in active for q in ctrls[j]]
    _splice(c, _compact(blk), 0)
    if basis == "Y":
        c.append(g1(Op.SDG, g[0], "readout"))
    c.meta["obs_home"] = [c.qubit_index(data_qubit(0, l)) for l in range(n)]
    _readout(c, basis, observable)
    return c


def _compact(blk: Block) -> Block:
    """Drop empty layers from a hand-built schedule."""
    out = Block()
    out.layers = [l for l in blk.layers if l]
    return out


# pipeline

PASSES = ("swap_test", "lower_telegate", "lower_teledata", "parallel_toffoli", "expand_fanout")


def default_pipeline(scheme: Scheme) -> list[str]:
    lower = {Variant.TELEGATE: ["lower_telegate"], Variant.TELEDATA: ["lower_teledata"], Variant.NAIVE: []}
    names = ["swap_test", *lower[scheme.variant], "parallel_toffoli"]
    if scheme.fanout_expansion:
        names.append("expand_fanout")
    return names


def run_pipeline(spec: PartySpec, scheme: Scheme, names: Sequence[str] | None = None, basis: str | None = "X",
                 observable: str | None = None, dump: Callable[[str, Circuit], None] | None = None) -> Circuit:
    names = list(names) if names is not None else default_pipeline(scheme)
    unknown = [x for x in names if x not in PASSES]
    if unknown:
        raise InvalidParameter(f"unknown pass {unknown[0]!r}; known: {', '.join(PASSES)}")
    if not names or names[0] != "swap_test":
        raise InvalidParameter("pipeline must start with swap_test")
    c: Circuit | None = None
    for name in names:
        if name == "swap_test":
            c = build_swap_test(spec, scheme, basis, observable)
        elif name == "lower_telegate":
            c = lower_cswaps(c, Variant.TELEGATE)
        elif name == "lower_teledata":
            c = lower_cswaps(c, Variant.TELEDATA)
        elif name == "parallel_toffoli":
            c = rewrite_parallel_toffoli(c)
        elif name == "expand_fanout":
            c = expand_fanout(c)
        if dump is not None:
            dump(name, c)
    c.level = Level.MACRO if c.has_macros() else Level.PHYSICAL
    return c


def compile_swap_test(spec: PartySpec, scheme: Scheme, basis: str | None = "X",
                      observable: str | None = None) -> Circuit:
    return run_pipeline(spec, scheme, None, basis, observable)


def build_fanout_test(m: int, expand: bool = True) -> Circuit:
    """One control and m targets on a single QPU, all starting in |0>."""
    if m < 1:
        raise InvalidParameter("Fanout needs at least one target")
    c = new_circuit(2, 1)
    ctrl = c.add_qubit(QubitId(0, Kind.DATA, 0))
    targets = [c.add_qubit(QubitId(0, Kind.DATA, 1 + j)) for j in range(m)]
    c.meta["fanout_base"] = 0
    c.place(fanout(ctrl, targets, "fanout"), 0)
    if expand:
        c = expand_fanout(c)
    c.level = Level.MACRO if c.has_macros() else Level.PHYSICAL
    return c


# stand-alone gadgets, for equivalence checks

GADGETS = ("teleport", "telegate_cnot", "teleported_toffoli", "fanout", "parallel_toffoli",
           "parallel_ccz", "cswap_telegate", "cswap_teledata")


def set_input_state(c: Circuit, qubits: Sequence[QubitId], ensemble) -> Circuit:
    """Start `qubits` (first is most significant) in a pure state or weighted ensemble."""
    if isinstance(ensemble, np.ndarray) or (ensemble and not isinstance(ensemble[0], tuple)):
        ensemble = [(1.0, np.asarray(ensemble, dtype=complex))]
    ens = [[float(w), [float(x) for x in np.real(v)], [float(x) for x in np.imag(v)]] for w, v in ensemble]
    for _, re, _ in ens:
        if len(re) != 2 ** len(qubits):
            raise InvalidParameter("state size does not match the qubit list")
    c.meta.setdefault("init", []).append({"qubits": [c.qubit_index(q) for q in qubits], "ensemble": ens})
    return c


def _finish(c: Circuit, expand: bool = True) -> Circuit:
    c = rewrite_parallel_toffoli(c)
    if expand and c.has_macros():
        c = expand_fanout(c)
    c.level = Level.MACRO if c.has_macros() else Level.PHYSICAL
    return c


def build_gadget(name: str, n: int = 1, expand: bool = True):
    """(lowered circuit, reference circuit, output qubits, reference qubits).

    The reference applies the ideal macro gates to the same inputs. Input
    qubits are `reference qubits`; callers attach states with set_input_state
    to both circuits."""
    if name not in GADGETS:
        raise InvalidParameter(f"unknown gadget {name!r}; known: {', '.join(GADGETS)}")
    if n < 1:
        raise InvalidParameter("need n >= 1")
    ref = new_circuit(2, n)
    low = new_circuit(2, n)
    for c in (ref, low):
        c.meta["fanout_base"] = 0
    blk = Block()
    if name == "teleport":
        src = [low.add_qubit(data_qubit(0, l)) for l in range(n)]
        ref_q = [ref.add_qubit(data_qubit(0, l)) for l in range(n)]
        out = []
        for l in range(n):
            dst = low.add_qubit(receiver(1, l, n))
            half = low.fresh(0, Kind.BELL_HALF)
            blk.at(0, bellprep(dst, half, "data_tele"))
            _teleport(low, blk, 1, src[l], dst, half, "data_tele")
            out.append(dst)
        _splice(low, blk, 0)
        return _finish(low, expand), ref, out, ref_q
    if name == "telegate_cnot":
        qs = []
        for c in (ref, low):
            qs.append([c.add_qubit(data_qubit(p, l)) for l in range(n) for p in (0, 1)])
        for l in range(n):
            ref.place(cnot(data_qubit(0, l), data_qubit(1, l), "local"), 0)
            _telegate_cnot(low, blk, 1, data_qubit(0, l), data_qubit(1, l), "cnot_tele", bell_layer=0)
        _splice(low, blk, 0)
        return _finish(low, expand), ref, qs[1], qs[0]
    if name in ("fanout",):
        qs = []
        for c in (ref, low):
            ctrl = c.add_qubit(data_qubit(0, 0))
            ts = [c.add_qubit(QubitId(0, Kind.DATA, 1 + j)) for j in range(n)]
            c.place(fanout(ctrl, ts, "fanout"), 0)
            qs.append([ctrl] + ts)
        return _finish(low, expand), ref, qs[1], qs[0]
    if name in ("parallel_toffoli", "parallel_ccz"):
        qs = []
        for c in (ref, low):
            a = c.add_qubit(ghz_qubit(0))
            bs = [c.add_qubit(data_qubit(0, l)) for l in range(n)]
            ts = [c.add_qubit(QubitId(0, Kind.DATA, n + l)) for l in range(n)]
            off = 0
            if name == "parallel_ccz":
                for t in ts:
                    c.place(g1(Op.H, t, "toffoli_block"), 0)
                off = 1
            for l in range(n):
                c.place(toffoli(a, bs[l], ts[l], "toffoli_block"), off + l)
            if name == "parallel_ccz":
                for t in ts:
                    c.place(g1(Op.H, t, "toffoli_block"), off + n)
            qs.append([a] + bs + ts)
        return _finish(low, expand), ref, qs[1], qs[0]
    if name == "teleported_toffoli":
        qs = []
        for c in (ref, low):
            a = c.add_qubit(ghz_qubit(0))
            mids = [c.add_qubit(data_qubit(0, l)) for l in range(n)]
            tgts = [c.add_qubit(data_qubit(1, l)) for l in range(n)]
            qs.append([a] + mids + tgts)
        a, mids, tgts = qs[0][0], qs[0][1:1 + n], qs[0][1 + n:]
        for l in range(n):
            ref.place(toffoli(a, mids[l], tgts[l], "toffoli_block"), l)
        # remote target: copy it into a local Bell half, act with CCZ, uncopy
        es = []
        for l in range(n):
            e, f, bp = _bell(low, 0, 1, "toffoli_tele")
            blk.at(0, bp)
            blk.at(1, g1(Op.H, tgts[l], "toffoli_tele"))
            u = low.new_clbit()
            blk.at(2, cnot(tgts[l], f, "toffoli_tele"))
            blk.at(3, measure(f, u, "Z", "toffoli_tele"))
            blk.at(4, correct("X", e, [u], "toffoli_tele"))
            blk.at(5, g1(Op.H, e, "toffoli_block"))
            es.append(e)
        end = _toffoli_block(blk, 6, a, mids, es)
        for l, e in enumerate(es):
            v = low.new_clbit()
            blk.at(end, g1(Op.H, e, "toffoli_block"))
            blk.at(end + 1, measure(e, v, "X", "toffoli_tele"))
            blk.at(end + 2, correct("Z", tgts[l], [v], "toffoli_tele"))
            blk.at(end + 3, g1(Op.H, tgts[l], "toffoli_tele"))
        _splice(low, blk, 0)
        return _finish(low, expand), ref, qs[1], qs[0]
    # CSWAP lowerings
    variant = Variant.TELEGATE if name == "cswap_telegate" else Variant.TELEDATA
    qs = []
    for c in (ref, low):
        a = c.add_qubit(ghz_qubit(0))
        left = [c.add_qubit(data_qubit(0, l)) for l in range(n)]
        right = [c.add_qubit(data_qubit(1, l)) for l in range(n)]
        c.place(cswap(a, left, right, "cswap"), 0)
        qs.append([a] + left + right)
    low = lower_cswaps(low, variant)
    return _finish(low, expand), ref, qs[1], qs[0]


def build_cswap_test(n: int, scheme: Scheme, readout: bool = True) -> Circuit:
    """One lowered CSWAP between two QPUs with every data qubit read out in Z.

    Each input qubit is an even mix of |0> and |1>, so sampling ensemble
    members draws a uniformly random computational-basis input per shot."""
    if scheme.variant is Variant.NAIVE:
        raise InvalidParameter("the CSWAP test needs the telegate or teledata lowering")
    name = "cswap_telegate" if scheme.variant is Variant.TELEGATE else "cswap_teledata"
    low, _, qs, _ = build_gadget(name, n, scheme.fanout_expansion)
    mix = [(0.5, np.array([1, 0], complex)), (0.5, np.array([0, 1], complex))]
    for q in qs:
        set_input_state(low, [q], mix)
    low.meta["cswap"] = {"ctrl": low.qubit_index(qs[0]), "left": [low.qubit_index(q) for q in qs[1:1 + n]],
                         "right": [low.qubit_index(q) for q in qs[1 + n:]], "out_bits": []}
    if readout:
        top = len(low.layers)
        for q in qs:
            b = low.new_clbit()
            low.place(measure(q, b, "Z", "readout"), top)
            low.meta["cswap"]["out_bits"].append(b)
    return low
