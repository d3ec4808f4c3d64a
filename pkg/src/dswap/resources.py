"""Per-QPU resource accounting for compiled circuits, and the closed forms they should match."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from .circuit import Circuit, Kind, Op, depth_of_layer
from .compiler import STEP_PRIORITY, Scheme, Variant
from .errors import AccountingError, InvalidParameter

# depth budget per swap-test step when k >= 3 (two CSWAP rounds)
STEP_DEPTHS = {
    Variant.TELEGATE: {"ghz": 9, "cnot_tele": 12, "toffoli_tele": 12, "toffoli_nf": 8, "fanout": 56, "readout": 2},
    Variant.TELEDATA: {"ghz": 9, "data_tele": 20, "toffoli_nf": 8, "fanout": 56, "readout": 2},
}
NAIVE_DEPTH = 76


@dataclass
class ResourceReport:
    scheme: str
    n: int
    k: int
    ancilla: int
    bell_pairs: int
    depth: int
    step_depths: dict[str, int] = field(default_factory=dict)
    per_qpu: list[dict] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def memory_estimate(self) -> int:
        return 3 * self.bell_pairs + self.ancilla

    def row(self) -> dict:
        return {"scheme": self.scheme, "n": self.n, "k": self.k, "ancilla": self.ancilla,
                "bell_pairs": self.bell_pairs, "depth": self.depth, "memory_estimate": self.memory_estimate}


def _layer_step(layer) -> str | None:
    steps = {g.step for g in layer}
    for s in STEP_PRIORITY:
        if s in steps:
            return s
    return None


def account(circuit: Circuit) -> ResourceReport:
    """Per-QPU Bell pairs, peak live ancillas and layered depth; the report keeps the busiest QPU."""
    if circuit.has_macros():
        raise AccountingError("expand every macro before accounting")
    unlabelled = [g for g in circuit.gates() if not g.step]
    if unlabelled:
        raise AccountingError(f"{len(unlabelled)} gates carry no step label (first: {unlabelled[0].op.value})")
    k = circuit.k
    bell = [0] * k
    peak = [0] * k
    active = [0] * k
    live: set = set()
    count = [0] * k
    step_depths: dict[str, int] = {}
    # an empty layer is an idle step of whatever comes next
    labels = [_layer_step(layer) for layer in circuit.layers]
    nxt = None
    for i in range(len(labels) - 1, -1, -1):
        labels[i] = labels[i] or nxt
        nxt = labels[i]
    for layer, s in zip(circuit.layers, labels):
        d = depth_of_layer(layer)
        if d:
            step_depths[s] = step_depths.get(s, 0) + d
        touched = set()
        for g in layer:
            if g.op is Op.BELLPREP:
                for q in {g.operands[0].qpu, g.operands[1].qpu}:
                    bell[q] += 1
            else:
                touched.update(q.qpu for q in g.operands)
            for q in g.operands:
                if q.kind is Kind.ANCILLA and q not in live:
                    live.add(q)
                    count[q.qpu] += 1
        for q in range(k):
            peak[q] = max(peak[q], count[q])
        for g in layer:
            if g.op in (Op.MEASURE, Op.RESET):
                q = g.operands[0]
                if q in live:
                    live.discard(q)
                    count[q.qpu] -= 1
        if d:
            for q in touched:
                active[q] += 1
    per_qpu = [{"qpu": q, "ancilla": peak[q], "bell_pairs": bell[q], "active_depth": active[q]} for q in range(k)]
    scheme = circuit.meta.get("scheme", "")
    rep = ResourceReport(scheme, circuit.n, k, max(peak), max(bell), circuit.depth(), step_depths, per_qpu)
    if scheme in ("telegate", "teledata", "naive"):
        ref = closed_form(Scheme.parse(scheme), circuit.n, k)
        rep.notes["depth_delta"] = rep.depth - ref.depth
    return rep


def naive_bell_one_way(n: int, k: int) -> int:
    lo = math.ceil(n / k)
    return sum(range(lo, n))


def naive_table_expression(n: int, k: int) -> float:
    r = n / k
    return n * (n + 1) - r * (r + 1)


def closed_form(scheme: Scheme | Variant | str, n: int, k: int = 3) -> ResourceReport:
    """Analytic per-QPU costs. k = 2 runs one CSWAP round and needs no GHZ links."""
    if n < 1 or k < 1:
        raise InvalidParameter("need n >= 1 and k >= 1")
    if isinstance(scheme, str):
        scheme = Scheme.parse(scheme)
    v = scheme.variant if isinstance(scheme, Scheme) else scheme
    if v is Variant.NAIVE:
        one_way = naive_bell_one_way(n, k)
        return ResourceReport("naive", n, k, n, 2 * one_way, NAIVE_DEPTH, {},
                              notes={"bell_one_way": one_way, "table_expression": naive_table_expression(n, k)})
    per_cswap = 3 * n if v is Variant.TELEGATE else 2 * n
    rounds = 1 if k == 2 else 2
    steps = dict(STEP_DEPTHS[v])
    if k == 2:
        steps = {s: (1 if s == "ghz" else d // 2 if s not in ("readout",) else d) for s, d in steps.items()}
    ghz_bell = 0 if k == 2 else 2
    ancilla = n if v is Variant.TELEGATE else 2 * n
    return ResourceReport(v.value, n, k, ancilla, ghz_bell + rounds * per_cswap, sum(steps.values()), steps)


def compare(n: int, k: int = 3) -> list[ResourceReport]:
    """All three schemes, cheapest memory first."""
    reps = [closed_form(v, n, k) for v in (Variant.TELEGATE, Variant.TELEDATA, Variant.NAIVE)]
    return sorted(reps, key=lambda r: (r.memory_estimate, r.scheme))


def table_text(reports: list[ResourceReport]) -> str:
    cols = ["scheme", "n", "k", "ancilla", "bell_pairs", "depth", "memory_estimate"]
    rows = [[str(r.row()[c]) for c in cols] for r in reports]
    widths = [max(len(c), *(len(row[i]) for row in rows)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(x.ljust(w) for x, w in zip(row, widths)) for row in rows]
    return "\n".join(lines) + "\n"


def table_csv(reports: list[ResourceReport]) -> str:
    buf = io.StringIO()
    cols = ["scheme", "n", "k", "ancilla", "bell_pairs", "depth", "memory_estimate"]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()
