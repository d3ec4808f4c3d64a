"""Command-line front end: ``dswap <command> [options]``."""
from __future__ import annotations

import argparse
import json
import os
import re
import sys
from dataclasses import asdict

import numpy as np

from . import circuit as cc
from .circuit import PartySpec
from .compiler import PASSES, Scheme, build_fanout_test, build_swap_test, run_pipeline
from .errors import CapacityError, DswapError, InvalidParameter
from .estimator import entanglement_spectrum, estimate_trace, renyi_entropy, virtual_expectation
from .netnoise import bound_csv, bound_rows
from .resources import account, compare, table_csv, table_text
from .simulator import NoiseModel, run_pauli_frame, run_statevector

THREADS_ENV = "DSWAP_THREADS"


# state mini-language

_KET = re.compile(r"^\|([01+\-]+)>$")


def _ket(text: str, n: int | None) -> np.ndarray:
    m = _KET.match(text)
    if not m:
        raise InvalidParameter(f"cannot read state {text!r}")
    one = {"0": np.array([1, 0], complex), "1": np.array([0, 1], complex),
           "+": np.array([1, 1], complex) / np.sqrt(2), "-": np.array([1, -1], complex) / np.sqrt(2)}
    letters = m.group(1)
    if n is not None and len(letters) == 1 and n > 1:
        letters *= n
    v = np.array([1], complex)
    for ch in letters:
        v = np.kron(v, one[ch])
    return v


def _amplitudes(text: str) -> np.ndarray:
    body = text.strip()[1:-1]
    try:
        v = np.array([complex(x.strip().replace(" ", "")) for x in body.split(",") if x.strip()])
    except ValueError:
        raise InvalidParameter(f"bad amplitude list {text!r}") from None
    norm = np.linalg.norm(v)
    if norm == 0:
        raise InvalidParameter("amplitude list is all zero")
    return v / norm


def parse_state(text: str, n: int | None = None) -> list[tuple[float, np.ndarray]]:
    """One party's state.

    ``|0>``, ``|01>``, ``|+>``, ``|->``   product kets (a single letter repeats over n qubits)
    ``[0.6, 0.8j]``                       amplitudes, renormalized
    ``{0.75:|0>; 0.25:|1>}``               weighted ensemble
    """
    text = text.strip()
    if text.startswith("{") and text.endswith("}"):
        out = []
        for part in text[1:-1].split(";"):
            if not part.strip():
                continue
            w, _, st = part.partition(":")
            try:
                weight = float(w)
            except ValueError:
                raise InvalidParameter(f"bad ensemble weight {w!r}") from None
            out.extend((weight * w2, v) for w2, v in parse_state(st, n))
        total = sum(w for w, _ in out)
        if total <= 0:
            raise InvalidParameter("ensemble weights must be positive")
        return [(w / total, v) for w, v in out]
    if text.startswith("["):
        return [(1.0, _amplitudes(text))]
    return [(1.0, _ket(text, n))]


def _split_top(text: str, sep: str = ",") -> list[str]:
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    if cur.strip():
        parts.append(cur)
    return parts


def parse_states(text: str | None, k: int, n: int) -> PartySpec:
    """``i:state`` entries separated by commas; parties left out start in |0...0>."""
    states: list = [None] * k
    if text:
        for entry in _split_top(text):
            idx, sep, st = entry.partition(":")
            if not sep:
                raise InvalidParameter(f"state entry {entry!r} needs the form party:state")
            try:
                i = int(idx)
            except ValueError:
                raise InvalidParameter(f"bad party index {idx!r}") from None
            if not 0 <= i < k:
                raise InvalidParameter(f"party {i} outside 0..{k - 1}")
            states[i] = parse_state(st, n)
    zero = np.zeros(2**n, complex)
    zero[0] = 1
    return PartySpec(k, n, [s if s is not None else [(1.0, zero)] for s in states])


# helpers

def _noise(args) -> NoiseModel | None:
    if getattr(args, "p", None) is not None:
        base = NoiseModel.from_level(args.p)
    else:
        base = NoiseModel()
    fields = {f: getattr(args, f, None) for f in ("p1", "p2", "p_meas", "p_bell")}
    fields = {f: v for f, v in fields.items() if v is not None}
    nm = NoiseModel(**{**asdict(base), **fields})
    return None if nm.is_zero else nm


def _config(args) -> dict:
    # threads and output paths do not change results, so they stay out of the echo
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "dump", "threads")}


def _emit(args, text: str):
    path = getattr(args, "out", None)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv_with_config(args, body: str) -> str:
    return f"# config {json.dumps(_config(args), sort_keys=True)}\n" + body


def _scheme(args) -> Scheme | None:
    if args.scheme == "macro":
        return None
    return Scheme.parse(args.scheme, not getattr(args, "no_expand", False))


def _build(args, basis):
    spec = parse_states(args.states, args.k, args.n)
    scheme = _scheme(args)
    if scheme is None:
        return build_swap_test(spec, None, basis, getattr(args, "observable", None))
    names = args.passes.split(",") if getattr(args, "passes", None) else None
    return run_pipeline(spec, scheme, names, basis, getattr(args, "observable", None))


# commands

def cmd_compile(args) -> int:
    c = _build(args, args.basis if args.basis != "none" else None)
    c.meta["config"] = _config(args)
    problems = cc.validate(c)
    text = cc.serialize(c)
    if args.dump:
        with open(args.dump, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(f"depth {c.depth()} qubits {len(c.qubits)} level {c.level.value} "
          f"validator {'ok' if not problems else '; '.join(problems[:3])}", file=sys.stderr)
    return 0 if not problems else 1


def cmd_simulate(args) -> int:
    c = _build(args, args.basis)
    res = run_statevector(c, _noise(args), args.shots, args.seed, threads=args.threads, cap=args.cap,
                          allow_macros=c.has_macros())
    _emit(args, _csv_with_config(args, res.to_csv()))
    return 0


def cmd_estimate(args) -> int:
    noise = _noise(args)
    scheme = _scheme(args)
    cfg = _config(args)
    if args.what == "trace":
        spec = parse_states(args.states, args.k, args.n)
        est = estimate_trace(spec, scheme, noise, args.shots, args.seed, args.threads, args.cap)
        rec = json.loads(est.to_record())
    else:
        rho = parse_state(args.rho, args.n)
        if args.what == "renyi":
            v = renyi_entropy(rho, args.order, scheme, noise, args.shots, args.seed, args.threads)
            rec = {"renyi_order": args.order, "value": v.value, "stderr": v.stderr}
        elif args.what == "spectrum":
            rec = json.loads(entanglement_spectrum(rho, args.order, scheme, noise, args.shots, args.seed,
                                                   args.threads).to_record())
        else:
            v = virtual_expectation(rho, args.observable or "Z" * args.n, args.order, scheme, noise,
                                    args.shots, args.seed, args.threads)
            rec = {"copies": args.order, "value": v.value, "stderr": v.stderr}
    rec["config"] = cfg
    _emit(args, json.dumps(rec, sort_keys=True) + "\n")
    return 0


def cmd_resources(args) -> int:
    if args.compare:
        reps = compare(args.n, args.k)
    else:
        spec = parse_states(None, args.k, args.n)
        reps = [account(run_pipeline(spec, Scheme.parse(args.scheme), None, "X"))]
    if args.format == "csv":
        _emit(args, _csv_with_config(args, table_csv(reps)))
    else:
        text = table_text(reps)
        if not args.compare:
            r = reps[0]
            text += "steps " + " ".join(f"{s}={d}" for s, d in r.step_depths.items()) + "\n"
            if r.notes.get("depth_delta"):
                text += f"depth delta vs closed form: {r.notes['depth_delta']:+d}\n"
        _emit(args, text)
    return 0


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InvalidParameter(f"bad number list {text!r}") from None


def cmd_bound(args) -> int:
    rows = bound_rows(_floats(args.p), _floats(args.epsilon), args.scheme.split(","),
                      [int(x) for x in _floats(args.n)], args.mode, args.linear)
    _emit(args, _csv_with_config(args, bound_csv(rows)))
    return 0


def cmd_fanout_errors(args) -> int:
    c = build_fanout_test(args.targets)
    hist = run_pauli_frame(c, NoiseModel.from_level(args.p), args.shots, args.seed, threads=args.threads)
    _emit(args, _csv_with_config(args, hist.to_csv()))
    return 0


# parser

def _threads_default() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _common(p: argparse.ArgumentParser, states: bool = True):
    p.add_argument("--k", type=int, default=3, help="number of parties (default 3)")
    p.add_argument("--n", type=int, default=1, help="qubits per party (default 1)")
    p.add_argument("--scheme", default="teledata", choices=["telegate", "teledata", "naive", "macro"],
                   help="distribution scheme; macro skips lowering")
    p.add_argument("--no-expand", action="store_true", help="keep Fanout gates as macros")
    if states:
        p.add_argument("--states", help="party states, e.g. '0:|0>,1:|+>,2:[0.6,0.8j]' or '0:{0.5:|0>;0.5:|1>}'")


def _noise_flags(p: argparse.ArgumentParser):
    p.add_argument("--p", type=float, help="noise level: p/10 one-qubit, p two-qubit, p readout, p Bell")
    p.add_argument("--p1", type=float, help="one-qubit depolarizing probability")
    p.add_argument("--p2", type=float, help="two-qubit depolarizing probability")
    p.add_argument("--p-meas", dest="p_meas", type=float, help="readout flip probability")
    p.add_argument("--p-bell", dest="p_bell", type=float, help="Bell-pair depolarizing probability")


def _run_flags(p: argparse.ArgumentParser, shots: int):
    p.add_argument("--shots", type=int, default=shots, help=f"shots per basis (default {shots})")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--threads", type=int, default=_threads_default(),
                   help=f"worker threads; results do not depend on it (default ${THREADS_ENV} or 1)")
    p.add_argument("--out", help="output file (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dswap", description="Distributed multi-party SWAP test toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a swap test and dump the circuit")
    _common(p)
    p.add_argument("--basis", default="X", choices=["X", "Y", "none"], help="GHZ readout basis")
    p.add_argument("--observable", help="Pauli string read on party 0 (virtual expectation circuits)")
    p.add_argument("--passes", help=f"comma list of passes, from {', '.join(PASSES)}")
    p.add_argument("--dump", help="write the serialized circuit here (default stdout)")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("simulate", help="sample shots of a compiled swap test (CSV)")
    _common(p)
    p.add_argument("--basis", default="X", choices=["X", "Y"], help="GHZ readout basis")
    p.add_argument("--cap", type=int, default=24, help="live-qubit cap (default 24)")
    _noise_flags(p)
    _run_flags(p, 1000)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate a trace, entropy, spectrum or virtual expectation")
    _common(p)
    p.add_argument("--what", default="trace", choices=["trace", "renyi", "spectrum", "virtual"],
                   help="quantity to estimate (default trace)")
    p.add_argument("--rho", default="|0>", help="state for renyi/spectrum/virtual, same syntax as one --states entry")
    p.add_argument("--order", type=int, default=2, help="Renyi order, max power, or copy count (default 2)")
    p.add_argument("--observable", help="Pauli string for --what virtual (default all Z)")
    p.add_argument("--cap", type=int, default=24, help="live-qubit cap (default 24)")
    _noise_flags(p)
    _run_flags(p, 10_000)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("resources", help="per-QPU resource report or three-scheme comparison")
    _common(p, states=False)
    p.add_argument("--compare", action="store_true", help="closed-form table of all schemes")
    p.add_argument("--format", default="text", choices=["text", "csv"], help="output format")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_resources)

    p = sub.add_parser("bound", help="k_max over a grid (CSV: p, epsilon, scheme, n, k_max)")
    p.add_argument("--p", default="1e-6", help="comma list of Bell depolarizing probabilities")
    p.add_argument("--epsilon", default="1e-3", help="comma list of tolerances")
    p.add_argument("--scheme", default="telegate,teledata", help="comma list of schemes")
    p.add_argument("--n", default="100", help="comma list of register sizes")
    p.add_argument("--mode", default="network", choices=["network", "per_qpu"],
                   help="how noisy Bell pairs are counted across k parties")
    p.add_argument("--linear", action="store_true", help="use the linearized bound 1 - 3p/4 * count")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("fanout-errors", help="Pauli error histogram of the Fanout gadget (CSV)")
    p.add_argument("--targets", type=int, default=4, help="number of targets (default 4)")
    p.add_argument("--p", type=float, default=0.001, help="noise level (default 0.001)")
    _run_flags(p, 100_000)
    p.set_defaults(func=cmd_fanout_errors)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except CapacityError as e:
        print(f"dswap: capacity: {e}", file=sys.stderr)
        return 3
    except InvalidParameter as e:
        print(f"dswap: {e}", file=sys.stderr)
        return 2
    except DswapError as e:
        print(f"dswap: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"dswap: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
