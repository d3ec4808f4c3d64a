"""Closed-form fidelity bounds for depolarized Bell pairs, and the composed estimates."""
from __future__ import annotations

import csv
import io
import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Iterable

from .compiler import Scheme, Variant
from .errors import InvalidParameter
from .resources import closed_form

K_LIMIT = 10**9


@dataclass(frozen=True)
class FidelityBound:
    f_cnot: float
    f_toffoli: float
    f_state: float
    f_total: float | None = None
    k_max: int | None = None


def _check_p(p: float, name: str = "p"):
    if not 0.0 <= p <= 1.0:
        raise InvalidParameter(f"{name}={p} outside [0, 1]")


def _variant(scheme) -> Variant:
    if isinstance(scheme, str):
        scheme = Scheme.parse(scheme)
    return scheme.variant if isinstance(scheme, Scheme) else scheme


def bell_fidelity_bounds(p: float) -> FidelityBound:
    """Worst-case fidelity of a teleported CNOT / Toffoli and of a teleported state."""
    _check_p(p)
    f = 1 - 0.75 * p
    return FidelityBound(f, f, 1 - 0.5 * p)


def total_fidelity(scheme, n: int, p: float) -> float:
    """Per-QPU bound: one factor per Bell pair the busiest QPU consumes."""
    _check_p(p)
    v = _variant(scheme)
    if v is Variant.NAIVE:
        raise InvalidParameter("no fidelity bound is defined for the naive scheme")
    return (1 - 0.75 * p) ** closed_form(v, n, 3).bell_pairs


def teleop_count(k: int, n: int, scheme="telegate", mode: str = "network") -> int:
    """Noisy Bell pairs entering a k-party run.

    network: GHZ edges (ceil(k/2) - 1) plus the Bell pairs of the k - 1 CSWAPs.
    per_qpu: GHZ edges plus k times the busiest QPU's Bell count.
    """
    v = _variant(scheme)
    if v is Variant.NAIVE:
        raise InvalidParameter("no teleoperation count for the naive scheme")
    ghz = math.ceil(k / 2) - 1
    if mode == "network":
        per_cswap = 3 * n if v is Variant.TELEGATE else 2 * n
        return ghz + (k - 1) * per_cswap
    if mode == "per_qpu":
        return ghz + k * closed_form(v, n, 3).bell_pairs
    raise InvalidParameter(f"unknown counting mode {mode!r}")


def _largest_k(limit: float, n: int, scheme, mode: str) -> int:
    if teleop_count(2, n, scheme, mode) > limit:
        return 1
    lo, hi = 2, 4
    while hi < K_LIMIT and teleop_count(hi, n, scheme, mode) <= limit:
        lo, hi = hi, hi * 2
    if hi >= K_LIMIT:
        return K_LIMIT
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if teleop_count(mid, n, scheme, mode) <= limit:
            lo = mid
        else:
            hi = mid
    return lo


def k_max(epsilon: float, n: int, p: float, scheme="telegate", mode: str = "network",
          linear: bool = False) -> int:
    """Largest k with (1 - 3p/4)^count(k) >= 1 - epsilon (or the linearized 1 - 3p/4 * count)."""
    if not 0.0 < epsilon < 1.0:
        raise InvalidParameter("epsilon must lie in (0, 1)")
    _check_p(p)
    if n < 1:
        raise InvalidParameter("n must be at least 1")
    q = 0.75 * p
    if q == 0:
        return K_LIMIT
    if linear:
        limit = epsilon / q
    elif q >= 1:
        limit = 0.0
    else:
        limit = math.log1p(-epsilon) / math.log1p(-q)
    k = _largest_k(limit * (1 + 1e-12), n, scheme, mode)
    if k == 1:
        warnings.warn(f"no k >= 2 keeps fidelity above {1 - epsilon} at p={p}, n={n}", stacklevel=2)
    return k


def overall_fidelity_estimate(n: int, k: int, p_ghz: float, p_cswap: float) -> float:
    """Compose a measured GHZ error rate with k - 1 measured CSWAP error rates."""
    _check_p(p_ghz, "p_ghz")
    _check_p(p_cswap, "p_cswap")
    if k < 2:
        raise InvalidParameter("k must be at least 2")
    return (1 - p_ghz) * (1 - p_cswap) ** (k - 1)


def bound_rows(ps: Iterable[float], epsilons: Iterable[float], schemes: Iterable[str], ns: Iterable[int],
               mode: str = "network", linear: bool = False) -> list[dict]:
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for p, eps, s, n in itertools.product(ps, epsilons, schemes, ns):
            rows.append({"p": p, "epsilon": eps, "scheme": _variant(s).value, "n": n,
                         "k_max": k_max(eps, n, p, s, mode, linear)})
    return rows


def bound_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["p", "epsilon", "scheme", "n", "k_max"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "p": repr(float(r["p"])), "epsilon": repr(float(r["epsilon"]))})
    return buf.getvalue()
