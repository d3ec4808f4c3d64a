"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--qubits 12,16,20] [--repeat 5]

Also times one noiseless swap-test run end to end under each backend.
"""
from __future__ import annotations

import argparse
import importlib
import os
import subprocess
import sys
import timeit

import numpy as np

from dswap import _kernels_py

try:
    from dswap import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def _state(nq: int) -> np.ndarray:
    rng = np.random.default_rng(0)
    v = rng.normal(size=1 << nq) + 1j * rng.normal(size=1 << nq)
    return v / np.linalg.norm(v)


def bench_kernels(mod, nq: int, repeat: int) -> dict[str, float]:
    psi = _state(nq)
    h = 1 / np.sqrt(2)
    cases = {
        "apply_1q": lambda: mod.apply_1q(psi, nq // 2, h, h, h, -h),
        "apply_mcx": lambda: mod.apply_mcx(psi, 1 << 1, nq - 1),
        "apply_mcswap": lambda: mod.apply_mcswap(psi, 1, 2, nq - 1),
        "apply_phase": lambda: mod.apply_phase(psi, 1 << 3, 1j),
        "prob_one": lambda: mod.prob_one(psi, nq // 3),
        "collapse_remove": lambda: mod.collapse_remove(psi, nq // 2, 0, 1.0),
    }
    return {k: min(timeit.repeat(f, number=5, repeat=repeat)) / 5 for k, f in cases.items()}


def end_to_end(backend: str) -> float:
    code = (
        "import time, numpy as np\n"
        "from dswap import PartySpec, Scheme, estimate_trace\n"
        "s = PartySpec.pure([np.array([1, 1]) / np.sqrt(2)] * 4)\n"
        "t = time.perf_counter(); estimate_trace(s, Scheme.parse('telegate'), shots=20000, seed=1)\n"
        "print(time.perf_counter() - t)\n"
    )
    env = dict(os.environ, DSWAP_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--qubits", default="12,16,20")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels_c is None:
        print("compiled extension not available; only the numpy fallback is timed")
    print(f"{'kernel':<16}{'qubits':>7}{'cython us':>12}{'numpy us':>12}{'speedup':>9}")
    for nq in (int(x) for x in args.qubits.split(",")):
        py = bench_kernels(_kernels_py, nq, args.repeat)
        cy = bench_kernels(_kernels_c, nq, args.repeat) if _kernels_c else {}
        for k, t in py.items():
            c = cy.get(k)
            cs = f"{c * 1e6:12.1f}" if c else f"{'-':>12}"
            sp = f"{t / c:9.1f}" if c else f"{'-':>9}"
            print(f"{k:<16}{nq:>7}{cs}{t * 1e6:12.1f}{sp}")
    print()
    for backend in (["cython"] if _kernels_c else []) + ["python"]:
        print(f"end-to-end k=4 n=1 telegate, 2x20000 shots, {backend}: {end_to_end(backend):.2f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
