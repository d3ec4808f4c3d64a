"""Pure numpy versions of the statevector kernels, same signatures as the compiled module."""
from __future__ import annotations

import numpy as np


def _split(psi, bit):
    return psi.reshape(-1, 2, 1 << bit)


def apply_1q(psi, bit, m00, m01, m10, m11):
    v = _split(psi, bit)
    a = v[:, 0, :].copy()
    b = v[:, 1, :]
    v[:, 0, :] = m00 * a + m01 * b
    v[:, 1, :] = m10 * a + m11 * b


def _indices(n):
    return np.arange(n, dtype=np.int64)


def apply_mcx(psi, ctrl_mask, tbit):
    idx = _indices(psi.shape[0])
    t = 1 << tbit
    sel = idx[((idx & ctrl_mask) == ctrl_mask) & ((idx & t) == 0)]
    tmp = psi[sel].copy()
    psi[sel] = psi[sel | t]
    psi[sel | t] = tmp


def apply_mcswap(psi, ctrl_mask, b1, b2):
    idx = _indices(psi.shape[0])
    m1, m2 = 1 << b1, 1 << b2
    sel = idx[((idx & ctrl_mask) == ctrl_mask) & ((idx & m1) != 0) & ((idx & m2) == 0)]
    other = (sel ^ m1) | m2
    tmp = psi[sel].copy()
    psi[sel] = psi[other]
    psi[other] = tmp


def apply_phase(psi, mask, phase):
    idx = _indices(psi.shape[0])
    psi[(idx & mask) == mask] *= phase


def prob_one(psi, bit):
    v = _split(psi, bit)[:, 1, :]
    return float(np.vdot(v, v).real)


def collapse_remove(psi, bit, outcome, scale):
    return (_split(psi, bit)[:, outcome, :] * scale).reshape(-1)
