"""Compiled RK4 loops specialized to one quadratic sparsity pattern.

The right-hand side is emitted as straight-line code (one expression per mode)
reading coefficients from the flat list, then compiled with numba. This is
several times faster than looping over the index arrays. Kernels are cached per
pattern, so every ``MfeSystem`` with the usual 30-odd entries shares one set.
"""

from __future__ import annotations

import functools

import numba
import numpy as np

_TEMPLATE = '''
def rhs_into(a, force, lin, qc, out):
{rhs_body}

def rk4_into(a, dt, force, lin, qc, k1, k2, k3, k4, tmp):
    h = 0.5 * dt
    rhs_into(a, force, lin, qc, k1)
    for j in range(9):
        tmp[j] = a[j] + h * k1[j]
    rhs_into(tmp, force, lin, qc, k2)
    for j in range(9):
        tmp[j] = a[j] + h * k2[j]
    rhs_into(tmp, force, lin, qc, k3)
    for j in range(9):
        tmp[j] = a[j] + dt * k3[j]
    rhs_into(tmp, force, lin, qc, k4)
    d6 = dt / 6.0
    for j in range(9):
        a[j] += d6 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])

def bad(a):
    for j in range(9):
        if not (abs(a[j]) <= 1e3):
            return True
    return False

def sqnorm(a):
    e = 0.0
    for j in range(9):
        e += a[j] * a[j]
    return e

def integrate(a0, dt, steps_per_sample, n_samples, force, lin, qc):
    out = np.empty((n_samples + 1, 9))
    a = a0.copy()
    k1 = np.empty(9); k2 = np.empty(9); k3 = np.empty(9); k4 = np.empty(9); tmp = np.empty(9)
    out[0] = a
    for i in range(n_samples):
        for s in range(steps_per_sample):
            rk4_into(a, dt, force, lin, qc, k1, k2, k3, k4, tmp)
            if bad(a):
                return out[:i + 1], i * steps_per_sample + s + 1
        out[i + 1] = a
    return out, -1

def lifetime(a0, dt, steps_per_sample, max_samples, escale, threshold, window_samples,
             force, lin, qc):
    a = a0.copy()
    k1 = np.empty(9); k2 = np.empty(9); k3 = np.empty(9); k4 = np.empty(9); tmp = np.empty(9)
    run = 0
    for i in range(max_samples + 1):
        if i > 0:
            for s in range(steps_per_sample):
                rk4_into(a, dt, force, lin, qc, k1, k2, k3, k4, tmp)
            if bad(a):
                return -2
        if escale * sqnorm(a) > threshold:
            run += 1
            if run > window_samples:
                return i
        else:
            run = 0
    return -1

def first_below(a0, dt, steps_per_sample, n_samples, escale, threshold, force, lin, qc):
    a = a0.copy()
    k1 = np.empty(9); k2 = np.empty(9); k3 = np.empty(9); k4 = np.empty(9); tmp = np.empty(9)
    for i in range(n_samples + 1):
        if i > 0:
            for s in range(steps_per_sample):
                rk4_into(a, dt, force, lin, qc, k1, k2, k3, k4, tmp)
            if bad(a):
                return -2
        if escale * sqnorm(a) < threshold:
            return i
    return -1
'''

# Numba-level inlining of the step into the loops is worth ~2.5x here.
_INLINE = {"rhs_into", "rk4_into"}
_ORDER = ("rhs_into", "rk4_into", "bad", "sqnorm", "integrate", "lifetime", "first_below")


@functools.lru_cache(maxsize=None)
def kernels_for(pattern: tuple[tuple[int, int, int], ...]) -> dict:
    """Compiled kernels for a sparsity pattern of (j, k, l) triples.

    Returned functions:
        integrate(a0, dt, steps_per_sample, n_samples, force, lin, qc)
            -> (samples, failing step index or -1)
        lifetime(a0, dt, steps_per_sample, max_samples, escale, threshold,
                 window_samples, force, lin, qc)
            -> sample index where the energy has exceeded threshold for
               window_samples + 1 consecutive samples; -1 if never, -2 on blow-up
        first_below(a0, dt, steps_per_sample, n_samples, escale, threshold,
                    force, lin, qc)
            -> first sample index with energy below threshold; -1, -2 as above
    """
    rows = []
    for j in range(9):
        terms = [f"lin[{j}] * a[{j}]"]
        if j == 0:
            terms.append("force")
        terms += [f"qc[{m}] * a[{k}] * a[{l}]" for m, (jj, k, l) in enumerate(pattern) if jj == j]
        rows.append(f"    out[{j}] = " + " + ".join(terms))
    namespace = {"np": np}
    exec(_TEMPLATE.format(rhs_body="\n".join(rows)), namespace)
    compiled = {}
    # Later kernels call earlier ones, so jit in dependency order.
    for name in _ORDER:
        opts = {"inline": "always"} if name in _INLINE else {}
        compiled[name] = namespace[name] = numba.njit(nogil=True, **opts)(namespace[name])
    return compiled
