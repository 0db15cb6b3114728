"""Independent dense transcription of the nine-mode equations.

Written equation by equation in the textbook grouping (shared factors pulled
out, products written as they appear) and never touching the sparse table in
``mfesn.mfe``. Used to cross-check the library's coefficients.
"""

import math

import numpy as np


def derivative(a, re, lx=1.75 * math.pi, lz=1.2 * math.pi):
    al, be, ga = 2 * math.pi / lx, math.pi / 2, 2 * math.pi / lz
    kag = math.hypot(al, ga)
    kbg = math.hypot(be, ga)
    kabg = math.sqrt(al * al + be * be + ga * ga)
    a1, a2, a3, a4, a5, a6, a7, a8, a9 = a
    r6 = math.sqrt(6)
    r32 = math.sqrt(3 / 2)
    c_bg = r32 * be * ga
    return np.array([
        be**2 / re * (1 - a1) - c_bg / kabg * a6 * a8 + c_bg / kbg * a2 * a3,
        -(4 * be**2 / 3 + ga**2) * a2 / re
        + 5 * math.sqrt(2) * ga**2 / (3 * math.sqrt(3) * kag) * a4 * a6
        - ga**2 / (r6 * kag) * a5 * a7
        - al * be * ga / (r6 * kag * kabg) * a5 * a8
        - c_bg / kbg * (a1 * a3 + a3 * a9),
        -(be**2 + ga**2) / re * a3
        + 2 * al * be * ga / (r6 * kag * kbg) * (a4 * a7 + a5 * a6)
        + (be**2 * (3 * al**2 + ga**2) - 3 * ga**2 * (al**2 + ga**2)) / (r6 * kag * kbg * kabg) * a4 * a8,
        -(3 * al**2 + 4 * be**2) / (3 * re) * a4
        - al / r6 * (a1 * a5 + a5 * a9)
        - 10 / (3 * r6) * al**2 / kag * a2 * a6
        - r32 * al * be * ga / (kag * kbg) * a3 * a7
        - r32 * al**2 * be**2 / (kag * kbg * kabg) * a3 * a8,
        -(al**2 + be**2) / re * a5
        + al / r6 * (a1 * a4 + a4 * a9)
        + al**2 / (r6 * kag) * a2 * a7
        - al * be * ga / (r6 * kag * kabg) * a2 * a8
        + 2 * al * be * ga / (r6 * kag * kbg) * a3 * a6,
        -(3 * al**2 + 4 * be**2 + 3 * ga**2) / (3 * re) * a6
        + al / r6 * (a1 * a7 + a7 * a9)
        + c_bg / kabg * (a1 * a8 + a8 * a9)
        + 10 / (3 * r6) * (al**2 - ga**2) / kag * a2 * a4
        - 2 * math.sqrt(2 / 3) * al * be * ga / (kag * kbg) * a3 * a5,
        -(al**2 + be**2 + ga**2) / re * a7
        - al / r6 * (a1 * a6 + a6 * a9)
        + (ga**2 - al**2) / (r6 * kag) * a2 * a5
        + al * be * ga / (r6 * kag * kbg) * a3 * a4,
        -(al**2 + be**2 + ga**2) / re * a8
        + 2 * al * be * ga / (r6 * kag * kabg) * a2 * a5
        + ga**2 * (3 * al**2 - be**2 + 3 * ga**2) / (r6 * kag * kbg * kabg) * a3 * a4,
        -9 * be**2 / re * a9
        + c_bg / kbg * a2 * a3
        - c_bg / kabg * a6 * a8,
    ])


def dense_quadratic_tensor(re, **geom):
    """Symmetric (9, 9, 9) tensor T with N_j(a) = sum_kl T[j,k,l] a_k a_l,
    recovered from ``derivative`` by polarization over all 729 index pairs."""
    eye = np.eye(9)
    zero = derivative(np.zeros(9), re, **geom)

    def quad(v):
        # derivative is affine + quadratic: remove the affine part exactly
        lin = derivative(v, re, **geom) - zero
        lin2 = derivative(2 * v, re, **geom) - zero
        return (lin2 - 2 * lin) / 2  # = N(v)

    t = np.zeros((9, 9, 9))
    for k in range(9):
        for l in range(9):
            if k == l:
                t[:, k, k] = quad(eye[k])
            else:
                t[:, k, l] = (quad(eye[k] + eye[l]) - quad(eye[k]) - quad(eye[l])) / 2
    return t


def dense_rhs(a, re, **geom):
    t = dense_quadratic_tensor(re, **geom)
    lin_and_force = derivative(np.zeros(9), re, **geom)
    a = np.asarray(a)
    linear_part = np.array([
        (derivative(np.eye(9)[j], re, **geom)[j] - lin_and_force[j]) - t[j, j, j]
        for j in range(9)
    ])
    return lin_and_force + linear_part * a + np.einsum("jkl,...k,...l->...j", t, a, a)
