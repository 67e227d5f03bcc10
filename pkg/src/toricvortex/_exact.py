"""Exact rational linear algebra: rank, null space and a phase-I simplex.

Everything here works on lists of :class:`fractions.Fraction` so that
regularity questions get yes/no answers without tolerances.
"""
from __future__ import annotations

from fractions import Fraction
from typing import Sequence

Matrix = list[list[Fraction]]


def to_fraction_matrix(rows: Sequence[Sequence]) -> Matrix:
    return [[Fraction(x) for x in row] for row in rows]


def row_echelon(rows: Matrix) -> tuple[Matrix, list[int]]:
    """Reduced row echelon form and pivot columns."""
    m = [list(r) for r in rows]
    if not m:
        return m, []
    ncols = len(m[0])
    pivots: list[int] = []
    r = 0
    for c in range(ncols):
        piv = next((i for i in range(r, len(m)) if m[i][c] != 0), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        inv = 1 / m[r][c]
        m[r] = [x * inv for x in m[r]]
        for i in range(len(m)):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == len(m):
            break
    return m, pivots


def rank(rows: Matrix) -> int:
    if not rows:
        return 0
    return len(row_echelon(rows)[1])


def null_space(rows: Matrix, ncols: int) -> Matrix:
    """Basis of {x : rows @ x = 0}, one vector per free column."""
    if not rows:
        return [[Fraction(int(i == j)) for i in range(ncols)] for j in range(ncols)]
    red, pivots = row_echelon(rows)
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for f in free:
        v = [Fraction(0)] * ncols
        v[f] = Fraction(1)
        for i, p in enumerate(pivots):
            v[p] = -red[i][f]
        basis.append(v)
    return basis


def dot(u: Sequence[Fraction], v: Sequence[Fraction]) -> Fraction:
    return sum((a * b for a, b in zip(u, v)), Fraction(0))


def nonnegative_solution(columns: Sequence[Sequence[Fraction]],
                         b: Sequence[Fraction]) -> list[Fraction] | None:
    """Find w >= 0 with sum_l w_l * columns[l] == b, or None if infeasible.

    Phase I of the tableau simplex method with Bland's rule; the returned
    solution is basic, so its support is linearly independent.
    """
    p = len(columns)
    k = len(b)
    if p == 0:
        return [] if all(x == 0 for x in b) else None
    # rows: one per equation, columns: p structural + k artificial + rhs
    tab: Matrix = []
    for i in range(k):
        sign = -1 if b[i] < 0 else 1
        row = [sign * Fraction(columns[j][i]) for j in range(p)]
        row += [Fraction(int(a == i)) for a in range(k)]
        row.append(sign * Fraction(b[i]))
        tab.append(row)
    basis = [p + i for i in range(k)]
    width = p + k
    # reduced cost of the phase-I objective (sum of artificials)
    cost = [Fraction(0)] * (width + 1)
    for i in range(k):
        for j in range(width + 1):
            cost[j] -= tab[i][j]
    for j in range(p, width):
        cost[j] += 1

    while True:
        enter = next((j for j in range(width) if cost[j] < 0), None)
        if enter is None:
            break
        best = None
        leave = None
        for i in range(k):
            if tab[i][enter] > 0:
                ratio = tab[i][-1] / tab[i][enter]
                if best is None or ratio < best or (ratio == best and basis[i] < basis[leave]):
                    best, leave = ratio, i
        if leave is None:  # unbounded phase-I cannot happen; defensive
            break
        piv = tab[leave][enter]
        tab[leave] = [x / piv for x in tab[leave]]
        for i in range(k):
            if i != leave and tab[i][enter] != 0:
                f = tab[i][enter]
                tab[i] = [a - f * c for a, c in zip(tab[i], tab[leave])]
        f = cost[enter]
        cost = [a - f * c for a, c in zip(cost, tab[leave])]
        basis[leave] = enter

    if -cost[-1] != 0:
        return None
    w = [Fraction(0)] * p
    for i, j in enumerate(basis):
        if j < p:
            w[j] = tab[i][-1]
    return w
