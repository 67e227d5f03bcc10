"""Torus actions on C^n, their moment maps and regularity of levels.

Conventions
-----------
The Lie algebra of T^k is identified with R^k (``i v <-> v``) with the
Euclidean inner product. For an integer weight matrix ``A`` of shape
``(n, k)`` the moment map is stored as the real vector

    mu(z) = 1/2 * A^T (|z_1|^2, ..., |z_n|^2),

the infinitesimal action is ``L_z v = i (A v) * z`` and the real inner
product on C^n is ``<a, b> = Re sum conj(a_j) b_j``. With the standard form
``omega(u, w) = Im sum conj(u_j) w_j`` these satisfy

    d<mu, v>(z) u = omega(u, L_z v).

Row ``j`` of ``A`` is the weight ``a_j`` of the coordinate ``z_j``; the
regularity criterion is phrased in terms of nonnegative combinations of
these rows.
"""
from __future__ import annotations

import enum
import itertools
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from . import _exact
from .errors import (
    DimensionMismatch,
    EnumerationCapExceeded,
    NonRationalInput,
    ProportionalityViolated,
    ValidationError,
)

ENUMERATION_CAP = 20
FLOAT_TOL = 1e-9


@dataclass(frozen=True)
class TorusAction:
    """Linear action of T^k on C^n with integer weight matrix ``weights``.

    ``tau`` is the optional target level, kept as exact rationals when the
    input allows it (non-integral floats stay floats).
    """

    weights: np.ndarray
    tau: tuple | None = None

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim == 1:
            w = w.reshape(-1, 1)
        if w.ndim != 2 or w.size == 0:
            raise ValidationError("weights must be a non-empty (n, k) matrix")
        if not np.all(np.asarray(w, dtype=float) == np.round(np.asarray(w, dtype=float))):
            raise ValidationError("weights must be integers")
        w = np.asarray(np.round(np.asarray(w, dtype=float)), dtype=np.int64)
        n, k = w.shape
        if k > n:
            raise ValidationError(f"torus rank k={k} exceeds n={n}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.tau is not None:
            object.__setattr__(self, "tau", parse_tau(self.tau, k))

    @property
    def tau_array(self) -> np.ndarray:
        if self.tau is None:
            raise ValidationError("this action carries no target level tau")
        return np.array([float(t) for t in self.tau])

    def with_tau(self, tau) -> "TorusAction":
        return TorusAction(self.weights, tau)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def k(self) -> int:
        return self.weights.shape[1]

    def rows(self) -> list[list[Fraction]]:
        return [[Fraction(int(x)) for x in row] for row in self.weights]


def _check_len(x: np.ndarray, size: int, name: str) -> None:
    if x.shape != (size,):
        raise DimensionMismatch(f"{name} has shape {x.shape}, expected ({size},)")


def moment_map(action: TorusAction, z) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    _check_len(z, action.n, "z")
    return 0.5 * action.weights.T @ np.abs(z) ** 2


def infinitesimal_action(action: TorusAction, z, v) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    v = np.asarray(v, dtype=float)
    _check_len(z, action.n, "z")
    _check_len(v, action.k, "v")
    return 1j * (action.weights @ v) * z


def adjoint_infinitesimal(action: TorusAction, z, w) -> np.ndarray:
    """Adjoint of ``v -> L_z v`` for the real inner products."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    _check_len(z, action.n, "z")
    _check_len(w, action.n, "w")
    return action.weights.T @ np.imag(np.conj(z) * w)


def is_proper(action: TorusAction) -> bool:
    """Fixed-sign test: every column of A has nonzero entries of one sign."""
    for col in action.weights.T:
        nz = col[col != 0]
        if nz.size and not (np.all(nz > 0) or np.all(nz < 0)):
            return False
    return True


def has_compact_fibers(action: TorusAction) -> bool:
    """Exact properness of mu: no nonzero w >= 0 with A^T w = 0.

    Unlike :func:`is_proper` this also detects zero rows and accepts
    mixed-sign columns whose cone is still pointed.
    """
    cols = [row + [Fraction(1)] for row in action.rows()]
    target = [Fraction(0)] * action.k + [Fraction(1)]
    return _exact.nonnegative_solution(cols, target) is None


class Status(str, enum.Enum):
    REGULAR = "Regular"
    IRREGULAR_ZERO = "IrregularZero"
    IRREGULAR_CONE = "IrregularCone"


@dataclass(frozen=True)
class RegularityVerdict:
    """Outcome of :func:`classify_value`.

    For ``IrregularCone`` the witness is ``support`` (0-based row indices),
    nonnegative ``coefficients`` over the support and the ``rank`` of those
    rows, with ``sum coefficients[l] * a_support[l] == 2 * tau``.
    """

    status: Status
    tau: tuple
    support: tuple[int, ...] = ()
    coefficients: tuple = ()
    rank: int | None = None
    provisional: bool = False
    notes: tuple[str, ...] = field(default=())

    @property
    def is_regular(self) -> bool:
        return self.status is Status.REGULAR

    def to_dict(self) -> dict:
        def enc(x):
            if isinstance(x, Fraction):
                return [x.numerator, x.denominator] if x.denominator != 1 else x.numerator
            return float(x)

        d = {"status": self.status.value, "tau": [enc(t) for t in self.tau],
             "provisional": self.provisional}
        if self.status is Status.IRREGULAR_CONE:
            d["witness"] = {
                "support": list(self.support),
                "coefficients": [enc(c) for c in self.coefficients],
                "rank": self.rank,
            }
        if self.notes:
            d["notes"] = list(self.notes)
        return d


def parse_rational(x) -> Fraction | float:
    """Parse an int, Fraction, ``"p/q"`` string or ``[p, q]`` pair exactly.

    Non-integral floats are returned unchanged (they mark the float path).
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise ValidationError("booleans are not rationals")
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x.strip())
    if isinstance(x, (list, tuple)) and len(x) == 2:
        return Fraction(int(x[0]), int(x[1]))
    if isinstance(x, (float, np.floating)):
        if float(x).is_integer():
            return Fraction(int(x))
        return float(x)
    raise ValidationError(f"cannot interpret {x!r} as a rational number")


def parse_tau(tau, k: int) -> tuple:
    """Parse a level vector entrywise with :func:`parse_rational`."""
    if isinstance(tau, (int, float, str, Fraction, np.number)):
        entries = [tau]
    else:
        entries = list(tau)
    out = tuple(parse_rational(x.item() if isinstance(x, np.generic) else x) for x in entries)
    if len(out) != k:
        raise DimensionMismatch(f"tau has length {len(out)}, expected {k}")
    return out


def _distinct_directions(rows: list[list[Fraction]]) -> tuple[list[int], dict[int, int]]:
    """Representatives of rows up to positive scaling (zero rows dropped)."""
    reps: list[int] = []
    owner: dict[int, int] = {}
    for i, row in enumerate(rows):
        if all(x == 0 for x in row):
            continue
        for r in reps:
            if _positive_multiple(row, rows[r]) is not None:
                owner[i] = r
                break
        else:
            reps.append(i)
            owner[i] = i
    return reps, owner


def _positive_multiple(a: Sequence[Fraction], b: Sequence[Fraction]) -> Fraction | None:
    """Return lam > 0 with a == lam * b, else None."""
    lam = None
    for x, y in zip(a, b):
        if y == 0:
            if x != 0:
                return None
            continue
        q = Fraction(x) / Fraction(y)
        if lam is None:
            lam = q
        elif q != lam:
            return None
    if lam is None or lam <= 0:
        return None
    return lam


def maximal_deficient_subsets(rows: list[list[Fraction]], k: int) -> list[tuple[tuple[int, ...], list[Fraction] | None]]:
    """Maximal row subsets of rank < k, each with a normal vector of its span.

    If the rows do not span R^k the only maximal subset is all rows (normal
    is then ``None``). Otherwise every maximal subset is the set of rows in a
    hyperplane spanned by k - 1 independent rows.
    """
    idx = list(range(len(rows)))
    if _exact.rank(rows) < k:
        return [(tuple(idx), None)]
    seen: dict[frozenset, list[Fraction]] = {}
    if k == 1:
        zero = tuple(i for i in idx if rows[i][0] == 0)
        return [(zero, [Fraction(1)])]
    for combo in itertools.combinations(idx, k - 1):
        sub = [rows[i] for i in combo]
        if _exact.rank(sub) < k - 1:
            continue
        normal = _exact.null_space(sub, k)[0]
        members = frozenset(i for i in idx if _exact.dot(normal, rows[i]) == 0)
        if members not in seen:
            seen[members] = normal
    return [(tuple(sorted(m)), nv) for m, nv in seen.items()]


def classify_value(action: TorusAction, tau, *, exact: bool | None = None,
                   cap: int = ENUMERATION_CAP) -> RegularityVerdict:
    """Decide whether ``tau`` is a regular value of the moment map.

    ``tau`` is irregular iff it is zero or ``2 tau`` is a nonnegative
    combination of rows spanning less than R^k. Rows are deduplicated up to
    positive scaling before the subset enumeration, so ``cap`` bounds the
    number of distinct weight directions.

    Parameters
    ----------
    exact
        ``True`` demands rational input (raises :class:`NonRationalInput` on
        non-integral floats); ``False`` forces the floating path; ``None``
        uses exact arithmetic when possible and otherwise falls back to the
        floating path with ``provisional=True``.
    """
    parsed = list(parse_tau(tau, action.k))
    rational = all(isinstance(t, Fraction) for t in parsed)
    if exact and not rational:
        raise NonRationalInput("non-rational tau with exact=True")
    use_exact = rational and exact is not False

    rows = action.rows()
    reps, owner = _distinct_directions(rows)
    if len(reps) > cap:
        raise EnumerationCapExceeded(f"{len(reps)} distinct weight directions exceed cap {cap}")

    if use_exact:
        tau_q = tuple(parsed)
        if all(t == 0 for t in tau_q):
            return RegularityVerdict(Status.IRREGULAR_ZERO, tau_q)
        return _classify_exact(rows, reps, action.k, tau_q)
    tau_f = tuple(float(t) for t in parsed)
    if not use_exact and exact is None:
        warnings.warn("classify_value: non-rational tau, using floating tolerance 1e-9",
                      stacklevel=2)
    if max(abs(t) for t in tau_f) <= FLOAT_TOL:
        return RegularityVerdict(Status.IRREGULAR_ZERO, tau_f, provisional=True)
    return _classify_float(action.weights, reps, action.k, tau_f)


def _classify_exact(rows, reps, k, tau_q) -> RegularityVerdict:
    target = [2 * t for t in tau_q]
    rep_rows = [rows[i] for i in reps]
    for subset, normal in maximal_deficient_subsets(rep_rows, k):
        if normal is not None and _exact.dot(normal, target) != 0:
            continue
        cols = [rep_rows[i] for i in subset]
        w = _exact.nonnegative_solution(cols, target)
        if w is None:
            continue
        support = [reps[subset[i]] for i in range(len(subset)) if w[i] != 0]
        coeffs = [w[i] for i in range(len(subset)) if w[i] != 0]
        verdict = RegularityVerdict(Status.IRREGULAR_CONE, tau_q, tuple(support),
                                    tuple(coeffs), _exact.rank([rows[i] for i in support]))
        verify_witness(rows, k, verdict)
        return verdict
    return RegularityVerdict(Status.REGULAR, tau_q)


def _classify_float(weights, reps, k, tau_f) -> RegularityVerdict:
    target = 2.0 * np.asarray(tau_f)
    a = np.asarray(weights, dtype=float)
    rep_rows = [[Fraction(int(x)) for x in a[i]] for i in reps]
    for subset, _ in maximal_deficient_subsets(rep_rows, k):
        if not subset:
            continue
        m = a[[reps[i] for i in subset]].T
        w, resid = nnls(m, target)
        if resid <= FLOAT_TOL * max(1.0, np.linalg.norm(target)):
            keep = [i for i in range(len(subset)) if w[i] > FLOAT_TOL]
            support = tuple(reps[subset[i]] for i in keep)
            r = int(np.linalg.matrix_rank(a[list(support)])) if support else 0
            return RegularityVerdict(Status.IRREGULAR_CONE, tau_f, support,
                                     tuple(float(w[i]) for i in keep), r, provisional=True)
    return RegularityVerdict(Status.REGULAR, tau_f, provisional=True)


def verify_witness(rows: list[list[Fraction]], k: int, verdict: RegularityVerdict) -> None:
    """Re-check the cone witness exactly; raise if it is invalid."""
    if verdict.status is not Status.IRREGULAR_CONE:
        return
    if any(c < 0 for c in verdict.coefficients):
        raise AssertionError("witness has negative coefficient")
    total = [Fraction(0)] * k
    for l, c in zip(verdict.support, verdict.coefficients):
        total = [t + c * a for t, a in zip(total, rows[l])]
    if total != [2 * Fraction(t) for t in verdict.tau]:
        raise AssertionError("witness does not reproduce 2*tau")
    if _exact.rank([rows[l] for l in verdict.support]) >= k:
        raise AssertionError("witness rows have full rank")


def aggregate_witness(row_map: Sequence[int], scales: Sequence, support: Sequence[int],
                      coefficients: Sequence) -> tuple[tuple[int, ...], tuple[Fraction, ...]]:
    """Push a coefficient vector through ``row_map``: w_B[j] = sum scales[l] * w[l] over l -> j."""
    agg: dict[int, Fraction] = {}
    for l, w in zip(support, coefficients):
        j = row_map[l]
        agg[j] = agg.get(j, Fraction(0)) + Fraction(scales[l]) * Fraction(w)
    out = tuple(sorted(agg))
    return out, tuple(agg[j] for j in out)


def transfer_irregularity(action_a: TorusAction, action_b: TorusAction,
                          row_map: Sequence[int], scales: Sequence,
                          verdict_a: RegularityVerdict) -> RegularityVerdict:
    """Carry an irregularity witness for ``A`` over to ``B``.

    Requires ``a_l == scales[l] * b_{row_map[l]}`` for every row ``l`` of A
    with positive rational scales. The witness for B has support
    ``row_map(support_A)`` and coefficients aggregated as
    ``sum scales[l] * w_l`` over each preimage.
    """
    rows_a, rows_b = action_a.rows(), action_b.rows()
    if action_a.k != action_b.k or len(row_map) != action_a.n or len(scales) != action_a.n:
        raise ProportionalityViolated("row map / scales do not match the actions")
    lam = [Fraction(parse_rational(s)) if not isinstance(parse_rational(s), float)
           else None for s in scales]
    for l, (j, s) in enumerate(zip(row_map, lam)):
        if s is None or s <= 0 or not 0 <= j < action_b.n:
            raise ProportionalityViolated(f"invalid scale or target for row {l}")
        if rows_a[l] != [s * x for x in rows_b[j]]:
            raise ProportionalityViolated(f"row {l} of A is not {s} times row {j} of B")
    if verdict_a.status is Status.IRREGULAR_ZERO:
        return RegularityVerdict(Status.IRREGULAR_ZERO, verdict_a.tau)
    if verdict_a.status is not Status.IRREGULAR_CONE:
        raise ValidationError("verdict_a must be irregular")
    support, coeffs = aggregate_witness(row_map, lam, verdict_a.support, verdict_a.coefficients)
    verdict = RegularityVerdict(Status.IRREGULAR_CONE, verdict_a.tau, support, coeffs,
                                _exact.rank([rows_b[j] for j in support]))
    verify_witness(rows_b, action_b.k, verdict)
    return verdict
