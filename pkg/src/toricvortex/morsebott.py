"""Morse-Bott data of the Lagrange multiplier functional and tameness constants.

``F_r(x, lam) = r f(x) + <lam, h(x)>`` on ``V x t^k`` with ``h = mu_V - tau``.
The critical set of ``F_0`` is ``C = h^{-1}(0) x {0}``; its Hessian there is
``[[0, dh^T], [dh, 0]]`` whose nonzero eigenvalues are the singular values
of ``dh`` with both signs.

All quantities that enter the tameness constants depend on ``x`` only
through ``w = |x|^2`` (slot-wise): ``dh dh^T = A_V^T diag(w) A_V`` and
``|grad f|^2 = sum 4 pi^2 m^2 w``. The extremal problems are therefore
solved over ``W_eps = {w >= 0 : |A_V^T w / 2 - tau| <= eps}``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import minimize, nnls

from .approx import (ApproxSpace, hessian_restricted, level_jacobian, level_residual,
                     project_to_target, sample_level_set)
from .errors import NotOnLevelSet, ProjectionDiverged, RegularityViolated, ValidationError
from .flow import gram_r
from .toric import classify_value, maximal_deficient_subsets

ZERO_TOL = 1e-10
GAP_TOL = 1e-8


def hessian_F0(space: ApproxSpace, x, tol: float = 1e-8) -> np.ndarray:
    """Hessian of F_0 at (x, 0) in real coordinates; x must lie on h^{-1}(0)."""
    res = np.linalg.norm(level_residual(space, x))
    if res > tol:
        raise NotOnLevelSet(f"|h(x)| = {res:.3e} exceeds {tol:g}")
    return hessian_restricted(space, x, np.zeros(space.k), r=0.0)


def hessian_spectrum(space: ApproxSpace, x, r: float = 0.0) -> np.ndarray:
    """Eigenvalues of the Hessian operator of F_0 at (x, 0) for the metric g_r on V."""
    H = hessian_F0(space, x)
    if r == 0:
        return np.linalg.eigvalsh(H)
    G = np.eye(H.shape[0])
    G[:2 * space.N, :2 * space.N] = gram_r(space, x, r)
    return eigh(H, G, eigvals_only=True)


@dataclass(frozen=True)
class ConleyReport:
    N: int
    k: int
    critical_dim: int
    normal_rank: int
    negative_rank: int
    morse_bott_verified: bool
    sample_count: int
    min_nonzero_eigenvalue: float
    max_zero_eigenvalue: float
    metric_r: float = 0.0
    seed: int = 0

    def descriptor(self) -> tuple:
        """The metric-independent content: base dimension, fibre rank, verification."""
        return (self.N, self.k, self.critical_dim, self.normal_rank, self.negative_rank,
                self.morse_bott_verified)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["descriptor"] = dict(base="toric map space", base_dim=self.critical_dim - self.k,
                               thom_space_of_rank=self.normal_rank)
        return d


def conley_report(space: ApproxSpace, *, r: float = 0.0, samples: int = 50, seed: int = 0) -> ConleyReport:
    verdict = classify_value(space.action_V(), space.action.tau)
    if not verdict.is_regular:
        raise RegularityViolated(f"tau is not regular for A_V ({verdict.status.value})")
    N, k = space.N, space.k
    ok = True
    min_nonzero, max_zero = math.inf, 0.0
    neg_ranks = set()
    for x in sample_level_set(space, samples, seed):
        ev = hessian_spectrum(space, x, r)
        pos, neg = ev[ev > GAP_TOL], ev[ev < -GAP_TOL]
        zero = ev[np.abs(ev) <= GAP_TOL]
        neg_ranks.add(neg.size)
        min_nonzero = min(min_nonzero, float(np.min(np.abs(np.concatenate([pos, neg])))))
        max_zero = max(max_zero, float(np.max(np.abs(zero))) if zero.size else 0.0)
        rank_dh = np.linalg.matrix_rank(level_jacobian(space, x))
        ok &= pos.size == k and neg.size == k and rank_dh == k
        ok &= zero.size == 2 * N - k and (zero.size == 0 or np.max(np.abs(zero)) < ZERO_TOL)
        if r == 0:
            ok &= bool(np.allclose(np.sort(ev), -np.sort(ev)[::-1], atol=1e-10))
    negative_rank = neg_ranks.pop() if len(neg_ranks) == 1 else -1
    return ConleyReport(N, k, 2 * N - k, k, negative_rank, bool(ok and samples > 0), samples,
                        min_nonzero, max_zero, r, seed)


# --- tameness constants ----------------------------------------------------------------------


def regular_radius(space: ApproxSpace) -> float:
    """Distance from tau to the irregular values of mu_V: 0 and the cones spanned by rank-deficient row sets."""
    tau = space.tau
    best = float(np.linalg.norm(tau))
    # A_V repeats the rows of A, so the cones are those of A
    A = np.asarray(space.action.weights, float)
    for subset, _ in maximal_deficient_subsets(space.action.rows(), space.k):
        if not subset:
            continue
        M = 0.5 * A[list(subset)].T
        _, dist = nnls(M, tau)
        best = min(best, float(dist))
    return best


def _shell_constraints(A, tau, eps):
    return [{"type": "ineq",
             "fun": lambda w: eps * eps - np.sum((0.5 * A.T @ w - tau) ** 2),
             "jac": lambda w: -A @ (0.5 * A.T @ w - tau)}]


def _lam_min(A, w):
    return float(np.linalg.eigvalsh((A.T * w) @ A)[0])


def _shell_starts(space: ApproxSpace, eps: float, count: int, rng) -> list[np.ndarray]:
    A = np.asarray(space.A_V, float)
    out = []
    for _ in range(count):
        target = space.tau + eps * rng.uniform(0, 1) ** (1 / space.k) * _unit(rng, space.k)
        c0 = rng.normal(size=space.N) + 1j * rng.normal(size=space.N)
        try:
            c = project_to_target(space, c0, target)
        except (ProjectionDiverged, ValidationError):
            continue
        out.append(np.abs(c) ** 2)
    if not out:
        w, _ = nnls(0.5 * A.T, space.tau)
        out.append(w)
    return out


def _unit(rng, k):
    v = rng.normal(size=k)
    return v / np.linalg.norm(v)


def estimate_delta(space: ApproxSpace, eps: float, starts: list[np.ndarray]) -> float:
    """min over W_eps of the smallest singular value of dh (multi-start SLSQP)."""
    A = np.asarray(space.A_V, float)
    cons = _shell_constraints(A, space.tau, eps)
    best = math.inf
    for w0 in starts:
        best = min(best, _lam_min(A, w0))
        res = minimize(lambda w: _lam_min(A, w), w0, method="SLSQP", bounds=[(0, None)] * space.N,
                       constraints=cons, options=dict(ftol=1e-14, maxiter=300))
        w = np.maximum(res.x, 0)
        if np.linalg.norm(0.5 * A.T @ w - space.tau) <= eps * (1 + 1e-9):
            best = min(best, _lam_min(A, w))
    return math.sqrt(max(best, 0.0))


def estimate_c(space: ApproxSpace, eps: float, starts: list[np.ndarray]) -> float:
    """max over W_eps of |grad f| (a convex problem; multi-start for robustness)."""
    A = np.asarray(space.A_V, float)
    g = (2 * np.pi * space.modes) ** 2
    if not np.any(g):
        return 0.0
    cons = _shell_constraints(A, space.tau, eps)
    best = 0.0
    for w0 in starts:
        best = max(best, float(g @ w0))
        res = minimize(lambda w: -g @ w, w0, jac=lambda w: -g, method="SLSQP",
                       bounds=[(0, None)] * space.N, constraints=cons,
                       options=dict(ftol=1e-14, maxiter=300))
        w = np.maximum(res.x, 0)
        if np.linalg.norm(0.5 * A.T @ w - space.tau) <= eps * (1 + 1e-9):
            best = max(best, float(g @ w))
    return math.sqrt(best)


@dataclass(frozen=True)
class TameConstants:
    epsilon: float
    delta: float
    c: float
    lambda_bound: float
    regular_radius: float
    epsilon_grid: tuple
    delta_by_epsilon: tuple
    sample_count: int
    seed: int
    estimated: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_EPS_FRACTIONS = (1 / 16, 1 / 8, 1 / 4, 3 / 8, 1 / 2, 5 / 8, 3 / 4)


def tame_constants(space: ApproxSpace, *, epsilon_grid=None, sample_count: int = 20,
                   seed: int = 0) -> TameConstants:
    """Estimate (eps, delta, c) and the multiplier bound (c + eps) / delta.

    ``eps`` is the largest grid value strictly below the distance from
    ``tau`` to the irregular values. The default grid is a set of fractions
    of ``|tau|``.
    """
    verdict = classify_value(space.action_V(), space.action.tau)
    if not verdict.is_regular:
        raise RegularityViolated(f"tau is not regular for A_V ({verdict.status.value})")
    radius = regular_radius(space)
    tnorm = float(np.linalg.norm(space.tau))
    grid = sorted(float(e) for e in (epsilon_grid or [f * tnorm for f in DEFAULT_EPS_FRACTIONS]))
    if any(e <= 0 for e in grid):
        raise ValidationError("epsilon grid values must be positive")
    admissible = [e for e in grid if e < radius]
    if not admissible:
        raise ValidationError(f"no grid value below the regular radius {radius:.6g}")
    rng = np.random.default_rng(seed)
    deltas = []
    starts: list[np.ndarray] = []
    running = math.inf
    for eps in admissible:
        # warm start from the previous shell's points keeps delta monotone
        starts = starts + _shell_starts(space, eps, sample_count, rng)
        running = min(running, estimate_delta(space, eps, starts))
        deltas.append(running)
    eps = admissible[-1]
    delta = deltas[-1]
    c = estimate_c(space, eps, starts)
    return TameConstants(eps, delta, c, (c + eps) / delta, radius, tuple(admissible), tuple(deltas),
                         sample_count, seed)


@dataclass
class PalaisSmaleReport:
    min_margin: float
    samples: int
    by_regime: dict = field(default_factory=dict)
    holds: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def grad_F_norm(space: ApproxSpace, c, lam, r: float) -> float:
    """Flat norm of grad F_r at (c, lam)."""
    rates = np.asarray(space.A_V, float) @ lam - 2 * np.pi * r * space.modes
    return float(np.sqrt(np.sum(np.abs(rates * c) ** 2) + np.sum(level_residual(space, c) ** 2)))


def verify_palais_smale(space: ApproxSpace, constants: TameConstants, r_grid=(0, 0.25, 0.5, 0.75, 1.0),
                        sample_count: int = 500, seed: int = 0) -> PalaisSmaleReport:
    """Sample both exterior regimes and record the least ||grad F_r|| - eps."""
    rng = np.random.default_rng(seed)
    eps, bound = constants.epsilon, constants.lambda_bound
    margins = {"far_from_level": math.inf, "large_multiplier": math.inf}
    half = sample_count // 2
    count = 0
    while count < half:
        # random scale so points land outside the shell
        c = rng.normal(size=space.N) + 1j * rng.normal(size=space.N)
        c *= rng.uniform(0.0, 3.0) * math.sqrt(max(np.linalg.norm(space.tau), 1e-12)) / np.linalg.norm(c)
        if np.linalg.norm(level_residual(space, c)) <= eps:
            continue
        lam = rng.normal(size=space.k) * rng.uniform(0, 3 * bound)
        for r in r_grid:
            margins["far_from_level"] = min(margins["far_from_level"], grad_F_norm(space, c, lam, r) - eps)
        count += 1
    for w in _shell_starts(space, eps, sample_count - half, rng):
        c = np.sqrt(w) * np.exp(1j * rng.uniform(0, 2 * np.pi, space.N))
        lam = _unit(rng, space.k) * bound * (1 + rng.exponential(0.5))
        for r in r_grid:
            margins["large_multiplier"] = min(margins["large_multiplier"],
                                              grad_F_norm(space, c, lam, r) - eps)
    m = min(margins.values())
    return PalaisSmaleReport(m, sample_count, margins, bool(m > 0))
