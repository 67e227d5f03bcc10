"""Finite Fourier approximation spaces V x t^k and the restricted functional.

A point of ``V`` is the flat coefficient vector
``c = (z_{1,lo_1}, ..., z_{1,hi_1}, z_{2,lo_2}, ..., z_{n,hi_n})``. The torus
acts on slot ``l`` through row ``rho[l]`` of ``A`` (indices are 0-based).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, ProjectionDiverged, RegularityViolated, ValidationError
from .loopspace import FourierLoop, LoopPoint
from .toric import TorusAction, classify_value

LEVEL_TOL = 1e-10
RETRY_BUDGET = 50


@dataclass(frozen=True)
class ApproxSpace:
    action: TorusAction
    bands: tuple[tuple[int, int], ...]
    rho: np.ndarray
    modes: np.ndarray
    A_V: np.ndarray

    @classmethod
    def build(cls, action: TorusAction, bands: Sequence[Sequence[int]]) -> "ApproxSpace":
        bands = tuple((int(lo), int(hi)) for lo, hi in bands)
        if len(bands) != action.n:
            raise DimensionMismatch(f"need {action.n} bands, got {len(bands)}")
        if any(lo > hi for lo, hi in bands):
            raise ValidationError(f"empty band in {bands}")
        rho = np.concatenate([np.full(hi - lo + 1, j) for j, (lo, hi) in enumerate(bands)])
        modes = np.concatenate([np.arange(lo, hi + 1) for lo, hi in bands])
        A_V = np.asarray(action.weights)[rho]
        for arr in (rho, modes, A_V):
            arr.setflags(write=False)
        return cls(action, bands, rho, modes, A_V)

    @property
    def N(self) -> int:
        return int(self.rho.size)

    @property
    def k(self) -> int:
        return self.action.k

    @property
    def tau(self) -> np.ndarray:
        return self.action.tau_array

    def action_V(self) -> TorusAction:
        """The torus action on V = C^N given by A_V, same level."""
        return TorusAction(self.A_V, self.action.tau)

    def slot(self, j: int, m: int) -> int:
        lo, hi = self.bands[j]
        if not lo <= m <= hi:
            raise ValidationError(f"mode {m} outside band [{lo}, {hi}] of coordinate {j}")
        return int(sum(h - l + 1 for l, h in self.bands[:j]) + m - lo)

    def check(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=complex)
        if c.shape != (self.N,):
            raise DimensionMismatch(f"expected {self.N} coefficients, got shape {c.shape}")
        return c

    def loop(self, c, grid_size: int = 0) -> FourierLoop:
        return FourierLoop.from_flat(self.bands, self.check(c), grid_size)

    def point(self, c, eta) -> LoopPoint:
        return LoopPoint(self.loop(c), np.asarray(eta, dtype=float))

    def coeffs(self, z: FourierLoop) -> np.ndarray:
        if z.bands != self.bands:
            z = z.restrict(self.bands)
        return z.flat()

    def exponents(self, eta) -> np.ndarray:
        """Per-slot rate (A_V eta)_l - 2 pi m_l of the linear mode equation."""
        return self.A_V @ np.asarray(eta, float) - 2 * np.pi * self.modes


def moment_map_V(space: ApproxSpace, c) -> np.ndarray:
    c = space.check(c)
    return 0.5 * space.A_V.T @ np.abs(c) ** 2


def floer_quadratic(space: ApproxSpace, c) -> float:
    """f(c) = -pi sum_l m_l |c_l|^2, the Liouville integral of the loop."""
    c = space.check(c)
    return float(-np.pi * np.sum(space.modes * np.abs(c) ** 2))


def level_residual(space: ApproxSpace, c) -> np.ndarray:
    return moment_map_V(space, c) - space.tau


def restricted_F(space: ApproxSpace, c, eta, r: float = 1.0) -> float:
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (space.k,):
        raise DimensionMismatch(f"eta must have {space.k} entries")
    return r * floer_quadratic(space, c) + float(eta @ level_residual(space, c))


def level_jacobian(space: ApproxSpace, c) -> np.ndarray:
    """Jacobian of h(c) = mu_V(c) - tau in real coordinates (Re c, Im c); shape (k, 2N)."""
    c = space.check(c)
    A = space.A_V.T.astype(float)
    return np.concatenate([A * c.real, A * c.imag], axis=1)


def project_to_level(space: ApproxSpace, c0, *, max_iter: int = 200, tol: float = 1e-13) -> np.ndarray:
    """Damped Gauss-Newton with pseudo-inverse steps onto mu_V = tau."""
    x = np.concatenate([np.real(c0), np.imag(c0)]).astype(float)
    N = space.N

    def resid(x):
        return level_residual(space, x[:N] + 1j * x[N:])

    h = resid(x)
    for _ in range(max_iter):
        nh = np.linalg.norm(h)
        if nh <= tol:
            return x[:N] + 1j * x[N:]
        J = level_jacobian(space, x[:N] + 1j * x[N:])
        step = -np.linalg.pinv(J, rcond=1e-12) @ h
        t = 1.0
        while t > 1e-8:
            x_new = x + t * step
            h_new = resid(x_new)
            if np.linalg.norm(h_new) < nh:
                break
            t *= 0.5
        else:
            break
        x, h = x_new, h_new
    # stalled at roundoff level is still acceptable
    if np.linalg.norm(h) <= LEVEL_TOL:
        return x[:N] + 1j * x[N:]
    raise ProjectionDiverged(f"projection stalled at |h| = {np.linalg.norm(h):.3e}")


def sample_level_set(space: ApproxSpace, count: int, seed: int = 0) -> list[np.ndarray]:
    """``count`` random points of mu_V^{-1}(tau), reproducible from ``seed``."""
    if count < 0:
        raise ValidationError("count must be nonnegative")
    verdict = classify_value(space.action_V(), space.action.tau)
    if not verdict.is_regular:
        raise RegularityViolated(f"tau is not a regular value of mu_V ({verdict.status.value})")
    scale = np.sqrt(2 * np.linalg.norm(space.tau) / max(space.N, 1)) + 0.1
    out = []
    for child in np.random.SeedSequence(seed).spawn(count):
        rng = np.random.default_rng(child)
        for _ in range(RETRY_BUDGET):
            c0 = scale * (rng.normal(size=space.N) + 1j * rng.normal(size=space.N))
            try:
                out.append(project_to_level(space, c0))
                break
            except ProjectionDiverged:
                continue
        else:
            raise ProjectionDiverged(f"no projection converged in {RETRY_BUDGET} attempts")
    return out


def hessian_restricted(space: ApproxSpace, c, eta, r: float = 1.0) -> np.ndarray:
    """Hessian of (c, eta) -> r f(c) + <eta, h(c)> in real coordinates (Re c, Im c, eta).

    Exact because the functional is quadratic in c and linear in eta.
    """
    c = space.check(c)
    eta = np.asarray(eta, float)
    N, k = space.N, space.k
    diag = space.A_V @ eta - 2 * np.pi * r * space.modes
    H = np.zeros((2 * N + k, 2 * N + k))
    H[np.arange(2 * N), np.arange(2 * N)] = np.concatenate([diag, diag])
    J = level_jacobian(space, c)
    H[2 * N:, :2 * N] = J
    H[:2 * N, 2 * N:] = J.T
    return H


def project_to_target(space: ApproxSpace, c0, target) -> np.ndarray:
    """Project ``c0`` onto mu_V = target (any level, not just tau)."""
    shifted = ApproxSpace.build(space.action.with_tau(target), space.bands)
    return project_to_level(shifted, c0)
