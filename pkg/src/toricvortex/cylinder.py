"""Neumann problems on finite cylinders [-N, N] x S^1.

Discretization: Chebyshev-Gauss-Lobatto collocation in ``s`` and uniform
Fourier samples in ``t``. Node 0 sits at ``s = +N`` and the last node at
``s = -N``. Fields carry the grid axes first, ``(s, t)``, followed by any
number of trailing component axes, so a t^k-valued field has shape
``(S, T, k)``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import GridMismatch, NonMeanZeroData, ValidationError
from .toric import TorusAction

MEAN_TOL = 1e-12
DEFAULT_S_POINTS = 64
DEFAULT_T_POINTS = 32


@lru_cache(maxsize=32)
def chebyshev(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nodes cos(pi j / n), differentiation matrix and Clenshaw-Curtis weights on [-1, 1]."""
    if n < 2:
        raise ValidationError("need at least 2 Chebyshev intervals")
    j = np.arange(n + 1)
    x = np.cos(np.pi * j / n)
    c = np.where((j == 0) | (j == n), 2.0, 1.0) * (-1.0) ** j
    dx = x[:, None] - x[None, :] + np.eye(n + 1)
    D = np.outer(c, 1 / c) / dx
    D -= np.diag(D.sum(axis=1))

    theta = np.pi * j / n
    w = np.zeros(n + 1)
    inner = np.arange(1, n)
    v = np.ones(n - 1)
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n ** 2 - 1)
        for q in range(1, n // 2):
            v -= 2 * np.cos(2 * q * theta[inner]) / (4 * q ** 2 - 1)
        v -= np.cos(n * theta[inner]) / (n ** 2 - 1)
    else:
        w[0] = w[n] = 1.0 / n ** 2
        for q in range(1, (n - 1) // 2 + 1):
            v -= 2 * np.cos(2 * q * theta[inner]) / (4 * q ** 2 - 1)
    w[inner] = 2 * v / n
    for arr in (x, D, w):
        arr.setflags(write=False)
    return x, D, w


@dataclass(frozen=True)
class CylinderGrid:
    half_length: float
    s_points: int = DEFAULT_S_POINTS
    t_points: int = DEFAULT_T_POINTS

    def __post_init__(self):
        if not self.half_length > 0:
            raise ValidationError("half_length must be positive")
        if self.s_points < 2:
            raise ValidationError("s_points must be at least 2")
        if self.t_points < 2 or self.t_points % 2:
            raise ValidationError("t_points must be even and at least 2")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.s_points + 1, self.t_points)

    @cached_property
    def s(self) -> np.ndarray:
        return self.half_length * chebyshev(self.s_points)[0]

    @cached_property
    def t(self) -> np.ndarray:
        return np.arange(self.t_points) / self.t_points

    @cached_property
    def D(self) -> np.ndarray:
        return chebyshev(self.s_points)[1] / self.half_length

    @cached_property
    def D2(self) -> np.ndarray:
        return self.D @ self.D

    @cached_property
    def weights(self) -> np.ndarray:
        return self.half_length * chebyshev(self.s_points)[2]

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.s, self.t, indexing="ij")

    # differentiation on arrays shaped (S, T, ...) ------------------------

    def ds(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.D, values, axes=(1, 0))

    def dt(self, values: np.ndarray, order: int = 1) -> np.ndarray:
        return t_derivative(values, order, axis=1)

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.D2, values, axes=(1, 0)) + self.dt(values, 2)

    def l2(self, values: np.ndarray) -> float:
        sq = np.abs(values) ** 2
        sq = sq.reshape(sq.shape[0], -1).sum(axis=1) / self.t_points
        return float(np.sqrt(max(self.weights @ sq, 0.0)))


def t_derivative(values: np.ndarray, order: int = 1, axis: int = -1) -> np.ndarray:
    """Spectral t-derivative of real or complex periodic samples on [0, 1)."""
    values = np.asarray(values)
    T = values.shape[axis]
    m = np.fft.fftfreq(T, 1.0 / T)
    factor = (2j * np.pi * m) ** order
    if order % 2:
        factor[T // 2] = 0.0 if T % 2 == 0 else factor[T // 2]
    shape = [1] * values.ndim
    shape[axis] = T
    out = np.fft.ifft(np.fft.fft(values, axis=axis) * factor.reshape(shape), axis=axis)
    return out.real if np.isrealobj(values) else out


def t_antiderivative(values: np.ndarray, axis: int = 1) -> np.ndarray:
    """Mean-zero t-antiderivative of mean-zero real samples."""
    T = values.shape[axis]
    m = np.fft.fftfreq(T, 1.0 / T)
    inv = np.zeros(T, dtype=complex)
    inv[m != 0] = 1 / (2j * np.pi * m[m != 0])
    inv[T // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = T
    return np.fft.ifft(np.fft.fft(values, axis=axis) * inv.reshape(shape), axis=axis).real


def _mean_zero_error(values: np.ndarray, axis: int) -> float:
    scale = max(1.0, float(np.max(np.abs(values))) if values.size else 1.0)
    return float(np.max(np.abs(values.mean(axis=axis)))) / scale if values.size else 0.0


@dataclass(frozen=True)
class CylinderField:
    grid: CylinderGrid
    values: np.ndarray
    mean_zero: bool = True

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape[:2] != self.grid.shape:
            raise GridMismatch(f"values shape {values.shape} does not fit grid {self.grid.shape}")
        if self.mean_zero and _mean_zero_error(values, 1) > MEAN_TOL:
            raise NonMeanZeroData("field does not have mean zero in t")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: CylinderGrid, fn, mean_zero: bool = True) -> "CylinderField":
        S, T = grid.mesh()
        return cls(grid, fn(S, T), mean_zero)

    @classmethod
    def zeros(cls, grid: CylinderGrid, components: tuple[int, ...] = ()) -> "CylinderField":
        return cls(grid, np.zeros(grid.shape + tuple(components)))


def _check_loop(grid: CylinderGrid, g, trailing: tuple[int, ...]) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape != (grid.t_points,) + trailing:
        raise GridMismatch(f"boundary data shape {g.shape}, expected {(grid.t_points,) + trailing}")
    if _mean_zero_error(g, 0) > MEAN_TOL:
        raise NonMeanZeroData("boundary data does not have mean zero")
    return g


def solve_neumann(h: CylinderField, g_plus, g_minus, *, workers: int = 1) -> CylinderField:
    """Mean-zero f with Laplacian h and outward normal derivative g_plus / g_minus at s = +N / -N.

    Each nonzero t-mode gives a two-point boundary value problem in s, solved
    by collocation with the two boundary rows replaced by the Neumann data.
    The per-mode solves are independent; ``workers > 1`` runs them on a thread pool.
    """
    grid = h.grid
    if not h.mean_zero and _mean_zero_error(h.values, 1) > MEAN_TOL:
        raise NonMeanZeroData("right-hand side does not have mean zero in t")
    trailing = h.values.shape[2:]
    gp = _check_loop(grid, g_plus, trailing)
    gm = _check_loop(grid, g_minus, trailing)

    S, T = grid.shape
    H = np.fft.rfft(h.values, axis=1).reshape(S, T // 2 + 1, -1)
    Gp = np.fft.rfft(gp, axis=0).reshape(T // 2 + 1, -1)
    Gm = np.fft.rfft(gm, axis=0).reshape(T // 2 + 1, -1)
    F = np.zeros_like(H)

    def solve_mode(m: int) -> None:
        L = grid.D2 - (2 * np.pi * m) ** 2 * np.eye(S)
        L[0] = grid.D[0]
        L[-1] = -grid.D[-1]
        rhs = H[:, m].copy()
        rhs[0] = Gp[m]
        rhs[-1] = Gm[m]
        F[:, m] = np.linalg.solve(L, rhs)

    modes = range(1, T // 2 + 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(solve_mode, modes))
    else:
        for m in modes:
            solve_mode(m)
    f = np.fft.irfft(F, n=T, axis=1).reshape(h.values.shape)
    return CylinderField(grid, f)


def neumann_residuals(f: CylinderField, h: CylinderField, g_plus, g_minus) -> tuple[float, float]:
    """(L2 norm of Laplacian(f) - h, max boundary mismatch)."""
    grid = f.grid
    interior = grid.l2(grid.laplacian(f.values) - h.values)
    dsf = grid.ds(f.values)
    boundary = max(np.max(np.abs(dsf[0] - np.asarray(g_plus))),
                   np.max(np.abs(-dsf[-1] - np.asarray(g_minus))))
    return interior, float(boundary)


def sobolev_w22(field: CylinderField) -> float:
    grid, v = field.grid, field.values
    vs = grid.ds(v)
    parts = (v, vs, grid.dt(v), grid.ds(vs), grid.ds(grid.dt(v)), grid.dt(v, 2))
    return float(np.sqrt(sum(grid.l2(p) ** 2 for p in parts)))


def loop_w12(g) -> float:
    g = np.asarray(g, dtype=float)
    return float(np.sqrt(np.mean(g ** 2) + np.mean(t_derivative(g, 1, axis=0) ** 2)))


def estimate_ratio(f: CylinderField, h: CylinderField, g_plus, g_minus) -> float:
    """||f||_{W^{2,2}} divided by ||h||_{L^2} + ||g_plus||_{W^{1,2}} + ||g_minus||_{W^{1,2}}."""
    if f.grid != h.grid:
        raise GridMismatch("f and h live on different grids")
    num = sobolev_w22(f)
    den = h.grid.l2(h.values) + loop_w12(g_plus) + loop_w12(g_minus)
    if num == 0.0:
        return 0.0
    return num / den


# Coulomb gauge on the cylinder -----------------------------------------


@dataclass(frozen=True)
class GaugedFields:
    """Fields on a cylinder grid: z (S, T, n) complex, eta (S, T, k), xi (S, T, k)."""

    grid: CylinderGrid
    z: np.ndarray
    eta: np.ndarray
    xi: np.ndarray


@dataclass(frozen=True)
class CoulombResult:
    fields: GaugedFields
    angle: np.ndarray
    zeta: np.ndarray
    residuals: dict[str, float]
    source_residuals: dict[str, float]


def fields_from_states(action: TorusAction, grid: CylinderGrid, z_samples, eta, r: float) -> GaugedFields:
    """Assemble cylinder fields from per-slice loop samples.

    ``z_samples`` has shape (S, T, n), ``eta`` has shape (S, k) and is taken
    constant in t. ``xi`` is the mean-zero solution of d_t xi = r^2 (mu - mean mu).
    """
    z = np.asarray(z_samples, dtype=complex)
    eta = np.asarray(eta, dtype=float)
    if z.shape != grid.shape + (action.n,) or eta.shape != (grid.shape[0], action.k):
        raise GridMismatch("field shapes do not match the grid and the action")
    mu = 0.5 * np.abs(z) ** 2 @ action.weights
    xi = r ** 2 * t_antiderivative(mu - mu.mean(axis=1, keepdims=True))
    eta_field = np.broadcast_to(eta[:, None, :], grid.shape + (action.k,)).copy()
    return GaugedFields(grid, z, eta_field, xi)


def vortex_residuals(action: TorusAction, f: GaugedFields, r: float, *, coulomb: bool) -> dict[str, float]:
    """Max-norm residuals of the cylinder vortex system.

    With ``coulomb=False`` the system is the t-constant-eta form:
    ``d_s z + i d_t z - L_z xi - i L_z eta = 0``, ``d_s eta + mean mu = tau``,
    ``d_t xi = r^2 (mu - mean mu)`` and ``int xi dt = 0``. With ``coulomb=True``
    the second and third lines become
    ``d_s eta - d_t xi + (1 - r^2) mean mu + r^2 mu = tau`` and ``d_s xi + d_t eta = 0``.
    """
    grid, A = f.grid, action.weights
    tau = action.tau_array
    mu = 0.5 * np.abs(f.z) ** 2 @ A
    mu_bar = np.broadcast_to(mu.mean(axis=1, keepdims=True), mu.shape)
    # L_z v = i (A v) z, so -L_z xi - i L_z eta = (-i A xi + A eta) z
    cr = grid.ds(f.z) + 1j * grid.dt(f.z) + (-1j * (f.xi @ A.T) + f.eta @ A.T) * f.z
    if coulomb:
        second = grid.ds(f.eta) - grid.dt(f.xi) + (1 - r ** 2) * mu_bar + r ** 2 * mu - tau
        third = grid.ds(f.xi) + grid.dt(f.eta)
    else:
        second = grid.ds(f.eta) + mu_bar - tau
        third = grid.dt(f.xi) - r ** 2 * (mu - mu_bar)
    return {
        "cauchy_riemann": float(np.max(np.abs(cr))),
        "moment": float(np.max(np.abs(second))),
        "coulomb" if coulomb else "xi_equation": float(np.max(np.abs(third))),
        "xi_mean": float(np.max(np.abs(f.xi.mean(axis=1)))),
    }


def cylinder_coulomb(action: TorusAction, fields: GaugedFields, r: float) -> CoulombResult:
    """Gauge transform making d_s xi + d_t eta vanish.

    zeta solves the Neumann problem with right side d_s d_t xi and zero
    boundary data. The gauge angle theta is the mean-zero t-antiderivative of
    zeta, so g^{-1} d_t g = zeta and the winding is zero on every slice. The
    transformed triple is (e^{-i A theta} z, eta - d_t theta, xi - d_s theta).
    """
    grid = fields.grid
    k = action.k
    rhs = grid.ds(grid.dt(fields.xi))
    zero = np.zeros((grid.t_points, k))
    zeta = solve_neumann(CylinderField(grid, rhs), zero, zero).values
    theta = t_antiderivative(zeta)
    phase = np.exp(-1j * theta @ action.weights.T)
    out = GaugedFields(
        grid,
        phase * fields.z,
        fields.eta - grid.dt(theta),
        fields.xi - grid.ds(theta),
    )
    return CoulombResult(
        fields=out,
        angle=theta,
        zeta=zeta,
        residuals=vortex_residuals(action, out, r, coulomb=True),
        source_residuals=vortex_residuals(action, fields, r, coulomb=False),
    )


def manufactured_problems(grid: CylinderGrid) -> dict[str, tuple]:
    """Closed-form test problems: name -> (h, g_plus, g_minus, exact f values)."""
    two_pi = 2 * np.pi
    S, T = grid.mesh()
    N = grid.half_length
    flux = two_pi * np.sinh(two_pi * N) * np.cos(two_pi * grid.t)
    zero = np.zeros(grid.t_points)
    return {
        "harmonic": (CylinderField.zeros(grid), flux, flux, np.cos(two_pi * T) * np.cosh(two_pi * S)),
        "constant_in_s": (CylinderField(grid, np.cos(two_pi * T)), zero, zero,
                          -np.cos(two_pi * T) / two_pi ** 2),
    }
