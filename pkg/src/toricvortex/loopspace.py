"""Loops in C^n x t^k, the action functionals, gauge fixing and metrics.

Loops ``z: S^1 -> C^n`` (``S^1 = R/Z``) are banded Fourier series
``z_j(t) = sum_{m=lo_j}^{hi_j} z_{jm} exp(2 pi i m t)``. Products are
evaluated on a uniform grid, derivatives on coefficients.

Sign conventions follow :mod:`toricvortex.toric`. With those conventions
the gauge group acts by

    h_*(z, eta) = (exp(-i A theta) z, eta - d_t theta),   h = exp(i theta),

which leaves the action functional invariant, and the gradients of ``A_0``
for the metric family ``g_r`` are

    grad_r A_0(z, eta) = (i d_t z - i L_z eta - L_z xi, mean(mu(z)) - tau),
    d_t xi = r^2 (mu(z) - mean(mu(z))),   mean(xi) = 0,

so that the Fourier modes of the ``g_0`` flow obey
``d_s z_{jm} + ((A eta)_j - 2 pi m) z_{jm} = 0``.

The metric ``g_r`` is the quotient metric for the gauge action with
``eta`` rescaled by ``1/r``:

    g_r(u, u) = min_xi int |zhat - L_z xi|^2 + r^-2 |d_t xi|^2 dt + |etahat|^2,

minimised over mean-zero loops ``xi``; ``r = 1`` is ``g_1`` and ``r -> 0``
recovers ``g_0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, GridMismatch, SingularSystem, ValidationError
from .toric import TorusAction

TWO_PI = 2.0 * np.pi


GAUGE_REFINE = 8


def next_pow2(x: int) -> int:
    p = 1
    while p < x:
        p *= 2
    return p


def default_grid(mmax: int) -> int:
    """Smallest power of two strictly above ``2 * mmax`` (at least 8)."""
    return max(8, next_pow2(2 * mmax + 1))


def dft_coeffs(samples: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Fourier coefficients for modes lo..hi of uniformly sampled data (last axis)."""
    T = samples.shape[-1]
    if hi - lo + 1 > T:
        raise GridMismatch(f"band [{lo}, {hi}] wider than grid {T}")
    f = np.fft.fft(samples, axis=-1) / T
    return f[..., np.arange(lo, hi + 1) % T]


def synth(coeffs: np.ndarray, lo: int, T: int) -> np.ndarray:
    """Samples at t = i/T of sum_m coeffs[m - lo] exp(2 pi i m t)."""
    modes = np.arange(lo, lo + coeffs.shape[-1])
    t = np.arange(T) / T
    return coeffs @ np.exp(2j * np.pi * np.outer(modes, t))


@dataclass(frozen=True)
class FourierLoop:
    """Loop in C^n with per-coordinate mode bands ``[lo_j, hi_j]``."""

    bands: tuple[tuple[int, int], ...]
    coeffs: tuple[np.ndarray, ...]
    grid_size: int = 0

    def __post_init__(self):
        bands = tuple((int(lo), int(hi)) for lo, hi in self.bands)
        if any(lo > hi for lo, hi in bands):
            raise ValidationError(f"empty band in {bands}")
        coeffs = tuple(np.asarray(c, dtype=complex).reshape(-1) for c in self.coeffs)
        if len(coeffs) != len(bands):
            raise DimensionMismatch("one coefficient array per coordinate required")
        for (lo, hi), c in zip(bands, coeffs):
            if c.size != hi - lo + 1:
                raise DimensionMismatch(f"band [{lo}, {hi}] needs {hi - lo + 1} coefficients, got {c.size}")
        mmax = max(max(abs(lo), abs(hi)) for lo, hi in bands)
        T = self.grid_size or default_grid(mmax)
        if T & (T - 1) or T <= 2 * mmax:
            raise GridMismatch(f"grid size {T} must be a power of two above {2 * mmax}")
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "grid_size", T)

    @classmethod
    def zeros(cls, bands, grid_size: int = 0) -> "FourierLoop":
        return cls(bands, tuple(np.zeros(hi - lo + 1, complex) for lo, hi in bands), grid_size)

    @classmethod
    def from_flat(cls, bands, vec, grid_size: int = 0) -> "FourierLoop":
        vec = np.asarray(vec, dtype=complex)
        sizes = [hi - lo + 1 for lo, hi in bands]
        if vec.shape != (sum(sizes),):
            raise DimensionMismatch(f"expected {sum(sizes)} coefficients, got {vec.shape}")
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return cls(bands, tuple(parts), grid_size)

    @classmethod
    def from_samples(cls, samples: np.ndarray, bands, grid_size: int = 0) -> "FourierLoop":
        samples = np.atleast_2d(np.asarray(samples, dtype=complex))
        return cls(bands, tuple(dft_coeffs(samples[j], lo, hi) for j, (lo, hi) in enumerate(bands)),
                   grid_size)

    @classmethod
    def constant(cls, z, grid_size: int = 0) -> "FourierLoop":
        z = np.asarray(z, dtype=complex).reshape(-1)
        return cls(tuple((0, 0) for _ in z), tuple(np.array([x]) for x in z), grid_size)

    @property
    def n(self) -> int:
        return len(self.bands)

    @property
    def mmax(self) -> int:
        return max(max(abs(lo), abs(hi)) for lo, hi in self.bands)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.coeffs)

    def modes(self) -> np.ndarray:
        return np.concatenate([np.arange(lo, hi + 1) for lo, hi in self.bands])

    def samples(self, T: int | None = None) -> np.ndarray:
        """Array of shape (n, T) with z_j(i / T)."""
        T = T or self.grid_size
        if T <= 2 * self.mmax:
            raise GridMismatch(f"grid {T} too coarse for band {self.mmax}")
        return np.stack([synth(c, lo, T) for (lo, _), c in zip(self.bands, self.coeffs)])

    def derivative(self) -> "FourierLoop":
        return FourierLoop(self.bands, tuple(2j * np.pi * np.arange(lo, hi + 1) * c
                                             for (lo, hi), c in zip(self.bands, self.coeffs)),
                           self.grid_size)

    def with_grid(self, T: int) -> "FourierLoop":
        return FourierLoop(self.bands, self.coeffs, T)

    def scale(self, a: complex) -> "FourierLoop":
        return FourierLoop(self.bands, tuple(a * c for c in self.coeffs), self.grid_size)

    def embed(self, bands) -> "FourierLoop":
        """Same loop on wider bands (must contain the current ones)."""
        out = []
        for (lo, hi), (nlo, nhi), c in zip(self.bands, bands, self.coeffs):
            if nlo > lo or nhi < hi:
                raise ValidationError("embed target must contain the current band")
            buf = np.zeros(nhi - nlo + 1, complex)
            buf[lo - nlo: hi - nlo + 1] = c
            out.append(buf)
        T = max(self.grid_size, default_grid(max(max(abs(a), abs(b)) for a, b in bands)))
        return FourierLoop(tuple(bands), tuple(out), T)

    def restrict(self, bands) -> "FourierLoop":
        """Orthogonal (L^2) projection onto the given bands."""
        out = []
        for (lo, hi), (nlo, nhi), c in zip(self.bands, bands, self.coeffs):
            buf = np.zeros(nhi - nlo + 1, complex)
            for m in range(max(lo, nlo), min(hi, nhi) + 1):
                buf[m - nlo] = c[m - lo]
            out.append(buf)
        return FourierLoop(tuple(bands), tuple(out), self.grid_size)

    def __add__(self, other: "FourierLoop") -> "FourierLoop":
        bands = union_bands(self.bands, other.bands)
        a, b = self.embed(bands), other.embed(bands)
        return FourierLoop(bands, tuple(x + y for x, y in zip(a.coeffs, b.coeffs)),
                           max(a.grid_size, b.grid_size))

    def __sub__(self, other: "FourierLoop") -> "FourierLoop":
        return self + other.scale(-1.0)


def union_bands(b1, b2) -> tuple[tuple[int, int], ...]:
    if len(b1) != len(b2):
        raise DimensionMismatch("loops have different numbers of coordinates")
    return tuple((min(a[0], b[0]), max(a[1], b[1])) for a, b in zip(b1, b2))


def l2_inner(u: FourierLoop, v: FourierLoop) -> float:
    """Real L^2 inner product int <u, v> dt, by Parseval."""
    bands = union_bands(u.bands, v.bands)
    a, b = u.embed(bands), v.embed(bands)
    return float(np.real(np.vdot(a.flat(), b.flat())))


@dataclass(frozen=True)
class LoopPoint:
    """Point (z, eta); ``eta`` is a k-vector (on L_0) or a (k, T) sampled loop."""

    z: FourierLoop
    eta: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        if eta.ndim == 2 and eta.shape[1] != self.z.grid_size:
            raise GridMismatch(f"eta has {eta.shape[1]} samples, z grid is {self.z.grid_size}")
        object.__setattr__(self, "eta", eta)

    @property
    def on_L0(self) -> bool:
        return self.eta.ndim == 1

    def eta_samples(self) -> np.ndarray:
        if self.on_L0:
            return np.repeat(self.eta[:, None], self.z.grid_size, axis=1)
        return self.eta


@dataclass(frozen=True)
class TangentVec:
    z_hat: FourierLoop
    eta_hat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eta_hat", np.asarray(self.eta_hat, dtype=float).reshape(-1))


@dataclass(frozen=True)
class GaugeElement:
    """h(t) = exp(i (base + 2 pi winding t + theta(t))) with periodic theta."""

    theta: np.ndarray
    winding: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    base: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        k = theta.shape[0]
        winding = np.asarray(self.winding, dtype=int).reshape(-1)
        base = np.asarray(self.base, dtype=float).reshape(-1)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "winding", winding if winding.size else np.zeros(k, int))
        object.__setattr__(self, "base", np.mod(base, TWO_PI) if base.size else np.zeros(k))

    def phase(self) -> np.ndarray:
        """Full phase samples, shape (k, T); ``phase[:, -1]`` wraps to winding."""
        T = self.theta.shape[1]
        t = np.arange(T) / T
        return self.base[:, None] + TWO_PI * np.outer(self.winding, t) + self.theta

    @property
    def is_identity(self) -> bool:
        return (not np.any(self.winding)) and np.allclose(self.theta, 0) and np.allclose(self.base, 0)


def _check_action(action: TorusAction, z: FourierLoop) -> None:
    if z.n != action.n:
        raise DimensionMismatch(f"loop has {z.n} coordinates, action has n={action.n}")


def liouville_integral(z: FourierLoop) -> float:
    """int_0^1 lambda(z)(d_t z) dt with lambda = sum y dx, by trapezoid quadrature."""
    zs = z.samples()
    dz = z.derivative().samples()
    return float(np.mean(np.sum(zs.imag * dz.real, axis=0)))


def moment_samples(action: TorusAction, z: FourierLoop, T: int | None = None) -> np.ndarray:
    """mu(z(t)) on the grid, shape (k, T)."""
    _check_action(action, z)
    zs = z.samples(T)
    return 0.5 * action.weights.T @ np.abs(zs) ** 2


def mean_moment(action: TorusAction, z: FourierLoop) -> np.ndarray:
    return moment_samples(action, z).mean(axis=1)


def action_full(action: TorusAction, p: LoopPoint) -> float:
    """A(z, eta) = int lambda(z)(d_t z) + int <mu(z) - tau, eta> dt."""
    tau = action.tau_array
    mu = moment_samples(action, p.z)
    return liouville_integral(p.z) + float(np.mean(np.sum((mu - tau[:, None]) * p.eta_samples(), axis=0)))


def action_A0(action: TorusAction, p: LoopPoint) -> float:
    """A_0(z, eta) = int lambda(z)(d_t z) + <eta, mean(mu(z)) - tau> for constant eta."""
    if not p.on_L0:
        raise ValidationError("action_A0 needs a constant multiplier eta")
    return liouville_integral(p.z) + float(p.eta @ (mean_moment(action, p.z) - action.tau_array))


def apply_gauge(action: TorusAction, p: LoopPoint, h: GaugeElement) -> LoopPoint:
    """h_*(z, eta) = (exp(-i A phase) z, eta - d_t phase).

    ``theta`` is interpolated onto a grid ``GAUGE_REFINE`` times finer before
    the phase is applied, because the gauged loop is not band limited. The
    result lives on the full symmetric band of that finer grid.
    """
    T = p.z.grid_size
    if h.theta.shape[1] != T:
        raise GridMismatch("gauge element and loop use different grids")
    Tf = max(GAUGE_REFINE * T, 64)
    theta = _resample(h.theta, Tf)
    tf = np.arange(Tf) / Tf
    phase = h.base[:, None] + TWO_PI * np.outer(h.winding, tf) + theta
    zs = p.z.samples(Tf) * np.exp(-1j * (action.weights @ phase))
    dtheta = np.real(np.fft.ifft(np.fft.fft(theta, axis=-1) * 2j * np.pi * np.fft.fftfreq(Tf, 1.0 / Tf), axis=-1))
    deta = dtheta + TWO_PI * h.winding[:, None]
    half = Tf // 2 - 1
    bands = tuple((-half, half) for _ in range(action.n))
    z_new = FourierLoop.from_samples(zs, bands, 2 * Tf)
    eta_new = (p.eta[:, None] if p.on_L0 else _resample(p.eta, Tf)) - deta
    if p.on_L0 and np.allclose(deta, deta[:, :1]):
        eta_out = eta_new[:, 0]
    else:
        eta_out = _resample(np.broadcast_to(eta_new, (action.k, Tf)), 2 * Tf)
    return LoopPoint(z_new, eta_out)


def _resample(x: np.ndarray, T_new: int) -> np.ndarray:
    """Trigonometric interpolation of real periodic samples onto a finer grid."""
    T = x.shape[-1]
    f = np.fft.rfft(x, axis=-1)
    if T % 2 == 0:
        f[..., -1] *= 0.5
    g = np.zeros(x.shape[:-1] + (T_new // 2 + 1,), complex)
    g[..., : f.shape[-1]] = f
    return np.fft.irfft(g, n=T_new, axis=-1) * (T_new / T)


def antiderivative_mean_zero(x: np.ndarray) -> np.ndarray:
    """Mean-zero periodic y with d_t y = x - mean(x), samples on the last axis."""
    T = x.shape[-1]
    f = np.fft.fft(x, axis=-1)
    m = np.fft.fftfreq(T, 1.0 / T)
    div = 2j * np.pi * m
    div[0] = 1.0
    f = f / div
    f[..., 0] = 0.0
    if T % 2 == 0:
        f[..., T // 2] = 0.0
    return np.real(np.fft.ifft(f, axis=-1))


def coulomb_gauge(action: TorusAction, p: LoopPoint) -> tuple[LoopPoint, GaugeElement]:
    """Gauge by a normalized transformation so that eta becomes its mean."""
    eta = p.eta_samples()
    theta = antiderivative_mean_zero(eta)
    h = GaugeElement(theta)
    if np.allclose(theta, 0.0, atol=1e-15):
        return LoopPoint(p.z, eta.mean(axis=1)), h
    q = apply_gauge(action, p, h)
    return LoopPoint(q.z, q.eta_samples().mean(axis=1)), h


def normalize_by_H(action: TorusAction, p: LoopPoint) -> tuple[LoopPoint, GaugeElement]:
    """Apply h = exp(2 pi i v t), v integer, moving each eta_i into [0, 2 pi).

    Mode m of z_j moves to m - (A v)_j; A_0 changes by the constant
    2 pi <v, tau>.
    """
    if not p.on_L0:
        raise ValidationError("normalize_by_H needs a constant multiplier eta")
    v = np.floor(p.eta / TWO_PI).astype(int)
    eta = p.eta - TWO_PI * v
    # floating edge: eta exactly 2 pi after subtraction
    bump = eta >= TWO_PI
    v = v + bump
    eta = eta - TWO_PI * bump
    shift = action.weights @ v
    bands = tuple((lo - int(s), hi - int(s)) for (lo, hi), s in zip(p.z.bands, shift))
    mmax = max(max(abs(a), abs(b)) for a, b in bands)
    z = FourierLoop(bands, p.z.coeffs, max(p.z.grid_size, default_grid(mmax)))
    T = z.grid_size
    return LoopPoint(z, eta), GaugeElement(np.zeros((action.k, T)), winding=v)


def solve_xi(action: TorusAction, z: FourierLoop, r: float, T: int | None = None) -> np.ndarray:
    """Mean-zero xi with d_t xi = r^2 (mu(z) - mean mu(z)); samples (k, T)."""
    T = T or z.grid_size
    if r == 0:
        return np.zeros((action.k, T))
    mu = moment_samples(action, z, T)
    return r ** 2 * antiderivative_mean_zero(mu)


def widened_bands(z: FourierLoop) -> tuple[tuple[int, int], ...]:
    """Bands of L_z xi when xi is built from mu(z): widen by the largest span."""
    span = max(hi - lo for lo, hi in z.bands)
    return tuple((lo - span, hi + span) for lo, hi in z.bands)


def grad(action: TorusAction, p: LoopPoint, r: float) -> TangentVec:
    """Gradient of A_0 at a point of L_0 for the metric g_r."""
    if not p.on_L0:
        raise ValidationError("grad needs a point of L_0 (constant eta)")
    z = p.z
    _check_action(action, z)
    a_eta = action.weights @ p.eta
    base = FourierLoop(z.bands, tuple((-TWO_PI * np.arange(lo, hi + 1) + a_eta[j]) * c
                                      for j, ((lo, hi), c) in enumerate(zip(z.bands, z.coeffs))),
                       z.grid_size)
    eta_part = mean_moment(action, z) - action.tau_array
    if r == 0:
        return TangentVec(base, eta_part)
    bands = widened_bands(z)
    mm = max(max(abs(a), abs(b)) for a, b in bands)
    T = default_grid(mm)
    xi = solve_xi(action, z, r, T)
    lz_xi = 1j * (action.weights @ xi) * z.samples(T)
    extra = FourierLoop.from_samples(-lz_xi, bands, T)
    return TangentVec(base.embed(bands) + extra, eta_part)


class GaugeProjector:
    """Horizontal projection for the metric g_r at a fixed loop z.

    ``xi`` is expanded in ``modes`` cosine/sine pairs per torus component;
    the minimisation defining g_r becomes a linear least-squares problem
    whose quadrature is exact on the chosen grid.
    """

    def __init__(self, action: TorusAction, z: FourierLoop, r: float,
                 tangent_mmax: int, modes: int | None = None):
        _check_action(action, z)
        self.action = action
        self.r = float(r)
        span = max(hi - lo for lo, hi in z.bands)
        self.modes = modes or max(16, 4 * span + 8)
        M = self.modes
        self.T = next_pow2(2 * max(tangent_mmax, z.mmax + M) + 2)
        T = self.T
        self.Q = None
        if self.r == 0:
            return
        t = np.arange(T) / T
        m = np.arange(1, M + 1)
        cos = np.cos(TWO_PI * np.outer(m, t))
        sin = np.sin(TWO_PI * np.outer(m, t))
        basis = np.concatenate([cos, sin])                                   # (2M, T)
        dbasis = np.concatenate([-TWO_PI * m[:, None] * sin, TWO_PI * m[:, None] * cos])
        zs = z.samples(T)
        A = np.asarray(action.weights, float)
        n, k = A.shape
        cols = []
        for q in range(k):
            lz = 1j * A[:, q][None, :, None] * basis[:, None, :] * zs[None, :, :]   # (2M, n, T)
            dx = np.zeros((2 * M, k, T))
            dx[:, q, :] = dbasis / self.r
            cols.append(np.concatenate([lz.real.reshape(2 * M, -1), lz.imag.reshape(2 * M, -1),
                                        dx.reshape(2 * M, -1)], axis=1))
        B = np.concatenate(cols).T / np.sqrt(T)
        Q, R = np.linalg.qr(B)
        diag = np.abs(np.diag(R))
        if diag.min() <= 1e-13 * max(diag.max(), 1.0):
            raise SingularSystem("gauge projection system is singular")
        self.Q = Q
        self.k = k

    def stack(self, zhats: Sequence[np.ndarray]) -> np.ndarray:
        """Column-stack sampled tangents (each (n, T)) as least-squares right sides."""
        cols = []
        for zs in zhats:
            cols.append(np.concatenate([zs.real.ravel(), zs.imag.ravel()]))
        U = np.array(cols).T / np.sqrt(self.T)
        if self.Q is not None:
            U = np.concatenate([U, np.zeros((self.k * self.T, U.shape[1]))])
        return U

    def residuals(self, U: np.ndarray) -> np.ndarray:
        if self.Q is None:
            return U
        return U - self.Q @ (self.Q.T @ U)

    def gram(self, zhats: Sequence[np.ndarray]) -> np.ndarray:
        R = self.residuals(self.stack(zhats))
        return R.T @ R


def metric_g0(p: LoopPoint, u: TangentVec, v: TangentVec) -> float:
    return l2_inner(u.z_hat, v.z_hat) + float(u.eta_hat @ v.eta_hat)


def metric_gr(action: TorusAction, p: LoopPoint, u: TangentVec, v: TangentVec, r: float,
              modes: int | None = None) -> float:
    """Quotient metric g_r (r in [0, 1]) at ``p``."""
    if r == 0:
        return metric_g0(p, u, v)
    tm = max(u.z_hat.mmax, v.z_hat.mmax)
    proj = GaugeProjector(action, p.z, r, tm, modes)
    g = proj.gram([u.z_hat.samples(proj.T), v.z_hat.samples(proj.T)])
    return float(g[0, 1]) + float(u.eta_hat @ v.eta_hat)


def metric_g1(action: TorusAction, p: LoopPoint, u: TangentVec, v: TangentVec,
              modes: int | None = None) -> float:
    return metric_gr(action, p, u, v, 1.0, modes)


def norm_r(action: TorusAction, p: LoopPoint, u: TangentVec, r: float) -> float:
    return float(np.sqrt(max(metric_gr(action, p, u, u, r), 0.0)))
