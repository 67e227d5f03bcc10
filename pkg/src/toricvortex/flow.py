"""Negative gradient flow of the action restricted to V x t^k.

For ``r = 0`` the metric is the flat one and the flow decouples mode by
mode: ``dc_l/ds = -((A_V eta)_l - 2 pi m_l) c_l`` and
``deta/ds = tau - mu_V(c)``. For ``r > 0`` the flow uses the gradient of the
restriction with respect to ``g_r``, obtained by solving the Gram system of
``g_r`` on the real basis of ``V``; the part of the ambient gradient that
leaves ``V`` is available as a diagnostic.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import RK45
from scipy.optimize import minimize

from .approx import ApproxSpace, hessian_restricted, level_residual, restricted_F
from .errors import DimensionMismatch, InvalidOptions, NotProper, NumericalError
from .loopspace import GaugeProjector, grad, metric_gr, synth
from .toric import TorusAction, has_compact_fibers

TWO_PI = 2 * np.pi


class FlowStatus(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_TIME = "MaxTimeReached"
    BLOWUP = "Blowup"


@dataclass(frozen=True)
class FlowOptions:
    s_max: float = 50.0
    grad_tol: float = 1e-9
    dwell: float = 1.0
    blowup_radius: float = 1e6
    atol: float = 1e-10
    rtol: float = 1e-8
    max_step: float = np.inf

    def __post_init__(self):
        for name in ("s_max", "grad_tol", "dwell", "blowup_radius", "atol", "rtol", "max_step"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0) or math.isnan(v):
                raise InvalidOptions(f"{name} must be positive, got {v!r}")


def _split(space: ApproxSpace, y: np.ndarray):
    N = space.N
    return y[:N] + 1j * y[N:2 * N], y[2 * N:2 * N + space.k]


def _pack(c, eta) -> np.ndarray:
    return np.concatenate([np.real(c), np.imag(c), eta])


def band_basis_samples(space: ApproxSpace, T: int) -> list[np.ndarray]:
    """Samples (n, T) of the real basis of V: unit real, then unit imaginary, per slot."""
    out = []
    for unit in (1.0, 1j):
        for j, m in zip(space.rho, space.modes):
            s = np.zeros((space.action.n, T), complex)
            s[j] = unit * synth(np.array([1.0]), int(m), T)
            out.append(s)
    return out


def gram_r(space: ApproxSpace, c, r: float, modes: int | None = None) -> np.ndarray:
    """Gram matrix of g_r on the real basis of V at ``c``; shape (2N, 2N)."""
    if r == 0:
        return np.eye(2 * space.N)
    z = space.loop(c)
    tm = int(np.max(np.abs(space.modes)))
    proj = GaugeProjector(space.action, z, r, tm, modes)
    return proj.gram(band_basis_samples(space, proj.T))


def vector_field(space: ApproxSpace, c, eta, r: float, *, with_norm: bool = False):
    """Negative g_r-gradient of the restricted action at (c, eta)."""
    c = space.check(c)
    eta = np.asarray(eta, float)
    if eta.shape != (space.k,):
        raise DimensionMismatch(f"eta must have {space.k} entries")
    rates = space.exponents(eta)
    h = level_residual(space, c)
    if r == 0:
        gc = rates * c
        out = (-gc, -h)
        sq = float(np.sum(np.abs(gc) ** 2) + h @ h)
    else:
        b = np.concatenate([rates * c.real, rates * c.imag])
        G = np.linalg.solve(gram_r(space, c, r), b)
        out = (-(G[:space.N] + 1j * G[space.N:]), -h)
        sq = float(b @ G + h @ h)
    if with_norm:
        return out[0], out[1], math.sqrt(max(sq, 0.0))
    return out


def offband_residual(space: ApproxSpace, c, eta, r: float) -> float:
    """g_r-norm of the part of the ambient gradient orthogonal to V."""
    if r == 0:
        return 0.0
    p = space.point(c, eta)
    full = grad(space.action, p, r)
    total = metric_gr(space.action, p, full, full, r)
    _, _, band = vector_field(space, c, eta, r, with_norm=True)
    return math.sqrt(max(total - band ** 2, 0.0))


@dataclass
class FlowTrajectory:
    space: ApproxSpace
    r: float
    s: np.ndarray
    c: np.ndarray
    eta: np.ndarray
    action: np.ndarray
    grad_norm: np.ndarray
    level: np.ndarray
    energy_log: np.ndarray
    status: FlowStatus
    eta_unbounded: bool = False
    max_action_increase: float = 0.0
    notes: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.s)

    @property
    def energy(self) -> float:
        return float(self.energy_log[-1] - self.energy_log[0])

    @property
    def start(self):
        return self.c[0], self.eta[0]

    @property
    def end(self):
        return self.c[-1], self.eta[-1]

    def segment(self, i0: int, i1: int) -> "FlowTrajectory":
        sl = slice(i0, i1)
        return replace(self, s=self.s[sl], c=self.c[sl], eta=self.eta[sl], action=self.action[sl],
                       grad_norm=self.grad_norm[sl], level=self.level[sl],
                       energy_log=self.energy_log[sl])

    def rows(self) -> list[dict]:
        """Per-sample diagnostics for CSV export."""
        return [dict(s=float(s), action=float(a), grad_norm=float(g), level_residual=float(l),
                     c_norm=float(np.linalg.norm(c)), eta_norm=float(np.linalg.norm(e)),
                     energy=float(E))
                for s, a, g, l, c, e, E in zip(self.s, self.action, self.grad_norm, self.level,
                                               self.c, self.eta, self.energy_log)]


def concatenate(first: FlowTrajectory, second: FlowTrajectory) -> FlowTrajectory:
    """Join two trajectories where ``second`` starts at the end of ``first``."""
    shift = first.s[-1] - second.s[0]
    e_shift = first.energy_log[-1] - second.energy_log[0]
    return replace(second,
                   s=np.concatenate([first.s, second.s[1:] + shift]),
                   c=np.concatenate([first.c, second.c[1:]]),
                   eta=np.concatenate([first.eta, second.eta[1:]]),
                   action=np.concatenate([first.action, second.action[1:]]),
                   grad_norm=np.concatenate([first.grad_norm, second.grad_norm[1:]]),
                   level=np.concatenate([first.level, second.level[1:]]),
                   energy_log=np.concatenate([first.energy_log, second.energy_log[1:] + e_shift]),
                   max_action_increase=max(first.max_action_increase, second.max_action_increase))


class _Recorder:
    def __init__(self, space, r):
        self.space, self.r = space, r
        self.rows = []

    def add(self, s, y):
        c, eta = _split(self.space, y)
        _, _, gn = vector_field(self.space, c, eta, self.r, with_norm=True)
        self.rows.append((s, c, eta, restricted_F(self.space, c, eta),
                          gn, float(np.linalg.norm(level_residual(self.space, c))), y[-1]))
        return gn

    def build(self, status, sign=1.0, **extra) -> FlowTrajectory:
        s, c, eta, a, g, l, e = zip(*self.rows)
        a = np.array(a)
        inc = float(np.max(np.diff(a) * sign)) if len(a) > 1 else 0.0
        return FlowTrajectory(self.space, self.r, np.array(s), np.array(c), np.array(eta), a,
                              np.array(g), np.array(l), np.array(e), status,
                              max_action_increase=max(inc, 0.0), **extra)


def flat_grad_sq(space: ApproxSpace, c, eta) -> float:
    """||d_t z - L_z eta||^2 + |mean mu - tau|^2 on V."""
    g = space.exponents(eta) * c
    h = level_residual(space, c)
    return float(np.sum(np.abs(g) ** 2) + h @ h)


def _rhs(space, r, direction):
    if r == 0:
        return _rhs_flat(space, direction)

    def f(s, y):
        c, eta = _split(space, y)
        dc, deta = vector_field(space, c, eta, r)
        return np.concatenate([direction * _pack(dc, deta), [flat_grad_sq(space, c, eta)]])
    return f


def _rhs_flat(space, direction):
    # same field as vector_field at r = 0, written out to keep per-call overhead low
    N, k = space.N, space.k
    A = np.asarray(space.A_V, float)
    shift = 2 * np.pi * space.modes
    tau = space.tau
    out = np.empty(2 * N + k + 1)

    def f(s, y):
        x, yi, eta = y[:N], y[N:2 * N], y[2 * N:2 * N + k]
        rates = A @ eta - shift
        h = 0.5 * (A.T @ (x * x + yi * yi)) - tau
        gx, gy = rates * x, rates * yi
        out[:N] = -direction * gx
        out[N:2 * N] = -direction * gy
        out[2 * N:2 * N + k] = -direction * h
        out[-1] = gx @ gx + gy @ gy + h @ h
        return out.copy()
    return f


def integrate(space: ApproxSpace, c0, eta0, r: float, opts: FlowOptions | None = None, *,
              s_eval=None, direction: float = 1.0) -> FlowTrajectory:
    """Integrate the flow from (c0, eta0) with adaptive RK45.

    Samples are recorded at every accepted step, or only at ``s_eval`` (dense
    output) when given. ``direction=-1`` runs the flow backwards in s; the
    energy column still accumulates the squared gradient norm.
    """
    opts = opts or FlowOptions()
    if not 0 <= r <= 1:
        raise InvalidOptions("r must lie in [0, 1]")
    c0 = space.check(c0)
    y0 = np.concatenate([_pack(c0, np.asarray(eta0, float)), [0.0]])
    if y0.size != 2 * space.N + space.k + 1:
        raise DimensionMismatch("initial eta has the wrong length")
    if s_eval is not None:
        s_eval = np.asarray(s_eval, float)
        if np.any(np.diff(s_eval) <= 0) or s_eval[0] < 0:
            raise InvalidOptions("s_eval must be increasing and nonnegative")
        s_bound = float(s_eval[-1])
    else:
        s_bound = float(opts.s_max)
    solver = RK45(_rhs(space, r, direction), 0.0, y0, s_bound, rtol=opts.rtol, atol=opts.atol,
                  max_step=opts.max_step)
    rec = _Recorder(space, r)
    status = FlowStatus.MAX_TIME
    below_since = None
    next_eval = 0
    if s_eval is None or s_eval[0] == 0.0:
        gn = rec.add(0.0, y0)
        next_eval = 1
    else:
        _, _, gn = vector_field(space, c0, eta0, r, with_norm=True)
    below_since = 0.0 if gn < opts.grad_tol else None
    while solver.status == "running":
        solver.step()
        if solver.status == "failed":
            raise NumericalError(f"integrator failed at s = {solver.t}")
        s, y = solver.t, solver.y
        if s_eval is None:
            gn = rec.add(s, y.copy())
        else:
            dense = solver.dense_output()
            while next_eval < len(s_eval) and s_eval[next_eval] <= s:
                rec.add(float(s_eval[next_eval]), dense(s_eval[next_eval]))
                next_eval += 1
            c, eta = _split(space, y)
            _, _, gn = vector_field(space, c, eta, r, with_norm=True)
        if np.linalg.norm(y[:-1]) > opts.blowup_radius:
            status = FlowStatus.BLOWUP
            break
        if gn < opts.grad_tol:
            below_since = s if below_since is None else below_since
            if s - below_since >= opts.dwell and s_eval is None:
                status = FlowStatus.CONVERGED
                break
        else:
            below_since = None
    if s_eval is not None and below_since is not None and solver.t - below_since >= opts.dwell:
        status = FlowStatus.CONVERGED
    traj = rec.build(status, sign=direction)
    traj.eta_unbounded = status is not FlowStatus.CONVERGED and _eta_drifts(traj)
    return traj


def _eta_drifts(traj: FlowTrajectory) -> bool:
    """Heuristic: eta still moving at a steady nonzero rate over the last half."""
    if len(traj) < 4:
        return False
    mid = len(traj) // 2
    ds = traj.s[-1] - traj.s[mid]
    if ds <= 0:
        return False
    rate = np.linalg.norm(traj.eta[-1] - traj.eta[mid]) / ds
    return bool(rate > 1e-3 and traj.grad_norm[-1] > 1e-3
                and np.linalg.norm(traj.eta[-1]) > np.linalg.norm(traj.eta[mid]))


def energy(traj: FlowTrajectory) -> float:
    """Accumulated integral of the squared flat gradient norm along the trajectory.

    The integrand is ||d_t z - L_z eta||^2 + |mean mu - tau|^2, the squared
    norm of the r = 0 gradient; for r = 0 flows it equals the action drop.
    """
    if len(traj) == 0:
        raise InvalidOptions("empty trajectory")
    return traj.energy


# --- critical points and converging flow lines --------------------------------------------


def is_critical(space: ApproxSpace, c, eta, tol: float = 1e-10) -> bool:
    _, _, gn = vector_field(space, c, eta, 0.0, with_norm=True)
    return gn <= tol


def stable_directions(space: ApproxSpace, c, eta, tol: float = 1e-8):
    """Eigenpairs of the Hessian with positive eigenvalue (directions attracted by the flow)."""
    w, V = np.linalg.eigh(hessian_restricted(space, c, eta))
    keep = w > tol
    V = V[:, keep]
    # roundoff entries would seed modes that the flow keeps exactly at zero
    V[np.abs(V) < 1e-13] = 0.0
    return w[keep], V / np.linalg.norm(V, axis=0)


def backward_flow(space: ApproxSpace, c_end, eta_end, *, s_back_max: float = 30.0,
                  stop=None, opts: FlowOptions | None = None,
                  max_step: float = 0.1) -> FlowTrajectory:
    """The r = 0 flow line ending at (c_end, eta_end), computed backwards in s.

    Integration runs in reverse until ``stop(s_back, c, eta, grad_norm)`` is
    true, the state leaves the blowup radius, or ``s_back_max`` is reached.
    The result is returned in forward time with its status judged at the
    terminal end by the usual dwell rule.
    """
    base = opts or FlowOptions()
    rec = _Recorder(space, 0.0)
    y0 = np.concatenate([_pack(space.check(c_end), np.asarray(eta_end, float)), [0.0]])
    # short steps so the dwell window is resolved by the recorded samples
    solver = RK45(_rhs(space, 0.0, -1.0), 0.0, y0, s_back_max, rtol=base.rtol, atol=base.atol,
                  max_step=min(base.max_step, max_step))
    rec.add(0.0, y0)
    while solver.status == "running":
        solver.step()
        if solver.status == "failed":
            raise NumericalError("backward integration failed")
        gn = rec.add(solver.t, solver.y.copy())
        c, eta = _split(space, solver.y)
        if np.linalg.norm(solver.y[:-1]) > base.blowup_radius or (stop and stop(solver.t, c, eta, gn)):
            break
    s, c, eta, a, g, l, e = map(np.array, zip(*rec.rows))
    S = s[-1]
    rev = slice(None, None, -1)
    traj = FlowTrajectory(space, 0.0, (S - s)[rev], c[rev], eta[rev], a[rev], g[rev], l[rev],
                          (e[-1] - e)[rev], FlowStatus.MAX_TIME,
                          notes=dict(construction="backward integration", s_back=float(S)))
    return _judge_terminal(traj, base)


def _judge_terminal(traj: FlowTrajectory, opts: FlowOptions) -> FlowTrajectory:
    traj.max_action_increase = max(float(np.max(np.diff(traj.action))), 0.0) if len(traj) > 1 else 0.0
    below = traj.grad_norm < opts.grad_tol
    traj.status = FlowStatus.MAX_TIME
    if below[-1]:
        first = len(below) - int(np.argmin(below[::-1])) if not below.all() else 0
        if traj.s[-1] - traj.s[min(first, len(below) - 1)] >= opts.dwell:
            traj.status = FlowStatus.CONVERGED
    return traj


def trim_start(traj: FlowTrajectory, i0: int, opts: FlowOptions | None = None) -> FlowTrajectory:
    """Drop the first ``i0`` samples and restart the clock at zero."""
    seg = traj.segment(i0, len(traj))
    seg.s = seg.s - seg.s[0]
    seg.energy_log = seg.energy_log - seg.energy_log[0]
    return _judge_terminal(seg, opts or FlowOptions())


def stable_seed(space: ApproxSpace, c_crit, eta_crit, coeffs, *, seed_grad: float = 1e-12,
                max_rate: float = 6.5):
    """Point near a critical point on its slow stable eigenspace, with gradient ~ ``seed_grad``.

    Only eigenvalues up to ``max_rate`` are used: faster directions would
    push the gradient above the convergence threshold within the dwell
    window.
    """
    lam, V = stable_directions(space, c_crit, eta_crit)
    sel = lam <= max_rate
    lam, V = lam[sel], V[:, sel]
    if lam.size == 0:
        raise InvalidOptions("no slow stable directions at this critical point")
    coeffs = np.resize(np.asarray(coeffs, float), lam.size)
    direction = V @ (coeffs / lam)
    direction *= seed_grad / np.linalg.norm(V @ coeffs)
    return _split(space, _pack(np.asarray(c_crit, complex), np.asarray(eta_crit, float)) + direction)


def converging_flow(space: ApproxSpace, c_crit, eta_crit, coeffs, *, seed_grad: float = 1e-12,
                    grad_cap: float = 1.0, s_back_max: float = 30.0, max_rate: float = 6.5,
                    opts: FlowOptions | None = None) -> FlowTrajectory:
    """A flow line of the r = 0 flow converging to the critical point (c_crit, eta_crit).

    Every critical point is a saddle, so forward integration from generic
    data does not converge. The flow is instead run backwards from a
    :func:`stable_seed` until the gradient reaches ``grad_cap``.
    """
    c0, eta0 = stable_seed(space, c_crit, eta_crit, coeffs, seed_grad=seed_grad, max_rate=max_rate)
    return backward_flow(space, c0, eta0, s_back_max=s_back_max, opts=opts,
                         stop=lambda s, c, e, g: g >= grad_cap)


# --- a priori bounds --------------------------------------------------------------------------


@dataclass(frozen=True)
class BandBound:
    lower: tuple[int, ...]
    upper: tuple[int, ...]

    @property
    def forced_zero(self) -> tuple[int, ...]:
        return tuple(j for j, (lo, hi) in enumerate(zip(self.lower, self.upper)) if lo > hi)

    def contains(self, j: int, m: int) -> bool:
        return self.lower[j] <= m <= self.upper[j]


def mode_band(action: TorusAction, eta_minus, eta_plus, tol: float = 1e-12) -> BandBound:
    """Modes a flow line from multiplier eta_minus to eta_plus may carry.

    ``(A eta)_j / 2 pi`` within ``tol`` of an integer counts as that integer,
    so limits known only approximately can be passed in.
    """
    a_minus = action.weights @ np.asarray(eta_minus, float) / TWO_PI
    a_plus = action.weights @ np.asarray(eta_plus, float) / TWO_PI
    lo = [int(math.ceil(x - tol)) for x in a_minus]
    hi = [int(math.floor(x + tol)) for x in a_plus]
    return BandBound(tuple(lo), tuple(hi))


def offband_magnitude(space: ApproxSpace, c, band: BandBound) -> float:
    """Largest |c_l| over slots whose mode lies outside ``band``."""
    c = space.check(c)
    mask = np.array([not band.contains(int(j), int(m)) for j, m in zip(space.rho, space.modes)])
    return float(np.max(np.abs(c[mask]))) if mask.any() else 0.0


def compute_R(action: TorusAction, *, starts: int = 8, seed: int = 0) -> float:
    """sqrt of max sum(w) over w >= 0 with ||A^T w / 2|| <= ||tau||."""
    if not has_compact_fibers(action):
        raise NotProper("moment map has non-compact fibers; the radius is unbounded")
    A = np.asarray(action.weights, float)
    t = float(np.linalg.norm(action.tau_array))
    if t == 0:
        return 0.0
    n = action.n
    cons = [{"type": "ineq", "fun": lambda w: t * t - 0.25 * np.sum((A.T @ w) ** 2),
             "jac": lambda w: -0.5 * A @ (A.T @ w)}]
    rng = np.random.default_rng(seed)
    best = 0.0
    for i in range(starts):
        w0 = rng.random(n) if i else np.ones(n)
        scale = np.linalg.norm(0.5 * A.T @ w0)
        w0 = w0 * (t / scale if scale > 0 else 1.0) * 0.5
        res = minimize(lambda w: -np.sum(w), w0, jac=lambda w: -np.ones(n), method="SLSQP",
                       bounds=[(0, None)] * n, constraints=cons,
                       options=dict(ftol=1e-15, maxiter=500))
        w = np.maximum(res.x, 0.0)
        if np.linalg.norm(0.5 * A.T @ w) <= t * (1 + 1e-9):
            best = max(best, float(np.sum(w)))
    return math.sqrt(best)


@dataclass
class LinftyReport:
    sup_norm: float
    bound: float
    holds: bool
    min_slack_outside: float | None
    outside_count: int
    min_slack: float

    def to_dict(self) -> dict:
        return dict(sup_norm=self.sup_norm, bound=self.bound, holds=self.holds,
                    min_slack_outside=self.min_slack_outside, outside_count=self.outside_count,
                    min_slack=self.min_slack)


def _second_s_derivative(space, c, eta, r, h=1e-6):
    """d^2 c / ds^2 along the flow: derivative of the vector field along itself."""
    dc, deta = vector_field(space, c, eta, r)
    scale = h / max(np.linalg.norm(np.concatenate([np.abs(dc), deta])), 1e-300)
    p = vector_field(space, c + scale * dc, eta + scale * deta, r)[0]
    m = vector_field(space, c - scale * dc, eta - scale * deta, r)[0]
    return dc, (p - m) / (2 * scale)


def check_linfty(traj: FlowTrajectory, R: float, *, T: int | None = None) -> LinftyReport:
    """Sup of |z(s, t)| against 2R, plus the convexity slack of |z|^2 / 2.

    The slack is Lap(|z|^2 / 2) - 2 r^2 |mu(z)| (|mu(z)| - |tau|); the s-part
    of the Laplacian comes from the flow equation, the t-part is spectral.
    """
    space = traj.space
    action = space.action
    tau = np.linalg.norm(action.tau_array)
    mmax = int(np.max(np.abs(space.modes)))
    T = T or max(16, 1 << int(math.ceil(math.log2(4 * mmax + 2))) + 1)
    sup = 0.0
    min_out, min_all, count = None, math.inf, 0
    modes = space.modes
    for c, eta in zip(traj.c, traj.eta):
        z = space.loop(c).samples(T)
        sup = max(sup, float(np.max(np.linalg.norm(z, axis=0))))
        dc, ddc = _second_s_derivative(space, c, eta, traj.r)
        zs = space.loop(dc).samples(T)
        zss = space.loop(ddc).samples(T)
        zt = space.loop(2j * np.pi * modes * c).samples(T)
        ztt = space.loop(-(2 * np.pi * modes) ** 2 * c).samples(T)
        lap = np.sum(np.abs(zs) ** 2 + np.abs(zt) ** 2 + np.real(np.conj(z) * (zss + ztt)), axis=0)
        mu = 0.5 * action.weights.T @ np.abs(z) ** 2
        mun = np.linalg.norm(mu, axis=0)
        slack = lap - 2 * traj.r ** 2 * mun * (mun - tau)
        min_all = min(min_all, float(slack.min()))
        out = np.linalg.norm(z, axis=0) > R
        if out.any():
            count += int(out.sum())
            v = float(slack[out].min())
            min_out = v if min_out is None else min(min_out, v)
    return LinftyReport(sup, 2 * R, sup <= 2 * R, min_out, count, min_all)


def critical_point_single_mode(space: ApproxSpace, m_star, phases=None, weights=None):
    """Critical point with each coordinate j carried by mode m_star[j] only.

    Requires a multiplier eta with (A eta)_j = 2 pi m_star[j] on the support;
    the weights w_j >= 0 must satisfy A^T w / 2 = tau (defaults: least squares).
    """
    A = np.asarray(space.action.weights, float)
    m_star = np.asarray(m_star, int)
    eta, *_ = np.linalg.lstsq(A, TWO_PI * m_star, rcond=None)
    if not np.allclose(A @ eta, TWO_PI * m_star, atol=1e-12):
        raise InvalidOptions("no multiplier realises these modes")
    if weights is None:
        from scipy.optimize import nnls
        weights, res = nnls(0.5 * A.T, space.tau)
        if res > 1e-12:
            raise InvalidOptions("tau is not reachable with nonnegative weights")
    weights = np.asarray(weights, float)
    phases = np.zeros(space.action.n) if phases is None else np.asarray(phases, float)
    c = np.zeros(space.N, complex)
    for j in range(space.action.n):
        if weights[j] > 0:
            c[space.slot(j, int(m_star[j]))] = np.sqrt(weights[j]) * np.exp(1j * phases[j])
    return c, eta
