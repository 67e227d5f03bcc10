"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured figure.
Run ``python tests/test_acceptance.py`` for the lines alone.
"""
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from toricvortex.approx import ApproxSpace, project_to_level, sample_level_set  # noqa: E402
from toricvortex.cylinder import (CylinderGrid, estimate_ratio, manufactured_problems,  # noqa: E402
                                  solve_neumann)
from toricvortex.flow import (FlowOptions, check_linfty, compute_R, critical_point_single_mode,  # noqa: E402
                              energy, integrate, offband_magnitude, mode_band, vector_field)
from toricvortex.loopspace import (FourierLoop, LoopPoint, TangentVec, action_A0, grad,  # noqa: E402
                                   l2_inner, metric_gr, norm_r)
from toricvortex.morsebott import (conley_report, hessian_F0, tame_constants,  # noqa: E402
                                   verify_palais_smale)
from toricvortex.toric import TorusAction, classify_value, is_proper  # noqa: E402

from flowcases import CP2, converged_flows  # noqa: E402
from oracles import brute_force_regular  # noqa: E402
from test_toric import SUITE  # noqa: E402

TWO_PI = 2 * np.pi
TRIANGLE = TorusAction([[1, 0], [0, 1], [1, 1]], tau=[2, 1])
TEST_SPACES = {
    "CP2 [0,1]": ApproxSpace.build(CP2, [(0, 1)] * 3),
    "CP2 [0,2]": ApproxSpace.build(CP2, [(0, 2)] * 3),
    "triangle [0,0]": ApproxSpace.build(TRIANGLE, [(0, 0)] * 3),
    "triangle mixed": ApproxSpace.build(TRIANGLE, [(-1, 1), (0, 1), (0, 0)]),
}


def _line(number: int, name: str, ok: bool, detail: str) -> str:
    return f"acceptance {number:2d} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"


def _random_loop(rng, bands, scale=1.0):
    return FourierLoop(bands, [scale * (rng.normal(size=hi - lo + 1) + 1j * rng.normal(size=hi - lo + 1))
                               for lo, hi in bands])


# --- the criteria -----------------------------------------------------------------------------


def gradient_duality():
    rng = np.random.default_rng(100)
    bands = ((0, 2),) * 3
    worst = 0.0
    for r in (0.0, 0.5, 1.0):
        for _ in range(50):
            p = LoopPoint(_random_loop(rng, bands, 0.6), rng.normal(size=1))
            v = TangentVec(_random_loop(rng, bands), rng.normal(size=1))
            g = grad(CP2, p, r)
            lhs = metric_gr(CP2, p, g, TangentVec(v.z_hat.embed(g.z_hat.bands), v.eta_hat), r)
            h = 1e-5
            plus = LoopPoint(p.z + v.z_hat.scale(h), p.eta + h * v.eta_hat)
            minus = LoopPoint(p.z + v.z_hat.scale(-h), p.eta - h * v.eta_hat)
            fd = (action_A0(CP2, plus) - action_A0(CP2, minus)) / (2 * h)
            worst = max(worst, abs(lhs - fd) / max(1.0, abs(fd)))
    return worst <= 1e-6, f"worst relative mismatch {worst:.2e} over 150 cases (tol 1e-6)"


def band_invariance():
    rng = np.random.default_rng(101)
    wide = ApproxSpace.build(CP2, [(-1, 3)] * 3)
    off = ~np.isin(wide.modes, [0, 1, 2])
    leaked = 0.0
    for _ in range(50):
        c = rng.normal(size=wide.N) + 1j * rng.normal(size=wide.N)
        c[off] = 0.0
        dc, _ = vector_field(wide, c, rng.normal(size=1) * 4, 0.0)
        leaked = max(leaked, float(np.max(np.abs(dc[off]))))
    worst = 0.0
    for traj in converged_flows():
        band = mode_band(CP2, traj.eta[0], traj.eta[-1], tol=1e-6)
        worst = max(worst, offband_magnitude(traj.space, traj.c[-1], band))
    ok = leaked == 0.0 and worst < 1e-8
    return ok, f"off-band field content {leaked:g}; worst terminal off-band mode {worst:.2e} on 10 flows (tol 1e-8)"


def energy_identity():
    worst = 0.0
    for traj in converged_flows():
        drop = traj.action[0] - traj.action[-1]
        worst = max(worst, abs(energy(traj) - drop) / abs(drop))
    return worst <= 1e-5, f"worst relative error {worst:.2e} on 10 converged flows (tol 1e-5)"


def regularity_suite():
    agree = transfer = 0
    for A, tau in SUITE:
        act = TorusAction(A, tau)
        verdict = classify_value(act, tau)
        floats = [float(Fraction(t)) for t in tau]
        agree += verdict.is_regular == brute_force_regular(A, floats)
        space = ApproxSpace.build(act, [(-1, 1)] * act.n)
        ok = (not verdict.is_regular or classify_value(space.action_V(), tau).is_regular)
        ok &= (not is_proper(act) or is_proper(space.action_V()))
        transfer += ok
    n = len(SUITE)
    return agree == n and transfer == n, f"{agree}/{n} agree with brute force; {transfer}/{n} pass to A_V"


def morse_bott():
    worst_zero, min_gap, failures, counts = 0.0, math.inf, 0, []
    for space in TEST_SPACES.values():
        points = sample_level_set(space, 50, seed=102)
        counts.append(len(points))
        for x in points:
            ev = np.sort(np.linalg.eigvalsh(hessian_F0(space, x)))
            big = np.abs(ev) > 1e-8
            failures += not (big.sum() == 2 * space.k and np.sum(ev < -1e-8) == space.k
                             and np.allclose(ev, -ev[::-1], atol=1e-10))
            worst_zero = max(worst_zero, float(np.max(np.abs(ev[~big]))))
            min_gap = min(min_gap, float(np.min(np.abs(ev[big]))))
    ok = failures == 0 and min(counts) >= 50
    return ok, (f"{sum(counts)} points on {len(counts)} spaces, {failures} failures; "
                f"smallest nonzero |ev| {min_gap:.3g}, largest null |ev| {worst_zero:.1e}")


def conley_invariance():
    same = 0
    for space in TEST_SPACES.values():
        flat = conley_report(space, r=0.0, samples=50, seed=103)
        curved = conley_report(space, r=1.0, samples=50, seed=103)
        same += flat.descriptor() == curved.descriptor() and flat.morse_bott_verified
    n = len(TEST_SPACES)
    return same == n, f"{same}/{n} spaces give identical descriptors for r = 0 and r = 1"


def _calibrated_c(rng, bands, samples=100):
    worst = 0.0
    for _ in range(samples):
        z = _random_loop(rng, bands)
        t = np.arange(z.grid_size) / z.grid_size
        xi = sum(rng.normal() * np.cos(TWO_PI * m * t + rng.uniform(0, TWO_PI)) for m in (1, 2, 3))
        lz = 1j * xi * z.samples()
        worst = max(worst, np.sqrt(np.mean(np.sum(np.abs(lz) ** 2, axis=0)))
                    / (np.sqrt(l2_inner(z, z)) * np.max(np.abs(xi))))
    return max(2 * worst, 1.0)


def metric_sandwich():
    rng = np.random.default_rng(104)
    bands = ((0, 2),) * 3
    c = _calibrated_c(rng, bands)
    lower = upper = 0
    for _ in range(200):
        p = LoopPoint(_random_loop(rng, bands, rng.uniform(0.1, 2.0)), rng.normal(size=1))
        u = TangentVec(_random_loop(rng, bands), rng.normal(size=1))
        n0, n1 = norm_r(CP2, p, u, 0.0), norm_r(CP2, p, u, 1.0)
        lower += n1 <= n0 * (1 + 1e-12)
        upper += n0 <= c * (1 + np.sqrt(l2_inner(p.z, p.z))) * n1
    T = 64
    freq = TWO_PI * np.fft.fftfreq(T, 1.0 / T)
    poincare = 0
    for _ in range(200):
        xi = np.real(np.fft.ifft(np.fft.fft(rng.normal(size=T)) * (freq != 0)))
        dxi = np.real(np.fft.ifft(np.fft.fft(xi) * 1j * freq))
        poincare += np.sqrt(np.mean(xi ** 2)) <= np.sqrt(np.mean(dxi ** 2)) + 1e-12
    ok = lower == upper == poincare == 200
    return ok, f"c = {c:.3f}; lower {lower}/200, upper {upper}/200, Poincare {poincare}/200"


def _runs_toward_half(count=6):
    space = ApproxSpace.build(CP2, [(0, 1)] * 3)
    rng = np.random.default_rng(1)
    c0, eta0 = critical_point_single_mode(space, [1, 1, 1])
    kick = np.where(space.modes == 0, 0.3 * (rng.normal(size=space.N) + 1j * rng.normal(size=space.N)), 0)
    c0 = project_to_level(space, c0 + kick)
    s_eval = np.linspace(0.0, 5.0, 101)
    opts = FlowOptions(rtol=1e-10, atol=1e-12)
    return [integrate(space, c0, eta0, 0.5 + 2.0 ** (-nu) / 2, opts, s_eval=s_eval)
            for nu in range(1, count + 1)]


_RUNS = {}


def runs_toward_half():
    if "runs" not in _RUNS:
        _RUNS["runs"] = _runs_toward_half()
    return _RUNS["runs"]


def linfty_bound():
    R = compute_R(CP2)
    reports = [check_linfty(t, R) for t in converged_flows()]
    reports += [check_linfty(t, R) for t in runs_toward_half()]
    sup = max(r.sup_norm for r in reports)
    outside = [r.min_slack_outside for r in reports if r.min_slack_outside is not None]
    slack = min(outside) if outside else None
    ok = all(r.holds for r in reports) and (slack is None or slack >= -1e-9)
    slack_text = "no samples outside radius R" if slack is None else f"min slack outside R {slack:.3g}"
    return ok, f"sup|z| {sup:.4f} <= 2R = {2 * R:.4f} on {len(reports)} flows; {slack_text}"


def palais_smale():
    margins = []
    for space in TEST_SPACES.values():
        consts = tame_constants(space, sample_count=20, seed=105)
        margins.append(verify_palais_smale(space, consts, r_grid=(0, 0.25, 0.5, 0.75, 1.0),
                                           sample_count=500, seed=105).min_margin)
    return min(margins) > 0, f"min margin {min(margins):.3g} over {len(margins)} spaces x 500 points x 5 r"


def neumann_solver():
    worst, ratios = 0.0, {}
    for N in (1, 2, 4, 8):
        grid = CylinderGrid(float(N))
        for name, (h, gp, gm, exact) in manufactured_problems(grid).items():
            f = solve_neumann(h, gp, gm)
            scale = 1.0 if N == 1 else max(1.0, float(np.max(np.abs(exact))))
            worst = max(worst, float(np.max(np.abs(f.values - exact))) / scale)
            ratios.setdefault(name, []).append(estimate_ratio(f, h, gp, gm))
    spread = max(max(r) / r[0] for r in ratios.values())
    shrink = max(r[0] / min(r) for r in ratios.values())
    ok = worst <= 1e-8 and spread <= 2 and shrink <= 2
    return ok, f"max error {worst:.2e} (tol 1e-8); ratio within factor {max(spread, shrink):.3f} of N=1"


def convergence_toward_half():
    runs = runs_toward_half()
    T = 16

    def sampled(traj):
        z = np.stack([traj.space.loop(c).samples(T) for c in traj.c])
        return z, traj.eta

    diffs = []
    for a, b in zip(runs, runs[1:]):
        (za, ea), (zb, eb) = sampled(a), sampled(b)
        diffs.append(max(float(np.max(np.abs(za - zb))), float(np.max(np.abs(ea - eb)))))
    ok = all(x > y for x, y in zip(diffs, diffs[1:])) and diffs[-1] <= 1e-4
    return ok, "successive sup differences " + ", ".join(f"{d:.2e}" for d in diffs) + " (final tol 1e-4)"


CRITERIA = [
    (1, "gradient duality", gradient_duality),
    (2, "band invariance", band_invariance),
    (3, "energy identity", energy_identity),
    (4, "regularity analyzer vs oracle", regularity_suite),
    (5, "Morse-Bott Hessian", morse_bott),
    (6, "Conley descriptor invariance", conley_invariance),
    (7, "metric sandwich and Poincare", metric_sandwich),
    (8, "L-infinity bound", linfty_bound),
    (9, "Palais-Smale margins", palais_smale),
    (10, "Neumann solver", neumann_solver),
    (11, "convergence as r tends to 1/2", convergence_toward_half),
]


@pytest.mark.parametrize("number,name,check", CRITERIA, ids=[f"{n:02d}" for n, _, _ in CRITERIA])
def test_acceptance(number, name, check, capsys):
    ok, detail = check()
    with capsys.disabled():
        print("\n" + _line(number, name, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for number, name, check in CRITERIA:
        ok, detail = check()
        failed += not ok
        print(_line(number, name, ok, detail), flush=True)
    raise SystemExit(1 if failed else 0)
