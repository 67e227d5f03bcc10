"""Command-line front end.

Usage::

    toricvortex COMMAND --config run.json [--out DIR] [--seed N] [--threads N]

The config is a JSON object::

    {
      "action": {"weights": [[1], [1], [1]], "tau": ["1"]},
      "bands": [[0, 1], [0, 1], [0, 1]],
      "r": 0.0,
      "seed": 0,
      "threads": 1,
      "<command>": {...command options...}
    }

``tau`` entries may be integers, ``"p/q"`` strings, ``[p, q]`` pairs or
floats; the first three keep regularity checks exact.

Command options:

- ``regularity``: ``exact``, ``cap``
- ``flow`` / ``energy-audit``: integrator settings (``s_max``, ``grad_tol``,
  ``dwell``, ``blowup_radius``, ``atol``, ``rtol``, ``max_step``) and an
  ``initial`` block, either ``{"c": [[re, im], ...], "eta": [...]}`` or
  ``{"critical_modes": [...], "weights", "phases", "perturbation",
  "perturb_modes", "eta_shift"}``; the perturbation is drawn from ``seed``
- ``conley``: ``samples``
- ``constants``: ``epsilon_grid``, ``sample_count``, ``r_grid``,
  ``palais_smale_samples``
- ``neumann-test``: ``half_lengths``, ``s_points``, ``t_points``
- ``band``: ``eta_minus``, ``eta_plus``, ``tol`` Every run writes
``report.json`` to the output directory; ``flow`` and ``energy-audit`` also
write ``trajectory.csv`` and ``neumann-test`` writes ``fields/*.csv``.

Exit status: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import serialize
from .approx import ApproxSpace, project_to_level
from .cylinder import CylinderGrid, estimate_ratio, manufactured_problems, neumann_residuals, solve_neumann
from .errors import NumericalError, ValidationError
from .flow import (FlowOptions, critical_point_single_mode, energy, integrate, mode_band)
from .morsebott import conley_report, tame_constants, verify_palais_smale
from .toric import TorusAction, classify_value

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
COMMANDS = ("regularity", "flow", "conley", "constants", "neumann-test", "band", "energy-audit")
FLOW_OPTION_KEYS = ("s_max", "grad_tol", "dwell", "blowup_radius", "atol", "rtol", "max_step")


class RunConfig:
    """Validated view of a config file."""

    def __init__(self, raw: dict, *, seed: int | None = None, threads: int | None = None):
        if not isinstance(raw, dict):
            raise ValidationError("config must be a JSON object")
        self.raw = raw
        try:
            act = raw["action"]
            self.action = TorusAction(act["weights"], act.get("tau"))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"config needs action.weights and action.tau ({exc})") from exc
        self.bands = raw.get("bands")
        self.r = float(raw.get("r", 0.0))
        if not 0.0 <= self.r <= 1.0:
            raise ValidationError("r must lie in [0, 1]")
        self.seed = int(seed if seed is not None else raw.get("seed", 0))
        if self.seed < 0:
            raise ValidationError("seed must be nonnegative")
        self.threads = int(threads if threads is not None else raw.get("threads", 1))
        if self.threads < 1:
            raise ValidationError("threads must be positive")

    def options(self, command: str) -> dict:
        opts = self.raw.get(command, {})
        if not isinstance(opts, dict):
            raise ValidationError(f"options for {command} must be an object")
        return opts

    def space(self) -> ApproxSpace:
        if self.bands is None:
            raise ValidationError("this command needs 'bands'")
        if self.action.tau is None:
            raise ValidationError("this command needs action.tau")
        return ApproxSpace.build(self.action, self.bands)


def _flow_options(opts: dict) -> FlowOptions:
    return FlowOptions(**{k: float(opts[k]) for k in FLOW_OPTION_KEYS if k in opts})


def _initial_point(space: ApproxSpace, opts: dict, seed: int):
    init = opts.get("initial")
    if init is None:
        raise ValidationError("flow options need an 'initial' block")
    if "c" in init:
        c = np.array([complex(re, im) for re, im in init["c"]])
        eta = np.asarray(init["eta"], float)
        return space.check(c), eta
    c, eta = critical_point_single_mode(space, init["critical_modes"], phases=init.get("phases"),
                                        weights=init.get("weights"))
    amp = float(init.get("perturbation", 0.0))
    if amp:
        rng = np.random.default_rng(seed)
        kick = amp * (rng.normal(size=space.N) + 1j * rng.normal(size=space.N))
        modes = init.get("perturb_modes")
        if modes is not None:
            kick[~np.isin(space.modes, modes)] = 0.0
        c = project_to_level(space, c + kick)
    return c, eta + np.asarray(init.get("eta_shift", 0.0), float)


def _run_flow(cfg: RunConfig, command: str, out: Path) -> tuple[dict, str]:
    space = cfg.space()
    opts = cfg.options(command)
    c0, eta0 = _initial_point(space, opts, cfg.seed)
    traj = integrate(space, c0, eta0, cfg.r, _flow_options(opts))
    serialize.write_rows(out / "trajectory.csv", traj.rows())
    E = energy(traj)
    drop = float(traj.action[0] - traj.action[-1])
    report = dict(status=traj.status, r=cfg.r, samples=len(traj), s_end=float(traj.s[-1]),
                  action_start=float(traj.action[0]), action_end=float(traj.action[-1]),
                  energy=E, grad_norm_end=float(traj.grad_norm[-1]),
                  eta_start=traj.eta[0], eta_end=traj.eta[-1], eta_unbounded=traj.eta_unbounded,
                  max_action_increase=traj.max_action_increase)
    if command == "energy-audit":
        rel = abs(E - drop) / max(abs(drop), 1e-300)
        report.update(action_drop=drop, relative_error=rel,
                      identity_expected=cfg.r == 0.0)
        return report, f"energy-audit: E={E:.6g} drop={drop:.6g} rel.err={rel:.2e}"
    return report, f"flow: {traj.status.value} at s={traj.s[-1]:.4g}, energy {E:.6g}"


def _run_regularity(cfg: RunConfig, out: Path) -> tuple[dict, str]:
    opts = cfg.options("regularity")
    if cfg.action.tau is None:
        raise ValidationError("regularity needs action.tau")
    kwargs = {k: opts[k] for k in ("exact", "cap") if k in opts}
    verdict = classify_value(cfg.action, cfg.action.tau, **kwargs)
    report = dict(verdict=verdict.to_dict())
    if cfg.bands is not None:
        space = cfg.space()
        report["approximation"] = classify_value(space.action_V(), cfg.action.tau, **kwargs).to_dict()
    return report, f"regularity: {verdict.status.value}"


def _run_conley(cfg: RunConfig, out: Path) -> tuple[dict, str]:
    opts = cfg.options("conley")
    rep = conley_report(cfg.space(), r=cfg.r, samples=int(opts.get("samples", 50)), seed=cfg.seed)
    return rep.to_dict(), (f"conley: critical_dim {rep.critical_dim}, normal rank {rep.normal_rank}, "
                           f"Morse-Bott {rep.morse_bott_verified}")


def _run_constants(cfg: RunConfig, out: Path) -> tuple[dict, str]:
    opts = cfg.options("constants")
    space = cfg.space()
    consts = tame_constants(space, epsilon_grid=opts.get("epsilon_grid"),
                            sample_count=int(opts.get("sample_count", 20)), seed=cfg.seed)
    ps = verify_palais_smale(space, consts, r_grid=tuple(opts.get("r_grid", (0, 0.25, 0.5, 0.75, 1.0))),
                             sample_count=int(opts.get("palais_smale_samples", 500)), seed=cfg.seed)
    return (dict(constants=consts.to_dict(), palais_smale=ps.to_dict()),
            f"constants: eps={consts.epsilon:.4g} delta={consts.delta:.4g} c={consts.c:.4g}, "
            f"Palais-Smale {'holds' if ps.holds else 'FAILS'}")


def _run_neumann(cfg: RunConfig, out: Path) -> tuple[dict, str]:
    opts = cfg.options("neumann-test")
    lengths = opts.get("half_lengths", [1, 2, 4, 8])
    fields_dir = out / "fields"
    fields_dir.mkdir(parents=True, exist_ok=True)
    cases = []
    for N in lengths:
        grid = CylinderGrid(float(N), int(opts.get("s_points", 64)), int(opts.get("t_points", 32)))
        for name, (h, gp, gm, exact) in manufactured_problems(grid).items():
            f = solve_neumann(h, gp, gm, workers=cfg.threads)
            scale = max(1.0, float(np.max(np.abs(exact))))
            interior, boundary = neumann_residuals(f, h, gp, gm)
            cases.append(dict(case=name, half_length=float(N),
                              max_error=float(np.max(np.abs(f.values - exact))),
                              relative_error=float(np.max(np.abs(f.values - exact))) / scale,
                              relative_interior_residual=interior / scale,
                              relative_boundary_residual=boundary / scale,
                              ratio=estimate_ratio(f, h, gp, gm)))
            serialize.write_grid(fields_dir / f"{name}_N{N}.csv", f.values,
                                 dict(case=name, N=float(N), s_points=grid.s_points + 1,
                                      t_points=grid.t_points, s=grid.s))
    worst = max(c["relative_error"] for c in cases)
    return dict(cases=cases, worst_relative_error=worst), f"neumann-test: {len(cases)} solves, worst rel.err {worst:.2e}"


def _run_band(cfg: RunConfig, out: Path) -> tuple[dict, str]:
    opts = cfg.options("band")
    try:
        band = mode_band(cfg.action, opts["eta_minus"], opts["eta_plus"], tol=float(opts.get("tol", 1e-12)))
    except KeyError as exc:
        raise ValidationError(f"band options need {exc}") from exc
    report = dict(lower=band.lower, upper=band.upper, forced_zero=band.forced_zero)
    return report, f"band: lower {list(band.lower)} upper {list(band.upper)}"


def run(command: str, config_path: Path, out: Path, *, seed: int | None = None,
        threads: int | None = None) -> tuple[int, str]:
    """Execute ``command``; returns (exit status, one-line summary). Always writes report.json."""
    out.mkdir(parents=True, exist_ok=True)
    try:
        if command not in COMMANDS:
            raise ValidationError(f"unknown command {command!r}")
        try:
            raw = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config: {exc}") from exc
        cfg = RunConfig(raw, seed=seed, threads=threads)
        if command in ("flow", "energy-audit"):
            body, summary = _run_flow(cfg, command, out)
        else:
            handler = {"regularity": _run_regularity, "conley": _run_conley, "constants": _run_constants,
                       "neumann-test": _run_neumann, "band": _run_band}[command]
            body, summary = handler(cfg, out)
        report = dict(command=command, ok=True, seed=cfg.seed, threads=cfg.threads, result=body)
        status = EXIT_OK
    except (ValidationError, KeyError, TypeError) as exc:
        # missing keys and wrongly typed values are config errors
        report, status = _error_report(command, exc), EXIT_INVALID
        summary = f"{command}: invalid input: {exc}"
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        report, status = _error_report(command, exc), EXIT_NUMERICAL
        summary = f"{command}: numerical failure: {exc}"
    serialize.write_json(out / "report.json", report)
    return status, summary


def _error_report(command: str, exc: Exception) -> dict:
    return dict(command=command, ok=False, error=dict(type=type(exc).__name__, message=str(exc)))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="toricvortex", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", type=Path, default=Path("out"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    args = parser.parse_args(argv)
    status, summary = run(args.command, args.config, args.out, seed=args.seed, threads=args.threads)
    if status != EXIT_OK:
        report = json.loads((args.out / "report.json").read_text())
        print(json.dumps(report["error"]), file=sys.stderr)
    print(summary)
    return status


if __name__ == "__main__":
    raise SystemExit(main())
