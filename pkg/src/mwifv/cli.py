"""Command-line front end.

Verbs::

    mwifv run-primal  --config CASE [--out DIR] [--max-iter N] [--tol T]
    mwifv run-adjoint --config CASE [--state FILE] [--mode E1|E2|E3|all]
    mwifv verify      SUITE [--out DIR]
    mwifv mesh-info   --config CASE
    mwifv fd-sweep    --config CASE [--epsilon-list 1e-4,1e-5] [--cells N] [--mode ...]

``CASE`` is an INI path or ``preset:NAME`` for one of the shipped cases.
The output directory is ``--out`` if given, else ``$MWIFV_OUT``, else the
``[output] directory`` entry of the case file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import MWI_MODES, AdjointSolver
from .case import ConfigError
from .config import build_case, build_objective, initial_phi, load_config, parse_config, reference_numbers
from .linalg import LinearSolveError
from .mesh import gauss_defects
from .output import (
    RunManifest, StateFileError, _atomic_write, read_state, write_residual_csv, write_sensitivity_csv, write_state,
    write_vtk,
)
from .primal import PrimalState, SolverDivergence, solve_primal
from .sensitivity import (
    FDSampleError, SensitivityReport, VolumeControl, convergence_compare, first_crossing, fd_oracle,
    volumetric_sensitivity,
)
from .verify import FD_MAGNITUDES, SUITE_FUNCTIONS, fd_scale

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DIVERGED = 4
EXIT_NOT_CONVERGED = 5
EXIT_STATE = 6
EXIT_VERIFY_FAILED = 7

OUT_ENV = "MWIFV_OUT"
CROSSING_THRESHOLD = 1e-8
PRESET_PREFIX = "preset:"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def presets() -> list[str]:
    root = resources.files("mwifv") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def read_case_config(source: str):
    if source.startswith(PRESET_PREFIX):
        name = source[len(PRESET_PREFIX):]
        if name not in presets():
            raise ConfigError(f"unknown preset {name!r}; available: {', '.join(presets())}")
        text = (resources.files("mwifv") / "presets" / f"{name}.ini").read_text()
        return parse_config(text, source), name
    return load_config(source), Path(source).stem


def output_dir(args, cfg) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or cfg["output"]["directory"]
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _max_speed(v: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(v, axis=1))) if len(v) else 0.0


def _crossings(history: list) -> dict:
    keys = history[0].keys() if history else ()
    return {k: first_crossing([h[k] for h in history], CROSSING_THRESHOLD) for k in keys}


# -- verbs -------------------------------------------------------------------------------


def cmd_run_primal(args) -> int:
    cfg, name = read_case_config(args.config)
    case = build_case(cfg, name)
    out = output_dir(args, cfg)
    manifest = RunManifest(cfg.checksum(), __version__)
    manifest.update(verb="run-primal", case=name, mesh_checksum=case.mesh.checksum(), **reference_numbers(cfg))
    state = PrimalState.initial(case, phi0=initial_phi(cfg, case))
    every = cfg["output"]["write_every"]

    def snapshot(st, _res):
        if every and st.iteration % every == 0:
            write_state(out / "primal_state.txt", case.mesh, _primal_fields(st), "primal")

    status, result, t0 = EXIT_OK, None, time.perf_counter()
    try:
        result = solve_primal(case, state, tol=args.tol, max_iter=args.max_iter, callback=snapshot)
    except (SolverDivergence, LinearSolveError) as exc:
        print(f"error: primal solve diverged: {exc}", file=sys.stderr)
        manifest.update(error=str(exc))
        manifest.finish(out / "primal_manifest.json", EXIT_DIVERGED)
        return EXIT_DIVERGED
    st = result.state
    write_state(out / "primal_state.txt", case.mesh, _primal_fields(st), "primal")
    columns = tuple(result.history[0]) if result.history else ()
    write_residual_csv(out / "primal_residuals.csv", result.history, columns)
    write_vtk(out / "primal.vtk", case.mesh, {"p": st.p, "phi": st.phi}, {"velocity": st.v}, title=f"{name} primal")
    if not result.converged:
        status = EXIT_NOT_CONVERGED
    manifest.update(
        iterations=result.iterations, converged=result.converged, max_speed=_max_speed(st.v),
        first_crossing=_crossings(result.history), runtime_s=time.perf_counter() - t0,
    )
    manifest.finish(out / "primal_manifest.json", status, result.final())
    print(f"{name}: {result.iterations} iterations, converged={result.converged}, max|v|={_max_speed(st.v):.3e}")
    return status


def _primal_fields(st) -> dict:
    return {"v": st.v, "p": st.p, "phi": st.phi, "vf": st.vf, "flux": st.flux, "grad_p": st.grad_p}


def load_primal(path, case) -> PrimalState:
    f = read_state(path, case.mesh, "primal")
    missing = {"v", "p", "phi", "vf", "flux", "grad_p"} - set(f)
    if missing:
        raise StateFileError(f"{path}: missing fields {sorted(missing)}")
    return PrimalState(v=f["v"], p=f["p"], phi=f["phi"], vf=f["vf"], flux=f["flux"], grad_p=f["grad_p"])


def _modes(arg: str) -> tuple:
    return MWI_MODES if arg == "all" else (arg,)


def cmd_run_adjoint(args) -> int:
    cfg, name = read_case_config(args.config)
    case = build_case(cfg, name)
    objective = build_objective(cfg, case)
    out = output_dir(args, cfg)
    state_path = Path(args.state) if args.state else out / "primal_state.txt"
    primal = load_primal(state_path, case)
    ad = cfg["adjoint"]
    tol = ad["tol"] if args.tol is None else args.tol
    max_iter = ad["max_iter"] if args.max_iter is None else args.max_iter
    modes = _modes(args.mode or ad["mode"])
    manifest = RunManifest(cfg.checksum(), __version__)
    manifest.update(verb="run-adjoint", case=name, mesh_checksum=case.mesh.checksum(), primal_state=str(state_path),
                    primal_checksum=primal.checksum(), tolerance=tol, **reference_numbers(cfg))
    status, histories, finals, reports = EXIT_OK, {}, {}, []
    direction = ad["direction"]
    for mode in modes:
        try:
            result = AdjointSolver(case, primal, objective, mode).solve(tol=tol, max_iter=max_iter, criterion="v")
        except (SolverDivergence, LinearSolveError) as exc:
            print(f"error: adjoint {mode} diverged: {exc}", file=sys.stderr)
            manifest.update(error=f"{mode}: {exc}")
            manifest.finish(out / "adjoint_manifest.json", EXIT_DIVERGED)
            return EXIT_DIVERGED
        a = result.state
        write_state(out / f"adjoint_{mode}_state.txt", case.mesh,
                    {"v": a.v, "p": a.p, "phi": a.phi, "vf": a.vf, "flux": a.flux}, f"adjoint-{mode}")
        write_residual_csv(out / f"adjoint_{mode}_residuals.csv", result.history, tuple(result.final()))
        write_vtk(out / f"adjoint_{mode}.vtk", case.mesh, {"p_hat": a.p, "phi_hat": a.phi}, {"v_hat": a.v},
                  title=f"{name} adjoint {mode}")
        histories[mode] = result.history
        finals[mode] = result.final()
        if objective.volume is not None:
            region = objective.mask(case.mesh)
            reports.append(SensitivityReport(f"{mode} region", volumetric_sensitivity(case.mesh, a.v, region, direction)))
        if not result.converged:
            status = EXIT_NOT_CONVERGED
        print(f"{mode}: {result.iterations} iterations, converged={result.converged}")
    if reports:
        write_sensitivity_csv(out / "adjoint_sensitivity.csv", reports)
    cmp = convergence_compare(histories, CROSSING_THRESHOLD)
    manifest.update(
        modes=list(modes), first_crossing=cmp["iterations"],
        relative_percent={f"{a} vs {b}": v for (a, b), v in cmp["relative"].items()},
    )
    manifest.finish(out / "adjoint_manifest.json", status, finals)
    return status


def cmd_verify(args) -> int:
    if args.suite not in SUITE_FUNCTIONS:
        raise CliError(f"unknown suite {args.suite!r}; choose from {', '.join(SUITE_FUNCTIONS)}", EXIT_USAGE)
    checks = SUITE_FUNCTIONS[args.suite]()
    for c in checks:
        print(c.line())
    passed = all(c.passed for c in checks)
    report = {"suite": args.suite, "passed": passed, "checks": [asdict(c) for c in checks]}
    if args.out or os.environ.get(OUT_ENV):
        out = Path(args.out or os.environ[OUT_ENV])
        _atomic_write(out / f"verify_{args.suite}.json", json.dumps(report, indent=2, default=str) + "\n")
    return EXIT_OK if passed else EXIT_VERIFY_FAILED


def cmd_mesh_info(args) -> int:
    cfg, name = read_case_config(args.config)
    mesh = build_case(cfg, name).mesh
    d_sum, d_lever = gauss_defects(mesh)
    vol = mesh.cell_volume
    info = {
        "case": name,
        "cells": mesh.n_cells,
        "faces": mesh.n_faces,
        "patches": {k: f"{p.kind} ({len(p.faces)} faces)" for k, p in mesh.patches.items()},
        "volume_range": f"{vol.min():.6g} .. {vol.max():.6g}",
        "gauss_defect": f"{max(np.max(d_sum), np.max(d_lever)):.3e}",
        "checksum": mesh.checksum(),
    }
    for k, v in info.items():
        print(f"{k}: {v}")
    return EXIT_OK


def _epsilons(text: str | None, case) -> list[float]:
    if text:
        try:
            vals = [float(t) for t in text.replace(",", " ").split()]
        except ValueError as exc:
            raise CliError(f"bad --epsilon-list {text!r}", EXIT_USAGE) from exc
        if len(vals) < 1 or any(v <= 0.0 for v in vals):
            raise CliError("--epsilon-list needs positive values", EXIT_USAGE)
        return vals
    scale = fd_scale(case) or 1.0
    return [m * scale for m in FD_MAGNITUDES]


def cmd_fd_sweep(args) -> int:
    cfg, name = read_case_config(args.config)
    case = build_case(cfg, name)
    objective = build_objective(cfg, case)
    if objective.volume is None:
        raise ConfigError("fd-sweep needs a volume objective")
    out = output_dir(args, cfg)
    eps = _epsilons(args.epsilon_list, case)
    ad = cfg["adjoint"]
    direction = ad["direction"]
    primal = solve_primal(case, PrimalState.initial(case, phi0=initial_phi(cfg, case)), tol=args.tol, max_iter=args.max_iter)
    if not primal.converged:
        print(f"error: unperturbed primal did not converge: {primal.final()}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    modes = _modes(args.mode or ad["mode"])
    adjoints = {m: AdjointSolver(case, primal.state, objective, m).solve(tol=ad["tol"], max_iter=ad["max_iter"], criterion="v")
                for m in modes}
    lead = adjoints[modes[-1]].state.v
    mask = objective.mask(case.mesh)
    weight = np.abs(lead @ np.asarray(direction, float)) * case.mesh.cell_volume
    cand = np.flatnonzero(mask)
    cells = cand[np.argsort(-weight[cand], kind="stable")][: args.cells]
    reports = []
    for k in cells:
        ctl = VolumeControl.cell(int(k), case.mesh.n_cells, direction)
        try:
            fd = fd_oracle(case, ctl, objective, eps, base=primal.state, tol=args.fd_tol, max_iter=case.config.max_iter)
        except FDSampleError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NOT_CONVERGED
        for m in modes:
            adj = volumetric_sensitivity(case.mesh, adjoints[m].state.v, ctl.region, direction)
            r = SensitivityReport(f"{m} cell {int(k)}", adj, fd)
            reports.append(r)
            print(f"{r.control}: adjoint={r.adjoint:.6e} fd={r.fd_reference:.6e} deviation={r.deviation:.3%} spread={r.spread:.2e}")
    write_sensitivity_csv(out / "fd_sweep.csv", reports)
    return EXIT_OK


# -- entry point -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mwifv", description="Collocated finite-volume primal/adjoint solver")
    ap.add_argument("--version", action="version", version=f"mwifv {__version__}")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="INI case file or preset:NAME")
        p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the case file)")
        p.add_argument("--max-iter", type=int, help="outer-iteration cap")
        p.add_argument("--tol", type=float, help="residual tolerance")

    p = sub.add_parser("run-primal", help="solve the primal problem")
    common(p)
    p.set_defaults(func=cmd_run_primal)
    p = sub.add_parser("run-adjoint", help="solve the adjoint on a stored primal state")
    common(p)
    p.add_argument("--state", help="primal state file (default: OUT/primal_state.txt)")
    p.add_argument("--mode", choices=[*MWI_MODES, "all"])
    p.set_defaults(func=cmd_run_adjoint)
    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("suite", help=", ".join(SUITE_FUNCTIONS))
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("mesh-info", help="summarise the mesh of a case")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_mesh_info)
    p = sub.add_parser("fd-sweep", help="adjoint versus central finite differences")
    common(p)
    p.add_argument("--mode", choices=[*MWI_MODES, "all"])
    p.add_argument("--epsilon-list", help="comma separated absolute perturbations")
    p.add_argument("--cells", type=int, default=10, help="number of control cells")
    p.add_argument("--fd-tol", type=float, default=1e-13, help="tolerance of perturbed solves")
    p.set_defaults(func=cmd_fd_sweep)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StateFileError as exc:
        print(f"state error: {exc}", file=sys.stderr)
        return EXIT_STATE


if __name__ == "__main__":
    sys.exit(main())
