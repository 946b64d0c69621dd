"""Batch experiment runner.

Usage: volterra-sde <subcommand> --config experiment.toml --out results/

Subcommands: kernel-check, sample, isometry, simulate, equivalence,
condition-h, invariant, ergodic-stationary, ergodic-arbitrary, stationarity.

Every run writes its artifact files plus a manifest.json naming each file
with its sha256.  All randomness flows from the mandatory config seed, so
re-running a config reproduces every artifact bitwise (the manifest's
wall_time field is the single exception, and is excluded from hashes).

Exit codes: 0 pass, 1 test failure, 2 configuration error, 3 numerical
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys as _sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .errors import ConfigError, VolterraError
from .kernels import (fbm_kernel, liouville_kernel, eval_phi, covariance_R,
                      CovarianceQuery, fbm_increment_covariance,
                      verify_regularity)
from .operators import SpectralSystem, LiftedState
from .sampling import PathGrid, sample_paths, paths_to_csv, test_increment_laws
from .wiener import StepFunction, verify_isometry
from .solver import solve_neutral_sde, verify_equivalence
from .ergodicity import (Functional, check_condition_H, heat_eigenvalues,
                         invariant_covariance, ergodic_test_stationary,
                         ergodic_test_arbitrary, stationarity_test)

SUBCOMMANDS = ("kernel-check", "sample", "isometry", "simulate",
               "equivalence", "condition-h", "invariant",
               "ergodic-stationary", "ergodic-arbitrary", "stationarity")


# ---------------------------------------------------------------------------
# config access

def _get(cfg: dict, path: str, required: bool = True, default=None):
    node = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(f"missing config field: {path}")
            return default
        node = node[part]
    return node


def _require_number(cfg, path, positive=False):
    v = _get(cfg, path)
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"config field {path} must be a number, got {v!r}")
    if positive and v <= 0:
        raise ConfigError(f"config field {path} must be positive, got {v}")
    return float(v)


def build_kernel(cfg: dict):
    kind = _get(cfg, "kernel.kind")
    if kind in ("fbm", "fbm_mvn", "FbmMandelbrotVanNess"):
        hurst = _get(cfg, "kernel.hurst", required=False)
        if hurst is None:
            hurst = _require_number(cfg, "kernel.alpha") + 0.5
        return fbm_kernel(float(hurst))
    if kind in ("liouville", "Liouville"):
        return liouville_kernel(_require_number(cfg, "kernel.alpha",
                                                positive=True))
    raise ConfigError(f"kernel.kind must be 'fbm' or 'liouville', got {kind!r}")


def build_system(cfg: dict) -> SpectralSystem:
    ev = _get(cfg, "system.eigenvalues")
    if isinstance(ev, str):
        if not ev.startswith("heat:"):
            raise ConfigError(
                f"system.eigenvalues generator must be 'heat:N', got {ev!r}")
        ev = heat_eigenvalues(int(ev.split(":", 1)[1]))
    ev = np.atleast_1d(np.asarray(ev, float))
    delay_r = _require_number(cfg, "system.delay_r", positive=True)

    def mat(name):
        return _get(cfg, f"system.{name}", required=False, default=0.0)

    try:
        return SpectralSystem(ev, delay_r, mat("D1"), mat("F1"),
                              mat("D2"), mat("F2"),
                              _get(cfg, "system.noise_B"))
    except ValueError as exc:
        raise ConfigError(f"invalid system block: {exc}") from exc


def build_functional(cfg: dict) -> Functional:
    kind = _get(cfg, "functional.kind")
    weights = _get(cfg, "functional.weights")
    try:
        return Functional(
            kind, weights,
            clip=_get(cfg, "functional.clip", required=False),
            lipschitz_constant=_get(cfg, "functional.lipschitz_constant",
                                    required=False))
    except ValueError as exc:
        raise ConfigError(f"invalid functional block: {exc}") from exc


def solver_params(cfg: dict) -> dict:
    seed = _get(cfg, "solver.seed")
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("config field solver.seed must be an integer "
                          "(no entropy default)")
    return {
        "T": _require_number(cfg, "solver.T", positive=True),
        "dt": _require_number(cfg, "solver.dt", positive=True),
        "n_paths": int(_get(cfg, "solver.n_paths", required=False, default=1)),
        "seed": seed,
        "burn_in": _require_number(cfg, "solver.burn_in")
        if _get(cfg, "solver.burn_in", required=False) is not None else 0.0,
    }


def initial_state(cfg: dict, sys_: SpectralSystem, dt: float) -> LiftedState:
    head = np.atleast_1d(np.asarray(
        _get(cfg, "initial.head", required=False, default=0.0), float))
    if head.size == 1:
        head = np.full(sys_.dim, head[0])
    seg_val = np.atleast_1d(np.asarray(
        _get(cfg, "initial.segment", required=False, default=0.0), float))
    if seg_val.size == 1:
        seg_val = np.full(sys_.dim, seg_val[0])
    m = round(sys_.delay_r / dt)
    return LiftedState(head=head, segment=np.tile(seg_val, (m + 1, 1)))


# ---------------------------------------------------------------------------
# subcommand bodies: each returns (passed, {filename: content})

def _run_kernel_check(cfg, tol_scale):
    ker = build_kernel(cfg)
    seed = _get(cfg, "solver.seed")
    reg = verify_regularity(ker, 10000, seed)
    lines = [reg.to_text()]
    ok = reg.passed
    if ker.kind == "fbm_mvn":
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(20):
            s1, s2 = rng.uniform(-3, 3, 2)
            t1 = s1 + rng.uniform(0.01, 4)
            t2 = s2 + rng.uniform(0.01, 4)
            got = covariance_R(ker, CovarianceQuery(s1, t1, s2, t2))
            ref = fbm_increment_covariance(ker.hurst, s1, t1, s2, t2)
            worst = max(worst, abs(got - ref))
        lines.append(f"covariance_oracle_max_abs_err={worst:.3e}")
        ok = ok and worst <= 1e-6 * tol_scale
        h = ker.hurst
        u, v = 0.3, 1.7
        ph = eval_phi(ker, u, v)
        ref = h * (2 * h - 1) * abs(u - v) ** (2 * h - 2)
        lines.append(f"phi_closed_form_rel_err={abs(ph / ref - 1):.3e}")
        ok = ok and abs(ph / ref - 1) <= 1e-6 * tol_scale
    lines.append(f"pass={'true' if ok else 'false'}")
    return ok, {"kernel_report.txt": "\n".join(lines) + "\n"}


def _run_sample(cfg, tol_scale):
    ker = build_kernel(cfg)
    sp = solver_params(cfg)
    grid = PathGrid(
        _require_number(cfg, "sample.t0")
        if _get(cfg, "sample.t0", required=False) is not None else 0.0,
        sp["dt"], int(_get(cfg, "sample.n_steps")))
    dim = int(_get(cfg, "sample.dim", required=False, default=1))
    paths = sample_paths(ker, grid, dim, sp["n_paths"], sp["seed"])
    files = {"paths.csv": paths_to_csv(paths)}
    ok = True
    lines = [f"n_paths={sp['n_paths']}", f"dim={dim}",
             f"n_steps={grid.n_steps}"]
    if sp["n_paths"] >= 100:
        rep = test_increment_laws(paths, n_lags=4)
        lines.append(rep.to_text())
        if ker.stationary_increments:
            ok = rep.stationary_pass
    lines.append(f"pass={'true' if ok else 'false'}")
    files["sample_report.txt"] = "\n".join(lines) + "\n"
    return ok, files


def _run_isometry(cfg, tol_scale):
    ker = build_kernel(cfg)
    sp = solver_params(cfg)
    f = StepFunction(np.asarray(_get(cfg, "isometry.breakpoints"), float),
                     np.asarray(_get(cfg, "isometry.values"), float))
    rep = verify_isometry(ker, f, sp["n_paths"], sp["seed"])
    ok = abs(rep.z) <= 3.0 * tol_scale
    return ok, {"isometry_report.txt": rep.to_text() + "\n"}


def _run_simulate(cfg, tol_scale):
    ker = build_kernel(cfg)
    sys_ = build_system(cfg)
    sp = solver_params(cfg)
    phi = initial_state(cfg, sys_, sp["dt"])
    traj = solve_neutral_sde(sys_, ker, phi, sp["T"], sp["dt"], sp["seed"])
    return True, {"trajectory.csv": traj.to_csv()}


def _run_equivalence(cfg, tol_scale):
    ker = build_kernel(cfg)
    sys_ = build_system(cfg)
    sp = solver_params(cfg)
    phi = initial_state(cfg, sys_, sp["dt"])
    rep = verify_equivalence(sys_, ker, phi, sp["T"], sp["dt"], sp["seed"],
                             tol_const=10.0 * tol_scale)
    return rep.passed, {"equivalence_report.txt": rep.to_text() + "\n"}


def _run_condition_h(cfg, tol_scale):
    ker = build_kernel(cfg)
    sys_ = build_system(cfg)
    T0 = _require_number(cfg, "condition_h.T0", positive=True)
    val = check_condition_H(sys_, ker.alpha, T0)
    lines = [f"value={val:.12g}", f"T0={T0:.12g}", f"alpha={ker.alpha:.12g}"]
    rows = ["N,value"]
    truncs = _get(cfg, "condition_h.truncations", required=False, default=[])
    vals = []
    for N in truncs:
        sN = SpectralSystem(heat_eigenvalues(int(N)), sys_.delay_r,
                            None, None, None, None, np.eye(int(N)))
        vals.append(check_condition_H(sN, ker.alpha, T0))
        rows.append(f"{N},{vals[-1]:.12g}")
    ok = True
    if len(vals) >= 3:
        gaps = np.abs(np.diff(vals))
        cauchy = bool(np.all(gaps[1:] < gaps[:-1]))
        lines.append(f"truncation_cauchy={'true' if cauchy else 'false'}")
        ok = cauchy
    lines.append(f"pass={'true' if ok else 'false'}")
    return ok, {"condition_h_report.txt": "\n".join(lines) + "\n",
                "condition_h.csv": "\n".join(rows) + "\n"}


def _run_invariant(cfg, tol_scale):
    ker = build_kernel(cfg)
    sys_ = build_system(cfg)
    Q = invariant_covariance(sys_, ker)
    rows = ["k,l,Q"]
    for k in range(len(Q)):
        for l in range(len(Q)):
            rows.append(f"{k},{l},{Q[k, l]:.12g}")
    txt = f"Q00={Q[0, 0]:.12g}\npass=true\n"
    return True, {"invariant.csv": "\n".join(rows) + "\n",
                  "invariant_report.txt": txt}


def _run_ergodic_stationary(cfg, tol_scale):
    ker = build_kernel(cfg)
    sys_ = build_system(cfg)
    sp = solver_params(cfg)
    rho_fn = build_functional(cfg)
    rep = ergodic_test_stationary(sys_, ker, rho_fn, sp["T"], sp["dt"],
                                  sp["n_paths"], sp["seed"])
    z = rep.horizons[-1][3]
    ok = abs(z) <= 3.0 * tol_scale
    return ok, {"ergodic_report.txt": rep.to_text() + "\n",
                "running_averages.csv": rep.running_csv()}


def _run_ergodic_arbitrary(cfg, tol_scale):
    ker = build_kernel(cfg)
    sys_ = build_system(cfg)
    sp = solver_params(cfg)
    rho_fn = build_functional(cfg)
    x0 = initial_state(cfg, sys_, sp["dt"])
    rep = ergodic_test_arbitrary(sys_, ker, x0, rho_fn, sp["T"], sp["dt"],
                                 sp["n_paths"], sp["seed"])
    z = rep.horizons[-1][3]
    ok = rep.i1_passed and abs(z) <= 3.0 * tol_scale
    return ok, {"ergodic_report.txt": rep.to_text() + "\n",
                "running_averages.csv": rep.running_csv()}


def _run_stationarity(cfg, tol_scale):
    ker = build_kernel(cfg)
    sys_ = build_system(cfg)
    sp = solver_params(cfg)
    n_lags = int(_get(cfg, "stationarity.n_lags", required=False, default=4))
    head = _get(cfg, "stationarity.initial_head", required=False)
    rep = stationarity_test(
        sys_, ker, sp["T"], sp["dt"], sp["n_paths"], n_lags, sp["seed"],
        initial_head=None if head is None else np.atleast_1d(
            np.asarray(head, float)))
    ok = bool(np.max(np.abs(rep.z_scores)) <= 3.0 * tol_scale)
    return ok, {"stationarity_report.txt": rep.to_text() + "\n"}


_RUNNERS = {
    "kernel-check": _run_kernel_check,
    "sample": _run_sample,
    "isometry": _run_isometry,
    "simulate": _run_simulate,
    "equivalence": _run_equivalence,
    "condition-h": _run_condition_h,
    "invariant": _run_invariant,
    "ergodic-stationary": _run_ergodic_stationary,
    "ergodic-arbitrary": _run_ergodic_arbitrary,
    "stationarity": _run_stationarity,
}


# ---------------------------------------------------------------------------
# driver

def run_subcommand(name: str, config: dict, out_dir: Path,
                   tolerance_scale: float = 1.0, threads: int = 0) -> int:
    t0 = time.perf_counter()
    try:
        passed, files = _RUNNERS[name](config, tolerance_scale)
    except ConfigError:
        raise
    except VolterraError as exc:
        _sys.stderr.write(f"numerical error: {exc}\n")
        return 3
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for fname, content in files.items():
        path = out_dir / fname
        data = content.encode()
        path.write_bytes(data)
        hashes[fname] = hashlib.sha256(data).hexdigest()
    manifest = {
        "subcommand": name,
        "config": config,
        "seed": _get(config, "solver.seed", required=False),
        "versions": {"volterra_sde": __version__,
                     "numpy": np.__version__},
        "threads": threads,
        "tolerance_scale": tolerance_scale,
        "files": hashes,
        "pass": bool(passed),
        "wall_time": time.perf_counter() - t0,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0 if passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="volterra-sde",
        description="Volterra-noise delay equation experiment runner")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="TOML experiment file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--threads", type=int, default=0,
                        help="worker threads (0 = auto); recorded in the "
                             "manifest, results are thread-count independent")
    parser.add_argument("--tolerance-scale", type=float, default=1.0,
                        help="multiply statistical pass thresholds")
    args = parser.parse_args(argv)
    try:
        with open(args.config, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        _sys.stderr.write(f"config file not found: {args.config}\n")
        return 2
    except tomllib.TOMLDecodeError as exc:
        _sys.stderr.write(f"config parse error: {exc}\n")
        return 2
    try:
        return run_subcommand(args.subcommand, cfg, Path(args.out),
                              args.tolerance_scale, args.threads)
    except ConfigError as exc:
        _sys.stderr.write(f"config error: {exc}\n")
        return 2
    except VolterraError as exc:
        _sys.stderr.write(f"numerical error: {exc}\n")
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
