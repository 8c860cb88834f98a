"""Configuration ingestion, subcommand dispatch, and artifact emission.

One JSON config document drives every subcommand; unknown keys are
rejected so a typo in a tolerance name cannot silently fall back to a
default.  All floating-point output is emitted at 17 significant digits
with deterministic ordering, so identical configs give byte-identical
artifacts.

Exit codes: 0 success, 2 config/validation error, 3 numerical failure
(the failing operation's error name goes to stderr).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import bifurc, eulerian, heightsolver, laminar, spectral
from .errors import ConfigError, StratiwaveError, VerificationError
from .profiles import PGrid, Physics, ProfileFn

_PROFILE_KEYS = {"poly": {"type", "coeffs"}, "table": {"type", "p", "v"}}
_PHYSICS_KEYS = {"g", "c", "p0", "sigma", "rho", "beta"}
_NUMERICS_KEYS = {
    "N_p", "N_q", "fixed_point_tol", "fixed_point_max_iter", "newton_tol",
    "n_max", "rayleigh_N", "resonance_rtol", "verify_residual_tol",
    "verify_eta_tol", "verify_flux_tol", "verify_bernoulli_tol",
    "verify_yih_tol",
}
_CONTINUATION_KEYS = {
    "ds_min", "ds_max", "max_steps", "newton_tol", "newton_max_iter",
    "delta_stop", "kappa_stop", "Q_stop", "tol_loop", "s_min",
}
_TOP_KEYS = {"physics", "numerics", "continuation", "lambdas", "sigma",
             "output_dir"}

_NUMERICS_DEFAULTS = {
    "N_p": 64, "N_q": 64, "fixed_point_tol": 1e-12,
    "fixed_point_max_iter": 200, "newton_tol": 1e-10, "n_max": 64,
    "rayleigh_N": 512, "resonance_rtol": 1e-6,
    "verify_residual_tol": 1e-8, "verify_eta_tol": 1e-10,
    "verify_flux_tol": 1e-3, "verify_bernoulli_tol": 1e-3,
    "verify_yih_tol": 5e-2,
}


@dataclass
class RunConfig:
    physics: Physics
    numerics: dict
    continuation: heightsolver.ContinuationControls
    lambdas: list = field(default_factory=list)
    output_dir: str = "out"

    @property
    def grid(self) -> PGrid:
        return PGrid(self.physics.p0, self.numerics["N_p"])


def _reject_unknown(block: dict, allowed: set, where: str):
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in {where}")


def _parse_profile(block, where, lo, hi) -> ProfileFn:
    if not isinstance(block, dict) or "type" not in block:
        raise ConfigError(f"{where} must be an object with a 'type'")
    kind = block["type"]
    if kind not in _PROFILE_KEYS:
        raise ConfigError(f"{where}.type must be 'poly' or 'table'")
    _reject_unknown(block, _PROFILE_KEYS[kind], where)
    if kind == "poly":
        return ProfileFn.poly(block["coeffs"], lo, hi)
    return ProfileFn.table(block["p"], block["v"], lo, hi)


def _power_of_two(n):
    return n >= 16 and (n & (n - 1)) == 0


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _reject_unknown(raw, _TOP_KEYS, "config")
    if "physics" not in raw:
        raise ConfigError("config requires a 'physics' block")
    pb = raw["physics"]
    _reject_unknown(pb, _PHYSICS_KEYS, "physics")
    for key in ("g", "c", "p0", "sigma", "rho", "beta"):
        if key not in pb:
            raise ConfigError(f"physics.{key} missing")
    p0 = float(pb["p0"])
    if p0 >= 0:
        raise ConfigError("physics.p0 must be negative")
    rho = _parse_profile(pb["rho"], "physics.rho", p0, 0.0)
    beta = _parse_profile(pb["beta"], "physics.beta", 0.0, abs(p0))
    try:
        physics = Physics(g=float(pb["g"]), c=float(pb["c"]), p0=p0,
                          sigma=float(pb["sigma"]), rho=rho, beta=beta)
    except StratiwaveError as exc:
        raise ConfigError(f"invalid physics: {exc}")

    numerics = dict(_NUMERICS_DEFAULTS)
    nb = raw.get("numerics", {})
    _reject_unknown(nb, _NUMERICS_KEYS, "numerics")
    numerics.update(nb)
    for key in ("N_p", "N_q"):
        if not _power_of_two(int(numerics[key])):
            raise ConfigError(f"numerics.{key} must be a power of two >= 16")
        numerics[key] = int(numerics[key])
    for key, val in numerics.items():
        if key.endswith("tol") and float(val) <= 0:
            raise ConfigError(f"numerics.{key} must be positive")

    cb = raw.get("continuation", {})
    _reject_unknown(cb, _CONTINUATION_KEYS, "continuation")
    controls = heightsolver.ContinuationControls(**cb)
    if raw.get("sigma") is not None:
        physics = Physics(g=physics.g, c=physics.c, p0=physics.p0,
                          sigma=float(raw["sigma"]), rho=rho, beta=beta)
    return RunConfig(physics=physics, numerics=numerics,
                     continuation=controls,
                     lambdas=[float(v) for v in raw.get("lambdas", [])],
                     output_dir=str(raw.get("output_dir", "out")))


def _with_sigma(cfg: RunConfig, sigma) -> Physics:
    ph = cfg.physics
    if sigma is None:
        return ph
    return Physics(g=ph.g, c=ph.c, p0=ph.p0, sigma=float(sigma),
                   rho=ph.rho, beta=ph.beta)


def _resolve_physics(cfg: RunConfig, args) -> Physics:
    """--sigma overrides the config; --n2 computes the double-point sigma."""
    physics = _with_sigma(cfg, args.sigma)
    if args.n2 is not None:
        sigma_d, _ = spectral.find_double_sigma(physics, cfg.grid, args.n2)
        physics = _with_sigma(cfg, sigma_d)
    return physics


def _write(outdir, name, text):
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, name)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def _json_dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# --- subcommands ----------------------------------------------------------

def cmd_laminar(cfg: RunConfig, args):
    lambdas = [args.lam] if args.lam is not None else cfg.lambdas
    if not lambdas:
        raise ConfigError("laminar needs --lambda or a 'lambdas' list")
    grid = cfg.grid
    paths = []
    for lam in lambdas:
        flow = laminar.solve_laminar(
            cfg.physics, lam, grid, tol=cfg.numerics["fixed_point_tol"],
            max_iter=cfg.numerics["fixed_point_max_iter"])
        paths.append(_write(args.out, f"laminar_{lam:.6g}.csv",
                            laminar.flow_to_csv(flow)))
    print("\n".join(paths))
    return 0


def cmd_dispersion(cfg: RunConfig, args):
    physics = _resolve_physics(cfg, args)
    grid = cfg.grid
    sigma = physics.sigma
    rows = ["n,lambda,D,scale"]
    roots = ["n,lambda_star"]
    for n in range(1, 7):
        lam_n = spectral.find_lambda_star(physics, grid, sigma, n=n)
        roots.append(f"{n},{lam_n:.16e}")
        for lam in np.linspace(0.5 * lam_n, 1.5 * lam_n, 11):
            flow = laminar.solve_laminar(physics, lam, grid)
            mode = spectral.shoot_mode(flow, physics, n)
            D = spectral.dispersion_D(flow, physics, sigma, mode)
            sc = spectral.dispersion_scale(flow, physics, sigma, mode)
            rows.append(f"{n},{lam:.16e},{D:.16e},{sc:.16e}")
    p1 = _write(args.out, "dispersion.csv", "\n".join(rows) + "\n")
    p2 = _write(args.out, "dispersion_roots.csv", "\n".join(roots) + "\n")
    print(p1)
    print(p2)
    return 0


def _classification_report(physics, grid, numerics):
    bp = spectral.classify(physics, grid, physics.sigma,
                           n_max=numerics["n_max"],
                           resonance_rtol=numerics["resonance_rtol"])
    label = bp.classification
    if label == "Double":
        label = f"Double({bp.n2})"
    return bp, {
        "lambda_star": bp.lambda_star,
        "Q_star": bp.Q_star,
        "class": label,
        "resonant_n": [] if bp.classification == "Simple"
        else [bp.n2],
        "residuals": {str(k): v for k, v in sorted(bp.residuals.items())},
        "resonance_rtol": bp.resonance_rtol,
    }


def cmd_classify(cfg: RunConfig, args):
    physics = _resolve_physics(cfg, args)
    _, report = _classification_report(physics, cfg.grid, cfg.numerics)
    path = _write(args.out, "classification.json", _json_dump(report))
    print(path)
    return 0


def _coefficients(cfg, physics):
    grid = cfg.grid
    bp, report = _classification_report(physics, grid, cfg.numerics)
    flow = laminar.solve_laminar(physics, bp.lambda_star, grid)
    mode1 = bp.modes[0]
    if bp.classification == "Double":
        mode2 = bp.modes[1]
        coeffs = bifurc.coefficient_set(flow, physics, physics.sigma,
                                        mode1, mode2)
        case = "quadratic" if bp.n2 == 2 * mode1.n else "cubic"
        germs = bifurc.predict_branches(coeffs, case)
    else:
        # simple (or zero-mode) point: single-mode pitchfork data
        psi = bifurc.compute_Psi(flow, physics, physics.sigma, mode1)
        theta = bifurc.compute_Theta(flow, physics, physics.sigma,
                                     mode1, mode1)
        coeffs = bifurc.CoefficientSet(
            n1=mode1.n, n2=0, psi11=psi, psi22=0.0, phi112=0.0, phi121=0.0,
            phi211=0.0, theta1111=theta, theta2222=0.0, theta1122=0.0,
            theta2211=0.0, normalization="shooting")
        side = "plus" if theta > 0 else "minus"
        mag = np.sqrt(abs(psi / theta)) if theta != 0 else 1.0
        germs = [bifurc.BranchGerm(kind="pure", n=mode1.n, side=side,
                                   theta=(s * mag, 0.0), scaling_exponent=0.5)
                 for s in (+1.0, -1.0)]
    return bp, flow, coeffs, germs, report


def cmd_coeffs(cfg: RunConfig, args):
    physics = _resolve_physics(cfg, args)
    bp, _, coeffs, germs, report = _coefficients(cfg, physics)
    out = bifurc.coefficients_to_dict(coeffs, germs)
    out["classification"] = report
    path = _write(args.out, "coefficients.json", _json_dump(out))
    print(path)
    return 0


def cmd_predict(cfg: RunConfig, args):
    physics = _resolve_physics(cfg, args)
    _, _, coeffs, germs, _ = _coefficients(cfg, physics)
    out = bifurc.coefficients_to_dict(coeffs, germs)["germs"]
    path = _write(args.out, "germs.json", _json_dump(out))
    print(path)
    return 0


def canonical_germs(germs):
    """One germ per branch: identify theta with -theta (translated wave)."""
    kept = []
    for g in germs:
        th = g.theta
        lead = th[0] if th[0] != 0.0 else th[1]
        if lead < 0:
            continue
        kept.append(g)
    return kept


def cmd_branch(cfg: RunConfig, args):
    physics = _resolve_physics(cfg, args)
    verbose = bool(os.environ.get("STRATIWAVE_VERBOSE"))
    bp, flow, coeffs, germs, _ = _coefficients(cfg, physics)
    controls = cfg.continuation
    if args.steps is not None:
        controls = heightsolver.ContinuationControls(
            **{**controls.__dict__, "max_steps": int(args.steps)})
    N_q = cfg.numerics["N_q"]
    paths = []
    branches = []
    for k, germ in enumerate(canonical_germs(germs)):
        if bp.classification == "Double":
            modes = bp.modes
        else:
            modes = (bp.modes[0], bp.modes[0])
        theta = germ.theta
        # mixed branches detach from the trivial family at the resonance
        # splitting scale of the discretization; seed them above it
        eps = 1e-3 if germ.kind == "pure" else 4e-3
        fld = heightsolver.germ_field(flow, modes, theta, eps, N_q,
                                      provenance=f"germ{k}")
        if abs(fld.amplitude()) < 1e-14:
            continue
        if verbose:
            print(f"continuing germ {k}: kind={germ.kind} side={germ.side}",
                  file=sys.stderr)
        branch = heightsolver.continue_branch(physics, fld, physics.sigma,
                                              controls)
        branches.append(branch)
        paths.append(_write(args.out, f"branch_{k}.csv",
                            heightsolver.branch_csv(branch)))
        last = branch.points[-1].field
        if last is not None:
            paths.append(_write(args.out, f"branch_{k}_last.field",
                                heightsolver.dump_field(last)))
        first = branch.points[0].field
        if first is not None:
            paths.append(_write(args.out, f"branch_{k}_first.field",
                                heightsolver.dump_field(first)))
    paths.append(_write(args.out, "branches.svg",
                        heightsolver.branch_svg(branches)))
    print("\n".join(paths))
    return 0


def cmd_eulerian(cfg: RunConfig, args):
    if not args.field:
        raise ConfigError("eulerian needs --field <dump>")
    with open(args.field, "r", encoding="utf-8") as fh:
        hf = heightsolver.load_field(fh.read())
    wave = eulerian.reconstruct(cfg.physics, hf)
    p1 = _write(args.out, "wave.csv", eulerian.wave_csv(wave))
    p2 = _write(args.out, "surface.csv", eulerian.surface_csv(wave))
    fluxes = eulerian.flux_all_columns(wave)
    bern = eulerian.surface_bernoulli_residual(wave, cfg.physics)
    yih = eulerian.yih_residual(wave, cfg.physics)
    report = {
        "flux_max_error": float(np.max(np.abs(fluxes - cfg.physics.p0))),
        "surface_bernoulli_residual": bern,
        "yih_residual": yih,
        "eta_mean": float(np.mean(wave.eta[:-1])),
    }
    p3 = _write(args.out, "eulerian_checks.json", _json_dump(report))
    print("\n".join([p1, p2, p3]))
    return 0


def run_verify(cfg: RunConfig, hf) -> list:
    """All residual oracles on a stored field; list of (name, value, tol, ok)."""
    num = cfg.numerics
    checks = []
    res = heightsolver.residual(cfg.physics, hf)
    checks.append(("height-residual", float(np.max(np.abs(res))),
                   num["verify_residual_tol"]))
    wave = eulerian.reconstruct(cfg.physics, hf)
    checks.append(("eta-mean", abs(float(np.mean(wave.eta[:-1]))),
                   num["verify_eta_tol"]))
    fluxes = eulerian.flux_all_columns(wave)
    checks.append(("flux", float(np.max(np.abs(fluxes - cfg.physics.p0))),
                   num["verify_flux_tol"]))
    checks.append(("surface-bernoulli",
                   eulerian.surface_bernoulli_residual(wave, cfg.physics),
                   num["verify_bernoulli_tol"]))
    checks.append(("yih", eulerian.yih_residual(wave, cfg.physics),
                   num["verify_yih_tol"]))
    checks.append(("u-below-c", float(np.max(wave.u - cfg.physics.c)),
                   0.0))
    return [(name, value, tol, value < tol or (name == "u-below-c" and value < 0))
            for name, value, tol in checks]


def cmd_verify(cfg: RunConfig, args):
    if not args.field:
        raise ConfigError("verify needs --field <dump>")
    with open(args.field, "r", encoding="utf-8") as fh:
        hf = heightsolver.load_field(fh.read())
    results = run_verify(cfg, hf)
    for name, value, tol, ok in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} value={value:.16e} "
              f"tol={tol:.16e}")
    failing = [r for r in results if not r[3]]
    if failing:
        raise VerificationError(
            f"verification failed: {failing[0][0]}", check=failing[0][0],
            value=failing[0][1])
    return 0


_SUBCOMMANDS = {
    "laminar": cmd_laminar,
    "dispersion": cmd_dispersion,
    "classify": cmd_classify,
    "coeffs": cmd_coeffs,
    "predict": cmd_predict,
    "branch": cmd_branch,
    "eulerian": cmd_eulerian,
    "verify": cmd_verify,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stratiwave",
        description="Steady stratified capillary-gravity wave toolkit")
    parser.add_argument("subcommand", choices=sorted(_SUBCOMMANDS))
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None)
    parser.add_argument("--lambda", dest="lam", type=float, default=None)
    parser.add_argument("--sigma", type=float, default=None)
    parser.add_argument("--n2", type=int, default=None)
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--field", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"{exc.name}: {exc}", file=sys.stderr)
        return 2
    if args.out is None:
        args.out = cfg.output_dir
    if args.n2 is not None and args.n2 < 2:
        print("config-error: --n2 must be >= 2", file=sys.stderr)
        return 2
    try:
        return _SUBCOMMANDS[args.subcommand](cfg, args)
    except ConfigError as exc:
        print(f"{exc.name}: {exc}", file=sys.stderr)
        return 2
    except StratiwaveError as exc:
        print(f"{exc.name}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
