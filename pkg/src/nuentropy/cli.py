"""Command-line entry point.

    nuentropy [--config FILE] COMMAND [options]

Commands: nu, check-soliton, identities, spectrum, stability-report, fd-validate.

Configuration is a flat ``key = value`` file (``#`` starts a comment); every key
is also a flag (``fd_order`` -> ``--fd-order``) and flags win.  Keys:

    geometry        descriptor, e.g. sphere2:r=1, torus2, product:sphere2(r=1)xsphere2(r=1)
    backend         analytic | spectral | finite_difference
    grid            e.g. 48x96 (overrides any grid in the descriptor)
    fd_order        2 | 4
    seed            integer seed for random perturbations
    output_dir      directory for reports (created if missing)
    formats         comma list of json, csv
    tol             certification / identity tolerance (default: backend dependent)
    tol_el, tol_tau, tol_constraint, basis_degree   nu solver settings
    tau             tau used by check-soliton and identities on non-shrinker geometries
    k               number of eigenvalues (with multiplicity) for spectrum commands
    cluster_tol     eigenvalue clustering tolerance (default 1e-3 / (2 tau))
    seeds           number of random seeds for fd-validate
    resolution      latitude count of the fd-validate grids
    backgrounds     comma list of torus, sphere for fd-validate
    include_nu      true | false: include the nu-based rows in fd-validate

Exit status: 0 success, 1 error, 2 inconclusive or flagged result.
NUENTROPY_THREADS sets the BLAS/OpenMP thread count (read before numpy loads).
"""
from __future__ import annotations

import os

if "NUENTROPY_THREADS" in os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["NUENTROPY_THREADS"])

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

log = logging.getLogger("nuentropy")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_ERROR, EXIT_FLAGGED = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    geometry: str = "sphere2:r=1"
    backend: str = "analytic"
    grid: str | None = None
    fd_order: int = 4
    seed: int = 0
    output_dir: str = "."
    formats: str = "json,csv"
    tol: float | None = None
    tol_el: float | None = None
    tol_tau: float = 1e-10
    tol_constraint: float = 1e-10
    basis_degree: int | None = None
    tau: float = 1.0
    k: int = 8
    cluster_tol: float | None = None
    seeds: int = 5
    resolution: int = 16
    backgrounds: str = "torus,sphere"
    include_nu: bool = True

    def __post_init__(self):
        if self.backend not in ("analytic", "spectral", "finite_difference"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        for name in ("tol", "tol_el", "tol_tau", "tol_constraint", "tau", "cluster_tol"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.fd_order not in (2, 4):
            raise ConfigError("fd_order must be 2 or 4")
        if self.k < 1 or self.seeds < 1 or self.resolution < 8:
            raise ConfigError("k and seeds must be >= 1, resolution >= 8")
        bad = set(self.format_list) - {"json", "csv"}
        if bad:
            raise ConfigError(f"unknown report formats {sorted(bad)}")

    @property
    def format_list(self) -> list[str]:
        return [s.strip() for s in self.formats.split(",") if s.strip()]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _convert(name: str, raw: str):
    typ = {f.name: f.type for f in fields(RunConfig)}[name]
    raw = raw.strip()
    if raw.lower() in ("none", "") and "None" in str(typ):
        return None
    if "bool" in str(typ):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if "int" in str(typ):
            return int(raw)
        if "float" in str(typ):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    return raw


def read_config_file(path) -> dict:
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = _convert(f.name, v) if isinstance(v, str) else v
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# shared helpers

def _model(cfg: RunConfig):
    from .models import parse_descriptor

    return parse_descriptor(cfg.geometry, cfg.backend, cfg.grid, cfg.fd_order)


def _triple(cfg: RunConfig, model):
    from .identities import certify, from_model

    if model.is_shrinker:
        return from_model(model, cfg.tol)
    return certify(model.geom, np.zeros(model.grid.shape), cfg.tau, tol=cfg.tol)


def _solver_config(cfg: RunConfig):
    from .entropy import SolverConfig

    return SolverConfig(tol_el=cfg.tol_el, tol_tau=cfg.tol_tau, tol_constraint=cfg.tol_constraint,
                        basis_degree=cfg.basis_degree, seed=cfg.seed)


def _emit(cfg: RunConfig, command: str, payload: dict, csv_text: str | None = None) -> list[Path]:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = command.replace("-", "_")
    written = []
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "config": cfg.to_dict(), **payload}
    if "json" in cfg.format_list:
        p = out / f"{stem}.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
        written.append(p)
    if csv_text is not None and "csv" in cfg.format_list:
        p = out / f"{stem}.csv"
        p.write_text(csv_text)
        written.append(p)
    for p in written:
        log.info("wrote %s", p)
    return written


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


# ---------------------------------------------------------------------------
# commands

def cmd_nu(cfg: RunConfig) -> int:
    from .entropy import nu_entropy

    model = _model(cfg)
    res = nu_entropy(model.geom, _solver_config(cfg))
    payload = {"result": res.to_dict(), "closed_form_nu": model.nu}
    _emit(cfg, "nu", payload)
    ref = "" if model.nu is None else f"  (closed form {model.nu:.10f})"
    print(f"nu = {res.nu:.10f}  tau = {res.tau_star:.10f}  converged = {res.converged}{ref}")
    for flag in res.flags:
        print(f"flag: {flag}")
    return EXIT_OK if res.converged else EXIT_FLAGGED


def cmd_check_soliton(cfg: RunConfig) -> int:
    model = _model(cfg)
    t = _triple(cfg, model)
    payload = {"certified": t.certified, "residual_soliton": t.residual_soliton,
               "tolerance": t.tolerance, "tau": t.tau, "nu": t.nu, "geometry": model.name}
    _emit(cfg, "check-soliton", payload)
    state = "certified" if t.certified else "advisory: not a shrinker at this tau"
    print(f"{model.name}: |Rc + Hess f - g/(2 tau)| = {t.residual_soliton:.3e} "
          f"(tol {t.tolerance:.1e}), {state}")
    return EXIT_OK if t.certified else EXIT_FLAGGED


def cmd_identities(cfg: RunConfig) -> int:
    from .identities import identity_suite

    model = _model(cfg)
    rep = identity_suite(_triple(cfg, model), cfg.tol)
    _emit(cfg, "identities", {"report": rep.to_dict()})
    print(rep.table())
    return EXIT_OK if rep.passed and not rep.advisory else EXIT_FLAGGED


def _spectrum(cfg: RunConfig):
    from .stability import spectrum_ker_divf, theorem13_verdict

    model = _model(cfg)
    t = _triple(cfg, model)
    if not t.certified:
        raise ConfigError(f"{model.name} is not certified as a shrinker "
                          f"(residual {t.residual_soliton:.2e}); no stability analysis")
    rep = spectrum_ker_divf(t, cfg.k, cfg.cluster_tol)
    verdict = theorem13_verdict(rep, t, model)
    rep.verdict, rep.reasons = verdict.verdict, verdict.reasons
    return model, t, rep, verdict


def _print_spectrum(rep):
    print(f"{'mu':>14}{'lambda_geom':>14}{'mult':>6}")
    for mu, k in rep.multiplicities:
        print(f"{mu:14.8f}{-mu:14.8f}{k:6d}")


def cmd_spectrum(cfg: RunConfig) -> int:
    _, _, rep, verdict = _spectrum(cfg)
    _emit(cfg, "spectrum", {"spectrum": rep.to_dict(), "verdict": verdict.to_dict()}, rep.to_csv())
    _print_spectrum(rep)
    print(f"verdict: {verdict.verdict}")
    return EXIT_FLAGGED if verdict.verdict == "inconclusive" else EXIT_OK


def cmd_stability_report(cfg: RunConfig) -> int:
    from . import curvature as cv
    from .identities import lambda1_check
    from .stability import stability_operator

    model, t, rep, verdict = _spectrum(cfg)
    lam = lambda1_check(t)
    null = {"N(g)": cv.sup_norm(t.geom, stability_operator(t, t.geom.g)),
            "N(Rc)": cv.sup_norm(t.geom, stability_operator(t, t.geom.ricci))}
    payload = {"geometry": model.name, "tau": t.tau, "nu": t.nu,
               "soliton_residual": t.residual_soliton, "lambda1": lam.to_dict(),
               "null_directions": null, "spectrum": rep.to_dict(), "verdict": verdict.to_dict()}
    _emit(cfg, "stability-report", payload, rep.to_csv())
    print(f"{model.name}: tau = {t.tau:.6g}, nu = {t.nu:.10f}, "
          f"soliton residual {t.residual_soliton:.2e}")
    print(f"lambda_1(-Delta_f) = {lam.lambda1:.8f}, margin over 1/(2 tau) = {lam.margin:.6g}")
    print(f"|N(g)| = {null['N(g)']:.2e}, |N(Rc)| = {null['N(Rc)']:.2e}")
    _print_spectrum(rep)
    print(f"verdict: {verdict.verdict}")
    for r in verdict.reasons:
        print(f"  - {r}")
    if verdict.witness:
        print(f"witness {verdict.witness}: <N h, h>_f / |h|^2 = {verdict.witness_quotient:.8f}")
    return EXIT_FLAGGED if verdict.verdict == "inconclusive" else EXIT_OK


def cmd_fd_validate(cfg: RunConfig) -> int:
    from . import models
    from .stability import variation_oracle_rows
    from .variations import OracleMatrix, oracle_matrix

    def show(r):
        print(f"{r.formula:<24}{r.background:<18}{r.h_kind:<15}{r.seed:>3}  "
              f"rel.err {r.rel_error:9.2e}  est {r.estimate:9.2e}  {'pass' if r.passed else 'FAIL'}",
              flush=True)

    backgrounds = [b.strip() for b in cfg.backgrounds.split(",") if b.strip()]
    mat = oracle_matrix(backgrounds, range(cfg.seeds), cfg.resolution, cfg.include_nu, show)
    rows = list(mat.rows)
    if cfg.include_nu and "sphere" in backgrounds:
        m = models.round_sphere2(1.0, int(1.5 * cfg.resolution), 3 * cfg.resolution)
        rows += variation_oracle_rows(m, seed=cfg.seed + 1, progress=show)
    full = OracleMatrix(rows, mat.notes)
    _emit(cfg, "fd-validate", {"matrix": full.to_dict()}, full.to_csv())
    for note in full.notes:
        print(f"note: {note}")
    print(f"{sum(r.passed for r in rows)}/{len(rows)} rows pass")
    return EXIT_OK if full.passed else EXIT_FLAGGED


COMMANDS = {"nu": cmd_nu, "check-soliton": cmd_check_soliton, "identities": cmd_identities,
            "spectrum": cmd_spectrum, "stability-report": cmd_stability_report,
            "fd-validate": cmd_fd_validate}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nuentropy", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", dest="sub_config", help=argparse.SUPPRESS)
        for f in fields(RunConfig):
            s.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                           help=f"overrides '{f.name}'")
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    args.config = args.config or args.sub_config
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    from .models import ModelError
    from .stability import StabilityError

    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ModelError, StabilityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
