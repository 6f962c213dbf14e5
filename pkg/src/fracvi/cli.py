"""Batch front-end: solve, sweep, verify-ibp and report commands.

Config files are INI-style key=value sections (grammar documented in the
README). Exit codes: 0 success, 2 config error, 3 solver failure, 4 invariant
violation, 5 EOC threshold failure. Heavy imports happen after --threads is
applied so BLAS thread caps take effect in fresh processes.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    ConfigError,
    EmptyRegion,
    FracviError,
    MaxIterations,
    NoConvergence,
    OverlapError,
    ParameterError,
    SingularSystem,
    TruncationError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INVARIANT = 4
EXIT_EOC = 5

_CONFIG_ERRORS = (ConfigError, EmptyRegion, OverlapError, ParameterError, TruncationError)
_SOLVER_ERRORS = (SingularSystem, MaxIterations, NoConvergence)


@dataclass
class RunConfig:
    """Parsed run configuration plus its canonical hash."""

    omega: tuple
    sigma2: tuple
    radius: float
    s: float
    h: float
    f_spec: str = "constant:0.0"
    z_spec: str = "zero"
    phi_spec: str = f"constant:{1e30}"
    solver: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    quadrature: dict = field(default_factory=dict)
    out_dir: str = "out"
    hash: str = ""


def _parse_interval(text: str) -> tuple:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"expected 'lo, hi', got {text!r}")
    return float(parts[0]), float(parts[1])


def parse_config(path) -> RunConfig:
    """Read and validate a config file; raises ConfigError on malformed input."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    try:
        dom = cp["domain"]
        omega = _parse_interval(dom.get("omega"))
        sigma2 = tuple(
            _parse_interval(part)
            for part in dom.get("sigma2", "").split(";")
            if part.strip()
        )
        radius = float(dom.get("radius"))
        s = float(dom.get("s"))
        h = float(cp["mesh"].get("h"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    data = cp["data"] if cp.has_section("data") else {}
    solver = dict(cp["solver"]) if cp.has_section("solver") else {}
    sweep = dict(cp["sweep"]) if cp.has_section("sweep") else {}
    quad = dict(cp["quadrature"]) if cp.has_section("quadrature") else {}
    out_dir = cp["output"].get("directory", "out") if cp.has_section("output") else "out"

    lines = []
    for section in sorted(cp.sections()):
        for key, value in sorted(cp[section].items()):
            lines.append(f"{section}.{key}={' '.join(value.split())}")
    digest = hashlib.sha256("\n".join(lines).encode()).hexdigest()[:12]

    cfg = RunConfig(
        omega=omega,
        sigma2=sigma2,
        radius=radius,
        s=s,
        h=h,
        f_spec=data.get("f", "constant:0.0"),
        z_spec=data.get("z", "zero"),
        phi_spec=data.get("phi", f"constant:{1e30}"),
        solver={k: float(v) for k, v in solver.items()},
        sweep=sweep,
        quadrature={k: float(v) for k, v in quad.items()},
        out_dir=out_dir,
        hash=digest,
    )
    for key, value in cfg.solver.items():
        if key.endswith(("tol", "_c")) and value <= 0:
            raise ConfigError(f"solver.{key} must be positive, got {value}")
    return cfg


def _parse_field(spec_text: str, kind: str):
    """Resolve a data field spec: constant:V | poly:c0,c1,... | file:PATH | zero."""
    import numpy as np

    text = spec_text.strip()
    if text == "zero":
        return None
    head, _, rest = text.partition(":")
    if head == "constant":
        return float(rest)
    if head == "poly":
        coeffs = [float(c) for c in rest.split(",")]
        return np.polynomial.Polynomial(coeffs)
    if head == "file":
        table = np.loadtxt(rest, delimiter=",", ndmin=2)
        return ("table", table[:, 0], table[:, 1])
    raise ConfigError(f"cannot parse {kind} spec {spec_text!r}")


def _build_system(cfg: RunConfig):
    import numpy as np

    from .assembly import ProblemData, build_system
    from .geometry import DomainSpec, build_mesh
    from .kernel import DEFAULT_GRADING, GradingConfig

    spec = DomainSpec(omega=cfg.omega, sigma2=cfg.sigma2, radius=cfg.radius, s=cfg.s)
    mesh = build_mesh(spec, cfg.h)

    f = _parse_field(cfg.f_spec, "f")
    if f is None:
        f = 0.0
    elif isinstance(f, tuple):
        xs, vals = f[1], f[2]
        f = lambda x, xs=xs, vals=vals: np.interp(x, xs, vals)

    z_field = _parse_field(cfg.z_spec, "z")
    z = None
    if z_field is not None:
        if isinstance(z_field, tuple):
            z = np.zeros(mesh.n_nodes)
            z[mesh.dirichlet_nodes] = np.interp(
                mesh.nodes[mesh.dirichlet_nodes], z_field[1], z_field[2]
            )
            z[0] = z[-1] = 0.0
        elif float(z_field) != 0.0:
            raise ConfigError("constant nonzero z is not compactly supported; use file:")

    phi_field = _parse_field(cfg.phi_spec, "phi")
    if phi_field is None:
        raise ConfigError("phi spec must be constant: or file:")
    if isinstance(phi_field, tuple):
        phi = np.interp(mesh.nodes[mesh.obstacle_nodes], phi_field[1], phi_field[2])
    elif callable(phi_field):
        phi = phi_field(mesh.nodes[mesh.obstacle_nodes])
    else:
        phi = float(phi_field)

    grading = DEFAULT_GRADING
    if cfg.quadrature:
        grading = GradingConfig(
            ratio=cfg.quadrature.get("ratio", DEFAULT_GRADING.ratio),
            levels=int(cfg.quadrature.get("levels", DEFAULT_GRADING.levels)),
            order_singular=int(
                cfg.quadrature.get("order_singular", DEFAULT_GRADING.order_singular)
            ),
            order_disjoint=int(
                cfg.quadrature.get("order_disjoint", DEFAULT_GRADING.order_disjoint)
            ),
        )
    return build_system(mesh, ProblemData(f=f, phi=phi, z=z), grading=grading)


def _sweep_grid(cfg: RunConfig):
    import numpy as np

    sweep = cfg.sweep
    kind = sweep.get("kind", "geometric")
    if kind != "geometric":
        raise ConfigError(f"unsupported sweep kind {kind!r}")
    base = float(sweep.get("base", 2.0))
    start = int(sweep.get("start", 2))
    count = int(sweep.get("count", 8))
    if base <= 1.0 or count < 1:
        raise ConfigError("sweep requires base > 1 and count >= 1")
    return base ** -(start + np.arange(count, dtype=float))


def _check_vi_invariants(system, vi, cfg, seed):
    """Feasibility, sign, complementarity and minimality checks for one solve."""
    import numpy as np

    from .diagnostics import evaluate_J, kkt_report

    feas_tol = cfg.solver.get("feasibility_tol", 1e-10)
    sign_tol = cfg.solver.get("sign_tol", 1e-10)
    comp_tol = cfg.solver.get("comp_tol", 1e-9)
    report = kkt_report(system, vi)
    lam_o = vi.lam[system.obstacle]
    diff = vi.w[system.obstacle] - system.phi
    comp_scale = (1.0 + float(np.linalg.norm(lam_o))) * (1.0 + float(np.linalg.norm(diff)))
    j_w = evaluate_J(system.E, system.load, vi.w)
    rng = np.random.default_rng(seed)
    minimality_ok = True
    for _ in range(20):
        v = np.zeros(system.mesh.n_nodes)
        free = system.mesh.free_nodes
        v[free] = vi.w[free] + rng.standard_normal(free.size)
        v[system.obstacle] = np.minimum(v[system.obstacle], system.phi)
        if evaluate_J(system.E, system.load, v) < j_w - 1e-9 * (abs(j_w) + 1.0):
            minimality_ok = False
    checks = {
        "feasibility_ok": report.feasibility_violation <= feas_tol,
        "sign_ok": report.multiplier_min >= -sign_tol,
        "complementarity_ok": report.complementarity <= comp_tol * comp_scale,
        "residual_ok": vi.residual <= 1e-8,
        "minimality_ok": minimality_ok,
    }
    checks["passed"] = all(checks.values())
    return report, checks, j_w


def cmd_solve(cfg: RunConfig, out: Path, seed: int) -> int:
    import numpy as np

    from . import io
    from .solvers import solve_vi_pdas

    t0 = time.perf_counter()
    system = _build_system(cfg)
    t_asm = time.perf_counter() - t0
    t0 = time.perf_counter()
    vi = solve_vi_pdas(
        system.E,
        system.load,
        system.phi_full,
        c=cfg.solver.get("pdas_c", 1.0),
        dirichlet=system.dirichlet,
        max_iter=int(cfg.solver.get("pdas_max_iter", 200)),
    )
    t_solve = time.perf_counter() - t0
    report, checks, j_w = _check_vi_invariants(system, vi, cfg, seed)

    io.mesh_to_csv(out / "mesh.csv", system.mesh, cfg.hash)
    io.solution_to_csv(out / "solution.csv", system.mesh, vi.w, vi.lam, cfg.hash)
    io.write_json(out / "kkt_report.json", {"config_hash": cfg.hash, **report.as_dict()})
    io.write_json(
        out / "summary.json",
        {
            "command": "solve",
            "config_hash": cfg.hash,
            "seed": seed,
            "h": cfg.h,
            "s": cfg.s,
            "n_nodes": system.mesh.n_nodes,
            "n_elements": system.mesh.n_elements,
            "n_obstacle": int(system.obstacle.size),
            "J": j_w,
            "solver": {
                "method": vi.method,
                "iterations": vi.iterations,
                "residual": vi.residual,
                "active_set_size": int(vi.active_set.size),
            },
            "invariants": checks,
            "timings": {"assemble_s": t_asm, "solve_s": t_solve},
        },
    )
    print(f"solve: J = {j_w:.12e}, active set {vi.active_set.size}, "
          f"invariants {'PASS' if checks['passed'] else 'FAIL'}")
    return EXIT_OK if checks["passed"] else EXIT_INVARIANT


def cmd_sweep(cfg: RunConfig, out: Path, mode: str, seed: int) -> int:
    from . import io
    from .diagnostics import EOC_THRESHOLDS, rate_study_epsilon, rate_study_xi

    grid = _sweep_grid(cfg)
    t0 = time.perf_counter()
    system = _build_system(cfg)
    study = (rate_study_epsilon if mode == "l2" else rate_study_xi)(system, grid)
    total = time.perf_counter() - t0

    io.study_to_csv(out / f"sweep_{mode}.csv", study, cfg.hash)
    medians = {name: study.median_eoc(name) for name in study.columns}
    thresholds = EOC_THRESHOLDS[mode]
    if grid.size < 2:
        print("warning: single-point grid, EOC undefined", file=sys.stderr)
        passed = True
    else:
        passed = all(medians[name] >= thresholds[name] for name in thresholds)
    io.write_json(
        out / f"sweep_{mode}.json",
        {
            "command": f"sweep-{mode}",
            "config_hash": cfg.hash,
            "seed": seed,
            "grid": list(map(float, grid)),
            "median_eoc": {k: _json_float(v) for k, v in medians.items()},
            "thresholds": thresholds,
            "exact": study.exact,
            "passed": passed,
            "columns": {k: list(map(float, v)) for k, v in study.columns.items()},
            "extras": {
                k: (list(map(float, v)) if hasattr(v, "__len__") else float(v))
                for k, v in study.extras.items()
            },
            "timings": {"total_s": total, "per_solve_s": list(map(float, study.runtime))},
        },
    )
    shown = ", ".join(f"{k}={_show(v)}" for k, v in medians.items())
    print(f"sweep {mode}: median EOC {shown}, {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_EOC


def _json_float(v) -> float | str:
    import math

    return "exact" if v == math.inf else (None if v != v else float(v))


def _show(v) -> str:
    return "exact" if v == float("inf") else f"{v:.3f}"


def cmd_verify_ibp(cfg: RunConfig, out: Path) -> int:
    import numpy as np

    from . import io
    from .assembly import ibp_residual

    system = _build_system(cfg)
    mesh = system.mesh
    a, b = mesh.spec.omega
    xi = (2.0 * mesh.nodes - (a + b)) / (b - a)
    u = np.zeros(mesh.n_nodes)
    inside = np.abs(xi) < 1.0
    u[inside] = np.exp(1.0 - 1.0 / (1.0 - xi[inside] ** 2))

    mid = 0.5 * (mesh.nodes[system.obstacle][0] + mesh.nodes[system.obstacle][-1])
    hat_node = system.obstacle[np.argmin(np.abs(mesh.nodes[system.obstacle] - mid))]
    v_hat = np.zeros(mesh.n_nodes)
    v_hat[hat_node] = 1.0

    r_hat, terms_hat = ibp_residual(
        mesh, u, v_hat, system.params, energy=system.energy, return_terms=True
    )
    r_self, terms_self = ibp_residual(
        mesh, u, u, system.params, energy=system.energy, return_terms=True
    )
    residual = max(r_hat, r_self)
    tol = 1e-3 * terms_self["scale"]
    passed = residual <= tol
    io.write_json(
        out / "ibp.json",
        {
            "command": "verify-ibp",
            "config_hash": cfg.hash,
            "h": cfg.h,
            "residual": residual,
            "residual_sigma2_hat": r_hat,
            "residual_self": r_self,
            "terms_sigma2_hat": terms_hat,
            "terms_self": terms_self,
            "tolerance": tol,
            "passed": passed,
        },
    )
    print(f"verify-ibp: residual {residual:.3e} vs tolerance {tol:.3e}, "
          f"{'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_INVARIANT


def cmd_report(out: Path) -> int:
    ok = True
    found = False
    for name in ("summary.json", "kkt_report.json", "ibp.json",
                 "sweep_l2.json", "sweep_sobolev.json"):
        path = out / name
        if not path.exists():
            continue
        found = True
        payload = json.loads(path.read_text())
        if name == "kkt_report.json":
            print(f"{name}: feasibility {payload['feasibility_violation']:.2e}, "
                  f"multiplier_min {payload['multiplier_min']:.2e}, "
                  f"complementarity {payload['complementarity']:.2e}")
            continue
        passed = payload.get("passed", payload.get("invariants", {}).get("passed"))
        ok &= bool(passed)
        line = f"{name}: {'PASS' if passed else 'FAIL'}"
        if "median_eoc" in payload:
            line += " median EOC " + ", ".join(
                f"{k}={v}" for k, v in payload["median_eoc"].items()
            )
        if "residual" in payload:
            line += f" residual {payload['residual']:.3e}"
        print(line)
    if not found:
        print(f"no artifacts found in {out}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK if ok else EXIT_INVARIANT


def _apply_threads(argv) -> None:
    if "--threads" not in argv:
        return
    n = argv[argv.index("--threads") + 1]
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, n)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _apply_threads(argv)
    except IndexError:
        print("--threads requires a value", file=sys.stderr)
        return EXIT_CONFIG

    parser = argparse.ArgumentParser(
        prog="fracvi",
        description="Nonlocal exterior obstacle problem: solve, penalty sweeps, diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "sweep", "verify-ibp"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--seed", type=int, default=0)
        if name == "sweep":
            p.add_argument("--mode", choices=("l2", "sobolev"), required=True)
    p = sub.add_parser("report")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)

    if args.command == "report":
        return cmd_report(Path(args.out))

    try:
        cfg = parse_config(args.config)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "solve":
            return cmd_solve(cfg, out, args.seed)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.mode, args.seed)
        return cmd_verify_ibp(cfg, out)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FracviError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
