"""Command-line front end: ``vml-lab {solve,check,densities,schedule}``.

Exit codes: 0 success, 1 invalid config (or a non-1-D prior for
``densities``), 2 solver divergence, 3 failed checks.

Output root precedence: ``--out``, then ``output.dir`` from the config, then
``$VML_LAB_OUT``, then ``./vml_runs``.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from . import checks as chk
from . import io
from . import latent as lt
from . import prior as pr
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .oracle import GridSpec
from .schedule import NoiseSchedule, build_edm_grid
from .solver import DivergenceError, solve

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECKS = 0, 1, 2, 3
MASS_HALF_WIDTH = 0.1


def output_root(flag: str | None, cfg: ExperimentConfig | None = None) -> Path:
    if flag:
        root = flag
    elif cfg is not None and cfg.output_dir:
        root = cfg.output_dir
    else:
        root = os.environ.get("VML_LAB_OUT") or "vml_runs"
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _err(msg: str) -> None:
    print(f"vml-lab: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# solve


def oracle_map(cfg: ExperimentConfig):
    """(map_x, note) for the measurement posterior, or (None, reason)."""
    sy = cfg.solver.sigma_y
    try:
        if cfg.decoder is None:
            post = pr.measurement_posterior(cfg.prior, cfg.operator, cfg.y, sy)
            return pr.map_estimate(post).x, None
        if cfg.decoder.kind != "affine":
            return None, "no closed-form oracle for a nonlinear decoder"
        op_z, shift = lt.composed_operator(cfg.decoder, cfg.operator)
        post = pr.measurement_posterior(cfg.prior, op_z, cfg.y - shift, sy)
        return cfg.decoder.decode(pr.map_estimate(post).x), None
    except (ValueError, np.linalg.LinAlgError) as exc:
        return None, f"oracle skipped: {exc}"


def run_seed(cfg: ExperimentConfig, seed: int, out: Path, oracle=None) -> dict:
    """Solve one seed, write its files, return the summary."""
    cfg = cfg.with_seed(seed)
    if cfg.decoder is None:
        traj = solve(cfg.prior, cfg.operator, cfg.y, cfg.solver)
        x = traj.final_x
    else:
        traj, x = lt.latent_solve(cfg.prior, cfg.decoder, cfg.operator, cfg.y, cfg.solver, paste=cfg.paste)
    stem = f"{cfg.run_id}_{seed}"
    io.write_trajectory_csv(out / f"{stem}.csv", traj)
    io.write_json(out / f"{stem}.json", io.trajectory_dict(traj, cfg.run_id))
    (out / f"{stem}_config.yaml").write_text(dump_config(cfg.resolved))
    last = traj.steps[-1]
    summary = {
        "run_id": cfg.run_id,
        "seed": seed,
        "variant": cfg.solver.variant,
        "sigma_y": cfg.solver.sigma_y,
        "learning_rate": cfg.solver.learning_rate,
        "final_x": x,
        "final_latent": traj.final_x if cfg.decoder is not None else None,
        "final_loss": {"sigma": last.sigma, **last.loss.as_dict()},
        "notes": list(cfg.notes),
    }
    if oracle is not None:
        map_x, note = oracle
        summary["oracle_map"] = map_x
        summary["oracle_distance"] = None if map_x is None else float(np.linalg.norm(x - map_x))
        if note:
            summary["notes"].append(note)
    io.write_json(out / f"{stem}_summary.json", summary)
    return summary


def _run_seed_job(args):
    cfg, seed, out, oracle = args
    try:
        return run_seed(cfg, seed, out, oracle), None
    except DivergenceError as exc:
        return None, f"seed {seed}: {exc}"


def cmd_solve(config_path, out=None, seed=None, workers=1) -> int:
    try:
        cfg = load_config(config_path, seed_override=seed)
    except ConfigError as exc:
        _err(f"invalid config: {exc}")
        return EXIT_CONFIG
    root = output_root(out, cfg)
    oracle = oracle_map(cfg) if cfg.oracle else None
    jobs = [(cfg, s, root, oracle) for s in cfg.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_run_seed_job, jobs))
    else:
        results = [_run_seed_job(j) for j in jobs]
    status = EXIT_OK
    for summary, error in results:
        if error:
            _err(f"solver diverged: {error}")
            status = EXIT_DIVERGED
            continue
        dist = summary.get("oracle_distance")
        extra = "" if dist is None else f" |x - map| = {dist:.3e}"
        print(f"{summary['run_id']} seed {summary['seed']}: final_x = {np.array2string(np.asarray(summary['final_x']), precision=6)}{extra}")
        for note in summary["notes"]:
            print(f"  note: {note}")
    return status


# ---------------------------------------------------------------------------
# check


def cmd_check(suite="all", out=None, workers=1) -> int:
    try:
        checks = chk.run_suite(suite, workers=workers)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    root = output_root(out)
    path = root / f"check_{suite}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "error", "tolerance", "passed", "seconds"])
        for r in checks:
            w.writerow([r.name, io.fmt(r.error), io.fmt(r.tolerance), int(r.passed), f"{r.seconds:.3f}"])
    for r in checks:
        print(r.line())
    failed = [r.name for r in checks if not r.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed; table written to {path}")
    return EXIT_CHECKS if failed else EXIT_OK


# ---------------------------------------------------------------------------
# densities


def _trapz_mask(x, f, keep) -> float:
    return float(trapezoid(f[keep], x[keep])) if np.count_nonzero(keep) > 1 else 0.0


def compute_densities(cfg: ExperimentConfig) -> tuple[list[dict], dict[str, tuple]]:
    """Density records and ``{file name: (x, density)}`` for a 1-D prior."""
    spec = cfg.densities
    grid = spec.grid
    x = grid.axes()[0]
    p0 = np.exp(pr.marginal_logpdf(cfg.prior, x[:, None], 0.0))
    files = {f"{cfg.run_id}_prior.csv": (x, p0)}
    records = [{"kind": "prior", "file": f"{cfg.run_id}_prior.csv", "integral": grid.integrate(p0)}]
    for i, s in enumerate(spec.sigmas):
        # p(x_t) spreads with sigma, so its grid widens by 8 sigma on each side
        wide = GridSpec([grid.lower[0] - 8 * s], [grid.upper[0] + 8 * s], grid.points)
        xt = wide.axes()[0]
        pt = np.exp(pr.marginal_logpdf(cfg.prior, xt[:, None], s))
        name = f"{cfg.run_id}_marginal_s{i}.csv"
        files[name] = (xt, pt)
        records.append({"kind": "marginal", "file": name, "sigma": s, "integral": wide.integrate(pt)})
        for j, g in enumerate(spec.gammas):
            cond = pr.conditional_mixture(cfg.prior, [g], s)
            pc = np.exp(pr.marginal_logpdf(cond, x[:, None], 0.0))
            name = f"{cfg.run_id}_conditional_s{i}_g{j}.csv"
            files[name] = (x, pc)
            records.append({
                "kind": "conditional",
                "file": name,
                "sigma": s,
                "gamma": g,
                "integral": grid.integrate(pc),
                "mass_near_gamma": _trapz_mask(x, pc, np.abs(x - g) <= MASS_HALF_WIDTH),
                "tv_to_prior": 0.5 * grid.integrate(np.abs(pc - p0)),
            })
    return records, files


def cmd_densities(config_path, out=None) -> int:
    try:
        cfg = load_config(config_path)
        if cfg.prior.dim != 1:
            raise ConfigError("prior.means", f"densities need a 1-D prior, got dimension {cfg.prior.dim}")
        if cfg.densities is None:
            raise ConfigError("densities", "section is required for the densities command")
    except ConfigError as exc:
        _err(f"invalid config: {exc}")
        return EXIT_CONFIG
    root = output_root(out, cfg)
    records, files = compute_densities(cfg)
    for name, (xs, dens) in files.items():
        io.write_density_csv(root / name, xs, dens)
    io.write_json(root / f"{cfg.run_id}_densities.json", {"run_id": cfg.run_id, "mass_half_width": MASS_HALF_WIDTH, "densities": records})
    (root / f"{cfg.run_id}_config.yaml").write_text(dump_config(cfg.resolved))
    for r in records:
        if r["kind"] == "conditional":
            print(f"sigma={r['sigma']:<8g} gamma={r['gamma']:<6g} mass(+-{MASS_HALF_WIDTH})={r['mass_near_gamma']:.6f} tv_to_prior={r['tv_to_prior']:.3e}")
    print(f"{len(files)} density files written to {root}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# schedule


def cmd_schedule(config_path=None) -> int:
    if config_path:
        try:
            schedule = load_config(config_path).solver.schedule
        except ConfigError as exc:
            _err(f"invalid config: {exc}")
            return EXIT_CONFIG
    else:
        schedule = NoiseSchedule()
    print("i,sigma")
    for i, s in build_edm_grid(schedule):
        print(f"{i},{io.fmt(s)}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vml-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run the reverse-diffusion MAP solver")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="override the config seed(s)")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("check", help="run verification suites")
    p.add_argument("--suite", default="all", choices=[*chk.SUITES, "all"])
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("densities", help="export prior, marginal and conditional densities")
    p.add_argument("--config", required=True)
    p.add_argument("--out")

    p = sub.add_parser("schedule", help="print the noise grid")
    p.add_argument("--config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        _err("--workers must be at least 1")
        return EXIT_CONFIG
    if args.command == "solve":
        return cmd_solve(args.config, args.out, args.seed, args.workers)
    if args.command == "check":
        return cmd_check(args.suite, args.out, args.workers)
    if args.command == "densities":
        return cmd_densities(args.config, args.out)
    return cmd_schedule(args.config)


if __name__ == "__main__":
    sys.exit(main())
