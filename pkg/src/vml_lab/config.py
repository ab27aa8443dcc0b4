"""Experiment configuration: YAML in, validated objects out.

Schema (``schema_version: 1``)::

    schema_version: 1
    run_id: str
    prior:        {weights, means, covariances | variances}
    operator:     {kind, dims, keep | matrix | block | width | rows, tau}
    measurement:  {y} or {synthesize: {x_true, seed}}
    schedule:     {sigma_min, sigma_max, rho, num_steps}
    solver:       {num_inner, gamma0, sigma_y, variant, seed | seeds, record_every, paste}
    decoder:      {kind, matrix, offset, scale}        # latent variant only
    oracle:       {enabled}
    output:       {dir}
    densities:    {sigmas, gammas, grid: {lower, upper, points}}

Every cross-reference is checked here so that a bad file fails before any
computation; errors name the offending field.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import operator as ops
from .latent import SyntheticDecoder
from .oracle import GridSpec
from .prior import GaussianMixture
from .schedule import NoiseSchedule
from .solver import SIGMA_Y_FLOOR, VARIANTS, SolverConfig

SCHEMA_VERSION = 1
OPERATOR_KINDS = ("identity", "mask", "dense", "zero", "block_average", "separable_blur")
SECTIONS = (
    "schema_version", "run_id", "prior", "operator", "measurement", "schedule",
    "solver", "decoder", "oracle", "output", "densities",
)


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the bad entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass
class DensitySpec:
    sigmas: list[float]
    gammas: list[float]
    grid: GridSpec


@dataclass
class ExperimentConfig:
    run_id: str
    prior: GaussianMixture
    operator: ops.LinearOperator
    y: np.ndarray
    solver: SolverConfig
    seeds: list[int]
    decoder: SyntheticDecoder | None = None
    x_true: np.ndarray | None = None
    oracle: bool = True
    paste: bool = False
    output_dir: str | None = None
    densities: DensitySpec | None = None
    notes: list[str] = field(default_factory=list)
    resolved: dict = field(default_factory=dict)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        out = copy.copy(self)
        out.solver = SolverConfig(**{**self.solver.__dict__, "seed": int(seed)})
        out.seeds = [int(seed)]
        out.resolved = copy.deepcopy(self.resolved)
        out.resolved["solver"].pop("seeds", None)
        out.resolved["solver"]["seed"] = int(seed)
        return out


# ---------------------------------------------------------------------------
# field helpers


def _section(raw: dict, name: str, required: bool = True) -> dict:
    val = raw.get(name)
    if val is None:
        if required:
            raise ConfigError(name, "section is required")
        return {}
    if not isinstance(val, dict):
        raise ConfigError(name, "must be a mapping")
    return val


def _array(value, path: str, ndim: int) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "must be numeric") from None
    if arr.ndim != ndim:
        raise ConfigError(path, f"expected a {ndim}-d array, got {arr.ndim}-d")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(path, "contains non-finite values")
    return arr


def _number(sec: dict, key: str, path: str, default=None, positive=False, integer=False):
    val = sec.get(key, default)
    if val is None:
        raise ConfigError(f"{path}.{key}", "is required")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}.{key}", f"must be a number, got {val!r}")
    if integer and int(val) != val:
        raise ConfigError(f"{path}.{key}", f"must be an integer, got {val!r}")
    if positive and not val > 0:
        raise ConfigError(f"{path}.{key}", f"must be positive, got {val!r}")
    return int(val) if integer else float(val)


def _build(path: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(path, str(exc)) from None


# ---------------------------------------------------------------------------
# sections


def parse_prior(sec: dict) -> GaussianMixture:
    weights = _array(sec.get("weights"), "prior.weights", 1)
    means = _array(sec.get("means"), "prior.means", 2)
    if means.shape[0] != weights.size:
        raise ConfigError("prior.means", f"{means.shape[0]} rows for {weights.size} weights")
    if ("covariances" in sec) == ("variances" in sec):
        raise ConfigError("prior", "give exactly one of covariances or variances")
    if "variances" in sec:
        var = _array(sec["variances"], "prior.variances", 1)
        if var.size != weights.size:
            raise ConfigError("prior.variances", f"{var.size} entries for {weights.size} weights")
        return _build("prior", GaussianMixture.isotropic, weights, means, var)
    covs = _array(sec["covariances"], "prior.covariances", 3)
    n = means.shape[1]
    if covs.shape != (weights.size, n, n):
        raise ConfigError("prior.covariances", f"shape {covs.shape}, expected {(weights.size, n, n)}")
    return _build("prior", GaussianMixture, weights, means, covs)


def parse_operator(sec: dict, n: int) -> ops.LinearOperator:
    kind = sec.get("kind")
    if kind not in OPERATOR_KINDS:
        raise ConfigError("operator.kind", f"must be one of {OPERATOR_KINDS}, got {kind!r}")
    dims = sec.get("dims", n)
    if kind in ("block_average", "separable_blur"):
        shape = [int(d) for d in np.atleast_1d(dims)]
        if int(np.prod(shape)) != n:
            raise ConfigError("operator.dims", f"shape {shape} has {int(np.prod(shape))} entries, signal dimension is {n}")
    elif not (isinstance(dims, int) and dims == n):
        raise ConfigError("operator.dims", f"is {dims!r}, signal dimension is {n}")
    if kind == "identity":
        op = ops.LinearOperator.identity(n)
    elif kind == "mask":
        keep = sec.get("keep")
        if not isinstance(keep, list) or not keep:
            raise ConfigError("operator.keep", "must be a non-empty list of indices")
        bad = [k for k in keep if not isinstance(k, int) or not 0 <= k < n]
        if bad:
            raise ConfigError("operator.keep", f"indices {bad} out of range for dimension {n}")
        op = _build("operator.keep", ops.LinearOperator.mask, n, keep)
    elif kind == "dense":
        mat = _array(sec.get("matrix"), "operator.matrix", 2)
        if mat.shape[1] != n:
            raise ConfigError("operator.matrix", f"has {mat.shape[1]} columns, signal dimension is {n}")
        op = _build("operator.matrix", ops.LinearOperator.from_matrix, mat)
    elif kind == "zero":
        rows = _number(sec, "rows", "operator", default=1, positive=True, integer=True)
        op = ops.LinearOperator.zero(rows, n)
    elif kind == "block_average":
        block = _number(sec, "block", "operator", positive=True, integer=True)
        op = _build("operator.block", ops.LinearOperator.block_average, shape, block)
    else:
        width = _number(sec, "width", "operator", positive=True, integer=True)
        op = _build("operator.width", ops.LinearOperator.separable_blur, shape, width)
    tau = _number(sec, "tau", "operator", default=0.0)
    if tau < 0:
        raise ConfigError("operator.tau", f"must be nonnegative, got {tau}")
    return ops.threshold_singulars(op, tau) if tau > 0 else op


def parse_decoder(sec: dict) -> SyntheticDecoder:
    mat = _array(sec.get("matrix"), "decoder.matrix", 2)
    offset = sec.get("offset")
    if offset is not None:
        offset = _array(offset, "decoder.offset", 1)
    scale = _number(sec, "scale", "decoder", default=1.0, positive=True)
    return _build("decoder", SyntheticDecoder, sec.get("kind", "affine"), mat, offset, scale)


def parse_schedule(sec: dict) -> NoiseSchedule:
    d = NoiseSchedule()
    return _build(
        "schedule",
        NoiseSchedule,
        sigma_min=_number(sec, "sigma_min", "schedule", d.sigma_min, positive=True),
        sigma_max=_number(sec, "sigma_max", "schedule", d.sigma_max, positive=True),
        rho=_number(sec, "rho", "schedule", d.rho, positive=True),
        num_steps=_number(sec, "num_steps", "schedule", d.num_steps, positive=True, integer=True),
    )


def parse_densities(sec: dict) -> DensitySpec:
    sigmas = _array(sec.get("sigmas"), "densities.sigmas", 1)
    gammas = _array(sec.get("gammas"), "densities.gammas", 1)
    if sigmas.size == 0 or np.any(sigmas <= 0):
        raise ConfigError("densities.sigmas", "must be a non-empty list of positive values")
    if gammas.size == 0:
        raise ConfigError("densities.gammas", "must be non-empty")
    g = sec.get("grid")
    if not isinstance(g, dict):
        raise ConfigError("densities.grid", "must be a mapping with lower, upper, points")
    grid = _build(
        "densities.grid", GridSpec,
        [_number(g, "lower", "densities.grid")], [_number(g, "upper", "densities.grid")],
        [_number(g, "points", "densities.grid", integer=True)],
    )
    return DensitySpec([float(s) for s in sigmas], [float(v) for v in gammas], grid)


# ---------------------------------------------------------------------------


def parse_config(raw: dict, seed_override: int | None = None) -> ExperimentConfig:
    """Validate a config mapping and build every object it describes."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(unknown[0], "unknown top-level key")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    resolved = copy.deepcopy(raw)
    notes: list[str] = []
    run_id = str(raw.get("run_id", "run"))
    if not run_id or any(c in run_id for c in "/\\"):
        raise ConfigError("run_id", f"must be a plain file-name stem, got {run_id!r}")
    resolved["run_id"] = run_id

    prior = parse_prior(_section(raw, "prior"))

    sol = _section(raw, "solver", required=False)
    variant = sol.get("variant", "plain")
    if variant not in VARIANTS:
        raise ConfigError("solver.variant", f"must be one of {VARIANTS}, got {variant!r}")
    decoder = None
    if variant == "latent":
        decoder = parse_decoder(_section(raw, "decoder"))
        if decoder.latent_dim != prior.dim:
            raise ConfigError("decoder.matrix", f"takes dimension {decoder.latent_dim}, prior has {prior.dim}")
        signal_dim = decoder.output_dim
    else:
        if raw.get("decoder") is not None:
            raise ConfigError("decoder", "only used with solver.variant = latent")
        signal_dim = prior.dim

    op = parse_operator(_section(raw, "operator"), signal_dim)

    sigma_y = _number(sol, "sigma_y", "solver", default=0.0)
    if sigma_y < 0:
        raise ConfigError("solver.sigma_y", f"must be nonnegative, got {sigma_y}")
    if sigma_y < SIGMA_Y_FLOOR:
        notes.append(f"sigma_y={sigma_y:g} floored to {SIGMA_Y_FLOOR:g}")
        sigma_y = SIGMA_Y_FLOOR

    meas = _section(raw, "measurement")
    has_y, has_syn = "y" in meas, "synthesize" in meas
    if has_y == has_syn:
        raise ConfigError("measurement", "give exactly one of y or synthesize")
    x_true = None
    if has_y:
        y = _array(meas["y"], "measurement.y", 1)
        if y.shape != (op.shape[0],):
            raise ConfigError("measurement.y", f"has length {y.size}, operator produces {op.shape[0]}")
    else:
        syn = meas["synthesize"]
        if not isinstance(syn, dict):
            raise ConfigError("measurement.synthesize", "must be a mapping with x_true and seed")
        x_true = _array(syn.get("x_true"), "measurement.synthesize.x_true", 1)
        if x_true.shape != (signal_dim,):
            raise ConfigError("measurement.synthesize.x_true", f"has length {x_true.size}, signal dimension is {signal_dim}")
        syn_seed = _number(syn, "seed", "measurement.synthesize", default=0, integer=True)
        noise = np.random.default_rng(syn_seed).standard_normal(op.shape[0])
        y = ops.apply(op, x_true) + sigma_y * noise

    if "seeds" in sol and "seed" in sol:
        raise ConfigError("solver", "give at most one of seed or seeds")
    if "seeds" in sol:
        seeds = sol["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise ConfigError("solver.seeds", "must be a non-empty list of nonnegative integers")
    else:
        seeds = [_number(sol, "seed", "solver", default=0, integer=True)]
    if seed_override is not None:
        seeds = [int(seed_override)]
    if len(set(seeds)) != len(seeds):
        raise ConfigError("solver.seeds", "contains duplicates")

    schedule = parse_schedule(_section(raw, "schedule", required=False))
    solver = _build(
        "solver", SolverConfig,
        schedule=schedule,
        num_inner=_number(sol, "num_inner", "solver", 50, positive=True, integer=True),
        gamma0=_number(sol, "gamma0", "solver", 1.0, positive=True),
        sigma_y=sigma_y,
        variant=variant,
        seed=seeds[0],
        record_every=_number(sol, "record_every", "solver", 1, positive=True, integer=True),
    )
    paste = bool(sol.get("paste", False))
    if paste and op.kind != "mask":
        raise ConfigError("solver.paste", "pasting measurements needs a mask operator")

    oracle = bool(_section(raw, "oracle", required=False).get("enabled", True))
    out_dir = _section(raw, "output", required=False).get("dir")
    dens = parse_densities(raw["densities"]) if raw.get("densities") is not None else None

    resolved["schedule"] = {
        "sigma_min": schedule.sigma_min, "sigma_max": schedule.sigma_max,
        "rho": schedule.rho, "num_steps": schedule.num_steps,
    }
    rsol = {
        "num_inner": solver.num_inner, "gamma0": solver.gamma0, "sigma_y": solver.sigma_y,
        "variant": variant, "record_every": solver.record_every, "paste": paste,
    }
    if len(seeds) == 1:
        rsol["seed"] = seeds[0]
    else:
        rsol["seeds"] = list(seeds)
    resolved["solver"] = rsol
    resolved["oracle"] = {"enabled": oracle}
    return ExperimentConfig(
        run_id=run_id, prior=prior, operator=op, y=y, solver=solver, seeds=list(seeds),
        decoder=decoder, x_true=x_true, oracle=oracle, paste=paste, output_dir=out_dir,
        densities=dens, notes=notes, resolved=resolved,
    )


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from None
    return parse_config(raw, seed_override)


def dump_config(resolved: dict) -> str:
    return yaml.safe_dump(resolved, sort_keys=False)


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``bimodal_inpaint``."""
    path = Path(__file__).parent / "configs" / f"{name}.yaml"
    if not path.exists():
        raise FileNotFoundError(f"no bundled config named {name!r}")
    return path
