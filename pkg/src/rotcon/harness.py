"""Config-driven experiment runner.

Loads a declarative TOML config, builds problem + graph + protocol, runs
the consensus simulation, and persists a deterministic trace CSV plus a
summary JSON.  Wall-clock numbers go to a separate timing CSV so that
identical config + seed reproduces the trace and aggregate files byte for
byte.  Sweeps vary the number of active sensors on a pose problem and
collect per-trial errors against ground truth.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import problems, topology
from .hull import build_hull, cached_hull, rotation_residuals
from .problems import ProblemInstance
from .protocols import DivergenceError, ProtocolConfig, RunResult, run
from .spectral import linear_max_over_hull, project_simplex, project_spectrahedron, sym_eig

TRACE_SCHEMA = "rotcon-trace/1"
TIMING_SCHEMA = "rotcon-timing/1"
AGGREGATE_SCHEMA = "rotcon-aggregate/1"
SUMMARY_SCHEMA = "rotcon-summary/1"
VERIFY_SCHEMA = "rotcon-verify/1"
CONFIG_SCHEMA = "rotcon-config/1"

OUT_DIR_ENV = "ROTCON_OUT_DIR"


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configs."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated contents of an experiment config file."""

    name: str
    problem_kind: str                  # averaging | pose | custom
    n: int
    agents: int
    topology_kind: str                 # ring | complete | edge_list
    hops: int
    topology_path: str | None
    protocol: ProtocolConfig
    seed: int
    out_dir: str | None
    trials: int
    sigma: float = 0.0
    points: int = 0
    cloud: str = "synthetic"           # synthetic | file path
    normalize_cloud: bool = False
    custom_path: str | None = None
    sweep_parameter: str | None = None
    sweep_values: tuple[int, ...] = ()


def _take(section: dict, key: str, kind, default=None, required=False, where: str = ""):
    if key not in section:
        if required:
            raise ConfigError(f"missing required key '{key}' in [{where}]")
        return default
    value = section.pop(key)
    try:
        if kind is int and isinstance(value, bool):
            raise TypeError
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"key '{key}' in [{where}] should be {kind.__name__}, got {value!r}") from None


def load_config(path) -> ExperimentConfig:
    """Parse and validate a TOML experiment config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML parse error: {exc}") from exc
    return parse_config(raw, name=path.stem)


def parse_config(raw: dict, name: str = "experiment") -> ExperimentConfig:
    raw = dict(raw)
    schema = raw.pop("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema {schema!r}, expected {CONFIG_SCHEMA!r}")

    prob = dict(raw.pop("problem", {}))
    kind = _take(prob, "kind", str, required=True, where="problem")
    if kind not in ("averaging", "pose", "custom"):
        raise ConfigError(f"unknown problem kind {kind!r}")
    n = _take(prob, "n", int, default=3, where="problem")
    sigma = _take(prob, "sigma", float, default=0.0, where="problem")
    points = _take(prob, "points", int, default=0, where="problem")
    cloud = _take(prob, "cloud", str, default="synthetic", where="problem")
    normalize_cloud = bool(prob.pop("normalize", False))
    custom_path = _take(prob, "path", str, default=None, where="problem")
    if kind == "pose" and points < 1 and cloud == "synthetic":
        raise ConfigError("pose problems with a synthetic cloud need 'points' >= 1")
    if kind == "custom" and not custom_path:
        raise ConfigError("custom problems need 'path' pointing at an .npy/.npz data file")
    if prob:
        raise ConfigError(f"unknown keys in [problem]: {sorted(prob)}")

    topo = dict(raw.pop("topology", {}))
    topo_kind = _take(topo, "kind", str, default="complete", where="topology")
    if topo_kind not in ("ring", "complete", "edge_list"):
        raise ConfigError(f"unknown topology kind {topo_kind!r}")
    agents = _take(topo, "agents", int, required=topo_kind != "edge_list", default=0, where="topology")
    hops = _take(topo, "hops", int, default=1, where="topology")
    topo_path = _take(topo, "path", str, default=None, where="topology")
    if topo_kind == "edge_list" and not topo_path:
        raise ConfigError("edge_list topology needs 'path'")
    if topo:
        raise ConfigError(f"unknown keys in [topology]: {sorted(topo)}")

    proto = dict(raw.pop("protocol", {}))
    pkind = _take(proto, "kind", str, required=True, where="protocol")
    alpha = _take(proto, "alpha", float, required=True, where="protocol")
    schedule = _take(proto, "alpha_schedule", str, default="constant", where="protocol")
    max_iters = _take(proto, "max_iters", int, default=500, where="protocol")
    stop_tol = _take(proto, "stop_tolerance", float, default=1e-6, where="protocol")
    fusion_scaling = _take(proto, "fusion_scaling", str, default="derived", where="protocol")
    count_self_loop = bool(proto.pop("count_self_loop", True))
    if proto:
        raise ConfigError(f"unknown keys in [protocol]: {sorted(proto)}")
    try:
        protocol = ProtocolConfig(protocol=pkind, alpha=alpha, alpha_schedule=schedule,
                                  max_iters=max_iters, stop_tolerance=stop_tol,
                                  fusion_scaling=fusion_scaling, count_self_loop=count_self_loop)
    except ValueError as exc:
        raise ConfigError(f"[protocol]: {exc}") from exc

    runsec = dict(raw.pop("run", {}))
    seed = _take(runsec, "seed", int, default=0, where="run")
    out_dir = _take(runsec, "out_dir", str, default=None, where="run")
    trials = _take(runsec, "trials", int, default=1, where="run")
    if runsec:
        raise ConfigError(f"unknown keys in [run]: {sorted(runsec)}")

    sweep = dict(raw.pop("sweep", {}))
    sweep_parameter = _take(sweep, "parameter", str, default=None, where="sweep")
    sweep_values = tuple(int(v) for v in sweep.pop("values", ()))
    sweep_trials = _take(sweep, "trials", int, default=0, where="sweep")
    if sweep_trials:
        trials = sweep_trials
    if sweep:
        raise ConfigError(f"unknown keys in [sweep]: {sorted(sweep)}")
    if sweep_parameter is not None:
        if sweep_parameter != "active_sensors":
            raise ConfigError(f"unsupported sweep parameter {sweep_parameter!r}")
        if kind != "pose":
            raise ConfigError("active_sensors sweeps need a pose problem")
        if not sweep_values:
            raise ConfigError("[sweep] needs non-empty 'values'")

    if raw:
        raise ConfigError(f"unknown top-level sections: {sorted(raw)}")

    return ExperimentConfig(
        name=name, problem_kind=kind, n=n, agents=agents, topology_kind=topo_kind,
        hops=hops, topology_path=topo_path, protocol=protocol, seed=seed,
        out_dir=out_dir, trials=trials, sigma=sigma, points=points, cloud=cloud,
        normalize_cloud=normalize_cloud, custom_path=custom_path,
        sweep_parameter=sweep_parameter, sweep_values=sweep_values,
    )


def bundled_config_names() -> list[str]:
    """Names of the experiment configs shipped with the package."""
    root = resources.files("rotcon").joinpath("configs")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_config_path(ref: str) -> Path:
    """Interpret ``ref`` as a file path or the name of a bundled config."""
    p = Path(ref)
    if p.exists():
        return p
    stem = ref[:-5] if ref.endswith(".toml") else ref
    bundled = resources.files("rotcon").joinpath("configs", f"{stem}.toml")
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"config {ref!r} is neither a file nor a bundled name "
                      f"(bundled: {', '.join(bundled_config_names())})")


def build_problem(cfg: ExperimentConfig, seed=None, agents: int | None = None) -> ProblemInstance:
    """Instantiate the problem described by the config (seed overridable)."""
    seed = cfg.seed if seed is None else seed
    N = cfg.agents if agents is None else agents
    if cfg.problem_kind == "averaging":
        return problems.averaging_instance(cfg.n, N, seed=seed)
    if cfg.problem_kind == "pose":
        if cfg.cloud == "synthetic":
            model = problems.synthetic_cloud(cfg.points, n=cfg.n, seed=cfg.seed)
        else:
            model = problems.load_point_cloud(cfg.cloud, normalize=cfg.normalize_cloud)
        return problems.pose_instance(model, N, cfg.sigma, seed=seed)
    data = _load_custom_matrices(cfg.custom_path)
    if data.shape[1] != cfg.n:
        raise ConfigError(f"custom data is {data.shape[1]}x{data.shape[2]} but config says n={cfg.n}")
    return ProblemInstance(n=cfg.n, D=data)


def _load_custom_matrices(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such data file: {path}")
    loaded = np.load(path)
    data = loaded["D"] if hasattr(loaded, "files") else loaded
    data = np.asarray(data, dtype=float)
    if data.ndim != 3 or data.shape[1] != data.shape[2]:
        raise ConfigError(f"custom data must be a (N, n, n) stack, got shape {data.shape}")
    return data


def build_graph(cfg: ExperimentConfig) -> topology.CommGraph:
    if cfg.topology_kind == "ring":
        return topology.ring(cfg.agents, cfg.hops)
    if cfg.topology_kind == "complete":
        return topology.complete(cfg.agents)
    return topology.load_edge_list(cfg.topology_path)


@dataclass(frozen=True)
class RunSummary:
    """Condensed outcome of one experiment run."""

    name: str
    status: str
    iterations: int
    final_disagreement: float
    final_optimality_gap: float
    final_membership_residual: float
    centralized_objective: float
    consensus_objective: float
    relative_objective_gap: float
    wall_ms_total: float
    wall_ms_mean: float
    wall_ms_max: float
    seed: int
    consensus: list

    def to_json(self) -> str:
        payload = {"schema": SUMMARY_SCHEMA}
        payload.update(self.__dict__)
        return json.dumps(payload, indent=2, sort_keys=True)


def summarize(name: str, result: RunResult, seed: int) -> RunSummary:
    last = result.trace[-1]
    walls = [r.wall_ms for r in result.trace]
    rel = abs(result.centralized_objective - result.consensus_objective)
    if result.centralized_objective != 0:
        rel /= abs(result.centralized_objective)
    return RunSummary(
        name=name, status=result.status, iterations=len(result.trace),
        final_disagreement=last.disagreement, final_optimality_gap=last.optimality_gap,
        final_membership_residual=last.membership_residual,
        centralized_objective=result.centralized_objective,
        consensus_objective=result.consensus_objective,
        relative_objective_gap=rel,
        wall_ms_total=float(np.sum(walls)), wall_ms_mean=float(np.mean(walls)),
        wall_ms_max=float(np.max(walls)), seed=seed,
        consensus=[[float(x) for x in row] for row in result.consensus],
    )


def write_trace(result: RunResult, out_dir: Path) -> tuple[Path, Path]:
    """Write the deterministic trace CSV and the separate timing CSV."""
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / "trace.csv"
    timing_path = out_dir / "timing.csv"
    with trace_path.open("w") as fh:
        fh.write(f"# {TRACE_SCHEMA}\n")
        fh.write("t,disagreement,optimality_gap,membership_residual\n")
        for r in result.trace:
            fh.write(f"{r.t},{r.disagreement!r},{r.optimality_gap!r},{r.membership_residual!r}\n")
    with timing_path.open("w") as fh:
        fh.write(f"# {TIMING_SCHEMA}\n")
        fh.write("t,wall_ms\n")
        for r in result.trace:
            fh.write(f"{r.t},{r.wall_ms!r}\n")
    return trace_path, timing_path


def _resolve_out_dir(cfg: ExperimentConfig, out_dir=None) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    if cfg.out_dir:
        return Path(cfg.out_dir)
    return Path(os.environ.get(OUT_DIR_ENV, "runs")) / cfg.name


def run_experiment(config_ref, out_dir=None, seed: int | None = None,
                   max_iters: int | None = None, alpha: float | None = None) -> RunSummary:
    """Execute a single experiment config and persist its outputs.

    Keyword overrides replace the corresponding config fields.  Output
    files: trace.csv (deterministic), timing.csv, summary.json.  On
    divergence the partial trace is still written before the error
    propagates.
    """
    cfg = load_config(resolve_config_path(str(config_ref)))
    if seed is not None or max_iters is not None or alpha is not None:
        proto = replace(cfg.protocol,
                        **({"max_iters": max_iters} if max_iters is not None else {}),
                        **({"alpha": alpha} if alpha is not None else {}))
        cfg = replace(cfg, protocol=proto, **({"seed": seed} if seed is not None else {}))
    destination = _resolve_out_dir(cfg, out_dir)

    problem = build_problem(cfg)
    graph = build_graph(cfg)
    try:
        result = run(problem, graph, cfg.protocol)
    except DivergenceError as exc:
        if exc.trace:
            partial = RunResult(trace=exc.trace, consensus=np.eye(cfg.n), status="diverged",
                                centralized=np.eye(cfg.n), centralized_objective=float("nan"),
                                consensus_objective=float("nan"))
            write_trace(partial, destination)
            (destination / "summary.json").write_text(json.dumps(
                {"schema": SUMMARY_SCHEMA, "name": cfg.name, "status": "diverged",
                 "iterations": len(exc.trace), "detail": str(exc)}, indent=2, sort_keys=True))
        raise
    write_trace(result, destination)
    summary = summarize(cfg.name, result, cfg.seed)
    (destination / "summary.json").write_text(summary.to_json() + "\n")
    return summary


@dataclass(frozen=True)
class SweepRow:
    trial: int
    value: int
    error: float
    iterations: int
    status: str
    wall_ms: float


def run_sweep(config_ref, out_dir=None, seed: int | None = None,
              max_iters: int | None = None, alpha: float | None = None) -> list[SweepRow]:
    """Run the active-sensor sweep of a pose config.

    For each swept value and trial, a fresh ground-truth rotation and noise
    realization are drawn; only the first ``value`` sensors' partitions
    enter the estimation.  The single-sensor case skips the consensus loop
    and solves the local problem in closed form.  Writes aggregate.csv
    (deterministic) and aggregate_timing.csv.
    """
    cfg = load_config(resolve_config_path(str(config_ref)))
    if cfg.sweep_parameter is None:
        raise ConfigError(f"config {cfg.name!r} has no [sweep] section")
    if seed is not None or max_iters is not None or alpha is not None:
        proto = replace(cfg.protocol,
                        **({"max_iters": max_iters} if max_iters is not None else {}),
                        **({"alpha": alpha} if alpha is not None else {}))
        cfg = replace(cfg, protocol=proto, **({"seed": seed} if seed is not None else {}))
    destination = _resolve_out_dir(cfg, out_dir)

    if cfg.cloud == "synthetic":
        model = problems.synthetic_cloud(cfg.points, n=cfg.n, seed=cfg.seed)
    else:
        model = problems.load_point_cloud(cfg.cloud, normalize=cfg.normalize_cloud)

    h = cached_hull(cfg.n)
    rows: list[SweepRow] = []
    for value_index, value in enumerate(cfg.sweep_values):
        if not 1 <= value <= cfg.agents:
            raise ConfigError(f"swept value {value} outside 1..{cfg.agents}")
        for trial in range(cfg.trials):
            trial_rng = np.random.default_rng([cfg.seed, value_index, trial])
            full = problems.pose_instance(model, cfg.agents, cfg.sigma, seed=trial_rng)
            active = ProblemInstance(n=cfg.n, D=full.D[:value], R_true=full.R_true,
                                     B=full.B[:value], C=full.C[:value])
            start = time.perf_counter()
            if value == 1:
                estimate = linear_max_over_hull(h, active.D[0]).rotation
                iterations, status = 1, "converged"
            else:
                result = run(active, None, cfg.protocol)
                estimate = result.consensus
                iterations, status = len(result.trace), result.status
            wall_ms = (time.perf_counter() - start) * 1e3
            error = float(np.linalg.norm(estimate - full.R_true))
            rows.append(SweepRow(trial=trial, value=value, error=error,
                                 iterations=iterations, status=status, wall_ms=wall_ms))

    destination.mkdir(parents=True, exist_ok=True)
    with (destination / "aggregate.csv").open("w") as fh:
        fh.write(f"# {AGGREGATE_SCHEMA}\n")
        fh.write(f"trial,{cfg.sweep_parameter},error,iterations,status\n")
        for r in rows:
            fh.write(f"{r.trial},{r.value},{r.error!r},{r.iterations},{r.status}\n")
    with (destination / "aggregate_timing.csv").open("w") as fh:
        fh.write(f"# {TIMING_SCHEMA}\n")
        fh.write(f"trial,{cfg.sweep_parameter},wall_ms\n")
        for r in rows:
            fh.write(f"{r.trial},{r.value},{r.wall_ms!r}\n")
    return rows


# ---------------------------------------------------------------------------
# verification battery

def _check(name, passed, detail):
    return {"name": name, "passed": bool(passed), "detail": detail}


def verify_suite(quick: bool = False) -> dict:
    """Run the cross-module invariant battery and return a JSON-able report.

    Failures are reported, not raised.  ``quick`` trims sample counts for
    smoke usage.
    """
    rng = np.random.default_rng(20240601)
    samples = 100 if quick else 500
    checks = []

    # adjoint identity <A(Z), Y> == <Z, A+(Y)>
    worst = 0.0
    for n in (2, 3, 4):
        h = cached_hull(n)
        for _ in range(samples):
            Z = rng.standard_normal((h.d, h.d))
            Z = 0.5 * (Z + Z.T)
            Y = rng.standard_normal((n, n))
            lhs = float(np.sum(h.apply(Z) * Y))
            rhs = float(np.sum(Z * h.adjoint(Y)))
            worst = max(worst, abs(lhs - rhs))
    checks.append(_check("adjoint_identity", worst <= 1e-10, f"max |<A(Z),Y> - <Z,A+(Y)>| = {worst:.3e}"))

    # extreme points: whole unit sphere for n <= 3
    worst = 0.0
    for n in (2, 3):
        h = cached_hull(n)
        for _ in range(samples):
            mu = rng.standard_normal(h.d)
            mu /= np.linalg.norm(mu)
            orth, det = rotation_residuals(h.apply(np.outer(mu, mu)))
            worst = max(worst, orth, det)
    checks.append(_check("extreme_membership_sphere",
                         worst <= 1e-8, f"worst SO(n) residual over unit sphere (n=2,3) = {worst:.3e}"))

    # extreme points reached by linear maximization, all supported n
    worst = 0.0
    for n in (2, 3, 4, 6):
        h = cached_hull(n)
        for _ in range(samples // 2):
            res = linear_max_over_hull(h, rng.standard_normal((n, n)))
            orth, det = rotation_residuals(res.rotation)
            worst = max(worst, orth, det)
    checks.append(_check("extreme_membership_maximizers",
                         worst <= 1e-8, f"worst SO(n) residual of maximizers (n=2,3,4,6) = {worst:.3e}"))

    # containment: feasible points have spectral norm <= 1
    worst = 0.0
    for n in (2, 3, 4):
        h = cached_hull(n)
        for _ in range(samples // 2):
            G = rng.standard_normal((h.d, h.d))
            Z = G @ G.T
            Z /= np.trace(Z)
            worst = max(worst, float(np.linalg.svd(h.apply(Z), compute_uv=False)[0]))
    checks.append(_check("hull_containment", worst <= 1.0 + 1e-8,
                         f"max singular value over feasible points = {worst:.12f}"))

    # n=2 image matches the rotation disc
    h2 = cached_hull(2)
    worst_shape, worst_radius = 0.0, 0.0
    for _ in range(samples):
        G = rng.standard_normal((2, 2))
        Z = G @ G.T
        Z /= np.trace(Z)
        R = h2.apply(Z)
        worst_shape = max(worst_shape, abs(R[0, 0] - R[1, 1]), abs(R[0, 1] + R[1, 0]))
        worst_radius = max(worst_radius, R[0, 0] ** 2 + R[1, 0] ** 2)
    checks.append(_check("so2_disc", worst_shape <= 1e-12 and worst_radius <= 1.0 + 1e-10,
                         f"max structure violation {worst_shape:.2e}, max radius^2 {worst_radius:.12f}"))

    # simplex projection properties
    ok = True
    detail = "feasibility + idempotence on random vectors"
    for _ in range(samples):
        v = rng.standard_normal(rng.integers(1, 12)) * 3
        x = project_simplex(v)
        if not (x.min() >= 0 and abs(x.sum() - 1) <= 1e-12
                and np.allclose(project_simplex(x), x, atol=1e-12)):
            ok = False
            detail = f"violated at v={v}"
            break
    checks.append(_check("simplex_projection", ok, detail))

    # spectrahedron projection: idempotent and non-expansive
    ok = True
    detail = "idempotence + non-expansiveness on random pairs"
    for _ in range(samples // 2):
        d = int(rng.integers(2, 9))
        T1 = rng.standard_normal((d, d)); T1 = 0.5 * (T1 + T1.T)
        T2 = rng.standard_normal((d, d)); T2 = 0.5 * (T2 + T2.T)
        P1, P2 = project_spectrahedron(T1), project_spectrahedron(T2)
        if np.linalg.norm(P1 - P2) > np.linalg.norm(T1 - T2) + 1e-12:
            ok, detail = False, "expansive pair found"
            break
        if np.linalg.norm(project_spectrahedron(P1) - P1) > 1e-10:
            ok, detail = False, "not idempotent"
            break
    checks.append(_check("spectrahedron_projection", ok, detail))

    # closed-form maximizer vs SVD-based orthogonal Procrustes
    worst = 0.0
    h3 = cached_hull(3)
    for _ in range(samples // 2):
        D = rng.standard_normal((3, 3))
        R = linear_max_over_hull(h3, D).rotation
        U, _, Vt = np.linalg.svd(D)
        ref = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
        worst = max(worst, float(np.linalg.norm(R - ref)))
    checks.append(_check("procrustes_oracle", worst <= 1e-6,
                         f"max Frobenius gap to SVD solution = {worst:.3e}"))

    # sign-flip hook: a flipped basis must fail membership with det near -1
    flipped = build_hull(3, _flip_sign=True)
    dets = []
    for _ in range(32):
        res = linear_max_over_hull(flipped, rng.standard_normal((3, 3)))
        dets.append(np.linalg.det(res.rotation))
    dets = np.array(dets)
    checks.append(_check("sign_flip_detected", np.all(np.abs(dets + 1.0) <= 1e-6),
                         f"flipped-basis determinants in [{dets.min():.6f}, {dets.max():.6f}]"))

    # n=4 battery runtime budget
    start = time.perf_counter()
    h4 = build_hull(4)
    worst = 0.0
    for _ in range(200):
        res = linear_max_over_hull(h4, rng.standard_normal((4, 4)))
        orth, det = rotation_residuals(res.rotation)
        worst = max(worst, orth, det)
        Z = rng.standard_normal((8, 8))
        Z = Z @ Z.T
        Z /= np.trace(Z)
        eig = sym_eig(h4.adjoint(h4.apply(Z)))
        if not np.all(np.isfinite(eig.values)):
            worst = np.inf
    elapsed = time.perf_counter() - start
    checks.append(_check("n4_battery_runtime", elapsed < 10.0 and worst <= 1e-8,
                         f"n=4 construction + 200 checks in {elapsed:.2f}s (residual {worst:.2e})"))

    return {"schema": VERIFY_SCHEMA, "all_passed": all(c["passed"] for c in checks), "checks": checks}
