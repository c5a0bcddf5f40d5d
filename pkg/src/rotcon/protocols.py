"""The three consensus protocols as synchronous round-based updates.

Each round is split into barrier-synchronized phases: every update inside
a phase reads only state committed by the previous phase, so per-agent
updates commute and may run in parallel (here: batched numpy).  Per-agent
aggregates accumulate in ascending neighbor order, which keeps results
bit-identical to a sequential per-agent implementation.

Protocols
---------
dual_decomp   gradient ascent on the consistency dual; every iterate is a
              rank-1 extreme point, i.e. a valid rotation.
dist_admm     neighbor-level ADMM with auxiliary per-agent copies; iterates
              live on the free spectrahedron, consensus point is exact.
semi_admm     fusion-node ADMM; agents talk only to the central collector.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .hull import HullOperator, cached_hull, rotation_residuals
from .problems import ProblemInstance
from .spectral import linear_max_over_hull, project_spectrahedron
from .topology import CommGraph, is_strongly_connected

PROTOCOLS = ("dual_decomp", "dist_admm", "semi_admm")
SCHEDULES = ("constant", "diminishing")

# Divergence heuristic: disagreement grew 10x over this many rounds while
# sitting above its starting level.
_DIVERGENCE_WINDOW = 50
_DIVERGENCE_FACTOR = 10.0


class ProtocolError(ValueError):
    """Raised for inconsistent protocol configuration."""


class DivergenceError(RuntimeError):
    """Raised when a run blows up; carries the partial trace for diagnosis."""

    def __init__(self, message: str, trace: list["TraceRecord"]):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class ProtocolConfig:
    """Step parameter, schedule and termination settings for one run."""

    protocol: str
    alpha: float
    alpha_schedule: str = "constant"  # "diminishing" = alpha/sqrt(t), dual_decomp only
    max_iters: int = 500
    stop_tolerance: float = 1e-6
    fusion_scaling: str = "derived"  # semi_admm collector step: "derived" (1/N) or "paper"
    count_self_loop: bool = True     # dist_admm: keep the Z^i = X^i self constraint

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ProtocolError(f"unknown protocol {self.protocol!r}, expected one of {PROTOCOLS}")
        if self.alpha <= 0:
            raise ProtocolError(f"alpha must be positive, got {self.alpha}")
        if self.max_iters < 1:
            raise ProtocolError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.alpha_schedule not in SCHEDULES:
            raise ProtocolError(f"unknown schedule {self.alpha_schedule!r}, expected one of {SCHEDULES}")
        if self.alpha_schedule == "diminishing" and self.protocol != "dual_decomp":
            raise ProtocolError("diminishing steps apply to dual_decomp only; "
                                "ADMM ties the dual step to the penalty weight")
        if self.fusion_scaling not in ("derived", "paper"):
            raise ProtocolError(f"fusion_scaling must be 'derived' or 'paper', got {self.fusion_scaling!r}")

    def step_size(self, t: int) -> float:
        """Step for 0-based round t (diminishing: alpha / sqrt(t+1))."""
        if self.alpha_schedule == "diminishing":
            return self.alpha / np.sqrt(t + 1.0)
        return self.alpha


@dataclass
class ProtocolState:
    """Shared per-agent state plus the static edge structure of a run.

    Z, X are (N, d, d) stacks; Y is (E, d, d) aligned with the edge arrays
    e_src, e_dst (edge k is (e_src[k], e_dst[k]), sorted lexicographically).
    adj_data caches the adjoint images of the local data matrices.
    """

    hull: HullOperator
    adj_data: np.ndarray
    Z: np.ndarray
    X: np.ndarray | None = None
    Y: np.ndarray | None = None
    e_src: np.ndarray | None = None
    e_dst: np.ndarray | None = None
    k_src: np.ndarray | None = None  # per-node count of edges it sources (constraint count of Z^i)
    k_dst: np.ndarray | None = None  # per-node count of edges targeting it (constraint count of X^j)

    @property
    def N(self) -> int:
        return self.Z.shape[0]

    def rotations(self) -> np.ndarray:
        """Current per-agent hull elements A(Z^i), shape (N, n, n)."""
        return np.einsum("ijkl,nkl->nij", self.hull.basis, self.Z)


@dataclass
class FusionState:
    """Collector variable and per-agent duals of the semi-distributed protocol."""

    Z0: np.ndarray
    Y: np.ndarray  # (N, d, d)


def _edge_arrays(graph: CommGraph, include_self: bool) -> tuple[np.ndarray, np.ndarray]:
    pairs = sorted((i, j) for (i, j) in graph.edges if include_self or i != j)
    src = np.array([p[0] for p in pairs], dtype=np.intp)
    dst = np.array([p[1] for p in pairs], dtype=np.intp)
    return src, dst


def init_state(problem: ProblemInstance, graph: CommGraph | None,
               config: ProtocolConfig) -> tuple[ProtocolState, FusionState | None]:
    """Feasible deterministic start: Z = X = Z0 = I/d (spectrahedron barycenter), Y = 0."""
    h = cached_hull(problem.n)
    d = h.d
    N = problem.N
    adj = np.array([h.adjoint(problem.D[i]) for i in range(N)])
    Z0 = np.eye(d) / d
    Z = np.broadcast_to(Z0, (N, d, d)).copy()
    state = ProtocolState(hull=h, adj_data=adj, Z=Z)
    fusion = None
    if config.protocol == "semi_admm":
        fusion = FusionState(Z0=Z0.copy(), Y=np.zeros((N, d, d)))
    else:
        if graph is None:
            raise ProtocolError(f"{config.protocol} needs a communication graph")
        include_self = config.protocol == "dist_admm" and config.count_self_loop
        src, dst = _edge_arrays(graph, include_self)
        state.e_src, state.e_dst = src, dst
        state.Y = np.zeros((len(src), d, d))
        state.k_src = np.bincount(src, minlength=N).astype(float)
        state.k_dst = np.bincount(dst, minlength=N).astype(float)
        if config.protocol == "dist_admm":
            state.X = Z.copy()
            if np.any(state.k_src == 0) or np.any(state.k_dst == 0):
                raise ProtocolError("dist_admm needs every node in at least one consistency "
                                    "constraint; re-enable count_self_loop or add edges")
    return state, fusion


def _batch_sym_eig(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched eigh with the sym_eig conventions (descending, sign-anchored)."""
    S = 0.5 * (S + S.transpose(0, 2, 1))
    if not np.all(np.isfinite(S)):
        raise FloatingPointError("non-finite aggregate (divergent step size?)")
    w, v = np.linalg.eigh(S)
    w = w[:, ::-1]
    v = v[:, :, ::-1]
    anchor = np.abs(v).argmax(axis=1)
    rows = np.arange(v.shape[0])[:, None]
    cols = np.arange(v.shape[2])[None, :]
    signs = np.sign(v[rows, anchor, cols])
    signs[signs == 0] = 1.0
    return w, v * signs[:, None, :]


def _batch_top_rank1(S: np.ndarray) -> np.ndarray:
    """Top-eigenvector outer products of a stack of symmetric matrices."""
    _, v = _batch_sym_eig(S)
    mu = v[:, :, 0]
    Z = mu[:, :, None] * mu[:, None, :]
    return 0.5 * (Z + Z.transpose(0, 2, 1))


def _batch_project_simplex(V: np.ndarray) -> np.ndarray:
    u = -np.sort(-V, axis=1)
    css = np.cumsum(u, axis=1)
    k = np.arange(1, V.shape[1] + 1)
    cond = u + (1.0 - css) / k > 0
    rho = V.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = (css[np.arange(V.shape[0]), rho] - 1.0) / (rho + 1.0)
    return np.maximum(V - tau[:, None], 0.0)


def _batch_project_spectra(T: np.ndarray) -> np.ndarray:
    w, v = _batch_sym_eig(T)
    wp = _batch_project_simplex(w)
    Z = np.einsum("nik,nk,njk->nij", v, wp, v)
    return 0.5 * (Z + Z.transpose(0, 2, 1))


def dual_decomp_round(state: ProtocolState, graph: CommGraph,
                      config: ProtocolConfig, t: int) -> ProtocolState:
    """One dual-decomposition round.

    Phase 1: each agent maximizes its dual-adjusted linear objective over
    the spectrahedron; the solution is the rank-1 top-eigenvector point, so
    every iterate maps to a rotation.  Phase 2: after exchanging the fresh
    primals, each edge dual moves against its consistency residual.
    """
    agg = state.adj_data.copy()
    np.subtract.at(agg, state.e_src, state.Y)
    z_new = _batch_top_rank1(agg)
    step = config.step_size(t)
    state.Y = state.Y - step * (z_new[state.e_dst] - z_new[state.e_src])
    state.Z = z_new
    return state


def dist_admm_round(state: ProtocolState, graph: CommGraph,
                    config: ProtocolConfig, t: int) -> ProtocolState:
    """One distributed-ADMM round (augmented-Lagrangian splitting).

    Phase 1 projects the per-agent aggregate M^i / (k_i alpha) onto the
    spectrahedron; phase 2, after exchanging fresh Z, does the same for the
    auxiliary copies; phase 3 updates edge duals with the constraint
    residual X^j - Z^i (the constraint being Z^i = X^j per edge).
    """
    a = config.alpha
    m_agg = state.adj_data.copy()
    np.subtract.at(m_agg, state.e_src, state.Y - a * state.X[state.e_dst])
    z_new = _batch_project_spectra(m_agg / (state.k_src * a)[:, None, None])

    n_agg = np.zeros_like(m_agg)
    np.add.at(n_agg, state.e_dst, state.Y + a * z_new[state.e_src])
    x_new = _batch_project_spectra(n_agg / (state.k_dst * a)[:, None, None])

    state.Y = state.Y - a * (x_new[state.e_dst] - z_new[state.e_src])
    state.Z, state.X = z_new, x_new
    return state


def semi_admm_round(state: ProtocolState, fusion: FusionState,
                    config: ProtocolConfig, t: int) -> ProtocolState:
    """One fusion-ADMM round over the star information pattern.

    The collector step projects the dual-shifted agent average; with
    fusion_scaling="paper" the 1/N average is replaced by the plain sum,
    matching the source text rather than the Lagrangian derivation.
    """
    a = config.alpha
    z_new = _batch_project_spectra((state.adj_data - fusion.Y) / a + fusion.Z0)
    total = (fusion.Y / a + z_new).sum(axis=0)
    if config.fusion_scaling == "derived":
        total = total / state.N
    fusion.Z0 = project_spectrahedron(total)
    fusion.Y = fusion.Y - a * (fusion.Z0 - z_new)
    state.Z = z_new
    return state


@dataclass(frozen=True)
class TraceRecord:
    """Per-round diagnostics."""

    t: int
    disagreement: float          # sum over non-self graph edges of ||R^i - R^j||_F
    optimality_gap: float        # centralized objective minus sum_i <D^i, R^i_t>
    membership_residual: float   # worst agent rotation residual
    wall_ms: float


@dataclass
class RunResult:
    trace: list[TraceRecord]
    consensus: np.ndarray        # snapped consensus rotation
    status: str                  # "converged" | "max_iters"
    centralized: np.ndarray      # oracle rotation for sum_i D^i
    centralized_objective: float
    consensus_objective: float


def _metrics(state: ProtocolState, problem: ProblemInstance,
             pair_src: np.ndarray, pair_dst: np.ndarray,
             centralized_obj: float) -> tuple[float, float, float, np.ndarray]:
    R = state.rotations()
    if len(pair_src):
        diffs = R[pair_src] - R[pair_dst]
        disagreement = float(np.sqrt((diffs * diffs).sum(axis=(1, 2))).sum())
    else:
        disagreement = 0.0
    objective = float(np.einsum("nij,nij->", problem.D, R))
    n = problem.n
    rtr = np.einsum("nji,njk->nik", R, R) - np.eye(n)
    orth = np.sqrt((rtr * rtr).sum(axis=(1, 2)))
    det = np.abs(np.linalg.det(R) - 1.0)
    membership = float(np.maximum(orth, det).max())
    return disagreement, centralized_obj - objective, membership, R


def run(problem: ProblemInstance, graph: CommGraph | None, config: ProtocolConfig) -> RunResult:
    """Iterate the configured protocol until consensus or the round budget.

    Stops when disagreement drops below stop_tolerance.  The reported
    consensus snaps the average of the agents' hull elements back to SO(n)
    via the closed-form linear maximization, which is exact once agents
    agree.  Raises DivergenceError when disagreement grows 10x over a
    50-round window above its starting level, or on non-finite aggregates.
    """
    h = cached_hull(problem.n)
    d_sum = problem.data_sum()
    central = linear_max_over_hull(h, d_sum)
    central_obj = float(np.sum(d_sum * central.rotation))

    if problem.N == 1:
        # nothing to agree on: solve the local problem in closed form
        R = central.rotation
        orth, det = rotation_residuals(R)
        record = TraceRecord(t=0, disagreement=0.0, optimality_gap=0.0,
                             membership_residual=max(orth, det), wall_ms=0.0)
        return RunResult(trace=[record], consensus=R, status="converged",
                         centralized=central.rotation, centralized_objective=central_obj,
                         consensus_objective=central_obj)

    if config.protocol in ("dual_decomp", "dist_admm"):
        if graph is None:
            raise ProtocolError(f"{config.protocol} needs a communication graph")
        if graph.N != problem.N:
            raise ProtocolError(f"graph has {graph.N} nodes but problem has {problem.N} agents")
        if not is_strongly_connected(graph):
            raise ProtocolError("communication graph must be strongly connected")

    state, fusion = init_state(problem, graph, config)

    if graph is not None:
        pair_src, pair_dst = _edge_arrays(graph, include_self=False)
    else:
        # star pattern: measure disagreement over all ordered agent pairs
        pair_src, pair_dst = _edge_arrays_complete(problem.N)

    trace: list[TraceRecord] = []
    status = "max_iters"
    for t in range(config.max_iters):
        start = time.perf_counter()
        if config.protocol == "dual_decomp":
            state = dual_decomp_round(state, graph, config, t)
        elif config.protocol == "dist_admm":
            state = dist_admm_round(state, graph, config, t)
        else:
            state = semi_admm_round(state, fusion, config, t)
        wall_ms = (time.perf_counter() - start) * 1e3

        disagreement, gap, membership, _ = _metrics(state, problem, pair_src, pair_dst, central_obj)
        if not np.isfinite(disagreement):
            raise DivergenceError(
                f"non-finite disagreement at round {t} (alpha={config.alpha}); "
                "step size likely divergent", trace)
        trace.append(TraceRecord(t=t, disagreement=disagreement, optimality_gap=gap,
                                 membership_residual=membership, wall_ms=wall_ms))
        if (t >= _DIVERGENCE_WINDOW
                and disagreement > _DIVERGENCE_FACTOR * trace[t - _DIVERGENCE_WINDOW].disagreement
                and disagreement > trace[0].disagreement):
            raise DivergenceError(
                f"disagreement grew {_DIVERGENCE_FACTOR}x over {_DIVERGENCE_WINDOW} rounds "
                f"(now {disagreement:.3e} at round {t}, alpha={config.alpha})", trace)
        if disagreement < config.stop_tolerance:
            status = "converged"
            break

    r_avg = state.rotations().mean(axis=0)
    consensus = linear_max_over_hull(h, r_avg).rotation
    consensus_obj = float(np.sum(d_sum * consensus))
    return RunResult(trace=trace, consensus=consensus, status=status,
                     centralized=central.rotation, centralized_objective=central_obj,
                     consensus_objective=consensus_obj)


def _edge_arrays_complete(N: int) -> tuple[np.ndarray, np.ndarray]:
    src, dst = np.nonzero(~np.eye(N, dtype=bool))
    return src.astype(np.intp), dst.astype(np.intp)
