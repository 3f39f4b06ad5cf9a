"""Closed-loop scenario engine: true world, per-agent filters, controllers.

One step runs, in order: (1) controllers compute agent velocities from the
start-of-step estimate snapshot and the measured distance errors; (2) the
true positions integrate that velocity field over dt with a classical
4th-order scheme, sub-stepped adaptively because the squared-distance
gradient flow is stiff at wide spreads; (3) agents exchange their average
world-frame velocities over the step and convert neighbor velocities to the
body frame; (4) each filter runs one predict/update cycle against
measurements synthesized at the new positions; (5) owners' updated estimates
are what the next step's controllers read.  All randomness flows through one
seeded generator, so a (config, seed) pair fixes every byte of the output.

Agents hold their headings in these scenarios (zero angular rate); the
estimator and group layers support nonzero heading rates independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .controller import MismatchConfig, _scatter_matrices
from .estimator import EstimatorState, NoiseConfig, SingularUpdateError, initialize, predict, update
from .lie_group import AlgebraElement, GroupElement, rotation
from .network import (
    DesiredDistances,
    Graph,
    _edge_arrays,
    distance_errors,
    edge_offsets,
    sorted_neighbors,
)

__all__ = [
    "DivergenceError",
    "MetricsSeries",
    "OutcomeThresholds",
    "ScenarioConfig",
    "WorldState",
    "detect_outcome",
    "init_world",
    "run",
    "scenario_issue1",
    "scenario_issue2",
    "scenario_issue3",
    "scenario_nominal",
    "step",
]

VARIANTS = ("ideal", "estimated", "algorithm1")
SHARING = ("per-agent", "per-edge-owner")

OUTCOME_LABELS = (
    "converged",
    "stuck_wrong_shape",
    "translating_drift",
    "shape_ok_estimates_stale",
    "undetermined",
)


class DivergenceError(RuntimeError):
    """True positions left the representable range.

    The estimate-driven control laws follow frozen direction estimates
    between measurement updates; for unlucky estimate draws on widely
    spread agents that flow has no Lyapunov function and can escape to
    infinity within one sampling interval.
    """


@dataclass(frozen=True)
class OutcomeThresholds:
    """Decision thresholds for `detect_outcome`, applied over the final window."""

    dist_tol: float = 0.5        # max | |r_ij| - d_k | for the shape to count as formed
    est_tol: float = 0.1         # max estimate error for localization to count as solved
    speed_tol: float = 1e-4      # below this every agent counts as stopped
    centroid_tol: float = 1e-3   # above this the centroid counts as drifting
    error_floor: float = 0.1     # |e_k| above this counts as a genuinely wrong shape
    window_frac: float = 0.1     # fraction of the run evaluated, from the end

    def __post_init__(self):
        if not 0.0 < self.window_frac <= 1.0:
            raise ValueError(f"window_frac must be in (0, 1], got {self.window_frac}")


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Everything a run needs; immutable so `replace` derives variants."""

    graph: Graph
    distances: DesiredDistances
    variant: str = "algorithm1"
    sharing: str = "per-edge-owner"
    mismatch: MismatchConfig | None = None
    dt: float = 0.01
    duration: float = 100.0
    seed: int = 0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    measurement_noise: bool = False
    offset_bound: float = 2.0
    initial_var: float | None = None
    initial_positions: np.ndarray | None = None
    spawn_box: float = 20.0
    min_separation: float = 1.0
    initial_estimates: dict | None = None
    estimator_enabled: bool = True
    thresholds: OutcomeThresholds = field(default_factory=OutcomeThresholds)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.sharing not in SHARING:
            raise ValueError(f"unknown sharing mode {self.sharing!r}")
        if self.variant == "estimated" and self.sharing != "per-agent":
            raise ValueError("the estimated variant uses per-agent estimates")
        if self.variant == "algorithm1" and self.sharing != "per-edge-owner":
            raise ValueError("algorithm1 shares one estimate per edge owner")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.duration <= 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if self.distances.values.size != self.graph.edge_count:
            raise ValueError("one desired distance per edge required")
        if self.variant == "algorithm1":
            if self.mismatch is None:
                raise ValueError("algorithm1 needs a MismatchConfig")
            if self.mismatch.values.size != self.graph.edge_count:
                raise ValueError("one mismatch per edge required")
        if self.offset_bound < 0:
            raise ValueError("offset_bound must be non-negative")
        if self.spawn_box <= 0 or self.min_separation < 0:
            raise ValueError("spawn_box must be positive and min_separation non-negative")
        for i in range(self.graph.agent_count):
            if not sorted_neighbors(self.graph, i):
                raise ValueError(f"agent {i} has no neighbors; every filter needs at least one")
        if self.initial_positions is not None:
            pos = np.array(self.initial_positions, dtype=float).reshape(-1)
            if pos.size != 2 * self.graph.agent_count:
                raise ValueError("initial_positions must give one planar point per agent")
            pos = pos.reshape(-1, 2)
            pos.setflags(write=False)
            object.__setattr__(self, "initial_positions", pos)
        if self.initial_estimates is not None:
            est = {}
            for (i, j), vec in self.initial_estimates.items():
                v = np.array(vec, dtype=float).reshape(-1)
                if v.size != 2:
                    raise ValueError(f"estimate for pair ({i}, {j}) must be planar")
                if j not in sorted_neighbors(self.graph, i):
                    raise ValueError(f"pair ({i}, {j}) is not an edge of the graph")
                est[(int(i), int(j))] = v
            for i in range(self.graph.agent_count):
                for j in sorted_neighbors(self.graph, i):
                    if (i, j) not in est:
                        raise ValueError(f"missing initial estimate for pair ({i}, {j})")
            object.__setattr__(self, "initial_estimates", est)


@dataclass(eq=False)
class WorldState:
    """True positions and headings, one filter per agent, elapsed time."""

    r: np.ndarray                      # (agents, 2) true positions
    headings: np.ndarray               # (agents,)
    filters: tuple[EstimatorState, ...]
    t: float
    events: tuple[str, ...] = ()


@dataclass(eq=False)
class MetricsSeries:
    """Per-step records extracted by `run`; one row per simulated step."""

    t: np.ndarray
    distances: np.ndarray       # (steps, edges) inter-agent distances
    est_errors: np.ndarray      # (steps, edges) worst estimate error per edge
    dist_errors: np.ndarray     # (steps, edges) squared-distance errors e_k
    centroid_speed: np.ndarray  # (steps,)
    angular_rate: np.ndarray    # (steps,) least-squares rigid rotation rate
    max_speed: np.ndarray       # (steps,) fastest agent
    edge_labels: tuple[str, ...]

    @property
    def steps(self) -> int:
        return self.t.size


@lru_cache(maxsize=None)
def _neighbor_arrays(graph: Graph) -> tuple:
    return tuple(np.array(sorted_neighbors(graph, i), dtype=int) for i in range(graph.agent_count))


@lru_cache(maxsize=None)
def _block_of(graph: Graph) -> dict:
    """(agent, neighbor) -> block index inside the agent's filter state."""
    out = {}
    for i in range(graph.agent_count):
        for b, j in enumerate(sorted_neighbors(graph, i)):
            out[(i, j)] = b
    return out


def edge_labels(graph: Graph) -> tuple[str, ...]:
    """1-based edge labels like '12' for metric column names."""
    return tuple(f"{t + 1}{h + 1}" for t, h in graph.edges)


def _estimate_of(world: WorldState, graph: Graph, i: int, j: int) -> np.ndarray:
    """Agent i's current estimate of r_i - r_j (its filter tracks r_j - r_i)."""
    block = _block_of(graph)[(i, j)]
    return -world.filters[i].mean.offset(block)


def _control_field(world: WorldState, config: ScenarioConfig):
    """Velocity field r -> u with the estimate snapshot frozen; the distance
    errors are re-measured wherever the integrator evaluates it.

    The closures repeat the arithmetic of the public control laws without
    their per-call validation; a regression test holds them bit-identical.
    """
    graph = config.graph
    tails, heads = _edge_arrays(graph)
    at, ah = _scatter_matrices(graph)
    dv = config.distances.values

    if config.variant == "ideal":
        def field(rf):
            r2 = rf.reshape(-1, 2)
            z1 = r2[tails] - r2[heads]
            e = (z1 ** 2).sum(axis=1) - dv ** 2
            terms = z1 * e[:, None]
            return (ah @ terms - at @ terms).ravel()
        return field

    if config.variant == "estimated":
        est_tail = np.array([_estimate_of(world, graph, t, h) for t, h in graph.edges])
        est_head = np.array([_estimate_of(world, graph, h, t) for t, h in graph.edges])

        def field(rf):
            r2 = rf.reshape(-1, 2)
            z1 = r2[tails] - r2[heads]
            e = (z1 ** 2).sum(axis=1) - dv ** 2
            return -(at @ (est_tail * e[:, None]) + ah @ (est_head * e[:, None])).ravel()
        return field

    est = np.array([_estimate_of(world, graph, t, h) for t, h in graph.edges])
    av = config.mismatch.values

    def field(rf):
        r2 = rf.reshape(-1, 2)
        z1 = r2[tails] - r2[heads]
        e = (z1 ** 2).sum(axis=1) - dv ** 2
        return (ah @ (est * (e + av)[:, None]) - at @ (est * (e - av)[:, None])).ravel()
    return field


def _stiffness(world: WorldState, config: ScenarioConfig) -> float:
    """Upper estimate of the control field's Jacobian scale, used to pick the
    sub-step count that keeps the 4th-order scheme inside its stability region."""
    graph = config.graph
    tails, heads = _edge_arrays(graph)
    z1 = edge_offsets(graph, world.r)
    zn = np.linalg.norm(z1, axis=1)
    e = np.abs(distance_errors(z1, config.distances))
    if config.variant == "ideal":
        dirs = zn
    elif config.variant == "estimated":
        dirs = np.array([
            max(np.linalg.norm(_estimate_of(world, graph, t, h)),
                np.linalg.norm(_estimate_of(world, graph, h, t)))
            for t, h in graph.edges
        ])
    else:
        dirs = np.array([np.linalg.norm(_estimate_of(world, graph, t, h)) for t, h in graph.edges])
    a = np.abs(config.mismatch.values) if config.mismatch is not None else np.zeros(graph.edge_count)
    per_edge = 2.0 * dirs * zn + e + a
    per_agent = np.zeros(graph.agent_count)
    np.add.at(per_agent, tails, per_edge)
    np.add.at(per_agent, heads, per_edge)
    return float(per_agent.max())


def _integrate(u_of, r_flat: np.ndarray, dt: float, substeps: int) -> np.ndarray:
    r = r_flat
    h = dt / substeps
    for _ in range(substeps):
        k1 = u_of(r)
        k2 = u_of(r + 0.5 * h * k1)
        k3 = u_of(r + 0.5 * h * k2)
        k4 = u_of(r + h * k3)
        r = r + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return r


def init_world(config: ScenarioConfig, rng: np.random.Generator | None = None) -> WorldState:
    """Spawn true positions and seed one filter per agent.

    Positions come from the config when given, otherwise uniform draws in a
    centered spawn box, re-drawn until every agent pair is at least
    min_separation apart.  Filter means come from explicit initial
    estimates when given, otherwise from per-coordinate uniform offsets of
    the truth within offset_bound.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    graph = config.graph
    o = graph.agent_count
    if config.initial_positions is not None:
        r = np.array(config.initial_positions, dtype=float)
    else:
        half = 0.5 * config.spawn_box
        while True:
            r = rng.uniform(-half, half, size=(o, 2))
            diffs = r[:, None, :] - r[None, :, :]
            dist = np.sqrt((diffs ** 2).sum(-1))
            if o < 2 or dist[np.triu_indices(o, k=1)].min() >= config.min_separation:
                break
    headings = np.zeros(o)

    filters = []
    nbrs = _neighbor_arrays(graph)
    for i in range(o):
        truth = GroupElement((r[nbrs[i]] - r[i]).ravel(), headings[i])
        if config.initial_estimates is not None:
            p_hat = np.concatenate([-config.initial_estimates[(i, j)] for j in nbrs[i]])
            var = config.initial_var if config.initial_var is not None else config.offset_bound ** 2 / 3.0
            cov = np.diag(np.concatenate([
                np.full(2 * truth.n, var),
                [config.noise.meas_heading_var],
            ]))
            filters.append(EstimatorState(GroupElement(p_hat, headings[i]), cov))
        else:
            filters.append(initialize(truth, config.offset_bound, rng,
                                      initial_var=config.initial_var, noise=config.noise))
    return WorldState(r=r, headings=headings, filters=tuple(filters), t=0.0)


def step(world: WorldState, config: ScenarioConfig,
         rng: np.random.Generator | None = None) -> WorldState:
    """Advance the closed loop by one sampling interval (see module docstring
    for the phase order).  rng is only consulted when measurement noise is on."""
    graph = config.graph
    dt = config.dt
    o = graph.agent_count
    noise = config.noise

    u_of = _control_field(world, config)
    substeps = min(10000, max(1, math.ceil(dt * _stiffness(world, config) / 2.0)))
    with np.errstate(over="ignore", invalid="ignore"):
        r_new = _integrate(u_of, world.r.ravel(), dt, substeps).reshape(o, 2)
    if not np.all(np.isfinite(r_new)) or np.abs(r_new).max() > 1e9:
        raise DivergenceError(
            f"positions diverged during the step ending at t={world.t + dt:.6g}"
        )
    v_avg = (r_new - world.r) / dt

    if not config.estimator_enabled:
        return WorldState(r=r_new, headings=world.headings.copy(),
                          filters=world.filters, t=world.t + dt, events=world.events)

    if config.measurement_noise and rng is None:
        raise ValueError("measurement noise requires a generator")

    nbrs = _neighbor_arrays(graph)
    events = list(world.events)
    filters = []
    for i in range(o):
        st = world.filters[i]
        rel_world = v_avg[nbrs[i]] - v_avg[i]
        xi = AlgebraElement((rel_world @ rotation(st.mean.theta)).ravel(), 0.0)
        st = predict(st, xi, dt, noise)
        diffs = r_new[nbrs[i]] - r_new[i]
        y = np.append(0.5 * (diffs ** 2).sum(axis=1), world.headings[i])
        if config.measurement_noise:
            y[:-1] += rng.normal(0.0, np.sqrt(noise.meas_distance_var), size=y.size - 1)
            y[-1] += rng.normal(0.0, np.sqrt(noise.meas_heading_var))
        try:
            st = update(st, y, noise)
        except SingularUpdateError as exc:
            events.append(f"t={world.t + dt:.6g} agent={i + 1} update skipped: {exc}")
        filters.append(st)

    return WorldState(r=r_new, headings=world.headings.copy(),
                      filters=tuple(filters), t=world.t + dt, events=tuple(events))


def _edge_estimate_errors(world: WorldState, graph: Graph) -> np.ndarray:
    """Worst estimate error per edge over both endpoints' filters."""
    out = np.zeros(graph.edge_count)
    for k, (t, h) in enumerate(graph.edges):
        true_th = world.r[t] - world.r[h]
        out[k] = max(np.linalg.norm(_estimate_of(world, graph, t, h) - true_th),
                     np.linalg.norm(_estimate_of(world, graph, h, t) + true_th))
    return out


def run(config: ScenarioConfig) -> MetricsSeries:
    """Simulate duration/dt steps and record per-step metrics."""
    steps = int(round(config.duration / config.dt))
    if steps < 1:
        raise ValueError("duration shorter than one step")
    rng = np.random.default_rng(config.seed)
    world = init_world(config, rng)
    graph = config.graph
    m = graph.edge_count

    t = np.empty(steps)
    distances = np.empty((steps, m))
    est_errors = np.empty((steps, m))
    dist_errors_arr = np.empty((steps, m))
    centroid_speed = np.empty(steps)
    angular_rate = np.empty(steps)
    max_speed = np.empty(steps)

    for k in range(steps):
        prev_r = world.r
        world = step(world, config, rng)
        v = (world.r - prev_r) / config.dt
        z1 = edge_offsets(graph, world.r)
        t[k] = (k + 1) * config.dt
        distances[k] = np.linalg.norm(z1, axis=1)
        dist_errors_arr[k] = distance_errors(z1, config.distances)
        est_errors[k] = _edge_estimate_errors(world, graph)
        centroid_speed[k] = np.linalg.norm(v.mean(axis=0))
        max_speed[k] = np.linalg.norm(v, axis=1).max()
        centered = world.r - world.r.mean(axis=0)
        v_rel = v - v.mean(axis=0)
        denom = (centered ** 2).sum()
        spin = (centered[:, 0] * v_rel[:, 1] - centered[:, 1] * v_rel[:, 0]).sum()
        angular_rate[k] = spin / denom if denom > 0 else 0.0

    return MetricsSeries(t=t, distances=distances, est_errors=est_errors,
                         dist_errors=dist_errors_arr, centroid_speed=centroid_speed,
                         angular_rate=angular_rate, max_speed=max_speed,
                         edge_labels=edge_labels(graph))


def detect_outcome(series: MetricsSeries, thresholds: OutcomeThresholds | None = None) -> str:
    """Classify the final window of a run into one of OUTCOME_LABELS.

    Checked in order: converged (shape and estimates both good);
    shape_ok_estimates_stale (shape good, estimates not); stuck_wrong_shape
    (everyone stopped with a sustained wrong shape); translating_drift
    (sustained centroid motion with a sustained wrong shape); otherwise
    undetermined.
    """
    th = thresholds if thresholds is not None else OutcomeThresholds()
    steps = series.steps
    if steps * th.window_frac < 1.0:
        raise ValueError(f"series of {steps} steps is shorter than the evaluation window")
    w = max(1, int(round(steps * th.window_frac)))
    sl = slice(steps - w, steps)

    # desired distances are recoverable from the stored metrics
    d = np.sqrt(series.distances[-1] ** 2 - series.dist_errors[-1])
    dist_dev = np.abs(series.distances[sl] - d).max()
    est_err = series.est_errors[sl].max()
    wrong_shape_sustained = np.abs(series.dist_errors[sl]).max(axis=1).min() > th.error_floor
    stopped = series.max_speed[sl].max() < th.speed_tol
    drifting = series.centroid_speed[sl].min() > th.centroid_tol

    if dist_dev < th.dist_tol and est_err < th.est_tol:
        return "converged"
    if dist_dev < th.dist_tol:
        return "shape_ok_estimates_stale"
    if stopped and wrong_shape_sustained:
        return "stuck_wrong_shape"
    if drifting and wrong_shape_sustained:
        return "translating_drift"
    return "undetermined"


def _triangle_graph() -> Graph:
    return Graph.from_one_based(3, [(1, 2), (2, 3), (1, 3)])


def _equilateral(side: float, angle: float = 0.0, center=(0.0, 0.0)) -> np.ndarray:
    base = np.array([
        [0.0, 0.0],
        [side, 0.0],
        [0.5 * side, 0.5 * np.sqrt(3.0) * side],
    ])
    base = base - base.mean(axis=0)
    return base @ rotation(angle).T + np.asarray(center, dtype=float)


def scenario_nominal() -> ScenarioConfig:
    """Three agents, complete graph, target distance 10, mismatch 1.

    Random spread in a 20 x 20 box and estimator offsets within +-2; the
    shared-estimate mismatch law should settle into a rotating equilateral
    formation with converged estimates.
    """
    graph = _triangle_graph()
    return ScenarioConfig(
        graph=graph,
        distances=DesiredDistances.uniform(3, 10.0),
        variant="algorithm1",
        sharing="per-edge-owner",
        mismatch=MismatchConfig.uniform(3, 1.0),
        dt=0.01,
        duration=100.0,
        seed=0,
        offset_bound=2.0,
        spawn_box=20.0,
        min_separation=1.0,
    )


def scenario_issue1() -> ScenarioConfig:
    """Wrong estimates whose control contributions cancel: stuck wrong shape.

    True positions form an equilateral triangle of side 8 (every squared
    error is -36) and each agent's two estimates are antiparallel with the
    true magnitudes, so the two error-weighted terms cancel exactly: nobody
    moves, measurements match the estimated ranges, and the filters hold
    the bad directions forever.  Without relative motion nothing excites
    the unobservable tangential directions, so the wrong shape persists.
    """
    graph = _triangle_graph()
    r = _equilateral(8.0)
    directions = {0: 0.3, 1: 1.7, 2: 2.9}  # one ray per agent, otherwise arbitrary
    estimates = {}
    for i in range(3):
        u = np.array([np.cos(directions[i]), np.sin(directions[i])])
        js = sorted_neighbors(graph, i)
        for sign, j in zip((1.0, -1.0), js):
            estimates[(i, j)] = sign * np.linalg.norm(r[i] - r[j]) * u
    return ScenarioConfig(
        graph=graph,
        distances=DesiredDistances.uniform(3, 10.0),
        variant="estimated",
        sharing="per-agent",
        dt=0.01,
        duration=10.0,
        seed=11,
        initial_positions=r,
        initial_estimates=estimates,
        initial_var=4.0 / 3.0,
        offset_bound=0.0,
    )


def scenario_issue2() -> ScenarioConfig:
    """Fixed wrong estimates driving a pure translation.

    Same wrong equilateral shape as issue 1, but each agent's two estimate
    directions are chosen so its error-weighted sum equals the common
    velocity (c, c): the whole formation translates at constant speed and
    the distance errors never change.  The estimator is off, as in issue 1;
    relative measurements would (eventually) perturb this kernel motion.
    """
    graph = _triangle_graph()
    side = 8.0
    r = _equilateral(side)
    c = 0.1
    e = side ** 2 - 10.0 ** 2
    target = np.array([c, c])
    # unit pair with u1 + u2 = -target / (side * e), split along the normal
    w = -target / (side * e)
    t = np.sqrt(1.0 - 0.25 * float(w @ w))
    n_hat = np.array([-w[1], w[0]])
    n_hat /= np.linalg.norm(n_hat)
    u_pair = (0.5 * w + t * n_hat, 0.5 * w - t * n_hat)
    estimates = {}
    for i in range(3):
        for u, j in zip(u_pair, sorted_neighbors(graph, i)):
            estimates[(i, j)] = side * u
    return ScenarioConfig(
        graph=graph,
        distances=DesiredDistances.uniform(3, 10.0),
        variant="estimated",
        sharing="per-agent",
        dt=0.01,
        duration=8.0,
        seed=22,
        initial_positions=r,
        initial_estimates=estimates,
        initial_var=4.0 / 3.0,
        offset_bound=0.0,
        estimator_enabled=False,
    )


def scenario_issue3() -> ScenarioConfig:
    """Distances converge before the estimates do.

    Agents start close to the target shape with loosely initialized
    estimators; the shape snaps into place almost immediately, motion stops,
    and the unexcited filters keep their stale tangential errors.
    """
    graph = _triangle_graph()
    return ScenarioConfig(
        graph=graph,
        distances=DesiredDistances.uniform(3, 10.0),
        variant="estimated",
        sharing="per-agent",
        dt=0.01,
        duration=12.0,
        seed=33,
        initial_positions=_equilateral(10.2, angle=0.4, center=(1.0, 2.0)),
        offset_bound=2.0,
    )
