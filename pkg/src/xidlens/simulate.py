"""Availability of a large gang-scheduled job on failure-prone nodes, and the
spare capacity needed to hold a target availability.

The job occupies ``job_nodes`` node slots and makes progress only while every
slot holds a healthy node. An occupied node fails after an exponential time
with mean ``node_mtbf_hours``; the failed node is out for the recovery time
and then rejoins the spare pool. When a node fails and a spare is free the
swap is immediate; otherwise the job stalls until a node comes back.

Two engines share these rules:

``tick``  (default) discrete time. Each tick every occupied node fails with
          probability ``1 - exp(-tick/mtbf)`` and recovery is rounded up to
          whole ticks; a tick counts as up only if no slot is empty at its end.
``event`` continuous time with exact event instants.

Replications draw failure candidates once and reuse them for every spare
count (common random numbers), so availability comparisons across spare
counts are not swamped by sampling noise.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigError

ENGINES = ("tick", "event")
RECOVERY_DISTS = ("constant", "exponential", "lognormal")


@dataclass(frozen=True)
class SimConfig:
    job_gpus: int = 608
    gpus_per_node: int = 4
    duration_hours: float = 720.0
    node_mtbf_hours: float = 292.0
    recovery_time_hours: float = 2.2
    recovery_dist: str = "constant"
    recovery_sigma: float = 1.0
    spare_gpus: int = 0
    seed: int = 2025
    replications: int = 100
    engine: str = "tick"
    tick_hours: float = 1.0

    def __post_init__(self):
        for name in ("job_gpus", "gpus_per_node", "duration_hours", "node_mtbf_hours",
                     "recovery_time_hours", "replications", "tick_hours"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.spare_gpus < 0:
            raise ConfigError("spare_gpus must be >= 0")
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}")
        if self.recovery_dist not in RECOVERY_DISTS:
            raise ConfigError(f"recovery_dist must be one of {RECOVERY_DISTS}")

    @property
    def job_nodes(self) -> int:
        return math.ceil(self.job_gpus / self.gpus_per_node)

    @property
    def spare_nodes(self) -> int:
        return math.ceil(self.spare_gpus / self.gpus_per_node)

    @property
    def n_ticks(self) -> int:
        return math.ceil(self.duration_hours / self.tick_hours - 1e-9)


@dataclass
class SimResult:
    achieved_availability: float
    total_stall_hours: float
    failure_count: float
    half_width: float
    seed: int
    spare_nodes: int
    replications: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _recovery(rng: np.random.Generator, cfg: SimConfig, size: int) -> np.ndarray:
    mean = cfg.recovery_time_hours
    if cfg.recovery_dist == "constant":
        return np.full(size, float(mean))
    if cfg.recovery_dist == "exponential":
        return rng.exponential(mean, size)
    mu = math.log(mean) - cfg.recovery_sigma ** 2 / 2
    return rng.lognormal(mu, cfg.recovery_sigma, size)


def _bernoulli_cells(rng: np.random.Generator, p: float, n_cells: int) -> np.ndarray:
    """Sorted indices of successes in ``n_cells`` Bernoulli(p) trials."""
    if p <= 0 or n_cells == 0:
        return np.empty(0, dtype=np.int64)
    parts = []
    pos = -1
    chunk = int(n_cells * p * 1.25) + 16
    while True:
        cells = pos + np.cumsum(rng.geometric(p, chunk), dtype=np.int64)
        parts.append(cells[cells < n_cells])
        if cells[-1] >= n_cells:
            break
        pos = int(cells[-1])
    return np.concatenate(parts)


def _candidates(rng: np.random.Generator, cfg: SimConfig):
    nodes = cfg.job_nodes
    mtbf = cfg.node_mtbf_hours
    if cfg.engine == "tick":
        p = 0.0 if math.isinf(mtbf) else -math.expm1(-cfg.tick_hours / mtbf)
        cells = _bernoulli_cells(rng, p, cfg.n_ticks * nodes)
        hours = _recovery(rng, cfg, len(cells))
        ticks = np.maximum(1, np.ceil(hours / cfg.tick_hours - 1e-9)).astype(np.int64)
        return cells, ticks
    if math.isinf(mtbf):
        return np.empty(0), np.empty(0, dtype=np.int64), np.empty(0)
    rate = nodes / mtbf
    expected = rate * cfg.duration_hours
    parts = []
    last = 0.0
    while True:
        gaps = rng.exponential(1.0 / rate, int(expected * 1.25) + 16)
        times = last + np.cumsum(gaps)
        parts.append(times[times < cfg.duration_hours])
        if times[-1] >= cfg.duration_hours:
            break
        last = float(times[-1])
    times = np.concatenate(parts)
    slots = rng.integers(0, nodes, len(times), dtype=np.int64)
    return times, slots, _recovery(rng, cfg, len(times))


class Simulator:
    """Replicated simulation of one configuration at varying spare counts."""

    def __init__(self, config: SimConfig, backend: str | None = None):
        self.config = config
        self.kernels = kernels.load(backend) if backend else kernels
        seeds = np.random.SeedSequence(config.seed).spawn(config.replications)
        self._draws = [_candidates(np.random.default_rng(s), config) for s in seeds]

    def replicate(self, spare_nodes: int) -> list[dict]:
        cfg = self.config
        out = []
        for draw in self._draws:
            if cfg.engine == "tick":
                up, fails = self.kernels.sim_tick(draw[0], draw[1], cfg.n_ticks, cfg.job_nodes, spare_nodes)
                avail = up / cfg.n_ticks
            else:
                uptime, fails = self.kernels.sim_event(draw[0], draw[1], draw[2], float(cfg.duration_hours),
                                                       cfg.job_nodes, spare_nodes)
                avail = uptime / cfg.duration_hours
            out.append({"availability": avail,
                        "stall_hours": (1.0 - avail) * cfg.duration_hours,
                        "failures": int(fails)})
        return out

    def run(self, spare_nodes: int | None = None) -> SimResult:
        spare_nodes = self.config.spare_nodes if spare_nodes is None else spare_nodes
        reps = self.replicate(spare_nodes)
        avail = np.array([r["availability"] for r in reps])
        half = 1.96 * avail.std(ddof=1) / math.sqrt(len(avail)) if len(avail) > 1 else 0.0
        return SimResult(
            achieved_availability=float(avail.mean()),
            total_stall_hours=float(np.mean([r["stall_hours"] for r in reps])),
            failure_count=float(np.mean([r["failures"] for r in reps])),
            half_width=float(half),
            seed=self.config.seed,
            spare_nodes=spare_nodes,
            replications=reps,
        )


def run(config: SimConfig, backend: str | None = None) -> SimResult:
    return Simulator(config, backend).run()


@dataclass
class Overprovision:
    target: float
    reachable: bool
    spare_nodes: int | None
    spare_gpus: int | None
    fraction: float | None
    availability: float | None
    seed: int
    recovery_time_hours: float
    job_gpus: int
    duration_hours: float
    curve: list[tuple[int, float]] = field(default_factory=list)

    def cost(self, per_gpu_hour: float) -> float | None:
        """Cost of the spare GPUs over the job duration at a flat hourly rate."""
        if self.spare_gpus is None:
            return None
        return self.spare_gpus * self.duration_hours * per_gpu_hour

    def to_dict(self) -> dict:
        return asdict(self)


def required_overprovision(config: SimConfig, target: float, backend: str | None = None,
                           max_spare_nodes: int | None = None) -> Overprovision:
    """Smallest spare-node count whose mean availability reaches ``target``.

    Spares are whole nodes, so the GPU count is a multiple of
    ``gpus_per_node``. Any ``spare_gpus`` in ``config`` is ignored. If even
    ``max_spare_nodes`` (default: the job's own node count) falls short, the
    result comes back with ``reachable=False``.
    """
    if not 0 < target < 1:
        raise ConfigError("target must be in (0, 1)")
    config = replace(config, spare_gpus=0)
    sim = Simulator(config, backend)
    limit = config.job_nodes if max_spare_nodes is None else max_spare_nodes
    curve = []
    for spares in range(limit + 1):
        avail = sim.run(spares).achieved_availability
        curve.append((spares, avail))
        if avail >= target:
            gpus = spares * config.gpus_per_node
            return Overprovision(target, True, spares, gpus, gpus / config.job_gpus, avail, config.seed,
                                 config.recovery_time_hours, config.job_gpus, config.duration_hours, curve)
    return Overprovision(target, False, None, None, None, curve[-1][1], config.seed,
                         config.recovery_time_hours, config.job_gpus, config.duration_hours, curve)


def sweep_recovery_time(config: SimConfig, times: Sequence[float], target: float,
                        backend: str | None = None) -> list[Overprovision]:
    if not times:
        raise ConfigError("need at least one recovery time")
    return [required_overprovision(replace(config, recovery_time_hours=t), target, backend) for t in times]
