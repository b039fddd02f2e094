"""Experiment configuration: presets, JSON loading, and builders.

A config names exactly one workload source (a scenario preset, an explicit
scenario, or a trace file), a platform (preset or explicit), pricing, the
scheduler knobs, an approach, seeds, and an output directory. Every field
has a default so ``--print-config`` can dump a complete starting point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .domain import PlatformConfig, PowerParams, Server, VmType, validate_platform
from .dqn import AgentConfig
from .energy import DEFAULT_TOUP, EnergyPricingConfig
from .hierarchy import SchedulerConfig
from .workload import ScenarioConfig, generate_workload, parse_trace

APPROACHES = ("h2o", "hdrl", "rr")

# servers, clusters; desk exists so experiments finish in CI time.
PLATFORM_PRESETS = {
    "desk": (60, 2),
    "small": (600, 2),
    "medium": (1080, 3),
    "large": (12500, 5),
}

SCENARIO_TIERS = ("low", "medium", "high")

# Demand tiers for simulation scenarios: mean CPU demand is a fixed share
# of one server; the tier sets the squared coefficient of variation, so the
# spread scales with the mean (same for memory).
_TIER_CPU_CV2 = {"low": 0.25, "medium": 1.5, "high": 3.25}
_TIER_MEM_CV2 = {"low": 0.125, "medium": 0.75, "high": 1.6}
_MEAN_DEMAND = 0.15
_TASKS_PER_SERVER = 33

# Desk pricing: the arrival window (hours 0-8) is peak-priced so that
# deadline-loose work is steered into the cheap midday band, and the
# evening is priced highest of all, where an always-on fleet keeps paying
# static power for nothing.
DESK_TOUP = tuple([0.40] * 9 + [0.10] * 8 + [0.55] * 7)


class ConfigError(ValueError):
    def __init__(self, message: str, exit_code: int = 1):
        self.exit_code = exit_code
        super().__init__(message)


def build_platform(spec: str | dict) -> PlatformConfig:
    """Build a platform from a preset name or an explicit description."""
    if isinstance(spec, str):
        if spec not in PLATFORM_PRESETS:
            raise ConfigError(f"unknown platform preset {spec!r}")
        n_servers, n_clusters = PLATFORM_PRESETS[spec]
        return _preset_platform(n_servers, n_clusters)
    n_servers = int(spec.get("servers", 60))
    n_clusters = int(spec.get("clusters", 2))
    return _preset_platform(
        n_servers,
        n_clusters,
        cpu_capacity=float(spec.get("cpu_capacity", 1.0)),
        mem_capacity=float(spec.get("mem_capacity", 1.0)),
        horizon_hours=int(spec.get("horizon_hours", 24)),
        bandwidth=float(spec.get("bandwidth", 1000.0)),
    )


def _preset_platform(
    n_servers: int,
    n_clusters: int,
    cpu_capacity: float = 1.0,
    mem_capacity: float = 1.0,
    horizon_hours: int = 24,
    bandwidth: float = 1000.0,
) -> PlatformConfig:
    """Deterministic platform: contiguous equal clusters, mildly
    heterogeneous power curves, and a VM flavor supported by every third
    server so support sets actually constrain placement."""
    vm_types = (VmType(0, 1.0, 1.0), VmType(1, 1.0, 0.5), VmType(2, 0.5, 1.0))
    per_cluster = n_servers // n_clusters
    servers = []
    for i in range(n_servers):
        cluster = min(i // per_cluster, n_clusters - 1)
        support = frozenset({0, 1}) if i % 6 == 0 else frozenset({0, 1, 2})
        power = PowerParams(
            static_watts=250.0 + 15.0 * (i % 3),
            a=120.0 + 10.0 * (i % 5),
            b=300.0 + 20.0 * (i % 4),
            ur_opt=0.7,
        )
        servers.append(Server(i, cluster, cpu_capacity, mem_capacity, support, power))
    clusters = {}
    for s in servers:
        clusters.setdefault(s.cluster_id, []).append(s.id)
    plat = PlatformConfig(
        servers=tuple(servers),
        clusters={c: tuple(v) for c, v in clusters.items()},
        vm_types=vm_types,
        bandwidth_default=bandwidth,
        horizon_hours=horizon_hours,
    )
    check = validate_platform(plat)
    if not check:
        raise ConfigError(f"preset platform invalid: {check.error} ({check.detail})")
    return plat


def simulation_scenario(tier: str, n_servers: int, cpu_capacity: float = 1.0) -> ScenarioConfig:
    """Simulation workload preset for a platform size.

    1/3 of the tasks carry tight deadline slack within the uniform range;
    arrivals cover an eight-hour window.
    """
    if tier not in SCENARIO_TIERS:
        raise ConfigError(f"unknown scenario tier {tier!r}")
    n = _TASKS_PER_SERVER * n_servers
    mean = _MEAN_DEMAND * cpu_capacity
    return ScenarioConfig(
        target_task_count=n,
        target_total_cpu=mean * n,
        target_cpu_variance=_TIER_CPU_CV2[tier] * mean**2,
        target_mem_variance=_TIER_MEM_CV2[tier] * mean**2,
        span_minutes=480,
        job_size_range=(1, 7),
        edge_probability=0.3,
        deadline_slack_range=(5, 720),
        duration_range=(30, 90),
        priority_range=(0, 59),
        target_total_mem=mean * n,
        vm_type_ids=(0, 1, 2),
    )


def scenario_from_spec(spec: str | dict, platform: PlatformConfig) -> ScenarioConfig | str:
    """Resolve the workload source: tier preset, explicit dict, or a trace
    file path (returned as-is for the caller to parse)."""
    if isinstance(spec, str):
        cap = platform.servers[0].cpu_capacity
        return simulation_scenario(spec, platform.n_servers, cap)
    if "trace" in spec:
        return str(spec["trace"])
    kwargs = dict(spec)
    for key in ("job_size_range", "deadline_slack_range", "duration_range", "priority_range"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    if "vm_type_ids" in kwargs:
        kwargs["vm_type_ids"] = tuple(kwargs["vm_type_ids"])
    try:
        return ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad scenario spec: {exc}") from None


@dataclass
class ExperimentConfig:
    """Fully resolved experiment: ready to run."""

    platform_spec: str | dict = "desk"
    scenario_spec: str | dict = "medium"
    pricing: EnergyPricingConfig = field(default_factory=EnergyPricingConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    approach: str = "h2o"
    seeds: tuple[int, ...] = (1,)
    output_dir: str = "runs"
    render_figures: bool = True

    def resolved_dict(self) -> dict:
        """Canonical JSON-ready form (used for digests and --print-config)."""
        agent = self.scheduler.agent
        return {
            "platform": self.platform_spec,
            "scenario": self.scenario_spec,
            "pricing": {"tou_rates": list(self.pricing.tou_rates), "rtp_slope": self.pricing.rtp_slope},
            "scheduler": {
                "hybrid_enabled": self.scheduler.hybrid_enabled,
                "max_recycles": self.scheduler.max_recycles,
                "server_candidate_cap": self.scheduler.server_candidate_cap,
                "price_reward_threshold": self.scheduler.price_reward_threshold,
                "redraw_cap": self.scheduler.redraw_cap,
                "redraw_epsilon": self.scheduler.redraw_epsilon,
                "layer_train_periods": list(self.scheduler.layer_train_periods),
                "agent": {
                    "learning_rate": agent.learning_rate,
                    "discount": agent.discount,
                    "epsilon_start": agent.epsilon_start,
                    "epsilon_decrement": agent.epsilon_decrement,
                    "epsilon_floor": agent.epsilon_floor,
                    "minibatch_size": agent.minibatch_size,
                    "target_sync_period": agent.target_sync_period,
                    "memory_capacity": agent.memory_capacity,
                    "hidden_widths": list(agent.hidden_widths),
                },
            },
            "approach": self.approach,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "render_figures": self.render_figures,
        }

    @property
    def scale_label(self) -> str:
        return self.platform_spec if isinstance(self.platform_spec, str) else "custom"

    @property
    def scenario_label(self) -> str:
        if isinstance(self.scenario_spec, str):
            return self.scenario_spec
        if "trace" in self.scenario_spec:
            return "trace"
        return "custom"


def default_config_dict() -> dict:
    return config_from_dict({}).resolved_dict()


def config_from_dict(data: dict) -> ExperimentConfig:
    """Validate and materialize a config dict (e.g. parsed JSON)."""
    known = {
        "platform", "scenario", "pricing", "scheduler", "approach", "seeds",
        "output_dir", "render_figures",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    approach = data.get("approach", "h2o")
    if approach not in APPROACHES:
        raise ConfigError(f"unknown approach {approach!r} (choose from {APPROACHES})", exit_code=2)
    seeds = tuple(int(s) for s in data.get("seeds", (1,)))
    if not seeds:
        raise ConfigError("seeds must be non-empty")

    pricing_data = data.get("pricing", {})
    desk_default = data.get("platform", "desk") == "desk"
    tou = pricing_data.get("tou_rates", list(DESK_TOUP) if desk_default else list(DEFAULT_TOUP))
    pricing = EnergyPricingConfig(tuple(float(r) for r in tou), float(pricing_data.get("rtp_slope", 0.001)))

    sched_data = dict(data.get("scheduler", {}))
    agent_data = dict(sched_data.pop("agent", {}))
    if desk_default:
        # Desk-tuned defaults (only when the config does not say otherwise):
        # residual exploration keeps re-polling effective once epsilon has
        # decayed, and extra recycles give bursty tasks more retries.
        agent_data.setdefault("epsilon_floor", 0.05)
        sched_data.setdefault("max_recycles", 6)
    if "hidden_widths" in agent_data:
        agent_data["hidden_widths"] = tuple(agent_data["hidden_widths"])
    try:
        agent = AgentConfig(**agent_data)
    except TypeError as exc:
        raise ConfigError(f"bad agent config: {exc}") from None
    if "layer_train_periods" in sched_data:
        sched_data["layer_train_periods"] = tuple(sched_data["layer_train_periods"])
    try:
        scheduler = SchedulerConfig(agent=agent, **sched_data)
    except TypeError as exc:
        raise ConfigError(f"bad scheduler config: {exc}") from None

    scenario_spec = data.get("scenario", "medium")
    if isinstance(scenario_spec, dict) and "trace" in scenario_spec and len(scenario_spec) > 1:
        raise ConfigError("scenario must name exactly one workload source")

    return ExperimentConfig(
        platform_spec=data.get("platform", "desk"),
        scenario_spec=scenario_spec,
        pricing=pricing,
        scheduler=scheduler,
        approach=approach,
        seeds=seeds,
        output_dir=str(data.get("output_dir", "runs")),
        render_figures=bool(data.get("render_figures", True)),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return config_from_dict(data)


def build_workload(cfg: ExperimentConfig, platform: PlatformConfig, seed: int):
    """Materialize the workload for one run (shared across approaches)."""
    scenario = scenario_from_spec(cfg.scenario_spec, platform)
    if isinstance(scenario, str):
        known = {v.id for v in platform.vm_types}
        return parse_trace(Path(scenario).read_text(encoding="utf-8"), known_vm_types=known)
    return generate_workload(scenario, seed)
