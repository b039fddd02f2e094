"""The four-layer hybrid scheduler.

Each admitted job flows through four decision layers, each owned by its own
deep-Q agent: pick a cluster for the whole job, then per task pick a server
inside that cluster, a start hour, and a start minute within the hour. A
decision is valid when the implied placement fits capacity every minute,
respects dependency-adjusted earliest starts, and ends by the task's soft
deadline.

When an agent emits an invalid action the hybrid fallback substitutes the
next valid action in round-robin order (only when at least two valid
options remain). Without the fallback - or when it is unavailable - the
agent is re-polled a bounded number of times; epsilon-greedy exploration
usually unsticks it. A task whose attempt still fails is recycled (retried
from the server layer) up to a configurable number of times before being
rejected; a job with any rejected task is rolled back entirely.

Rewards are computed from the post-placement state: utilization-band
shaping on the cluster/server/minute layers and a price-seeking penalty on
the hour layer, with the minute layer's reward amplified 2.5x when the
start minute lands within one minute of the task's priority value.
Transitions are completed lazily: a layer's stored experience pairs its
observation with the next observation that same layer sees.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from .domain import Job, PlatformConfig, Server, Task, topological_order, validate_job, validate_platform
from .dqn import AgentConfig, DqnAgent, Transition
from .energy import EnergyPricingConfig, unit_price
from .platform import Admission, AllocationLedger, Decision, admission_check, earliest_start

TASK_BLOCK_LEN = 5
LAYER_TRAIN_PERIODS = (20, 5, 10, 10)  # layers 1..4
TRACE_HEADER = "step,layer,action,reward,reject,fallback_used,loss"
INVALID_ACTION_REWARD = -2.0


class MissingPriorDecision(RuntimeError):
    """An observation was requested before the preceding layer decided."""


@dataclass(frozen=True)
class LayerSpec:
    """Action space and cadence of one decision layer."""

    layer: int
    action_dim: int
    obs_dim: int
    train_period: int


@dataclass
class SchedulerConfig:
    """Knobs of the hierarchical scheduler.

    hybrid_enabled=False disables the round-robin fallback, leaving only
    bounded re-polling of the agent (the non-hybrid baseline).
    """

    hybrid_enabled: bool = True
    max_recycles: int = 3
    server_candidate_cap: int = 64
    price_reward_threshold: float = 0.3
    redraw_cap: int = 300
    redraw_epsilon: float = 0.5
    agent: AgentConfig = field(default_factory=AgentConfig)
    layer_train_periods: tuple[int, int, int, int] = LAYER_TRAIN_PERIODS


@dataclass
class RoundRobinCursor:
    """Rotating per-layer index used by the hybrid fallback."""

    action_dim: int
    position: int = 0


def round_robin_fallback(cursor: RoundRobinCursor, validity: np.ndarray) -> int | None:
    """First valid action scanning circularly from cursor+1; advances the
    cursor past the returned action. None when every action is invalid."""
    n = cursor.action_dim
    for off in range(1, n + 1):
        idx = (cursor.position + off) % n
        if validity[idx]:
            cursor.position = idx
            return idx
    return None


@dataclass(frozen=True)
class RewardContext:
    """Inputs of the per-layer reward tables."""

    ur: float
    unit_price: float = 0.0
    scheduled_minute: int | None = None  # minute of hour
    priority: int | None = None


def layer_reward(layer: int, ctx: RewardContext, price_threshold: float = 0.3) -> float:
    """Reward tables for the four layers.

    Layers 1/2/4 shape utilization into preferred bands; layer 3 pays the
    (negative) unit price, quadrupled once the price crosses the threshold.
    The layer-4 value is multiplied by 2.5 when the scheduled minute falls
    within one minute of the task's priority.
    """
    ur = ctx.ur
    if layer == 1:
        if 0.0 <= ur < 0.45:
            return 1.0
        if ur > 0.50:
            return -2.0
        return -1.0
    if layer == 2:
        if ur > 1.0:
            return -2.0
        if 0.20 <= ur < 0.80:
            return 1.0
        return -1.0
    if layer == 3:
        if ur > 1.0:
            return -2.0
        if ctx.unit_price < price_threshold:
            return -ctx.unit_price
        return -4.0 * ctx.unit_price
    if layer == 4:
        if ur > 1.0:
            reward = -2.0
        elif ur > 0.80 or ur < 0.20:
            reward = -1.0
        elif 0.60 < ur <= 0.80:
            reward = 2.0
        else:
            reward = 1.0
        if (
            ctx.scheduled_minute is not None
            and ctx.priority is not None
            and ctx.priority - 1 <= ctx.scheduled_minute <= ctx.priority + 1
        ):
            reward *= 2.5
        return reward
    raise ValueError(f"no layer {layer}")


@dataclass(frozen=True)
class LayerPrior:
    """Decisions already made for the current task."""

    cluster_id: int | None = None
    server: Server | None = None
    hour: int | None = None
    candidates: tuple[Server, ...] = ()


def task_feature_block(task: Task, horizon_minutes: int) -> np.ndarray:
    slack = max(0, task.deadline_minute - task.arrival_minute - task.duration_minutes + 1)
    return np.array(
        [
            task.total_cpu,
            task.total_mem,
            slack / horizon_minutes,
            task.priority / 60.0,
            task.duration_minutes / 60.0,
        ]
    )


def job_feature_block(job: Job, horizon_minutes: int) -> np.ndarray:
    blocks = [task_feature_block(t, horizon_minutes) for t in job.tasks]
    arr = np.stack(blocks)
    return np.array(
        [arr[:, 0].sum(), arr[:, 1].sum(), arr[:, 2].min(), arr[:, 3].mean(), arr[:, 4].sum()]
    )


def _server_hour_power_kw(ledger: AllocationLedger, server: Server) -> np.ndarray:
    """Mean wattage of a server per hour under the turn-off rule, in kW."""
    i = ledger.server_index[server.id]
    p = server.power_params
    ur = ledger.cpu[i] / server.cpu_capacity
    dyn = np.where(ur < p.ur_opt, ur * p.a, p.ur_opt * p.a + (ur - p.ur_opt) ** 2 * p.b)
    watts = p.static_watts + dyn
    on = np.repeat(ledger.busy_minutes[i] > 0, 60)
    watts = np.where(on, watts, 0.0)
    return watts.reshape(ledger.platform.horizon_hours, 60).mean(axis=1) / 1000.0


def encode_observation(
    layer: int,
    ledger: AllocationLedger,
    pricing: EnergyPricingConfig,
    feature_block: np.ndarray,
    prior: LayerPrior,
    action_dim: int,
) -> np.ndarray:
    """Fixed-length observation: the task (or job) block followed by the
    layer's environment block. Pure in the ledger state."""
    plat = ledger.platform
    horizon = plat.horizon_minutes
    if layer == 1:
        env = []
        for cid in plat.cluster_ids:
            rows = [ledger.server_index[sid] for sid in plat.clusters[cid]]
            cap_minutes = sum(plat.server_by_id(sid).cpu_capacity for sid in plat.clusters[cid]) * horizon
            env.append(ledger.cpu_hour[rows].sum() / cap_minutes)
        return np.concatenate([feature_block, np.array(env)])
    if layer == 2:
        if prior.cluster_id is None:
            raise MissingPriorDecision("layer 2 needs a cluster")
        env = np.zeros(3 * action_dim)
        for k, s in enumerate(prior.candidates[:action_dim]):
            i = ledger.server_index[s.id]
            cpu_ur = ledger.cpu_hour[i].sum() / (s.cpu_capacity * horizon)
            mem_ur = ledger.mem[i].mean() / s.mem_capacity
            env[3 * k : 3 * k + 3] = (1.0 - cpu_ur, 1.0 - mem_ur, cpu_ur)
        return np.concatenate([feature_block, env])
    if layer == 3:
        if prior.server is None:
            raise MissingPriorDecision("layer 3 needs a server")
        s = prior.server
        i = ledger.server_index[s.id]
        hour_ur = ledger.cpu_hour[i] / (s.cpu_capacity * 60.0)
        power_kw = _server_hour_power_kw(ledger, s)
        prices = np.array(
            [unit_price(pricing, h % 24, float(power_kw[h])) for h in range(plat.horizon_hours)]
        )
        env = np.empty(2 * plat.horizon_hours)
        env[0::2] = prices
        env[1::2] = hour_ur
        return np.concatenate([feature_block, env])
    if layer == 4:
        if prior.server is None or prior.hour is None:
            raise MissingPriorDecision("layer 4 needs a server and hour")
        i = ledger.server_index[prior.server.id]
        sl = slice(prior.hour * 60, (prior.hour + 1) * 60)
        env = ledger.cpu[i, sl] / prior.server.cpu_capacity
        return np.concatenate([feature_block, env])
    raise ValueError(f"no layer {layer}")


@dataclass
class TraceRow:
    """One executed layer decision in the training trace."""

    step: int
    layer: int
    action: int
    reward: float | None = None
    reject: bool = False
    fallback_used: bool = False
    loss: float | None = None


def trace_to_csv(rows: list[TraceRow]) -> str:
    out = io.StringIO()
    out.write(TRACE_HEADER + "\n")
    for r in rows:
        loss = "" if r.loss is None else repr(r.loss)
        reward = "" if r.reward is None else repr(r.reward)
        out.write(f"{r.step},{r.layer},{r.action},{reward},{int(r.reject)},{int(r.fallback_used)},{loss}\n")
    return out.getvalue()


@dataclass
class _Pending:
    """A layer transition waiting for that layer's next observation."""

    obs: np.ndarray
    action: int
    row: TraceRow
    reward: float | None = None


class _TaskFailure(Exception):
    def __init__(self, layer: int, ddl_blocked: bool):
        self.layer = layer
        self.ddl_blocked = ddl_blocked
        super().__init__(f"layer {layer} failure (ddl_blocked={ddl_blocked})")


class HierarchicalScheduler:
    """One online scheduling pass: four agents, cursors, ledger, trace."""

    def __init__(
        self,
        platform: PlatformConfig,
        pricing: EnergyPricingConfig,
        cfg: SchedulerConfig,
        seed: int = 0,
    ):
        self.platform = platform
        self.pricing = pricing
        self.cfg = cfg
        self.ledger = AllocationLedger(platform)
        self.trace: list[TraceRow] = []
        self._step = 0

        m = len(platform.cluster_ids)
        max_cluster = max(len(v) for v in platform.clusters.values())
        k = min(cfg.server_candidate_cap, max_cluster)
        h = platform.horizon_hours
        dims = {1: m, 2: k, 3: h, 4: 60}
        obs_dims = {1: TASK_BLOCK_LEN + m, 2: TASK_BLOCK_LEN + 3 * k, 3: TASK_BLOCK_LEN + 2 * h, 4: TASK_BLOCK_LEN + 60}
        self.layers = {
            i: LayerSpec(i, dims[i], obs_dims[i], cfg.layer_train_periods[i - 1]) for i in (1, 2, 3, 4)
        }
        children = np.random.SeedSequence(seed).spawn(4)
        self.agents = {
            i: DqnAgent(
                obs_dims[i],
                dims[i],
                replace(cfg.agent, train_period=cfg.layer_train_periods[i - 1], seed=int(children[i - 1].generate_state(1)[0])),
            )
            for i in (1, 2, 3, 4)
        }
        self.cursors = {i: RoundRobinCursor(dims[i]) for i in (1, 2, 3, 4)}
        self._pending: dict[int, _Pending | None] = {1: None, 2: None, 3: None, 4: None}
        self._cluster_rows = {
            cid: [self.ledger.server_index[sid] for sid in platform.clusters[cid]] for cid in platform.cluster_ids
        }
        self._cluster_cap_minutes = {
            cid: sum(platform.server_by_id(sid).cpu_capacity for sid in platform.clusters[cid])
            * platform.horizon_minutes
            for cid in platform.cluster_ids
        }

    # -- shared plumbing ---------------------------------------------------

    def _observe(self, layer: int, feature_block: np.ndarray, prior: LayerPrior) -> np.ndarray:
        """Encode the layer observation; completing the layer's previous
        pending transition with it (which may trigger a training step)."""
        obs = encode_observation(layer, self.ledger, self.pricing, feature_block, prior, self.layers[layer].action_dim)
        pending = self._pending[layer]
        if pending is not None:
            if pending.reward is None:
                raise RuntimeError(f"layer {layer} pending transition has no reward")
            agent = self.agents[layer]
            agent.store_transition(Transition(pending.obs, pending.action, pending.reward, obs, False))
            loss = agent.on_step()
            if loss is not None:
                pending.row.loss = loss
            self._pending[layer] = None
        return obs

    def _execute(self, layer: int, obs: np.ndarray, validity: np.ndarray) -> tuple[int, bool, TraceRow]:
        """Epsilon-greedy pick plus the invalid-action machinery.

        Returns (action, valid, row). With the hybrid fallback enabled and
        at least two valid options, an invalid pick is replaced round-robin;
        otherwise the agent is re-polled up to the redraw cap.
        """
        agent = self.agents[layer]
        option = int(validity.sum())
        action = agent.select_action(obs)
        reject = not bool(validity[action])
        fallback_used = False
        if reject:
            if self.cfg.hybrid_enabled and option > 1:
                substitute = round_robin_fallback(self.cursors[layer], validity)
                assert substitute is not None  # option > 1 guarantees one
                action = substitute
                fallback_used = True
            elif option >= 1:
                # Re-poll the policy with an exploration floor so a greedy
                # lock on an invalid action cannot stall the layer forever.
                redraw_eps = max(agent.epsilon, self.cfg.redraw_epsilon)
                for _ in range(self.cfg.redraw_cap):
                    action = agent.select_action(obs, epsilon=redraw_eps)
                    if validity[action]:
                        break
        valid = bool(validity[action])
        self._step += 1
        row = TraceRow(self._step, layer, action, reject=reject, fallback_used=fallback_used)
        self.trace.append(row)
        return action, valid, row

    def _finish_step(self, layer: int, obs: np.ndarray, action: int, row: TraceRow, reward: float) -> None:
        row.reward = reward
        self._pending[layer] = _Pending(obs, action, row, reward)

    def flush_pending(self) -> None:
        """Store leftover transitions as terminal (end of the online pass)."""
        for layer, pending in self._pending.items():
            if pending is None:
                continue
            agent = self.agents[layer]
            agent.store_transition(
                Transition(pending.obs, pending.action, pending.reward, np.zeros_like(pending.obs), True)
            )
            self._pending[layer] = None

    # -- per-layer helpers ---------------------------------------------------

    def cluster_mean_ur(self, cluster_id: int) -> float:
        rows = self._cluster_rows[cluster_id]
        return float(self.ledger.cpu_hour[rows].sum() / self._cluster_cap_minutes[cluster_id])

    def _cluster_can_host_job(self, cluster_id: int, job: Job) -> bool:
        members = [self.platform.server_by_id(sid) for sid in self.platform.clusters[cluster_id]]
        for t in job.tasks:
            if not any(
                t.vm_type_ids <= s.supported_vm_types
                and t.total_cpu <= s.cpu_capacity
                and t.total_mem <= s.mem_capacity
                for s in members
            ):
                return False
        return True

    def candidate_servers(self, cluster_id: int, task: Task) -> tuple[Server, ...]:
        """Supporting servers of the cluster, medium-utilization first."""
        k = self.layers[2].action_dim
        members = [self.platform.server_by_id(sid) for sid in self.platform.clusters[cluster_id]]
        supporting = [s for s in members if task.vm_type_ids <= s.supported_vm_types]
        horizon = self.platform.horizon_minutes
        def sort_key(s: Server):
            i = self.ledger.server_index[s.id]
            ur = self.ledger.cpu_hour[i].sum() / (s.cpu_capacity * horizon)
            return (abs(ur - 0.5), s.id)
        supporting.sort(key=sort_key)
        return tuple(supporting[:k])

    def _server_mean_ur(self, server: Server) -> float:
        i = self.ledger.server_index[server.id]
        return float(self.ledger.cpu_hour[i].sum() / (server.cpu_capacity * self.platform.horizon_minutes))

    def _server_hour_ur(self, server: Server, hour: int) -> float:
        i = self.ledger.server_index[server.id]
        return float(self.ledger.cpu_hour[i, hour] / (server.cpu_capacity * 60.0))

    # -- scheduling ----------------------------------------------------------

    def _attempt_task(self, job: Job, task: Task, cluster_id: int) -> Decision:
        """One pass through layers 2-4; raises _TaskFailure on a dead end."""
        plat = self.platform
        block = task_feature_block(task, plat.horizon_minutes)
        candidates = self.candidate_servers(cluster_id, task)
        k_dim = self.layers[2].action_dim
        starts: list[np.ndarray | None] = []
        validity2 = np.zeros(k_dim, dtype=bool)
        earliest: list[int] = []
        for idx, s in enumerate(candidates):
            e = earliest_start(self.ledger, job, task, plat, s.id)
            fs = self.ledger.feasible_starts(s, task, e, task.deadline_minute)
            earliest.append(e)
            starts.append(fs)
            validity2[idx] = bool(fs.any())

        prior2 = LayerPrior(cluster_id=cluster_id, candidates=candidates)
        obs2 = self._observe(2, block, prior2)
        action2, valid2, row2 = self._execute(2, obs2, validity2)
        if not valid2:
            ddl_blocked = not validity2.any() and any(
                self.ledger.feasible_starts(s, task, earliest[i], None).any() for i, s in enumerate(candidates)
            )
            self._finish_step(2, obs2, action2, row2, INVALID_ACTION_REWARD)
            raise _TaskFailure(2, ddl_blocked)
        server = candidates[action2]
        fs = starts[action2]

        prior3 = LayerPrior(cluster_id=cluster_id, server=server)
        obs3 = self._observe(3, block, prior3)
        validity3 = fs.reshape(plat.horizon_hours, 60).any(axis=1)
        action3, valid3, row3 = self._execute(3, obs3, validity3)
        if not valid3:
            self._finish_step(2, obs2, action2, row2, self._band_reward(2, server))
            self._finish_step(3, obs3, action3, row3, INVALID_ACTION_REWARD)
            raise _TaskFailure(3, False)
        hour = action3

        prior4 = LayerPrior(cluster_id=cluster_id, server=server, hour=hour)
        obs4 = self._observe(4, block, prior4)
        validity4 = fs[hour * 60 : (hour + 1) * 60]
        action4, valid4, row4 = self._execute(4, obs4, validity4)
        if not valid4:
            self._finish_step(2, obs2, action2, row2, self._band_reward(2, server))
            self._finish_step(3, obs3, action3, row3, self._hour_reward(server, hour))
            self._finish_step(4, obs4, action4, row4, INVALID_ACTION_REWARD)
            raise _TaskFailure(4, False)

        start = hour * 60 + action4
        decision = Decision(cluster_id, server.id, hour, start, start + task.duration_minutes - 1)
        prior_outcome = self.ledger.outcomes.get(task.key)
        self.ledger.allocate(
            task,
            decision,
            recycles=prior_outcome.recycles if prior_outcome else 0,
            ddl_event=prior_outcome.ddl_event if prior_outcome else False,
        )

        self._finish_step(2, obs2, action2, row2, self._band_reward(2, server))
        self._finish_step(3, obs3, action3, row3, self._hour_reward(server, hour))
        ur4 = self.ledger.utilization(server, start)
        reward4 = layer_reward(
            4,
            RewardContext(ur=ur4, scheduled_minute=action4, priority=task.priority),
            self.cfg.price_reward_threshold,
        )
        self._finish_step(4, obs4, action4, row4, reward4)
        return decision

    def _band_reward(self, layer: int, server: Server) -> float:
        return layer_reward(layer, RewardContext(ur=self._server_mean_ur(server)), self.cfg.price_reward_threshold)

    def _hour_reward(self, server: Server, hour: int) -> float:
        power_kw = float(_server_hour_power_kw(self.ledger, server)[hour])
        price = unit_price(self.pricing, hour % 24, power_kw)
        return layer_reward(
            3,
            RewardContext(ur=self._server_hour_ur(server, hour), unit_price=price),
            self.cfg.price_reward_threshold,
        )

    def schedule_task(self, job: Job, task: Task, cluster_id: int):
        """Layers 2-4 with soft-deadline recycling; returns the Decision or
        records a rejection and returns None."""
        recycles = 0
        ddl_event = False
        while True:
            try:
                return self._attempt_task(job, task, cluster_id)
            except _TaskFailure as failure:
                ddl_event = ddl_event or failure.ddl_blocked
                if recycles < self.cfg.max_recycles:
                    recycles += 1
                    self.ledger.record_rejection(task, "recycling", recycles=recycles, ddl_event=ddl_event)
                    continue
                self.ledger.record_rejection(
                    task, f"layer{failure.layer}_no_valid_action", recycles=recycles, ddl_event=ddl_event
                )
                return None

    def schedule_job(self, job: Job) -> bool:
        """Layer 1 picks one cluster for the whole job, then tasks run
        through layers 2-4 in dependency order. All-or-nothing: any task
        rejection rolls the whole job back."""
        plat = self.platform
        block = job_feature_block(job, plat.horizon_minutes)
        validity1 = np.array([self._cluster_can_host_job(cid, job) for cid in plat.cluster_ids])
        obs1 = self._observe(1, block, LayerPrior())
        action1, valid1, row1 = self._execute(1, obs1, validity1)
        if not valid1:
            self._finish_step(1, obs1, action1, row1, INVALID_ACTION_REWARD)
            for t in job.tasks:
                self.ledger.record_rejection(t, "no_feasible_cluster")
            return False
        cluster_id = plat.cluster_ids[action1]

        ok = True
        for task in topological_order(job):
            if self.schedule_task(job, task, cluster_id) is None:
                ok = False
                break

        # Tentative-placement reward for the cluster pick, before rollback.
        reward1 = layer_reward(
            1, RewardContext(ur=self.cluster_mean_ur(cluster_id)), self.cfg.price_reward_threshold
        )
        self._finish_step(1, obs1, action1, row1, reward1)

        if not ok:
            for t in job.tasks:
                outcome = self.ledger.outcomes.get(t.key)
                if outcome is not None and outcome.decision is not None:
                    self.ledger.deallocate(t)
                    self.ledger.record_rejection(
                        t, "job_cascade", recycles=outcome.recycles, ddl_event=outcome.ddl_event
                    )
                elif outcome is None:
                    self.ledger.record_rejection(t, "job_cascade")
        return ok

    def run(self, jobs: list[Job]) -> tuple[AllocationLedger, list[TraceRow]]:
        """Process jobs in arrival order in a single online pass."""
        admitted = []
        for job in sorted(jobs, key=lambda j: (j.arrival_minute, j.job_id)):
            if any(admission_check(self.platform, t) is Admission.REJECT_UNFULFILLABLE for t in job.tasks):
                for t in job.tasks:
                    self.ledger.record_rejection(t, "admission_unfulfillable")
                continue
            admitted.append(job)
        for job in admitted:
            self.schedule_job(job)
        self.flush_pending()
        return self.ledger, self.trace


def run_online(
    jobs: list[Job],
    platform: PlatformConfig,
    cfg: SchedulerConfig,
    pricing: EnergyPricingConfig | None = None,
    seed: int = 0,
) -> tuple[AllocationLedger, list[TraceRow]]:
    """Validate inputs, build a scheduler, and run the online pass."""
    check = validate_platform(platform)
    if not check:
        raise ValueError(f"invalid platform: {check.error} ({check.detail})")
    for job in jobs:
        check = validate_job(job)
        if not check:
            raise ValueError(f"invalid job {job.job_id}: {check.error} ({check.detail})")
    pricing = pricing if pricing is not None else EnergyPricingConfig()
    scheduler = HierarchicalScheduler(platform, pricing, cfg, seed)
    return scheduler.run(jobs)
