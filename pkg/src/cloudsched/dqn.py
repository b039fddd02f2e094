"""A small self-contained deep-Q engine.

One agent owns an evaluation network, a delayed target copy, a FIFO replay
memory, and an epsilon-greedy policy. Networks are two-hidden-layer MLPs
(rectifier hidden units, linear outputs) implemented directly with numpy:
forward passes, backprop, and plain gradient descent, so training is
bit-deterministic for a fixed seed and gradients can be checked against
finite differences.

Updates follow the classic recipe: sample a minibatch, bootstrap targets
from the target network (plain reward on terminal transitions), clip the
TD error into [-1, 1], and descend the summed squared error. The target
network is refreshed by copying the evaluation weights every
``target_sync_period`` environment steps.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

INIT_SCALE = 0.1


class NumericalInstability(RuntimeError):
    """Weights went non-finite during training."""


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass
class AgentConfig:
    learning_rate: float = 0.1
    discount: float = 0.9
    epsilon_start: float = 0.9
    epsilon_decrement: float = 0.05
    epsilon_floor: float = 0.0
    minibatch_size: int = 32
    target_sync_period: int = 300
    train_period: int = 10
    memory_capacity: int = 500
    hidden_widths: tuple[int, int] = (10, 10)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if not 0 <= self.discount <= 1:
            raise ValueError("discount must be in [0, 1]")
        if not 0 <= self.epsilon_start <= 1:
            raise ValueError("epsilon_start must be in [0, 1]")


class QNetwork:
    """Fully-connected input -> hidden -> hidden -> action-values network."""

    def __init__(self, input_dim: int, action_dim: int, hidden: tuple[int, int] = (10, 10), rng=None):
        self.input_dim = input_dim
        self.action_dim = action_dim
        self.hidden = hidden
        rng = rng if rng is not None else np.random.default_rng(0)
        dims = [input_dim, hidden[0], hidden[1], action_dim]
        self.weights = [rng.uniform(-INIT_SCALE, INIT_SCALE, size=(dims[i], dims[i + 1])) for i in range(3)]
        self.biases = [rng.uniform(-INIT_SCALE, INIT_SCALE, size=dims[i + 1]) for i in range(3)]

    def forward(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.shape != (self.input_dim,):
            raise ValueError(f"expected {self.input_dim} features, got shape {x.shape}")
        return self.forward_batch(x[None, :])[0]

    def forward_batch(self, xs: np.ndarray) -> np.ndarray:
        a1 = np.maximum(xs @ self.weights[0] + self.biases[0], 0.0)
        a2 = np.maximum(a1 @ self.weights[1] + self.biases[1], 0.0)
        return a2 @ self.weights[2] + self.biases[2]

    def loss_and_grads(self, xs: np.ndarray, actions: np.ndarray, targets: np.ndarray, clip: bool = True):
        """Summed squared TD error and its parameter gradients.

        The per-sample error (target - Q(s, a)) is clipped into [-1, 1]
        before both the loss and the backward pass, which caps the gradient
        contribution of any one transition.
        """
        z1 = xs @ self.weights[0] + self.biases[0]
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ self.weights[1] + self.biases[1]
        a2 = np.maximum(z2, 0.0)
        q = a2 @ self.weights[2] + self.biases[2]

        rows = np.arange(len(actions))
        err = targets - q[rows, actions]
        if clip:
            err = np.clip(err, -1.0, 1.0)
        loss = float(np.sum(err**2))

        gq = np.zeros_like(q)
        gq[rows, actions] = -2.0 * err
        gw3 = a2.T @ gq
        gb3 = gq.sum(axis=0)
        ga2 = gq @ self.weights[2].T
        gz2 = ga2 * (z2 > 0)
        gw2 = a1.T @ gz2
        gb2 = gz2.sum(axis=0)
        ga1 = gz2 @ self.weights[1].T
        gz1 = ga1 * (z1 > 0)
        gw1 = xs.T @ gz1
        gb1 = gz1.sum(axis=0)
        return loss, [gw1, gw2, gw3], [gb1, gb2, gb3]

    def apply_grads(self, grads_w, grads_b, lr: float) -> None:
        for w, g in zip(self.weights, grads_w):
            w -= lr * g
        for b, g in zip(self.biases, grads_b):
            b -= lr * g

    def copy_weights_from(self, other: "QNetwork") -> None:
        self.weights = [w.copy() for w in other.weights]
        self.biases = [b.copy() for b in other.biases]

    def snapshot(self) -> dict:
        """JSON-serializable weight dump (row-major)."""
        return {
            "input_dim": self.input_dim,
            "action_dim": self.action_dim,
            "hidden": list(self.hidden),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_snapshot(cls, data: dict) -> "QNetwork":
        net = cls(data["input_dim"], data["action_dim"], tuple(data["hidden"]))
        net.weights = [np.array(w, dtype=float) for w in data["weights"]]
        net.biases = [np.array(b, dtype=float) for b in data["biases"]]
        return net


class ReplayMemory:
    """Bounded FIFO store of transitions."""

    def __init__(self, capacity: int = 500):
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)

    def push(self, tr: Transition) -> None:
        self._items.append(tr)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, idx: int) -> Transition:
        return self._items[idx]

    def sample(self, rng: np.random.Generator, size: int) -> list[Transition]:
        size = min(size, len(self._items))
        idx = rng.choice(len(self._items), size=size, replace=False)
        return [self._items[int(i)] for i in idx]


class DqnAgent:
    """Evaluation + target networks, replay memory, and the step cadence.

    ``on_step`` is called once per executed environment step; every
    ``train_period`` steps it runs one training update and decays epsilon,
    and every ``target_sync_period`` steps it copies the evaluation weights
    into the target network.
    """

    def __init__(self, input_dim: int, action_dim: int, cfg: AgentConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.net = QNetwork(input_dim, action_dim, cfg.hidden_widths, self.rng)
        self.target = QNetwork(input_dim, action_dim, cfg.hidden_widths, self.rng)
        self.target.copy_weights_from(self.net)
        self.memory = ReplayMemory(cfg.memory_capacity)
        self.epsilon = cfg.epsilon_start
        self.step_count = 0
        self.train_count = 0

    @property
    def action_dim(self) -> int:
        return self.net.action_dim

    def select_action(self, features: np.ndarray, epsilon: float | None = None) -> int:
        """Epsilon-greedy over the full action space; greedy ties go to the
        lowest index. ``epsilon`` overrides the agent's current value."""
        eps = self.epsilon if epsilon is None else epsilon
        if self.rng.random() < eps:
            return int(self.rng.integers(self.action_dim))
        return int(np.argmax(self.net.forward(features)))

    def store_transition(self, tr: Transition) -> None:
        self.memory.push(tr)

    def train_step(self) -> float:
        """One minibatch gradient-descent update on the evaluation network."""
        if len(self.memory) == 0:
            raise ValueError("cannot train on empty memory")
        batch = self.memory.sample(self.rng, self.cfg.minibatch_size)
        xs = np.stack([tr.state for tr in batch])
        actions = np.array([tr.action for tr in batch])
        rewards = np.array([tr.reward for tr in batch])
        terminal = np.array([tr.terminal for tr in batch])
        next_xs = np.stack([tr.next_state for tr in batch])
        next_q = self.target.forward_batch(next_xs).max(axis=1)
        targets = np.where(terminal, rewards, rewards + self.cfg.discount * next_q)
        loss, gw, gb = self.net.loss_and_grads(xs, actions, targets)
        self.net.apply_grads(gw, gb, self.cfg.learning_rate)
        self.train_count += 1
        if not all(np.isfinite(w).all() for w in self.net.weights):
            raise NumericalInstability("non-finite weights after update")
        return loss

    def sync_target(self) -> None:
        self.target.copy_weights_from(self.net)

    def decay_epsilon(self) -> None:
        self.epsilon = max(self.cfg.epsilon_floor, self.epsilon - self.cfg.epsilon_decrement)

    def on_step(self) -> float | None:
        """Advance the per-step cadence; returns the loss when a training
        update ran at this step."""
        self.step_count += 1
        loss = None
        if self.step_count % self.cfg.train_period == 0 and len(self.memory) > 0:
            loss = self.train_step()
            self.decay_epsilon()
        if self.step_count % self.cfg.target_sync_period == 0:
            self.sync_target()
        return loss


def q_update_reference(q_table: np.ndarray, s: int, a: int, r: float, s_next: int, eta: float, gamma: float) -> float:
    """Tabular one-step Q update used as an oracle in tests."""
    return float(q_table[s, a] + eta * (r + gamma * np.max(q_table[s_next]) - q_table[s, a]))
