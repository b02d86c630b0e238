"""Group-relative policy optimization on a softmax policy over candidate answers.

The policy assigns one logit per candidate and samples with
``softmax(theta / T)``. Each step draws a group of rollouts from the frozen
sampling policy, normalizes their rewards within the group, and takes one or
more gradient steps on the clipped surrogate minus a KL penalty towards a
reference policy. Gradients are closed form.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import UsageError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GrpoConfig:
    G: int = 5
    eps_stab: float = 1e-4
    alpha: float = 0.2
    beta: float = 1e-2
    lr: float = 1e-2
    steps: int = 500
    seed: int = 0
    temperature: float = 1.0
    eval_temperature: float = 0.6
    max_grad_norm: float | None = 1.0
    inner_updates: int = 1

    def __post_init__(self) -> None:
        if self.G < 2:
            raise UsageError("group size G must be >= 2")
        if not 0 < self.alpha < 1:
            raise UsageError("alpha must lie in (0, 1)")
        if self.beta < 0:
            raise UsageError("beta must be >= 0")
        if self.eps_stab <= 0:
            raise UsageError("eps_stab must be > 0")
        if self.temperature <= 0 or self.eval_temperature <= 0:
            raise UsageError("temperatures must be > 0")
        if self.steps < 0 or self.inner_updates < 1:
            raise UsageError("steps must be >= 0 and inner_updates >= 1")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise UsageError("max_grad_norm must be > 0")


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass
class PolicyState:
    theta: np.ndarray
    theta_old: np.ndarray
    theta_ref: np.ndarray

    @classmethod
    def uniform(cls, n: int) -> "PolicyState":
        if n < 1:
            raise UsageError("policy needs at least one candidate")
        z = np.zeros(n)
        return cls(z.copy(), z.copy(), z.copy())

    def __post_init__(self) -> None:
        shapes = {np.shape(self.theta), np.shape(self.theta_old), np.shape(self.theta_ref)}
        if len(shapes) != 1:
            raise UsageError("theta, theta_old and theta_ref must share one index space")

    def probs(self, temperature: float = 1.0) -> np.ndarray:
        return softmax(self.theta, temperature)

    def copy(self) -> "PolicyState":
        return PolicyState(self.theta.copy(), self.theta_old.copy(), self.theta_ref.copy())


def advantages(rewards: Sequence[float], eps_stab: float = 1e-4) -> np.ndarray:
    """``(r - mean) / (population std + eps_stab)``."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise UsageError("advantages need a group of at least two rewards")
    return (r - r.mean()) / (r.std() + eps_stab)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def surrogate_loss(
    state: PolicyState,
    indices: Sequence[int],
    adv: Sequence[float],
    cfg: GrpoConfig,
    theta: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Negated clipped objective with KL penalty, and its gradient in ``theta``."""
    theta = state.theta if theta is None else np.asarray(theta, dtype=np.float64)
    idx = np.asarray(indices, dtype=np.int64)
    a = np.asarray(adv, dtype=np.float64)
    n = theta.size
    if idx.shape != a.shape or idx.size == 0:
        raise UsageError("indices and advantages must be non-empty and of equal length")
    if idx.min() < 0 or idx.max() >= n:
        raise UsageError("sampled index out of range")
    T = cfg.temperature
    p = softmax(theta, T)
    p_old = softmax(state.theta_old, T)
    q = softmax(state.theta_ref, T)

    ratio = p[idx] / p_old[idx]
    clipped = np.clip(ratio, 1 - cfg.alpha, 1 + cfg.alpha)
    unclipped_term = ratio * a
    clipped_term = clipped * a
    terms = np.minimum(unclipped_term, clipped_term)
    kl = kl_divergence(p, q)
    G = idx.size
    loss = -(terms.mean() - cfg.beta * kl)

    # d ratio_i / d theta = ratio_i (e_i - p) / T; zero when the clipped branch is active and flat
    live = unclipped_term <= clipped_term
    w = np.where(live, a * ratio, 0.0) / G
    grad_obj = -w.sum() * p
    np.add.at(grad_obj, idx, w)
    grad_obj /= T

    with np.errstate(divide="ignore"):
        log_ratio = np.where(p > 0, np.log(p) - np.log(q), 0.0)
    grad_kl = p * (log_ratio - kl) / T
    return float(loss), -(grad_obj - cfg.beta * grad_kl)


@dataclass
class TrainResult:
    state: PolicyState
    expected_reward: np.ndarray
    thetas: list[np.ndarray] = field(default_factory=list)
    degenerate: bool = False

    @property
    def best(self) -> int:
        return int(np.argmax(self.state.theta))


def expected_reward(theta: np.ndarray, rewards: np.ndarray, temperature: float = 1.0) -> float:
    return float(softmax(theta, temperature) @ rewards)


def train(
    rewards: Sequence[float],
    cfg: GrpoConfig = GrpoConfig(),
    state: PolicyState | None = None,
    keep_thetas: bool = False,
) -> TrainResult:
    """Run ``cfg.steps`` GRPO iterations against fixed candidate rewards.

    ``rewards`` are verifier totals, one per candidate (for instance
    ``CandidateSet.rewards``). The returned curve holds the expected reward
    under the training policy before the first step and after every step.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise UsageError("training needs at least two candidates")
    degenerate = bool(np.ptp(r) == 0)
    if degenerate:
        warnings.warn("all candidate rewards are equal; the policy will stay near its reference", stacklevel=2)
    state = state.copy() if state is not None else PolicyState.uniform(r.size)
    if state.theta.size != r.size:
        raise UsageError("policy size does not match the number of candidates")
    rng = np.random.default_rng(cfg.seed)
    curve = np.empty(cfg.steps + 1)
    curve[0] = expected_reward(state.theta, r, cfg.temperature)
    thetas = [state.theta.copy()] if keep_thetas else []
    for step in range(cfg.steps):
        state.theta_old = state.theta.copy()
        p_old = softmax(state.theta_old, cfg.temperature)
        idx = rng.choice(r.size, size=cfg.G, p=p_old)
        adv = advantages(r[idx], cfg.eps_stab)
        for _ in range(cfg.inner_updates):
            _, grad = surrogate_loss(state, idx, adv, cfg)
            if cfg.max_grad_norm is not None:
                norm = float(np.linalg.norm(grad))
                if norm > cfg.max_grad_norm:
                    grad = grad * (cfg.max_grad_norm / norm)
            state.theta = state.theta - cfg.lr * grad
        curve[step + 1] = expected_reward(state.theta, r, cfg.temperature)
        if keep_thetas:
            thetas.append(state.theta.copy())
    logger.debug("trained %d steps, E[R] %.4f -> %.4f", cfg.steps, curve[0], curve[-1])
    return TrainResult(state, curve, thetas, degenerate)


def with_overrides(cfg: GrpoConfig, **kw) -> GrpoConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
