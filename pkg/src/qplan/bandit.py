"""UCB1 search over the strategy-combination arms.

One search instance covers one query: the all-off arm runs first and its
latency becomes the reward baseline, every arm is pulled once in index
order, then pulls follow the UCB1 score until an iteration budget or a
confidence condition stops the loop. An optional latency predictor can
veto arms whose predicted cost is hopeless; vetoed pulls record a floor
reward without executing anything.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .teacher import N_ARMS

DEFAULT_MAX_ITERATIONS = 100
CI_STOP_WIDTH = 0.2
CONFIDENT_MIN_PULLS = 5
REWARD_FLOOR = -1.0


class ExecutorError(RuntimeError):
    """Executor failure mid-search; carries the rounds finished so far."""

    def __init__(self, message: str, rounds: list[dict]):
        super().__init__(message)
        self.rounds = rounds


def reward_from_latency(latency_ms: float, baseline_ms: float,
                        feasible: bool) -> float:
    """Relative-improvement reward in [-1, 1]; constraint misses floor it."""
    if not feasible:
        return REWARD_FLOOR
    if baseline_ms <= 0:
        raise ValueError("baseline latency must be positive")
    return max(-1.0, min(1.0, 1.0 - latency_ms / baseline_ms))


def ucb1_score(mean_reward: float, pulls: int, total_pulls: int) -> float:
    """Mean plus the sqrt(2 ln t / n) exploration bonus."""
    if pulls <= 0 or total_pulls <= 0:
        raise ValueError("scores need at least one pull")
    return mean_reward + math.sqrt(2.0 * math.log(total_pulls) / pulls)


@dataclass
class SearchResult:
    query_id: str
    chosen_arm: int
    termination_reason: str
    iterations: int
    baseline_latency_ms: float
    means: list[float]
    pulls: list[int]
    feasible: list[bool]
    rounds: list[dict] = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "chosen_arm": self.chosen_arm,
            "termination_reason": self.termination_reason,
            "iterations": self.iterations,
            "baseline_latency_ms": self.baseline_latency_ms,
            "means": self.means,
            "pulls": self.pulls,
            "feasible": self.feasible,
            "rounds": self.rounds,
        }


def search(execute_arm: Callable[[int], tuple[float, float, bool]],
           *, query_id: str = "", n_arms: int = N_ARMS,
           max_iterations: int = DEFAULT_MAX_ITERATIONS,
           ci_stop_width: float = CI_STOP_WIDTH,
           confident_pulls: int = CONFIDENT_MIN_PULLS,
           predicted_latency: Sequence[float] | None = None,
           prune_threshold_ms: float | None = None) -> SearchResult:
    """Run one UCB1 search; execute_arm returns (latency, memory, feasible).

    The all-off arm is never vetoed by the predictor because its latency
    anchors every later reward. Ties on score or mean go to the lowest arm
    index, which keeps the whole search deterministic for a deterministic
    executor.
    """
    if max_iterations < n_arms:
        raise ValueError(
            f"need at least {n_arms} iterations to initialize every arm")

    pulls = [0] * n_arms
    sums = [0.0] * n_arms
    feas = [False] * n_arms
    rounds: list[dict] = []
    baseline = 0.0
    t = 0

    def do_pull(arm: int) -> None:
        nonlocal baseline, t
        veto = (prune_threshold_ms is not None
                and predicted_latency is not None and arm != 0
                and predicted_latency[arm] > prune_threshold_ms)
        if veto:
            reward, executed, ok = REWARD_FLOOR, False, False
        else:
            try:
                latency, _memory, ok = execute_arm(arm)
            except Exception as exc:
                raise ExecutorError(str(exc), rounds) from exc
            if arm == 0 and pulls[0] == 0:
                baseline = latency if latency > 0 else 1e-9
            reward = reward_from_latency(latency, baseline, ok)
            executed = True
        pulls[arm] += 1
        sums[arm] += reward
        feas[arm] = feas[arm] or ok
        t += 1
        rounds.append({"iteration": t, "arm": arm, "reward": reward,
                       "executed": executed, "feasible": ok})

    def mean(arm: int) -> float:
        return sums[arm] / pulls[arm]

    def termination() -> str | None:
        if t >= max_iterations:
            return "max_iterations"
        if any(pulls[i] == 0 for i in range(n_arms)):
            return None  # confidence stops only apply once init is complete
        best = min(range(n_arms), key=lambda i: (-mean(i), i))
        if 2.0 * math.sqrt(2.0 * math.log(t) / pulls[best]) < ci_stop_width:
            return "ci_width"
        for i in range(n_arms):
            if not feas[i] or pulls[i] < confident_pulls:
                continue
            if all(mean(i) > ucb1_score(mean(j), pulls[j], t)
                   for j in range(n_arms) if j != i):
                return "confident_arm"
        return None

    reason = None
    for arm in range(n_arms):
        do_pull(arm)
        reason = termination()
        if reason is not None:
            break
    while reason is None:
        arm = min(range(n_arms),
                  key=lambda i: (-ucb1_score(mean(i), pulls[i], t), i))
        do_pull(arm)
        reason = termination()

    means = [mean(i) if pulls[i] else REWARD_FLOOR for i in range(n_arms)]
    pool = [i for i in range(n_arms) if feas[i]] or list(range(n_arms))
    chosen = min(pool, key=lambda i: (-means[i], i))
    return SearchResult(query_id=query_id, chosen_arm=chosen,
                        termination_reason=reason, iterations=t,
                        baseline_latency_ms=baseline, means=means,
                        pulls=pulls, feasible=feas, rounds=rounds)


def run_ucb1(true_means: Sequence[float], horizon: int, seed: int,
             noise_sigma: float = 0.1) -> tuple[list[int], np.ndarray]:
    """Synthetic-instance UCB1 without stopping rules.

    Rewards are the true arm means plus clipped Gaussian noise. Returns the
    pull sequence and the cumulative pseudo-regret curve (true best mean
    minus true mean of the pulled arm, summed).
    """
    mu = np.asarray(true_means, np.float64)
    n_arms = mu.shape[0]
    if horizon < n_arms:
        raise ValueError("horizon must cover one pull per arm")
    rng = np.random.Generator(np.random.PCG64(seed))
    best = float(mu.max())

    pulls = np.zeros(n_arms, np.int64)
    sums = np.zeros(n_arms, np.float64)
    sequence: list[int] = []
    regret = np.empty(horizon, np.float64)
    total = 0.0

    for step in range(horizon):
        if step < n_arms:
            arm = step
        else:
            scores = sums / pulls + np.sqrt(2.0 * math.log(step) / pulls)
            arm = int(np.argmax(scores))
        reward = float(np.clip(mu[arm] + rng.normal(0.0, noise_sigma),
                               -1.0, 1.0))
        pulls[arm] += 1
        sums[arm] += reward
        sequence.append(arm)
        total += best - float(mu[arm])
        regret[step] = total
    return sequence, regret


def run_random_policy(true_means: Sequence[float], horizon: int,
                      seed: int) -> np.ndarray:
    """Uniform-random pulls on the same instance; linear-regret yardstick."""
    mu = np.asarray(true_means, np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    best = float(mu.max())
    arms = rng.integers(0, mu.shape[0], horizon)
    gaps = best - mu[arms]
    return np.cumsum(gaps)
