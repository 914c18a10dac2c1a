"""Group-relative policy optimization on a toy 3-way label policy.

The policy is a linear softmax over a fixed feature map of preference
samples. Losses carry analytic gradients that are verified against central
finite differences by the self-check suite.
"""

from __future__ import annotations

import hashlib
import math
import random
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, NamedTuple

import numpy as np

from batchcot.parsing import WHITESPACE, count_tokens
from batchcot.preference import LABELS, PreferenceSample, label_sample
from batchcot.prompts import BATCH, VANILLA

MEAN_STD = "mean_std"
MEAN_ONLY = "mean_only"
SAMPLED = "sampled"
PAPER_LITERAL = "paper_literal"

FEATURE_DIM = 4

_LABEL_INDEX = {label: i for i, label in enumerate(LABELS)}


@dataclass(frozen=True)
class GrpoConfig:
    # beta default is a declared convention; the source method never reports it
    beta: float = 0.01
    group_size: int = 16
    learning_rate: float = 0.5
    steps: int = 500
    advantage_mode: str = MEAN_STD
    objective_mode: str = SAMPLED

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.group_size < 2:
            raise ValueError("group size must be >= 2")
        if self.advantage_mode not in (MEAN_STD, MEAN_ONLY):
            raise ValueError(f"unknown advantage mode: {self.advantage_mode!r}")
        if self.objective_mode not in (SAMPLED, PAPER_LITERAL):
            raise ValueError(f"unknown objective mode: {self.objective_mode!r}")


@dataclass(frozen=True)
class PolicyState:
    theta: np.ndarray  # (feature_dim, 3) logit weights

    def distribution(self, features: np.ndarray) -> np.ndarray:
        """Strictly positive softmax distribution over the three labels."""
        logits = features @ self.theta
        logits = logits - logits.max()
        exp = np.exp(logits)
        return exp / exp.sum()

    def copy(self) -> "PolicyState":
        return PolicyState(theta=self.theta.copy())


def initial_policy(feature_dim: int = FEATURE_DIM) -> PolicyState:
    """Zero weights, i.e. the uniform policy."""
    return PolicyState(theta=np.zeros((feature_dim, len(LABELS))))


def greedy_label(policy: PolicyState, features: np.ndarray) -> str:
    """Highest-probability label; ties break by label order A < B < C."""
    return LABELS[int(np.argmax(policy.distribution(features)))]


@dataclass(frozen=True)
class RolloutGroup:
    features: np.ndarray
    actions: tuple  # G sampled labels
    rewards: tuple  # G values in {0, 1}
    advantages: tuple
    gold: str

    def __post_init__(self):
        if len(self.actions) != len(self.rewards) or len(self.actions) != len(self.advantages):
            raise ValueError("actions, rewards and advantages must have equal length")
        for action, r in zip(self.actions, self.rewards):
            if r != reward(action, self.gold):
                raise ValueError("reward must be the indicator of action == gold")


def reward(action: str, gold: str) -> int:
    return 1 if action == gold else 0


def group_advantages(rewards, mode: str = MEAN_STD) -> list:
    """Group-relative advantages with a mean (optionally std-normalized) baseline.

    MEAN_ONLY is computed in exact rational arithmetic so the advantages sum
    to zero exactly; MEAN_STD uses the population standard deviation and
    returns all zeros for degenerate (constant-reward) groups.
    """
    rewards = list(rewards)
    if len(rewards) < 2:
        raise ValueError("advantage baseline needs a group of size >= 2")
    if mode == MEAN_ONLY:
        exact = [Fraction(r) for r in rewards]
        mean = sum(exact) / len(exact)
        return [r - mean for r in exact]
    if mode == MEAN_STD:
        arr = np.asarray(rewards, dtype=float)
        std = arr.std()
        if std == 0.0:
            return [0.0] * len(rewards)
        return list((arr - arr.mean()) / std)
    raise ValueError(f"unknown advantage mode: {mode!r}")


def kl_categorical(p, q) -> float:
    """KL(p || q) for strictly positive categorical distributions."""
    p = list(p)
    q = list(q)
    if len(p) != len(q):
        raise ValueError("distributions must have equal support size")
    for dist in (p, q):
        if any(x <= 0 for x in dist):
            raise ValueError("distribution entries must be strictly positive")
        if abs(sum(dist) - 1.0) > 1e-12:
            raise ValueError("distribution must sum to 1 within 1e-12")
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q))


def _kl_and_logit_grad(p: np.ndarray, q: np.ndarray):
    """KL(p||q) and its gradient w.r.t. the logits producing p."""
    logratio = np.log(p) - np.log(q)
    kl = float(np.dot(p, logratio))
    return kl, p * logratio - p * kl


def grpo_loss(policy: PolicyState, old_policy: PolicyState, group: RolloutGroup,
              cfg: GrpoConfig):
    """Negated group objective with its analytic gradient w.r.t. theta.

    SAMPLED averages advantage-weighted log-probabilities over the sampled
    rollouts; PAPER_LITERAL sums over the whole action set with the fixed
    +1 / -1/2 advantage scheme. Both add beta * KL(pi || pi_old).
    """
    phi = np.asarray(group.features, dtype=float)
    pi = policy.distribution(phi)
    pi_old = old_policy.distribution(phi)

    if cfg.objective_mode == SAMPLED:
        g = len(group.actions)
        loss_policy = 0.0
        grad_logits = np.zeros(len(LABELS))
        for action, adv in zip(group.actions, group.advantages):
            adv = float(adv)
            idx = _LABEL_INDEX[action]
            loss_policy -= adv * math.log(pi[idx])
            onehot = np.zeros(len(LABELS))
            onehot[idx] = 1.0
            grad_logits += adv * (pi - onehot)
        loss_policy /= g
        grad_logits /= g
    else:
        adv_vec = np.full(len(LABELS), -0.5)
        adv_vec[_LABEL_INDEX[group.gold]] = 1.0
        loss_policy = -float(np.dot(adv_vec, np.log(pi)))
        # sum_a adv[a] * (pi - e_a); the pi terms cancel because adv sums to 0
        grad_logits = -adv_vec.copy()

    kl, kl_grad_logits = _kl_and_logit_grad(pi, pi_old)
    loss = loss_policy + cfg.beta * kl
    grad = np.outer(phi, grad_logits + cfg.beta * kl_grad_logits)
    return loss, grad


def sample_group(policy: PolicyState, features: np.ndarray, gold: str,
                 cfg: GrpoConfig, rng: np.random.Generator) -> RolloutGroup:
    pi = policy.distribution(features)
    actions = tuple(
        LABELS[i] for i in rng.choice(len(LABELS), size=cfg.group_size, p=pi)
    )
    rewards = tuple(reward(a, gold) for a in actions)
    advantages = tuple(group_advantages(rewards, cfg.advantage_mode))
    return RolloutGroup(
        features=features, actions=actions, rewards=rewards,
        advantages=advantages, gold=gold,
    )


# --- feature map and toy fixtures --------------------------------------------

def _hash_noise(sample: PreferenceSample) -> float:
    """Deterministic pseudo-noise in [-1, 1) derived from the sample content."""
    digest = hashlib.sha256(
        (sample.question_text + "\x00" + sample.cot_text).encode("utf-8")
    ).digest()
    return int.from_bytes(digest[:8], "big") / 2 ** 63 - 1.0


def feature_vector(sample: PreferenceSample, mean_tokens: float) -> np.ndarray:
    """Bias, normalized chain length, origin indicator, correctness-correlated channel."""
    tokens = count_tokens(sample.cot_text, WHITESPACE)
    vanilla = sample.provenance.get("origin_kind") == VANILLA
    correct = 1.0 if sample.gold_label != "C" else -1.0
    return np.array([
        1.0,
        tokens / mean_tokens if mean_tokens > 0 else 0.0,
        1.0 if vanilla else 0.0,
        correct + 0.3 * _hash_noise(sample),
    ])


def feature_matrix(samples) -> np.ndarray:
    samples = list(samples)
    if not samples:
        raise ValueError("feature matrix needs a nonempty dataset")
    counts = [count_tokens(s.cot_text, WHITESPACE) for s in samples]
    mean_tokens = sum(counts) / len(counts)
    return np.stack([feature_vector(s, mean_tokens) for s in samples])


def make_toy_dataset(n: int = 1000, seed: int = 0) -> list:
    """Synthetic preference samples whose labels are linearly separable."""
    from batchcot import verify

    rng = random.Random(seed)
    samples = []
    for i in range(n):
        origin_kind = VANILLA if rng.random() < 0.5 else BATCH
        correct = rng.random() < 0.65
        if origin_kind == VANILLA:
            words = rng.randint(80, 140)
        else:
            words = rng.randint(30, 70)
        verdict = verify.CORRECT if correct else verify.INCORRECT
        samples.append(
            PreferenceSample(
                question_text=f"toy question {i}",
                cot_text=" ".join(f"step{j}" for j in range(words)),
                gold_label=label_sample(origin_kind, verdict),
                provenance={
                    "origin_kind": origin_kind,
                    "batch_size": 1 if origin_kind == VANILLA else 2,
                    "position": 1,
                    "question_id": f"toy-{i}",
                },
            )
        )
    return samples


class CurvePoint(NamedTuple):
    step: int
    loss: float
    mean_gold_prob: float


def _mean_gold_prob(theta: np.ndarray, features: np.ndarray,
                    gold_idx: np.ndarray) -> float:
    logits = features @ theta
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    return float(probs[np.arange(len(gold_idx)), gold_idx].mean())


def train_toy(dataset, cfg: GrpoConfig, seed: int = 0):
    """Sample-group-update loop on the toy policy; deterministic given seed.

    Returns (final PolicyState, learning curve of CurvePoint).
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training dataset must be nonempty")
    features = feature_matrix(dataset)
    gold_idx = np.array([_LABEL_INDEX[s.gold_label] for s in dataset])
    rng = np.random.default_rng(seed)
    policy = initial_policy(features.shape[1])
    curve = []
    for step in range(cfg.steps):
        idx = int(rng.integers(len(dataset)))
        phi = features[idx]
        old = policy.copy()
        group = sample_group(policy, phi, dataset[idx].gold_label, cfg, rng)
        loss, grad = grpo_loss(policy, old, group, cfg)
        policy = PolicyState(theta=policy.theta - cfg.learning_rate * grad)
        curve.append(
            CurvePoint(step, loss, _mean_gold_prob(policy.theta, features, gold_idx))
        )
    return policy, curve


def write_curve_csv(path, curve):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss,mean_gold_prob\n")
        for point in curve:
            fh.write(f"{point.step},{point.loss!r},{point.mean_gold_prob!r}\n")


def save_policy(path, policy: PolicyState, seed: int, cfg: GrpoConfig):
    """Flat numeric text checkpoint with a config header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# feature_dim={policy.theta.shape[0]} labels={policy.theta.shape[1]} seed={seed}\n")
        fh.write(
            f"# config beta={cfg.beta} group_size={cfg.group_size} "
            f"learning_rate={cfg.learning_rate} steps={cfg.steps} "
            f"advantage_mode={cfg.advantage_mode} objective_mode={cfg.objective_mode}\n"
        )
        for row in policy.theta:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_policy(path) -> PolicyState:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(x) for x in line.split()])
    if not rows:
        raise ValueError(f"{path}: no weight rows found")
    return PolicyState(theta=np.array(rows))


# --- self-verification suite --------------------------------------------------

class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def finite_difference_grad(loss_fn: Callable[[np.ndarray], float],
                           theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(theta)
    it = np.nditer(theta, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        up = theta.copy()
        up[idx] += step
        down = theta.copy()
        down[idx] -= step
        grad[idx] = (loss_fn(up) - loss_fn(down)) / (2 * step)
    return grad


def _random_group(rng: np.random.Generator, cfg: GrpoConfig,
                  policy: PolicyState, features: np.ndarray) -> RolloutGroup:
    # resample until the group is mixed so gradients are nontrivial
    gold = LABELS[int(rng.integers(len(LABELS)))]
    while True:
        group = sample_group(policy, features, gold, cfg, rng)
        if 0 < sum(group.rewards) < len(group.rewards):
            return group


def gradient_check(n_configs: int = 100, seed: int = 0, step: float = 1e-5,
                   tolerance: float = 1e-6):
    """Max relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        theta = rng.normal(scale=0.8, size=(FEATURE_DIM, len(LABELS)))
        theta_old = theta + rng.normal(scale=0.3, size=theta.shape)
        features = rng.normal(scale=1.0, size=FEATURE_DIM)
        beta = float(rng.choice([0.0, 0.01, 0.1]))
        for mode in (SAMPLED, PAPER_LITERAL):
            cfg = GrpoConfig(beta=beta, group_size=8, objective_mode=mode)
            policy = PolicyState(theta=theta)
            old = PolicyState(theta=theta_old)
            group = _random_group(rng, cfg, policy, features)
            _, grad = grpo_loss(policy, old, group, cfg)

            def loss_at(t, _old=old, _group=group, _cfg=cfg):
                return grpo_loss(PolicyState(theta=t), _old, _group, _cfg)[0]

            fd = finite_difference_grad(loss_at, theta, step)
            denom = max(np.linalg.norm(grad), np.linalg.norm(fd))
            err = 0.0 if denom < 1e-12 else np.linalg.norm(grad - fd) / denom
            worst = max(worst, err)
    return worst, worst < tolerance


def _binary_vectors(length: int):
    for bits in range(2 ** length):
        yield [(bits >> i) & 1 for i in range(length)]


def advantage_checks(max_length: int = 6):
    """Exhaustive zero-sum and sign checks over binary reward vectors."""
    for length in range(2, max_length + 1):
        for rewards in _binary_vectors(length):
            adv = group_advantages(rewards, MEAN_ONLY)
            if sum(adv) != 0:
                return False, f"MEAN_ONLY sum nonzero for {rewards}"
            mixed = 0 < sum(rewards) < length
            for mode in (MEAN_ONLY, MEAN_STD):
                adv = group_advantages(rewards, mode)
                if mixed:
                    for r, a in zip(rewards, adv):
                        if (a > 0) != (r == 1):
                            return False, f"sign property failed for {rewards} ({mode})"
                else:
                    if any(a != 0 for a in adv):
                        return False, f"degenerate group not all-zero for {rewards} ({mode})"
            adv = group_advantages(rewards, MEAN_STD)
            if abs(sum(adv)) >= 1e-9:
                return False, f"MEAN_STD sum too large for {rewards}"
    return True, f"all binary reward vectors of length 2..{max_length}"


def _random_distribution(rng: np.random.Generator, size: int = 3) -> np.ndarray:
    x = rng.dirichlet(np.ones(size))
    x = np.clip(x, 1e-9, None)
    return x / x.sum()


def kl_checks(n_pairs: int = 1000, seed: int = 0):
    rng = np.random.default_rng(seed)
    uniform = [1 / 3, 1 / 3, 1 / 3]
    if abs(kl_categorical(uniform, uniform)) > 1e-12:
        return False, "KL(p, p) != 0"
    for _ in range(n_pairs):
        p = _random_distribution(rng)
        q = _random_distribution(rng)
        if kl_categorical(p, q) < 0:
            return False, "KL negative"
        if abs(kl_categorical(p, p)) > 1e-12:
            return False, "KL(p, p) != 0"
    # gradient of the KL term vanishes where the two policies coincide
    theta = rng.normal(size=(FEATURE_DIM, len(LABELS)))
    features = rng.normal(size=FEATURE_DIM)
    policy = PolicyState(theta=theta)
    _, grad = _kl_term_grad(policy, policy, features)
    if np.abs(grad).max() > 1e-10:
        return False, "KL gradient nonzero at pi == pi_old"
    return True, f"{n_pairs} generated pairs"


def _kl_term_grad(policy: PolicyState, old_policy: PolicyState,
                  features: np.ndarray):
    pi = policy.distribution(features)
    pi_old = old_policy.distribution(features)
    kl, grad_logits = _kl_and_logit_grad(pi, pi_old)
    return kl, np.outer(features, grad_logits)


def run_verification_suite(seed: int = 0) -> list:
    """Gradient, advantage and KL property checks with pass/fail results."""
    results = []
    start = time.monotonic()
    err, ok = gradient_check(n_configs=100, seed=seed)
    elapsed = time.monotonic() - start
    results.append(CheckResult(
        "gradient_finite_difference", ok,
        f"max relative error {err:.2e} over 100 configs x 2 modes in {elapsed:.1f}s",
    ))
    ok, detail = advantage_checks()
    results.append(CheckResult("advantage_properties", ok, detail))
    ok, detail = kl_checks(seed=seed)
    results.append(CheckResult("kl_properties", ok, detail))
    return results
