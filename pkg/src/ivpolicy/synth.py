"""Synthetic data generation with a latent confounder, plus oracle evaluation.

Four benchmark scenarios share the treatment mechanism

    Pr(A = 1 | L, Z, U) = expit(2 L1 + iv_coef * Z - 0.5 U),

with L ~ Uniform[-1, 1]^5, Z = +-1 equiprobable, and U drawn from the
bridge distribution, whose defining property is that the treatment model
stays logistic-linear in (L1, Z) after U is integrated out.  The outcome
models are

    1:  Y = h(L) + q(L) A + eps
    2:  Y = h(L) + q(L) A + 0.5 U + eps          (confounded)
    3:  Y = exp{h(L) + q(L) A} + eps
    4:  Y = exp{h(L) + q(L) A} + U + eps         (confounded)

with eps standard normal,
h(L) = 0.5 + 0.5 L1 + 0.8 L2 + 0.3 L3 - 0.5 L4 + 0.7 L5 and
q(L) = 0.2 - 0.6 L1 - 0.8 L2.  The optimal action is sign(q(L)) in every
scenario.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import AffineRule, DecisionRule, LatentDataset, decide
from .seeding import rng_from

__all__ = [
    "ScenarioSpec",
    "sample_bridge",
    "generate_scenario",
    "oracle_value",
    "true_rule",
    "h_baseline",
    "q_contrast",
]


@dataclass(frozen=True)
class ScenarioSpec:
    """Configuration of one synthetic scenario draw."""

    scenario: int
    n: int
    seed: int = 0
    iv_coef: float = 2.5
    bridge_phi: float = 0.5

    def __post_init__(self):
        if self.scenario not in (1, 2, 3, 4):
            raise ValueError(f"scenario must be in {{1,2,3,4}}, got {self.scenario}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 < self.bridge_phi < 1.0:
            raise ValueError("bridge_phi must lie strictly in (0, 1)")


def h_baseline(L: np.ndarray) -> np.ndarray:
    L = np.atleast_2d(L)
    return 0.5 + 0.5 * L[:, 0] + 0.8 * L[:, 1] + 0.3 * L[:, 2] - 0.5 * L[:, 3] + 0.7 * L[:, 4]


def q_contrast(L: np.ndarray) -> np.ndarray:
    L = np.atleast_2d(L)
    return 0.2 - 0.6 * L[:, 0] - 0.8 * L[:, 1]


def true_rule() -> DecisionRule:
    """The optimal rule sign(q(L)) as an affine rule over all five covariates."""
    return AffineRule(intercept=0.2, coefficients=np.array([-0.6, -0.8, 0.0, 0.0, 0.0]))


def sample_bridge(phi: float, rng: np.random.Generator, size=None) -> np.ndarray | float:
    """Exact inverse-CDF draw(s) from the bridge distribution with parameter phi.

    V ~ Uniform(0,1) maps to (1/phi) * log( sin(phi pi V) / sin(phi pi (1-V)) ).
    """
    if not 0.0 < phi < 1.0:
        raise ValueError("phi must lie strictly in (0, 1)")
    v = rng.uniform(size=size)
    return (1.0 / phi) * np.log(np.sin(phi * np.pi * v) / np.sin(phi * np.pi * (1.0 - v)))


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def _potential_outcomes(spec: ScenarioSpec, L, u, eps):
    h = h_baseline(L)
    q = q_contrast(L)
    if spec.scenario == 1:
        return h + q + eps, h - q + eps
    if spec.scenario == 2:
        return h + q + 0.5 * u + eps, h - q + 0.5 * u + eps
    if spec.scenario == 3:
        return np.exp(h + q) + eps, np.exp(h - q) + eps
    return np.exp(h + q) + u + eps, np.exp(h - q) + u + eps


def generate_scenario(spec: ScenarioSpec, rng: np.random.Generator | None = None) -> LatentDataset:
    """Draw a LatentDataset for the scenario; bit-identical for a fixed (spec, rng state)."""
    if rng is None:
        rng = rng_from(spec.seed, label="scenario")
    n = spec.n
    L = rng.uniform(-1.0, 1.0, size=(n, 5))
    z = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
    u = sample_bridge(spec.bridge_phi, rng, size=n)
    p_treat = _expit(2.0 * L[:, 0] + spec.iv_coef * z - 0.5 * u)
    a = np.where(rng.uniform(size=n) < p_treat, 1.0, -1.0)
    eps = rng.standard_normal(n)
    y_pos, y_neg = _potential_outcomes(spec, L, u, eps)
    y = np.where(a > 0, y_pos, y_neg)
    return LatentDataset(y, a, z, L, u, y_pos, y_neg)


def oracle_value(rule: DecisionRule, spec: ScenarioSpec, m: int,
                 rng: np.random.Generator | None = None) -> float:
    """Monte Carlo mean of the potential outcome under the rule, from m fresh draws.

    Uses the latent potential outcomes directly, so the estimate is free of
    any fitted quantity.  Draws are generated in chunks to bound memory.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if rng is None:
        rng = rng_from(spec.seed, label="oracle")
    total = 0.0
    remaining = m
    chunk = 500_000
    while remaining > 0:
        k = min(chunk, remaining)
        ds = generate_scenario(ScenarioSpec(spec.scenario, k, spec.seed, spec.iv_coef, spec.bridge_phi), rng)
        actions = decide(rule, ds.L)
        total += float(np.sum(np.where(actions > 0, ds.y_pos, ds.y_neg)))
        remaining -= k
    return total / m
