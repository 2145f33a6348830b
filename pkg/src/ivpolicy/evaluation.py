"""Value estimation and bounding for treatment regimes.

Estimators of the regime value E[Y under rule]:

* ``value_plugin``   -- sample mean of the instrument-weighted summand
  Z A Y 1{A = rule(L)} / (delta(L) f(Z|L));
* ``value_mr``       -- multiply robust four-term estimator built from
  estimating-equation fits of delta(L) and the regime-conditional outcome
  mean gamma(L); consistent when any one of three nuisance-model
  configurations is correct;
* ``eif_value``      -- per-row efficient-influence values for the plug-in
  functional, giving efficiency-bound standard errors;
* ``complier_value`` -- value among units whose treatment follows the
  instrument, using the marginal (not conditional) instrument-on-treatment
  association in the denominator;
* ``bp_bounds``      -- sharp nonparametric lower/upper bounds on the value
  of a regime for binary outcomes, computed stratum by stratum from the
  conditional probability table of (Y, A) given Z, with no point-identifying
  assumptions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, DecisionRule, decide, sign_pm1
from .nuisance import NuisanceSet, fit_linear_ols, g_estimate_delta, g_estimate_gamma
from .weights import compute_weights

__all__ = [
    "ValueReport",
    "ProbTable",
    "BoundsReport",
    "MrComponents",
    "fit_mr_components",
    "value_plugin",
    "value_mr",
    "eif_value",
    "bp_bounds",
    "complier_value",
    "classification_agreement",
    "build_prob_table",
]


@dataclass(frozen=True)
class ValueReport:
    """Point estimate of a regime value with its standard error."""

    estimate: float
    std_error: float | None
    n: int
    scheme: str

    def __post_init__(self):
        if self.std_error is not None and self.std_error < 0:
            raise ValueError("std_error must be nonnegative")


def _mean_report(summand: np.ndarray, scheme: str) -> ValueReport:
    n = summand.shape[0]
    se = float(np.std(summand, ddof=1) / np.sqrt(n)) if n > 1 else None
    return ValueReport(estimate=float(np.mean(summand)), std_error=se, n=n, scheme=scheme)


def value_plugin(rule: DecisionRule, ds: Dataset, ns: NuisanceSet) -> ValueReport:
    """Instrument-weighted plug-in value of the rule."""
    wv = compute_weights(ds, ns, "IV_IW_A")
    summand = wv.weights * (ds.a == decide(rule, ds.L))
    return _mean_report(summand, "plugin")


@dataclass
class MrComponents:
    """Component functions entering the multiply robust value estimator.

    ``delta(L)``       instrument-on-treatment contrast;
    ``gamma(L)``       regime-conditional outcome mean E[Y under rule | L];
    ``gamma_prime(L)`` E[ A Y 1{A = rule(L)} | Z = -1, L ];
    ``mean_a_zneg(L)`` E[ A | Z = -1, L ] on the +-1 scale;
    ``prob_z(L, z)``   instrument propensity at the observed level.

    All functions are on the oriented instrument scale (``orient``).
    """

    delta: callable
    gamma: callable
    gamma_prime: callable
    mean_a_zneg: callable
    prob_z: callable
    orient: int = 1
    delta_floor: float = 1e-12


def fit_mr_components(ds: Dataset, rule: DecisionRule, ns: NuisanceSet,
                      psi_basis=None) -> MrComponents:
    """Fit every component of the multiply robust estimator from data.

    delta comes from its doubly robust estimating equation; gamma_prime from
    an affine regression of A Y 1{A = rule(L)} on L among instrument-negative
    rows; gamma from its doubly robust estimating equation.
    """
    delta_fn, _ = g_estimate_delta(ds, ns, psi_basis)
    z = ns.oriented_z(ds.z)
    m = ds.a * ds.y * (ds.a == decide(rule, ds.L))
    neg = z < 0
    if not neg.any():
        raise ValueError("no instrument-negative rows to fit the conditional mean")
    fit_gp = fit_linear_ols(ds.L[neg], m[neg])
    gamma_prime = fit_gp.predict
    gamma_fn, _ = g_estimate_gamma(ds, rule, ns, gamma_prime, psi_basis)
    return MrComponents(
        delta=delta_fn, gamma=gamma_fn, gamma_prime=gamma_prime,
        mean_a_zneg=ns.mean_a_zneg, prob_z=ns.prob_z,
        orient=ns.orient, delta_floor=ns.delta_floor,
    )


def value_mr(rule: DecisionRule, ds: Dataset, fits: MrComponents) -> ValueReport:
    """Multiply robust value estimate (four-term sample mean).

    The summand per row is

        Z A Y 1{A=D} / (f(Z|L) delta)  -  Z gamma'(L) / (f(Z|L) delta)
        + gamma(L)  -  Z (A - E[A|Z=-1,L]) gamma(L) / (2 f(Z|L) delta),

    and its empirical variance yields the standard error.
    """
    z = np.asarray(ds.z, dtype=float) * fits.orient
    ind = (ds.a == decide(rule, ds.L)).astype(float)
    delta = np.asarray(fits.delta(ds.L), dtype=float)
    small = np.abs(delta) < fits.delta_floor
    delta = np.where(small, fits.delta_floor * sign_pm1(delta), delta)
    fz = np.asarray(fits.prob_z(ds.L, ds.z), dtype=float)
    gamma = np.asarray(fits.gamma(ds.L), dtype=float)
    gamma_prime = np.asarray(fits.gamma_prime(ds.L), dtype=float)
    ea = np.asarray(fits.mean_a_zneg(ds.L), dtype=float)
    core = z / (fz * delta)
    summand = core * ds.a * ds.y * ind - core * gamma_prime + gamma - core * (ds.a - ea) * gamma / 2.0
    return _mean_report(summand, "mr")


def eif_value(rule: DecisionRule, ds: Dataset, ns: NuisanceSet,
              cond_mean_fn=None) -> np.ndarray:
    """Per-row efficient-influence values for the plug-in value functional.

    ``cond_mean_fn(L, z)`` must give E[ A Y 1{A = rule(L)} | Z = z, L ] on the
    oriented scale; by default it is fitted by per-arm affine regressions on
    the dataset itself.  The returned values are centered at the plug-in
    estimate, so their mean plus the plug-in estimate is the one-step
    estimator, and their variance over n estimates the efficiency bound.
    """
    z = ns.oriented_z(ds.z)
    actions = decide(rule, ds.L)
    m = ds.a * ds.y * (ds.a == actions)
    if cond_mean_fn is None:
        fits = {}
        for zval in (1, -1):
            arm = z > 0 if zval > 0 else z < 0
            if not arm.any():
                raise ValueError("an instrument arm is empty; cannot fit conditional means")
            fits[zval] = fit_linear_ols(ds.L[arm], m[arm])

        def cond_mean_fn(L, zval):
            return fits[zval].predict(L)

    delta = ns.delta(ds.L)
    fz = ns.prob_z(ds.L, ds.z)
    m_pos = np.asarray(cond_mean_fn(ds.L, 1), dtype=float)
    m_neg = np.asarray(cond_mean_fn(ds.L, -1), dtype=float)
    m_obs = np.where(z > 0, m_pos, m_neg)
    ea_obs = np.where(z > 0, 2.0 * ns.prob_a_pos(ds.L, 1) - 1.0,
                      2.0 * ns.prob_a_pos(ds.L, -1) - 1.0)
    gamma = (m_pos - m_neg) / delta
    plug = z * m / (fz * delta)
    correction = z * m_obs / (fz * delta) - gamma + z * (ds.a - ea_obs) / (2.0 * fz * delta) * gamma
    v_hat = float(np.mean(plug))
    return plug - correction - v_hat


def complier_value(rule: DecisionRule, ds: Dataset, ns: NuisanceSet,
                   compliance_floor: float = 0.01) -> ValueReport:
    """Value among instrument-followers, with the marginal association in the
    denominator.  Errors out when the instrument is too weak to normalize by.
    """
    marginal = ns.marginal_compliance(ds)
    if marginal < compliance_floor:
        raise ValueError(
            f"weak instrument: marginal compliance {marginal:.4f} below floor {compliance_floor}"
        )
    z = ns.oriented_z(ds.z)
    ind = (ds.a == decide(rule, ds.L)).astype(float)
    summand = z * ds.a * ds.y * ind / (marginal * ns.prob_z(ds.L, ds.z))
    return _mean_report(summand, "complier")


def classification_agreement(rule: DecisionRule, reference_rule: DecisionRule,
                             eval_points: np.ndarray) -> float:
    """Fraction of evaluation points where the two rules agree."""
    eval_points = np.atleast_2d(np.asarray(eval_points, dtype=float))
    if eval_points.shape[0] == 0:
        raise ValueError("evaluation set is empty")
    return float(np.mean(decide(rule, eval_points) == decide(reference_rule, eval_points)))


# ---------------------------------------------------------------------------
# Partial-identification bounds for binary outcomes
# ---------------------------------------------------------------------------

_IDX = {1: 0, -1: 1}


class ProbTable:
    """Per-stratum conditional law of (Y, A) given Z for binary Y, A, Z.

    ``probs[s, i, j, k]`` is Pr(Y = y_i, A = a_j | Z = z_k, L = stratum s)
    with index 0 mapping to +1 and index 1 to -1.  ``weights`` carry the
    stratum marginal Pr(L = s); ``covariates`` optionally hold a
    representative covariate vector per stratum so a rule can be evaluated.
    """

    def __init__(self, probs, weights, covariates=None, atol: float = 1e-9):
        probs = np.asarray(probs, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if probs.ndim != 4 or probs.shape[1:] != (2, 2, 2):
            raise ValueError("probs must have shape (strata, 2, 2, 2)")
        if weights.shape != (probs.shape[0],):
            raise ValueError("weights must align with strata")
        if np.any(probs < -atol):
            raise ValueError("probabilities must be nonnegative")
        sums = probs.sum(axis=(1, 2))
        if not np.allclose(sums, 1.0, atol=atol):
            raise ValueError("per-(stratum, z) probabilities must sum to 1")
        if np.any(weights < -atol) or not np.isclose(weights.sum(), 1.0, atol=atol):
            raise ValueError("stratum weights must be nonnegative and sum to 1")
        self.probs = np.clip(probs, 0.0, 1.0)
        self.weights = weights
        self.covariates = None if covariates is None else np.atleast_2d(np.asarray(covariates, dtype=float))
        if self.covariates is not None and self.covariates.shape[0] != probs.shape[0]:
            raise ValueError("covariates must align with strata")

    @property
    def n_strata(self) -> int:
        return self.probs.shape[0]

    def p(self, y: int, a: int, z: int) -> np.ndarray:
        """Vector over strata of Pr(Y=y, A=a | Z=z)."""
        return self.probs[:, _IDX[y], _IDX[a], _IDX[z]]


def _stratum_bounds(t: ProbTable):
    p = t.p
    lower_effect = np.max(np.stack([
        p(-1, -1, -1) + p(1, 1, 1) - 1,
        p(-1, -1, 1) + p(1, 1, 1) - 1,
        p(1, 1, -1) + p(-1, -1, 1) - 1,
        p(-1, -1, -1) + p(1, 1, -1) - 1,
        2 * p(-1, -1, -1) + p(1, 1, -1) + p(1, -1, 1) + p(1, 1, 1) - 2,
        p(-1, -1, -1) + 2 * p(1, 1, -1) + p(-1, -1, 1) + p(-1, 1, 1) - 2,
        p(1, -1, -1) + p(1, 1, -1) + 2 * p(-1, -1, 1) + p(1, 1, 1) - 2,
        p(-1, -1, -1) + p(-1, 1, -1) + p(-1, -1, 1) + 2 * p(1, 1, 1) - 2,
    ]), axis=0)
    upper_effect = np.min(np.stack([
        1 - p(1, -1, -1) - p(-1, 1, 1),
        1 - p(-1, 1, -1) - p(1, -1, 1),
        1 - p(-1, 1, -1) - p(1, -1, -1),
        1 - p(-1, 1, 1) - p(1, -1, 1),
        2 - 2 * p(-1, 1, -1) - p(1, -1, -1) - p(1, -1, 1) - p(1, 1, 1),
        2 - p(-1, 1, -1) - 2 * p(1, -1, -1) - p(-1, -1, 1) - p(-1, 1, 1),
        2 - p(1, -1, -1) - p(1, 1, -1) - 2 * p(-1, 1, 1) - p(1, -1, 1),
        2 - p(-1, -1, -1) - p(-1, 1, -1) - p(-1, 1, 1) - 2 * p(1, -1, 1),
    ]), axis=0)
    lower_neg = np.max(np.stack([
        p(1, -1, 1),
        p(1, -1, -1),
        p(1, -1, -1) + p(1, 1, -1) - p(-1, -1, 1) - p(1, 1, 1),
        p(-1, 1, -1) + p(1, -1, -1) - p(-1, -1, 1) - p(-1, 1, 1),
    ]), axis=0)
    upper_neg = np.min(np.stack([
        1 - p(-1, -1, 1),
        1 - p(-1, -1, -1),
        p(-1, 1, -1) + p(1, -1, -1) + p(1, -1, 1) + p(1, 1, 1),
        p(1, -1, -1) + p(1, 1, -1) + p(-1, 1, 1) + p(1, -1, 1),
    ]), axis=0)
    lower_pos = np.max(np.stack([
        p(1, 1, -1),
        p(1, 1, 1),
        -p(-1, -1, -1) - p(-1, 1, -1) + p(-1, -1, 1) + p(1, 1, 1),
        -p(-1, 1, -1) - p(1, -1, -1) + p(1, -1, 1) + p(1, 1, 1),
    ]), axis=0)
    upper_pos = np.min(np.stack([
        1 - p(-1, 1, 1),
        1 - p(-1, 1, -1),
        p(-1, -1, -1) + p(1, 1, -1) + p(1, -1, 1) + p(1, 1, 1),
        p(1, -1, -1) + p(1, 1, -1) + p(-1, -1, 1) + p(1, 1, 1),
    ]), axis=0)
    return lower_effect, upper_effect, lower_neg, upper_neg, lower_pos, upper_pos


@dataclass
class BoundsReport:
    """Stratum-level and aggregated partial-identification bounds.

    ``lower``/``upper`` aggregate the per-arm bounds under the rule's action;
    the ``*_mixed`` pair is the weighted form built from the treatment-effect
    bounds with the supplied mixing weights (never tighter, always valid).
    The value scale is the success probability Pr(Y = +1 under the rule).
    """

    actions: np.ndarray
    stratum_weights: np.ndarray
    lower_effect: np.ndarray
    upper_effect: np.ndarray
    lower_neg: np.ndarray
    upper_neg: np.ndarray
    lower_pos: np.ndarray
    upper_pos: np.ndarray
    lower: float
    upper: float
    lower_mixed: float
    upper_mixed: float
    omega_pos: np.ndarray
    omega_neg: np.ndarray


def bp_bounds(table: ProbTable, rule: DecisionRule | None = None,
              omega=(0.5, 0.5), actions: np.ndarray | None = None) -> BoundsReport:
    """Exact evaluation of every candidate bound expression, then aggregation.

    Needs only the table itself; no point-identification assumption.  The
    rule is evaluated at each stratum's representative covariates (or pass
    per-stratum ``actions`` directly).  ``omega`` is the pair of mixing
    weights (scalar or per-stratum) for the mixed bounds.
    """
    if (rule is None) == (actions is None):
        raise ValueError("pass exactly one of rule or actions")
    if actions is None:
        if table.covariates is None:
            raise ValueError("table carries no stratum covariates; pass actions instead")
        actions = decide(rule, table.covariates)
    actions = np.asarray(actions, dtype=float)
    if actions.shape != (table.n_strata,):
        raise ValueError("actions must give one decision per stratum")
    if not np.all(np.isin(actions, (-1.0, 1.0))):
        raise ValueError("actions must be +1 or -1")

    le, ue, ln, un, lp, up = _stratum_bounds(table)
    w = table.weights
    pos = actions > 0

    lower = float(np.sum(w * np.where(pos, lp, ln)))
    upper = float(np.sum(w * np.where(pos, up, un)))

    om_pos = np.broadcast_to(np.asarray(omega, dtype=float)[0], w.shape).astype(float)
    om_neg = np.broadcast_to(np.asarray(omega, dtype=float)[1], w.shape).astype(float)
    if np.any(om_pos < 0) or np.any(om_neg < 0) or not np.allclose(om_pos + om_neg, 1.0):
        raise ValueError("mixing weights must be nonnegative and sum to 1")
    lower_mixed = float(np.sum(w * (
        om_pos * (le * pos + ln) + om_neg * (-ue * (~pos) + lp)
    )))
    upper_mixed = float(np.sum(w * (
        om_pos * (ue * pos + un) + om_neg * (-le * (~pos) + up)
    )))
    return BoundsReport(
        actions=actions, stratum_weights=w,
        lower_effect=le, upper_effect=ue, lower_neg=ln, upper_neg=un,
        lower_pos=lp, upper_pos=up,
        lower=lower, upper=upper,
        lower_mixed=lower_mixed, upper_mixed=upper_mixed,
        omega_pos=om_pos, omega_neg=om_neg,
    )


def build_prob_table(ds: Dataset, bins: int = 5, max_strata: int = 64) -> ProbTable:
    """Empirical ProbTable from data with binary outcome, by covariate binning.

    Outcomes must take exactly two values; the larger is treated as success
    (+1).  Each covariate is cut at its empirical quantiles; the per-axis bin
    count is reduced so the total stratum count stays within ``max_strata``.
    Strata missing an instrument arm are dropped with reweighting.
    """
    uniq = np.unique(ds.y)
    if uniq.shape[0] != 2:
        raise ValueError(f"bounds need a binary outcome; found {uniq.shape[0]} distinct values")
    y_pm = np.where(ds.y == uniq[1], 1.0, -1.0)

    b = min(bins, max(1, int(np.floor(max_strata ** (1.0 / ds.p)))))
    codes = np.zeros(ds.n, dtype=int)
    for j in range(ds.p):
        col = ds.L[:, j]
        edges = np.quantile(col, np.linspace(0, 1, b + 1)[1:-1]) if b > 1 else np.array([])
        codes = codes * b + np.searchsorted(edges, col, side="right")

    strata = np.unique(codes)
    probs, weights, reps = [], [], []
    for s in strata:
        rows = codes == s
        z = ds.z[rows]
        if not (np.any(z > 0) and np.any(z < 0)):
            continue
        block = np.zeros((2, 2, 2))
        for zval in (1, -1):
            sel = rows & (ds.z == zval)
            denom = float(np.sum(sel))
            for yval in (1, -1):
                for aval in (1, -1):
                    block[_IDX[yval], _IDX[aval], _IDX[zval]] = (
                        float(np.sum(sel & (y_pm == yval) & (ds.a == aval))) / denom
                    )
        probs.append(block)
        weights.append(float(np.sum(rows)))
        reps.append(ds.L[rows].mean(axis=0))
    if not probs:
        raise ValueError("no stratum has both instrument arms; cannot build the table")
    weights = np.asarray(weights)
    return ProbTable(np.asarray(probs), weights / weights.sum(), covariates=np.asarray(reps))
