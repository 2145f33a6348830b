"""Nuisance model fitting: logistic/linear regressions and derived quantities.

The estimators downstream need four fitted objects, all with affine designs:

* ``Pr(A = 1 | L, Z)``  -- logistic, design (1, L, Z);
* ``Pr(Z = 1 | L)``     -- logistic, design (1, L);
* ``E[Y | L, Z]``       -- least squares, design (1, L, Z); fitted by logistic
  regression instead when Y takes only the values {0, 1};
* derived: the instrument-on-treatment contrast
  ``delta(l) = Pr(A=1|l, Z=1) - Pr(A=1|l, Z=-1)`` (kept away from zero by a
  configurable floor) and the ratio-form treatment-effect estimate
  ``cate(l) = (E[Y|l, Z=1] - E[Y|l, Z=-1]) / delta(l)``.

Two estimating-equation fitters give alternative fits of the instrument
contrast and of the regime-conditional outcome mean; each is consistent when
either of its two auxiliary models is correct.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, DecisionRule, ParseError, decide, sign_pm1

__all__ = [
    "LogisticFit",
    "LinearFit",
    "fit_logistic_irls",
    "fit_linear_ols",
    "NuisanceSet",
    "g_estimate_delta",
    "g_estimate_gamma",
    "RankDeficientError",
]


class RankDeficientError(ValueError):
    """Raised when a design matrix is rank deficient; names the collinear column."""


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def _check_rank(X: np.ndarray, names: list[str]) -> None:
    n, k = X.shape
    if n < k:
        raise ValueError(f"need at least as many rows ({n}) as columns ({k})")
    # Pinpoint the first column that is linearly dependent on its predecessors.
    rank = np.linalg.matrix_rank(X)
    if rank >= k:
        return
    for j in range(1, k + 1):
        if np.linalg.matrix_rank(X[:, :j]) < j:
            raise RankDeficientError(f"design is rank deficient: column {names[j - 1]!r} is collinear")
    raise RankDeficientError("design is rank deficient")


def _default_names(k: int) -> list[str]:
    return ["intercept"] + [f"x{j}" for j in range(1, k + 1)]


@dataclass
class LogisticFit:
    """Maximum-likelihood logistic regression fit (intercept first)."""

    coefficients: np.ndarray
    converged: bool
    iterations: int
    design: list[str]
    separation: bool = False

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Pr(label = +1 | x); clipped to stay strictly inside (0, 1)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        eta = self.coefficients[0] + X @ self.coefficients[1:]
        return np.clip(_expit(eta), 1e-12, 1.0 - 1e-12)

    def to_text(self, name: str = "logistic") -> str:
        return _fit_text(name, self.design, self.coefficients)


@dataclass
class LinearFit:
    """Ordinary least squares fit (intercept first)."""

    coefficients: np.ndarray
    design: list[str]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.coefficients[0] + X @ self.coefficients[1:]

    def to_text(self, name: str = "linear") -> str:
        return _fit_text(name, self.design, self.coefficients)


def _fit_text(name: str, design: list[str], coefficients: np.ndarray) -> str:
    lines = [
        f"model = {name}",
        "design = " + " ".join(design),
        "coefficients = " + " ".join("%.17g" % v for v in coefficients),
    ]
    return "\n".join(lines) + "\n"


def fit_from_text(text: str) -> LogisticFit | LinearFit:
    from .data import parse_kv_block

    kv = parse_kv_block(text)
    try:
        design = kv["design"].split()
        coef = np.array([float(v) for v in kv["coefficients"].split()])
        if kv["model"] == "logistic":
            return LogisticFit(coef, converged=True, iterations=0, design=design)
        if kv["model"] == "linear":
            return LinearFit(coef, design=design)
    except KeyError as exc:
        raise ParseError(f"missing key {exc.args[0]!r}") from None
    raise ParseError(f"unknown model kind {kv['model']!r}")


def fit_logistic_irls(X: np.ndarray, labels: np.ndarray, tol: float = 1e-8,
                      max_iter: int = 100, names: list[str] | None = None) -> LogisticFit:
    """Newton/IRLS fit of Pr(label = +1 | x) = expit(b0 + b . x), labels in {+1,-1}.

    Convergence is declared when the score norm drops to ``tol``.  Steps that
    increase the deviance are halved; complete separation is reported via the
    ``separation`` flag with ``converged=False``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels, dtype=float)
    if not np.all(np.isin(labels, (-1.0, 1.0))):
        raise ValueError("labels must be +1 or -1")
    n, k = X.shape
    design = names if names is not None else _default_names(k)
    Xd = np.column_stack([np.ones(n), X])
    _check_rank(Xd, ["intercept"] + list(design[1:]) if names else design)
    y01 = (labels + 1.0) / 2.0

    beta = np.zeros(k + 1)
    eta = Xd @ beta
    dev = _deviance(eta, y01)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        p = _expit(eta)
        grad = Xd.T @ (y01 - p)
        if np.linalg.norm(grad) <= tol:
            converged = True
            iterations -= 1
            break
        w = np.maximum(p * (1.0 - p), 1e-10)
        H = (Xd * w[:, None]).T @ Xd
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            raise RankDeficientError("weighted normal equations are singular") from None
        # Step-halving keeps the deviance monotone.
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            eta_cand = Xd @ cand
            dev_cand = _deviance(eta_cand, y01)
            if dev_cand <= dev + 1e-12:
                break
            scale /= 2.0
        else:
            break
        beta, eta, dev = cand, eta_cand, dev_cand
    else:
        iterations = max_iter

    p = _expit(eta)
    grad_norm = float(np.linalg.norm(Xd.T @ (y01 - p)))
    separation = bool(np.all(labels * eta > 0) and dev < 1e-6)
    if separation:
        converged = False
    elif grad_norm <= tol:
        converged = True
    return LogisticFit(beta, converged=converged, iterations=iterations,
                       design=design, separation=separation)


def _deviance(eta: np.ndarray, y01: np.ndarray) -> float:
    # -2 log-likelihood, written to stay finite for large |eta|.
    return float(2.0 * np.sum(np.logaddexp(0.0, eta) - y01 * eta))


def fit_linear_ols(X: np.ndarray, y: np.ndarray, names: list[str] | None = None) -> LinearFit:
    """Least squares via QR with an explicit full-rank check."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    design = names if names is not None else _default_names(k)
    Xd = np.column_stack([np.ones(n), X])
    _check_rank(Xd, ["intercept"] + list(design[1:]) if names else design)
    coef, _, rank, _ = np.linalg.lstsq(Xd, y, rcond=None)
    if rank < k + 1:
        raise RankDeficientError("design is rank deficient")
    if not np.all(np.isfinite(coef)):
        raise ValueError("least squares produced non-finite coefficients")
    return LinearFit(coef, design=design)


class NuisanceSet:
    """Fitted nuisance models plus the derived accessors the estimators use.

    All accessors present the *oriented* instrument: if the fitted marginal
    association between instrument and treatment is negative, the instrument
    is relabeled ``Z <- -Z`` internally (``orient = -1``) so the contrast
    ``delta`` is positive on average and instrument-anchored learning is
    well posed.

    ``from_functions`` builds a set from explicit conditional functions; that
    path exists for experiments where components are controlled exactly.
    """

    def __init__(self, *, p_a_given_lz, p_z_given_l, ey_given_lz,
                 delta_floor: float = 0.01, fz_floor: float = 0.01,
                 orient: int = 1, fits: dict | None = None):
        if delta_floor <= 0 or fz_floor <= 0:
            raise ValueError("floors must be positive")
        self._p_a = p_a_given_lz
        self._p_z = p_z_given_l
        self._ey = ey_given_lz
        self.delta_floor = float(delta_floor)
        self.fz_floor = float(fz_floor)
        self.orient = int(orient)
        self.fits = fits or {}

    # -- constructors -----------------------------------------------------

    @classmethod
    def fit(cls, ds: Dataset, delta_floor: float = 0.01, fz_floor: float = 0.01,
            tol: float = 1e-8, max_iter: int = 100) -> "NuisanceSet":
        """Fit all nuisances on the dataset with affine designs."""
        lnames = [f"l{j + 1}" for j in range(ds.p)]
        XA = np.column_stack([ds.L, ds.z])
        fit_a = fit_logistic_irls(XA, ds.a, tol, max_iter, names=["intercept"] + lnames + ["z"])
        fit_z = fit_logistic_irls(ds.L, ds.z, tol, max_iter, names=["intercept"] + lnames)
        # The outcome design carries instrument interactions so the fitted
        # contrast E[Y|L,Z=1] - E[Y|L,Z=-1], and hence the ratio-form
        # treatment effect, can vary (and change sign) with L.
        ynames = ["intercept"] + lnames + ["z"] + [f"{n}:z" for n in lnames]

        def _ydesign(L, z):
            X = _with_z(L, z)
            return np.column_stack([X, X[:, :-1] * X[:, -1:]])

        y_binary = bool(np.all(np.isin(ds.y, (0.0, 1.0))) and len(np.unique(ds.y)) == 2)
        if y_binary:
            fit_y = fit_logistic_irls(_ydesign(ds.L, ds.z), 2.0 * ds.y - 1.0,
                                      tol, max_iter, names=ynames)
        else:
            fit_y = fit_linear_ols(_ydesign(ds.L, ds.z), ds.y, names=ynames)

        def p_a(L, z):
            return fit_a.predict_proba(_with_z(L, z))

        def p_z(L):
            return fit_z.predict_proba(np.atleast_2d(L))

        def ey(L, z):
            X = _ydesign(L, z)
            return fit_y.predict_proba(X) if y_binary else fit_y.predict(X)

        # Orientation from the empirical marginal association of A with Z.
        marg = float(np.mean(ds.a[ds.z > 0] > 0)) - float(np.mean(ds.a[ds.z < 0] > 0)) \
            if len(np.unique(ds.z)) == 2 else 1.0
        orient = -1 if marg < 0 else 1
        return cls(p_a_given_lz=p_a, p_z_given_l=p_z, ey_given_lz=ey,
                   delta_floor=delta_floor, fz_floor=fz_floor, orient=orient,
                   fits={"a_given_lz": fit_a, "z_given_l": fit_z, "y_given_lz": fit_y})

    @classmethod
    def from_functions(cls, p_a_given_lz, p_z_given_l, ey_given_lz,
                       delta_floor: float = 1e-12, fz_floor: float = 1e-12,
                       orient: int = 1) -> "NuisanceSet":
        """Wrap exact conditional functions; floors default to negligible."""
        return cls(p_a_given_lz=p_a_given_lz, p_z_given_l=p_z_given_l,
                   ey_given_lz=ey_given_lz, delta_floor=delta_floor,
                   fz_floor=fz_floor, orient=orient)

    # -- oriented accessors -------------------------------------------------

    def prob_a_pos(self, L: np.ndarray, z) -> np.ndarray:
        """Pr(A = +1 | L, Z = z); z (scalar or per-row vector) on the oriented scale."""
        z = np.asarray(z, dtype=float) * self.orient
        return np.asarray(self._p_a(np.atleast_2d(L), z), dtype=float)

    def prob_z(self, L: np.ndarray, z) -> np.ndarray:
        """Pr(Z = z | L) on the oriented scale, floored away from {0, 1}."""
        p_pos = np.asarray(self._p_z(np.atleast_2d(L)), dtype=float)
        z = np.asarray(z, dtype=float) * self.orient
        p = np.where(z > 0, p_pos, 1.0 - p_pos)
        return np.clip(p, self.fz_floor, 1.0 - self.fz_floor)

    def mean_y(self, L: np.ndarray, z: int) -> np.ndarray:
        """E[Y | L, Z = z] with z on the oriented scale."""
        return np.asarray(self._ey(np.atleast_2d(L), z * self.orient), dtype=float)

    def delta(self, L: np.ndarray) -> np.ndarray:
        """Instrument-on-treatment contrast, truncated away from zero."""
        raw = self.prob_a_pos(L, 1) - self.prob_a_pos(L, -1)
        small = np.abs(raw) < self.delta_floor
        return np.where(small, self.delta_floor * sign_pm1(raw), raw)

    def cate(self, L: np.ndarray) -> np.ndarray:
        """Ratio-form conditional treatment effect (outcome contrast over delta)."""
        dy = self.mean_y(L, 1) - self.mean_y(L, -1)
        return dy / self.delta(L)

    def mean_a_zneg(self, L: np.ndarray) -> np.ndarray:
        """E[A | Z = -1, L] on the +-1 scale."""
        return 2.0 * self.prob_a_pos(L, -1) - 1.0

    def mean_y_zneg(self, L: np.ndarray) -> np.ndarray:
        return self.mean_y(L, -1)

    def oriented_z(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.orient

    def marginal_compliance(self, ds: Dataset) -> float:
        """Empirical Pr(A=1 | Z=1) - Pr(A=1 | Z=-1) on the oriented scale."""
        z = self.oriented_z(ds.z)
        if not (np.any(z > 0) and np.any(z < 0)):
            raise ValueError("instrument has a single level")
        return float(np.mean(ds.a[z > 0] > 0) - np.mean(ds.a[z < 0] > 0))


def _with_z(L: np.ndarray, z) -> np.ndarray:
    L = np.atleast_2d(L)
    zcol = np.broadcast_to(np.asarray(z, dtype=float), (L.shape[0],))
    return np.column_stack([L, zcol])


def _psi_affine(L: np.ndarray) -> np.ndarray:
    """Default basis (1, L) shared by both estimating equations."""
    L = np.atleast_2d(L)
    return np.column_stack([np.ones(L.shape[0]), L])


def g_estimate_delta(ds: Dataset, ns: NuisanceSet, psi_basis=None):
    """Fit delta(l) = beta . psi(l) from the doubly robust estimating equation

        mean_i psi(l_i) [t_i - delta(l_i; beta) (1+z_i)/2 - E[T|Z=-1, l_i]] z_i / f(z_i|l_i) = 0,

    where t = (a+1)/2 is the 0/1-coded treatment: with that coding the
    population solution is exactly the probability-scale contrast
    Pr(A=1|Z=1,L) - Pr(A=1|Z=-1,L) that the weights divide by.  The equation
    is linear in beta, and its solution is consistent when either the
    instrument propensity or E[T|Z=-1, L] is correctly specified.

    Returns ``(delta_fn, beta)`` where ``delta_fn(L)`` evaluates the fit.
    """
    psi = psi_basis if psi_basis is not None else _psi_affine
    P = np.atleast_2d(psi(ds.L))
    z = ns.oriented_z(ds.z)
    w = z / ns.prob_z(ds.L, ds.z)
    half = (1.0 + z) / 2.0
    t01 = (ds.a + 1.0) / 2.0
    et01 = ns.prob_a_pos(ds.L, -1)
    lhs = (P * (w * half)[:, None]).T @ P / ds.n
    rhs = P.T @ (w * (t01 - et01)) / ds.n
    try:
        beta = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        raise RankDeficientError("estimating equation for the instrument contrast is singular") from None

    def delta_fn(L):
        return np.atleast_2d(psi(L)) @ beta

    return delta_fn, beta


def g_estimate_gamma(ds: Dataset, rule: DecisionRule, ns: NuisanceSet,
                     gamma_prime_fn, psi_basis=None):
    """Fit gamma(l) = eta . psi(l) from the doubly robust estimating equation

        mean_i psi(l_i) [ m_i - gamma'(l_i) - (a_i - E[A|Z=-1, l_i]) gamma(l_i; eta)/2 ] z_i / f(z_i|l_i) = 0,

    where m_i = a_i y_i 1{a_i = rule(l_i)} and ``gamma_prime_fn`` supplies a
    fit of E[m | Z=-1, L].  The solution targets the regime-conditional
    outcome mean E[Y under the rule | L].

    Returns ``(gamma_fn, eta)``.
    """
    psi = psi_basis if psi_basis is not None else _psi_affine
    P = np.atleast_2d(psi(ds.L))
    z = ns.oriented_z(ds.z)
    w = z / ns.prob_z(ds.L, ds.z)
    actions = decide(rule, ds.L)
    m = ds.a * ds.y * (ds.a == actions)
    resid = m - np.asarray(gamma_prime_fn(ds.L), dtype=float)
    slope = (ds.a - ns.mean_a_zneg(ds.L)) / 2.0
    lhs = (P * (w * slope)[:, None]).T @ P / ds.n
    rhs = P.T @ (w * resid) / ds.n
    try:
        eta = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        raise RankDeficientError("estimating equation for the regime outcome mean is singular") from None

    def gamma_fn(L):
        return np.atleast_2d(psi(L)) @ eta

    return gamma_fn, eta
