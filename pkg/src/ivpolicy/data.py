"""Core data containers, decision rules, CSV ingestion and plain-text model files.

Conventions used throughout the package:

* treatment ``a`` and instrument ``z`` live in {+1, -1};
* a decision rule maps a covariate vector to an action via the sign of a
  scalar decision function, with the fixed tie-break ``sign(0) = +1``;
* numbers are written to text with 17 significant digits so that a
  write/read round trip is bit-exact.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ParseError",
    "Observation",
    "Dataset",
    "LatentDataset",
    "AffineRule",
    "KernelRule",
    "DecisionRule",
    "decide",
    "sign_pm1",
    "load_csv",
    "load_latent_csv",
    "write_csv",
    "write_latent_csv",
    "validate",
    "Diagnostics",
    "save_rule",
    "load_rule",
    "atomic_write_text",
]

_FMT = "%.17g"


class ParseError(ValueError):
    """Raised when a CSV or model file does not match its schema."""


def _fmt(x: float) -> str:
    return _FMT % float(x)


def atomic_write_text(path: str, text: str) -> None:
    """Write text to ``path`` via a temp file + rename in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sign_pm1(x):
    """Sign in {+1, -1} with the fixed tie-break sign(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


@dataclass(frozen=True)
class Observation:
    """A single row: outcome, treatment label, instrument label, covariates."""

    y: float
    a: int
    z: int
    l: np.ndarray


class Dataset:
    """Immutable column-oriented container for observed rows.

    Parameters
    ----------
    y : (n,) outcomes, finite reals.
    a : (n,) treatment labels in {+1, -1}.
    z : (n,) instrument labels in {+1, -1}.
    L : (n, p) covariate matrix, finite reals, p >= 1.
    """

    def __init__(self, y, a, z, L):
        y = np.asarray(y, dtype=float)
        a = np.asarray(a, dtype=float)
        z = np.asarray(z, dtype=float)
        L = np.asarray(L, dtype=float)
        if L.ndim != 2 or L.shape[1] < 1:
            raise ValueError("covariate matrix must be 2-d with p >= 1")
        n = L.shape[0]
        if not (y.shape == a.shape == z.shape == (n,)):
            raise ValueError("y, a, z, L row counts disagree")
        if not np.all(np.isfinite(y)):
            raise ValueError("outcome contains non-finite values")
        if not np.all(np.isfinite(L)):
            raise ValueError("covariates contain non-finite values")
        if not np.all(np.isin(a, (-1.0, 1.0))):
            raise ValueError("treatment labels must be +1 or -1")
        if not np.all(np.isin(z, (-1.0, 1.0))):
            raise ValueError("instrument labels must be +1 or -1")
        self.y = y
        self.a = a
        self.z = z
        self.L = L
        for arr in (self.y, self.a, self.z, self.L):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def p(self) -> int:
        return self.L.shape[1]

    def row(self, i: int) -> Observation:
        return Observation(float(self.y[i]), int(self.a[i]), int(self.z[i]), self.L[i])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.y[idx], self.a[idx], self.z[idx], self.L[idx])

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.y, other.y)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.L, other.L)
        )


class LatentDataset(Dataset):
    """Dataset augmented with the latent confounder and both potential outcomes.

    Estimators accept only the observable projection (``observable()``); the
    latent columns exist so oracle evaluations cannot be contaminated.
    """

    def __init__(self, y, a, z, L, u, y_pos, y_neg):
        super().__init__(y, a, z, L)
        u = np.asarray(u, dtype=float)
        y_pos = np.asarray(y_pos, dtype=float)
        y_neg = np.asarray(y_neg, dtype=float)
        if not (u.shape == y_pos.shape == y_neg.shape == (self.n,)):
            raise ValueError("latent column lengths disagree with row count")
        realized = np.where(self.a > 0, y_pos, y_neg)
        if not np.array_equal(realized, self.y):
            raise ValueError("consistency violated: y must equal the potential outcome under the realized treatment")
        self.u = u
        self.y_pos = y_pos
        self.y_neg = y_neg
        for arr in (self.u, self.y_pos, self.y_neg):
            arr.setflags(write=False)

    def observable(self) -> Dataset:
        return Dataset(self.y, self.a, self.z, self.L)

    def subset(self, idx) -> "LatentDataset":
        return LatentDataset(
            self.y[idx], self.a[idx], self.z[idx], self.L[idx],
            self.u[idx], self.y_pos[idx], self.y_neg[idx],
        )


@dataclass(frozen=True)
class AffineRule:
    """Decision function g(l) = intercept + coefficients . l."""

    intercept: float
    coefficients: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float)
        if coef.ndim != 1:
            raise ValueError("coefficients must be a vector")
        object.__setattr__(self, "coefficients", coef)

    @property
    def p(self) -> int:
        return self.coefficients.shape[0]

    def decision_values(self, L) -> np.ndarray:
        L = np.atleast_2d(np.asarray(L, dtype=float))
        if L.shape[1] != self.p:
            raise ValueError(f"covariate dimension {L.shape[1]} does not match rule dimension {self.p}")
        return self.intercept + L @ self.coefficients


@dataclass(frozen=True)
class KernelRule:
    """Gaussian-kernel decision function over a set of support points.

    g(l) = intercept + sum_j dual_coefficients[j] * exp(-||l - support[j]||^2 / (2 bandwidth^2))
    """

    support: np.ndarray
    dual_coefficients: np.ndarray
    intercept: float
    bandwidth: float

    def __post_init__(self):
        sup = np.atleast_2d(np.asarray(self.support, dtype=float))
        dc = np.asarray(self.dual_coefficients, dtype=float)
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "dual_coefficients", dc)
        if sup.shape[0] == 0:
            raise ValueError("kernel rule needs at least one support point")
        if dc.shape != (sup.shape[0],):
            raise ValueError("dual coefficient count must match support points")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    @property
    def p(self) -> int:
        return self.support.shape[1]

    def decision_values(self, L) -> np.ndarray:
        L = np.atleast_2d(np.asarray(L, dtype=float))
        if L.shape[1] != self.p:
            raise ValueError(f"covariate dimension {L.shape[1]} does not match rule dimension {self.p}")
        sq = (
            np.sum(L * L, axis=1)[:, None]
            - 2.0 * (L @ self.support.T)
            + np.sum(self.support * self.support, axis=1)[None, :]
        )
        np.maximum(sq, 0.0, out=sq)
        K = np.exp(-sq / (2.0 * self.bandwidth**2))
        return self.intercept + K @ self.dual_coefficients


DecisionRule = AffineRule | KernelRule


def decide(rule: DecisionRule, l) -> np.ndarray | float:
    """Action in {+1, -1} assigned by the rule at covariates ``l``.

    Accepts a single vector or an (n, p) matrix; sign(0) = +1.
    """
    l = np.asarray(l, dtype=float)
    single = l.ndim == 1
    actions = sign_pm1(rule.decision_values(np.atleast_2d(l)))
    return float(actions[0]) if single else actions


# ---------------------------------------------------------------------------
# CSV ingestion / serialization
# ---------------------------------------------------------------------------

_OBS_PREFIX = ["y", "a", "z"]
_LATENT_SUFFIX = ["u", "y1", "ym1"]


def _parse_header(line: str):
    names = [c.strip() for c in line.strip().split(",")]
    if names[:3] != _OBS_PREFIX:
        raise ParseError(f"header must start with 'y,a,z', got {names[:3]}")
    rest = names[3:]
    latent = False
    if len(rest) >= 3 and rest[-3:] == _LATENT_SUFFIX:
        latent = True
        rest = rest[:-3]
    expected = [f"l{i + 1}" for i in range(len(rest))]
    if rest != expected or not rest:
        raise ParseError(f"covariate columns must be l1..lp, got {rest}")
    return len(rest), latent


def _parse_cell(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"non-numeric value {text!r} in column {col} at row {row}") from None
    if not np.isfinite(value):
        raise ParseError(f"non-finite value in column {col} at row {row}")
    return value


def _parse_label(text: str, row: int, col: str, what: str, recode01: bool) -> float:
    value = _parse_cell(text, row, col)
    if recode01:
        if value == 0.0:
            return -1.0
        if value == 1.0:
            return 1.0
        raise ParseError(f"invalid {what} label at row {row}: {text!r} (expected 0 or 1)")
    if value in (1.0, -1.0):
        return value
    raise ParseError(f"invalid {what} label at row {row}: {text!r} (expected +1 or -1)")


def _load_rows(path: str, recode01: bool):
    with open(path, "r") as fh:
        lines = [ln for ln in (line.strip() for line in fh) if ln]
    if not lines:
        raise ParseError(f"{path}: empty file")
    p, latent = _parse_header(lines[0])
    width = 3 + p + (3 if latent else 0)
    cols = {"y": [], "a": [], "z": [], "L": [], "u": [], "y1": [], "ym1": []}
    for row, line in enumerate(lines[1:], start=1):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != width:
            raise ParseError(f"row {row} has {len(cells)} cells, expected {width}")
        cols["y"].append(_parse_cell(cells[0], row, "y"))
        cols["a"].append(_parse_label(cells[1], row, "a", "treatment", recode01))
        cols["z"].append(_parse_label(cells[2], row, "z", "instrument", recode01))
        cols["L"].append([_parse_cell(cells[3 + j], row, f"l{j + 1}") for j in range(p)])
        if latent:
            cols["u"].append(_parse_cell(cells[3 + p], row, "u"))
            cols["y1"].append(_parse_cell(cells[4 + p], row, "y1"))
            cols["ym1"].append(_parse_cell(cells[5 + p], row, "ym1"))
    if not cols["y"]:
        raise ParseError(f"{path}: no data rows")
    return cols, p, latent


def load_csv(path: str, recode01: bool = False) -> Dataset:
    """Load the observable columns ``y,a,z,l1..lp`` (latent extras are dropped).

    With ``recode01`` the a/z columns are accepted as {0,1} and recoded 0 -> -1.
    """
    cols, p, _ = _load_rows(path, recode01)
    return Dataset(cols["y"], cols["a"], cols["z"], np.asarray(cols["L"]).reshape(-1, p))


def load_latent_csv(path: str, recode01: bool = False) -> LatentDataset:
    """Load a CSV carrying the latent columns ``u,y1,ym1`` as well."""
    cols, p, latent = _load_rows(path, recode01)
    if not latent:
        raise ParseError(f"{path}: missing latent columns u,y1,ym1")
    return LatentDataset(
        cols["y"], cols["a"], cols["z"], np.asarray(cols["L"]).reshape(-1, p),
        cols["u"], cols["y1"], cols["ym1"],
    )


def _csv_text(ds: Dataset, latent: bool) -> str:
    p = ds.p
    header = "y,a,z," + ",".join(f"l{i + 1}" for i in range(p))
    if latent:
        header += ",u,y1,ym1"
    out = [header]
    for i in range(ds.n):
        cells = [_fmt(ds.y[i]), "%d" % int(ds.a[i]), "%d" % int(ds.z[i])]
        cells += [_fmt(v) for v in ds.L[i]]
        if latent:
            cells += [_fmt(ds.u[i]), _fmt(ds.y_pos[i]), _fmt(ds.y_neg[i])]
        out.append(",".join(cells))
    return "\n".join(out) + "\n"


def write_csv(ds: Dataset, path: str) -> None:
    """Write the observable columns with 17-significant-digit decimals."""
    atomic_write_text(path, _csv_text(ds, latent=False))


def write_latent_csv(ds: LatentDataset, path: str) -> None:
    """Write all columns including ``u,y1,ym1``."""
    atomic_write_text(path, _csv_text(ds, latent=True))


# ---------------------------------------------------------------------------
# Dataset diagnostics
# ---------------------------------------------------------------------------

@dataclass
class Diagnostics:
    """Cell counts and degeneracy flags for a dataset (reporting only)."""

    cell_counts: dict
    flags: list = field(default_factory=list)

    def __str__(self) -> str:
        lines = [f"rows by (a, z): {self.cell_counts}"]
        lines += [f"flag: {f}" for f in self.flags]
        return "\n".join(lines)


def validate(ds: Dataset) -> Diagnostics:
    """Count rows per (a, z) cell and flag empty instrument arms and constant columns."""
    counts = {}
    for aval in (1, -1):
        for zval in (1, -1):
            counts[(aval, zval)] = int(np.sum((ds.a == aval) & (ds.z == zval)))
    flags = []
    if len(np.unique(ds.z)) < 2:
        flags.append("instrument has a single level")
    if len(np.unique(ds.a)) < 2:
        flags.append("treatment has a single level")
    for j in range(ds.p):
        if np.all(ds.L[:, j] == ds.L[0, j]):
            flags.append(f"degenerate covariate l{j + 1}")
    return Diagnostics(cell_counts=counts, flags=flags)


# ---------------------------------------------------------------------------
# Plain-text rule files
# ---------------------------------------------------------------------------

def _rule_text(rule: DecisionRule) -> str:
    lines = []
    if isinstance(rule, AffineRule):
        lines.append("kind = affine")
        lines.append(f"p = {rule.p}")
        lines.append("intercept = " + _fmt(rule.intercept))
        lines.append("coefficients = " + " ".join(_fmt(v) for v in rule.coefficients))
    elif isinstance(rule, KernelRule):
        lines.append("kind = kernel")
        lines.append(f"p = {rule.p}")
        lines.append("bandwidth = " + _fmt(rule.bandwidth))
        lines.append("intercept = " + _fmt(rule.intercept))
        lines.append("dual_coefficients = " + " ".join(_fmt(v) for v in rule.dual_coefficients))
        for j, point in enumerate(rule.support):
            lines.append(f"support_{j} = " + " ".join(_fmt(v) for v in point))
    else:
        raise TypeError(f"unknown rule type {type(rule).__name__}")
    return "\n".join(lines) + "\n"


def save_rule(rule: DecisionRule, path: str) -> None:
    atomic_write_text(path, _rule_text(rule))


def parse_kv_block(text: str) -> dict:
    """Parse ``key = value`` lines, '#' comments allowed; duplicate keys error."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ParseError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_rule(path: str) -> DecisionRule:
    with open(path, "r") as fh:
        kv = parse_kv_block(fh.read())
    try:
        kind = kv["kind"]
        p = int(kv["p"])
        intercept = float(kv["intercept"])
        if kind == "affine":
            coef = np.array([float(v) for v in kv["coefficients"].split()])
            if coef.shape[0] != p:
                raise ParseError(f"{path}: expected {p} coefficients, got {coef.shape[0]}")
            return AffineRule(intercept=intercept, coefficients=coef)
        if kind == "kernel":
            bandwidth = float(kv["bandwidth"])
            dual = np.array([float(v) for v in kv["dual_coefficients"].split()])
            support = []
            for j in range(dual.shape[0]):
                point = np.array([float(v) for v in kv[f"support_{j}"].split()])
                if point.shape[0] != p:
                    raise ParseError(f"{path}: support_{j} has dimension {point.shape[0]}, expected {p}")
                support.append(point)
            return KernelRule(
                support=np.asarray(support), dual_coefficients=dual,
                intercept=intercept, bandwidth=bandwidth,
            )
        raise ParseError(f"{path}: unknown rule kind {kind!r}")
    except KeyError as exc:
        raise ParseError(f"{path}: missing key {exc.args[0]!r}") from None
