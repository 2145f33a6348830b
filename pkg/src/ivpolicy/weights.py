"""Per-observation classification weights for every estimator family.

Each scheme attaches to every row a real weight and an anchor label (the
row's treatment A or instrument Z).  Learning a rule then means minimizing
the weighted misclassification of the anchors.  Schemes:

* ``IV_IW_A``    w = Z A Y / (delta(L) f(Z|L)),  anchor A
* ``IV_IW_Z``    w = Y / (delta(L) f(Z|L)),      anchor Z
* ``IV_MR_A``    multiply robust correction of IV_IW_A, anchor A
* ``IV_MR_Z``    multiply robust correction of IV_IW_Z, anchor Z
* ``OWL``        w = Y / f(A|L,Z), anchor A (valid only without unmeasured
  confounding; kept as the baseline comparator)
* ``COMPLIER_A`` w = Z A Y / f(Z|L), anchor A
* ``COMPLIER_Z`` w = Y / f(Z|L),     anchor Z (uses no treatment data)

Weights may be negative; ``flip_transform`` rewrites each row as a
nonnegative weight against a possibly flipped anchor without changing which
rules minimize the weighted 0-1 objective (the two objectives differ by the
rule-independent constant ``sum(max(-w, 0))``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, sign_pm1
from .nuisance import NuisanceSet

__all__ = ["SCHEMES", "A_ANCHORED", "WeightVector", "compute_weights", "flip_transform"]

SCHEMES = ("IV_IW_A", "IV_IW_Z", "IV_MR_A", "IV_MR_Z", "OWL", "COMPLIER_A", "COMPLIER_Z")
A_ANCHORED = frozenset({"IV_IW_A", "IV_MR_A", "OWL", "COMPLIER_A"})


@dataclass(frozen=True)
class WeightVector:
    """Weights and anchor labels aligned with the rows of a dataset."""

    scheme: str
    weights: np.ndarray
    anchors: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        t = np.asarray(self.anchors, dtype=float)
        if w.shape != t.shape or w.ndim != 1:
            raise ValueError("weights and anchors must be aligned vectors")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if not np.all(np.isin(t, (-1.0, 1.0))):
            raise ValueError("anchors must be +1 or -1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "anchors", t)

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def compute_weights(ds: Dataset, ns: NuisanceSet, scheme: str) -> WeightVector:
    """Rowwise weights and anchors for the scheme, from fitted nuisances.

    The instrument enters on the oriented scale of ``ns``; zero-weight rows
    are retained so the index alignment with the dataset is trivial.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; valid schemes: {', '.join(SCHEMES)}")
    z = ns.oriented_z(ds.z)
    a, y, L = ds.a, ds.y, ds.L

    if scheme in ("IV_IW_A", "IV_IW_Z"):
        base = y / (ns.delta(L) * ns.prob_z(L, ds.z))
        w = z * a * base if scheme == "IV_IW_A" else base
    elif scheme in ("IV_MR_A", "IV_MR_Z"):
        # The correction terms use the 0/1-coded treatment so that the
        # statistic's conditional mean is the treatment contrast itself under
        # each of the three nuisance configurations; the classification
        # algebra outside the braces stays on the +-1 scale.
        cate = ns.cate(L)
        a01 = (a + 1.0) / 2.0
        resid = y - a01 * cate - ns.mean_y_zneg(L) + cate * ns.prob_a_pos(L, -1)
        core = resid / (ns.delta(L) * ns.prob_z(L, ds.z))
        if scheme == "IV_MR_A":
            w = z * a * core + a * cate
        else:
            w = core + z * cate
    elif scheme == "OWL":
        p_pos = ns.prob_a_pos(L, z)
        prob_a = np.where(a > 0, p_pos, 1.0 - p_pos)
        w = y / prob_a
    elif scheme == "COMPLIER_A":
        w = z * a * y / ns.prob_z(L, ds.z)
    else:  # COMPLIER_Z
        w = y / ns.prob_z(L, ds.z)

    anchors = a if scheme in A_ANCHORED else z
    return WeightVector(scheme=scheme, weights=w, anchors=anchors.copy())


def flip_transform(wv: WeightVector) -> WeightVector:
    """Nonnegative-weight form: each row (w, t) becomes (|w|, sign(w) t).

    Idempotent, and argmin-preserving for the weighted 0-1 objective: for
    every rule, the flipped objective equals the original plus
    ``sum(max(-w, 0))``, which does not depend on the rule.
    """
    s = sign_pm1(wv.weights)
    return WeightVector(scheme=wv.scheme, weights=np.abs(wv.weights), anchors=s * wv.anchors)
