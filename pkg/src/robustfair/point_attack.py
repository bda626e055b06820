"""Worst-case single-point poisoning attack for a fixed model.

For a model beta, inserting one point (x0, y0, group) of energy
||[x0; y0]|| <= eta into the training set changes the fairness-penalized
loss to at most max{g1, h1, g2, h2}(beta), and that bound is attained by a
point that is either aligned with b = [beta; -1] or orthogonal to it,
depending on which surrogate wins and the sign of its eta^2 coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ValidationError
from .objective import (
    POINT_BRANCHES,
    TradeoffConfig,
    point_coeffs,
    surrogate_values,
)

# Branches whose eta^2 coefficient is max{0, c}: when the underlying scalar
# goes negative the optimal point moves to the orthogonal complement of b.
_SIGN_GATED = {"h1": "c_h1", "g2": "d_g2"}


@dataclass(frozen=True)
class AdversarialPoint:
    """One inserted training point realizing the worst-case loss."""

    x0: np.ndarray
    y0: float
    g0: int
    achieved_value: float
    branch: str
    mode: str

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float)
        x0 = x0.copy()
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        if self.g0 not in (1, 2):
            raise ValidationError(f"g0 must be 1 or 2, got {self.g0}")
        if self.branch not in POINT_BRANCHES:
            raise ValidationError(f"unknown branch {self.branch!r}")
        if self.mode not in ("aligned", "orthogonal"):
            raise ValidationError(f"unknown mode {self.mode!r}")

    def stacked(self) -> np.ndarray:
        """The (p+1,)-vector [x0; y0]."""
        return np.append(self.x0, self.y0)

    def to_json(self) -> dict:
        return {
            "x0": [float(v) for v in self.x0],
            "y0": float(self.y0),
            "g0": int(self.g0),
            "value": float(self.achieved_value),
            "branch": self.branch,
            "mode": self.mode,
        }


def orthogonal_to(b: np.ndarray) -> np.ndarray:
    """A deterministic unit vector orthogonal to b.

    Uses the first column of the Householder reflector that maps b onto the
    last coordinate axis; for b along that axis this returns the first
    standard basis vector.
    """
    b = np.asarray(b, dtype=float)
    norm = float(np.linalg.norm(b))
    if norm == 0.0:
        raise ValidationError("cannot build a vector orthogonal to zero")
    unit = b / norm
    sigma = 1.0 if unit[-1] >= 0.0 else -1.0
    v = unit.copy()
    v[-1] += sigma
    col = -2.0 * v * (v[0] / float(v @ v))
    col[0] += 1.0
    return col / float(np.linalg.norm(col))


def best_point(beta: np.ndarray, ds: Dataset, cfg: TradeoffConfig) -> AdversarialPoint:
    """Construct the optimal single inserted point against `beta`.

    The winning surrogate (ties broken in the fixed order g1, h1, g2, h2)
    determines the group label; the point is eta * b/||b|| unless the
    branch's eta^2 coefficient is sign-gated to zero, in which case any
    orthogonal direction attains the value and a deterministic one at norm
    eta is emitted.
    """
    beta = np.asarray(beta, dtype=float)
    values = surrogate_values(beta, ds, cfg)
    idx = int(np.argmax(values))
    branch = POINT_BRANCHES[idx]
    coeffs = point_coeffs(ds.n, ds.m, cfg.lam)

    mode = "aligned"
    gate = _SIGN_GATED.get(branch)
    if gate is not None and getattr(coeffs, gate) < 0.0:
        mode = "orthogonal"

    b = np.append(beta, -1.0)
    if mode == "aligned":
        point = cfg.eta * b / float(np.linalg.norm(b))
    else:
        point = cfg.eta * orthogonal_to(b)
    g0 = 1 if branch in ("g1", "h1") else 2
    return AdversarialPoint(
        x0=point[:-1],
        y0=float(point[-1]),
        g0=g0,
        achieved_value=float(values[idx]),
        branch=branch,
        mode=mode,
    )


def apply_point(ds: Dataset, pt: AdversarialPoint) -> Dataset:
    """Insert the point into its group, keeping group-1 rows first."""
    if pt.x0.shape != (ds.p,):
        raise ValidationError(
            f"point has {pt.x0.shape[0]} features, dataset has {ds.p}"
        )
    at = ds.m if pt.g0 == 1 else ds.n
    features = np.insert(ds.features, at, pt.x0, axis=0)
    targets = np.insert(ds.targets, at, pt.y0)
    return Dataset(features=features, targets=targets, m=ds.m + (pt.g0 == 1))
