"""Fairness-penalized loss and the coefficient tables used by both attacks.

The central quantity is

    L(beta) = (1/n)||y - X beta||^2
              + lam * | (1/m)||y1 - X1 beta||^2 - (1/(n-m))||y2 - X2 beta||^2 |

evaluated on a two-group dataset.  Everything downstream (worst-case point
insertion, rank-one feature perturbation, and the matching defenses) reduces
to a small family of scalar coefficient tables and quadratic surrogates of L,
all of which live here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ValidationError

# Branch order is fixed everywhere: ties between equal surrogate values are
# broken toward the earlier entry.
POINT_BRANCHES = ("g1", "h1", "g2", "h2")


@dataclass(frozen=True)
class TradeoffConfig:
    """Fairness weight and attack energy budget.

    Parameters
    ----------
    lam : float
        Nonnegative weight on the group residual gap.
    eta : float
        Positive bound on the attack energy (point norm or Frobenius norm).
    """

    lam: float
    eta: float

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValidationError(f"lam must be finite and >= 0, got {self.lam}")
        if not np.isfinite(self.eta) or self.eta <= 0:
            raise ValidationError(f"eta must be finite and > 0, got {self.eta}")


@dataclass(frozen=True)
class PointAttackCoeffs:
    """Scalar coefficients of the four single-point surrogates g1, h1, g2, h2.

    Each surrogate has the form

        s(beta) = w_eta * eta^2 (1 + ||beta||^2)
                  + c * ||y1 - X1 beta||^2 + d * ||y2 - X2 beta||^2

    where (c, d) come from the table below and w_eta is c_g1, max{0, c_h1},
    max{0, d_g2}, d_h2 respectively.
    """

    c_g1: float
    d_g1: float
    c_h1: float
    d_h1: float
    c_g2: float
    d_g2: float
    c_h2: float
    d_h2: float

    def cd_table(self) -> np.ndarray:
        """(4, 2) array of (c, d) rows in branch order g1, h1, g2, h2."""
        return np.array(
            [
                [self.c_g1, self.d_g1],
                [self.c_h1, self.d_h1],
                [self.c_g2, self.d_g2],
                [self.c_h2, self.d_h2],
            ]
        )

    def eta_coeffs(self) -> np.ndarray:
        """(4,) array of the eta^2 weights in branch order."""
        return np.array(
            [self.c_g1, max(0.0, self.c_h1), max(0.0, self.d_g2), self.d_h2]
        )


@dataclass(frozen=True)
class RankOneCoeffs:
    """Scalar coefficients of the two rank-one envelope pieces g and h.

    g uses (c_g, d_g) on the group-1/group-2 residual terms, h uses
    (c_h, d_h); c_g, d_h are always positive while d_g, c_h flip sign at
    lam = (n-m)/n and lam = m/n.
    """

    c_g: float
    d_g: float
    c_h: float
    d_h: float


def point_coeffs(n: int, m: int, lam: float) -> PointAttackCoeffs:
    """Coefficient table for the optimal single inserted point.

    Parameters
    ----------
    n, m : int
        Total rows and group-1 rows; requires n > m >= 1.
    lam : float
        Fairness weight, >= 0.
    """
    _check_sizes(n, m, lam)
    n2 = n - m
    u = 1.0 / (n + 1)
    return PointAttackCoeffs(
        c_g1=lam / (m + 1) + u,
        d_g1=-lam / n2 + u,
        c_h1=-lam / (m + 1) + u,
        d_h1=lam / n2 + u,
        c_g2=lam / m + u,
        d_g2=-lam / (n2 + 1) + u,
        c_h2=-lam / m + u,
        d_h2=lam / (n2 + 1) + u,
    )


def rankone_coeffs(n: int, m: int, lam: float) -> RankOneCoeffs:
    """Coefficient table for the rank-one feature perturbation."""
    _check_sizes(n, m, lam)
    n2 = n - m
    return RankOneCoeffs(
        c_g=1.0 / n + lam / m,
        d_g=1.0 / n - lam / n2,
        c_h=1.0 / n - lam / m,
        d_h=1.0 / n + lam / n2,
    )


def _check_sizes(n: int, m: int, lam: float) -> None:
    if not (isinstance(n, (int, np.integer)) and isinstance(m, (int, np.integer))):
        raise ValidationError("n and m must be integers")
    if not (n > m >= 1):
        raise ValidationError(f"need n > m >= 1, got n={n}, m={m}")
    if not np.isfinite(lam) or lam < 0:
        raise ValidationError(f"lam must be finite and >= 0, got {lam}")


# ---------------------------------------------------------------------------
# Loss evaluation
# ---------------------------------------------------------------------------


def mse(beta: np.ndarray, ds: Dataset) -> float:
    """Mean squared residual (1/n)||y - X beta||^2."""
    beta = _check_beta(beta, ds)
    r = ds.targets - ds.features @ beta
    return float(r @ r) / ds.n


def group_residual_sq(beta: np.ndarray, ds: Dataset) -> tuple[float, float]:
    """Squared residual norms (||y1 - X1 beta||^2, ||y2 - X2 beta||^2)."""
    beta = _check_beta(beta, ds)
    r1 = ds.y1 - ds.x1 @ beta
    r2 = ds.y2 - ds.x2 @ beta
    return float(r1 @ r1), float(r2 @ r2)


def fairness_gap(beta: np.ndarray, ds: Dataset) -> float:
    """Absolute difference of the two per-group mean squared residuals."""
    s1, s2 = group_residual_sq(beta, ds)
    return abs(s1 / ds.m - s2 / ds.n2)


def objective_l(beta: np.ndarray, ds: Dataset, cfg: TradeoffConfig) -> float:
    """The fairness-penalized loss mse + lam * fairness_gap."""
    return mse(beta, ds) + cfg.lam * fairness_gap(beta, ds)


def _check_beta(beta: np.ndarray, ds: Dataset) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (ds.p,):
        raise ValidationError(
            f"beta has shape {beta.shape}, expected ({ds.p},)"
        )
    return beta


# ---------------------------------------------------------------------------
# Point-attack surrogates
# ---------------------------------------------------------------------------


def surrogate_values(beta: np.ndarray, ds: Dataset, cfg: TradeoffConfig) -> np.ndarray:
    """All four point-attack surrogates at beta, in branch order.

    Returns
    -------
    (4,) array with entries g1(beta), h1(beta), g2(beta), h2(beta).  The
    maximum over these equals the worst poisoned loss attainable with one
    inserted point of energy at most eta.
    """
    beta = _check_beta(beta, ds)
    coeffs = point_coeffs(ds.n, ds.m, cfg.lam)
    s1, s2 = group_residual_sq(beta, ds)
    cd = coeffs.cd_table()
    ball = cfg.eta**2 * (1.0 + float(beta @ beta))
    return coeffs.eta_coeffs() * ball + cd[:, 0] * s1 + cd[:, 1] * s2


def surrogate_value(
    which: str, beta: np.ndarray, ds: Dataset, cfg: TradeoffConfig
) -> float:
    """One named point-attack surrogate; `which` is g1, h1, g2, or h2."""
    if which not in POINT_BRANCHES:
        raise ValidationError(f"unknown surrogate {which!r}")
    return float(surrogate_values(beta, ds, cfg)[POINT_BRANCHES.index(which)])


# ---------------------------------------------------------------------------
# Quadratic form of the surrogates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupGrams:
    """Per-group Gram matrices and moments shared by the solvers."""

    g1: np.ndarray  # X1^T X1
    g2: np.ndarray  # X2^T X2
    b1: np.ndarray  # X1^T y1
    b2: np.ndarray  # X2^T y2
    yy1: float  # ||y1||^2
    yy2: float  # ||y2||^2


def group_grams(ds: Dataset) -> GroupGrams:
    """Precompute the group Gram matrices and cross moments of a dataset."""
    return GroupGrams(
        g1=ds.x1.T @ ds.x1,
        g2=ds.x2.T @ ds.x2,
        b1=ds.x1.T @ ds.y1,
        b2=ds.x2.T @ ds.y2,
        yy1=float(ds.y1 @ ds.y1),
        yy2=float(ds.y2 @ ds.y2),
    )


@dataclass(frozen=True)
class SurrogateMatrices:
    """The four surrogates written as s_i(beta) = beta' M_i beta - 2 E_i' beta + k_i.

    Matrices are stacked (4, p, p), vectors (4, p), constants (4,), all in
    branch order g1, h1, g2, h2.  The scalar tables and Gram moments they
    were assembled from ride along for solvers that need the surrogates as
    functions of (||beta||^2, ||y1 - X1 beta||^2, ||y2 - X2 beta||^2).
    """

    m_stack: np.ndarray
    e_stack: np.ndarray
    k_stack: np.ndarray
    cd_stack: np.ndarray  # (4, 2) residual coefficients (c_i, d_i)
    w_stack: np.ndarray  # (4,) eta^2 weights
    eta: float
    grams: GroupGrams

    @property
    def m_g1(self) -> np.ndarray:
        return self.m_stack[0]

    @property
    def m_h1(self) -> np.ndarray:
        return self.m_stack[1]

    @property
    def m_g2(self) -> np.ndarray:
        return self.m_stack[2]

    @property
    def m_h2(self) -> np.ndarray:
        return self.m_stack[3]

    @property
    def e_g1(self) -> np.ndarray:
        return self.e_stack[0]

    @property
    def e_h1(self) -> np.ndarray:
        return self.e_stack[1]

    @property
    def e_g2(self) -> np.ndarray:
        return self.e_stack[2]

    @property
    def e_h2(self) -> np.ndarray:
        return self.e_stack[3]

    def value(self, i: int, beta: np.ndarray) -> float:
        """Evaluate surrogate i through its quadratic form."""
        return float(
            beta @ self.m_stack[i] @ beta
            - 2.0 * self.e_stack[i] @ beta
            + self.k_stack[i]
        )


def surrogate_matrices(ds: Dataset, cfg: TradeoffConfig) -> SurrogateMatrices:
    """Assemble the quadratic representation of all four surrogates."""
    coeffs = point_coeffs(ds.n, ds.m, cfg.lam)
    grams = group_grams(ds)
    cd = coeffs.cd_table()
    w_eta = coeffs.eta_coeffs()
    p = ds.p
    eye = np.eye(p)
    eta2 = cfg.eta**2

    m_stack = np.empty((4, p, p))
    e_stack = np.empty((4, p))
    k_stack = np.empty(4)
    for i in range(4):
        c, d = cd[i]
        m_i = w_eta[i] * eta2 * eye + c * grams.g1 + d * grams.g2
        m_stack[i] = 0.5 * (m_i + m_i.T)
        e_stack[i] = c * grams.b1 + d * grams.b2
        k_stack[i] = w_eta[i] * eta2 + c * grams.yy1 + d * grams.yy2
    for arr in (m_stack, e_stack, k_stack, cd, w_eta):
        arr.setflags(write=False)
    return SurrogateMatrices(
        m_stack=m_stack,
        e_stack=e_stack,
        k_stack=k_stack,
        cd_stack=cd,
        w_stack=w_eta,
        eta=cfg.eta,
        grams=grams,
    )
