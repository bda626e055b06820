"""Worst-case rank-one feature perturbation for a fixed model.

The adversary adds Delta = c d' (Frobenius norm at most eta) to the feature
matrix.  For a model beta the perturbed loss splits into two pieces g and h
(one per sign of the group residual gap), and for each piece the exact inner
maximum over all (c, d) reduces to a one-dimensional profile over the
group-1 budget split eta_c1: the optimal d aligns with beta, the group-1
part of c inflates that group's residual, and the group-2 part inflates,
partially deflates, or exactly zeroes the other residual depending on the
sign of the coefficient and the leftover budget sqrt(eta^2 - eta_c1^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import profile_best_t_batch
from .dataset import Dataset
from .errors import ValidationError
from .objective import (
    RankOneCoeffs,
    TradeoffConfig,
    objective_l,
    rankone_coeffs,
)

RANKONE_BRANCHES = ("g_a", "g_b1", "g_b2", "h_a", "h_b1", "h_b2")


@dataclass(frozen=True)
class RankOneAttack:
    """A concrete rank-one perturbation with its budget split."""

    c: np.ndarray
    d: np.ndarray
    eta_c: float
    eta_c1: float
    eta_c2: float
    branch: str
    value: float

    def __post_init__(self):
        for name in ("c", "d"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.branch not in RANKONE_BRANCHES:
            raise ValidationError(f"unknown rank-one branch {self.branch!r}")

    def delta(self) -> np.ndarray:
        """The perturbation matrix c d'."""
        return np.outer(self.c, self.d)

    def to_json(self) -> dict:
        return {
            "c": [float(v) for v in self.c],
            "d": [float(v) for v in self.d],
            "eta_c1": float(self.eta_c1),
            "branch": self.branch,
            "value": float(self.value),
        }


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


def _residual_norms(beta: np.ndarray, ds: Dataset) -> tuple[float, float, float]:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (ds.p,):
        raise ValidationError(f"beta has shape {beta.shape}, expected ({ds.p},)")
    r1 = float(np.linalg.norm(ds.y1 - ds.x1 @ beta))
    r2 = float(np.linalg.norm(ds.y2 - ds.x2 @ beta))
    return r1, r2, float(np.linalg.norm(beta))


def _check_split(eta_c1: float, eta: float) -> float:
    if not 0.0 <= eta_c1 <= eta * (1.0 + 1e-12):
        raise ValidationError(f"eta_c1={eta_c1} outside [0, eta={eta}]")
    return min(float(eta_c1), float(eta))


def g_profile(
    eta_c1: float, beta: np.ndarray, ds: Dataset, coeffs: RankOneCoeffs, eta: float
) -> float:
    """Worst-case g-piece value for a fixed group-1 budget split.

    The group-1 term is always inflated by the full split; the group-2 term
    is inflated when its coefficient is nonnegative and otherwise deflated
    as far as the leftover budget reaches (to zero when it covers the whole
    residual).
    """
    t = _check_split(eta_c1, eta)
    r1, r2, bn = _residual_norms(beta, ds)
    s = np.sqrt(max(eta * eta - t * t, 0.0))
    first = coeffs.c_g * (r1 + t * bn) ** 2
    if coeffs.d_g >= 0.0:
        return float(first + coeffs.d_g * (r2 + s * bn) ** 2)
    return float(first + coeffs.d_g * max(r2 - s * bn, 0.0) ** 2)


def h_profile(
    eta_c1: float, beta: np.ndarray, ds: Dataset, coeffs: RankOneCoeffs, eta: float
) -> float:
    """Worst-case h-piece value for a fixed group-1 budget split.

    Mirror image of g_profile with the group roles swapped: group 2 is
    always inflated by the leftover budget, group 1 inflated or deflated
    according to the sign of its coefficient.
    """
    t = _check_split(eta_c1, eta)
    r1, r2, bn = _residual_norms(beta, ds)
    s = np.sqrt(max(eta * eta - t * t, 0.0))
    second = coeffs.d_h * (r2 + s * bn) ** 2
    if coeffs.c_h >= 0.0:
        return float(second + coeffs.c_h * (r1 + t * bn) ** 2)
    return float(second + coeffs.c_h * max(r1 - t * bn, 0.0) ** 2)


@dataclass(frozen=True)
class ProfileIntermediates:
    """Inner-problem artifacts behind one profile evaluation.

    With d aligned to beta and u = d'beta = ||beta||, the rescaled residuals
    are f_g = (y_g - X_g beta)/u, the shifted vectors e_g = f_g - c_g, and
    the profile value is the quadratic quad_a*u^2 + quad_b*u + quad_c.
    gamma_e1/gamma_e2 are the closed-form scalars kappa with c_g = kappa*f_g
    solving the inner sphere (inflate) and ball (deflate/zero) problems.
    """

    f1: np.ndarray
    f2: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    quad_a: float
    quad_b: float
    quad_c: float
    gamma_e1: float
    gamma_e2: float


def profile_intermediates(
    eta_c1: float,
    beta: np.ndarray,
    ds: Dataset,
    coeffs: RankOneCoeffs,
    eta: float,
    side: str = "g",
) -> ProfileIntermediates:
    """Expose the inner-maximization structure of one profile evaluation."""
    if side not in ("g", "h"):
        raise ValidationError(f"side must be 'g' or 'h', got {side!r}")
    t = _check_split(eta_c1, eta)
    beta = np.asarray(beta, dtype=float)
    r1v = ds.y1 - ds.x1 @ beta
    r2v = ds.y2 - ds.x2 @ beta
    u = float(np.linalg.norm(beta))
    if u <= 0.0:
        raise ValidationError("profile intermediates need a nonzero beta")
    s = float(np.sqrt(max(eta * eta - t * t, 0.0)))
    f1 = r1v / u
    f2 = r2v / u
    n1 = float(np.linalg.norm(f1))
    n2 = float(np.linalg.norm(f2))
    cc, dd = (coeffs.c_g, coeffs.d_g) if side == "g" else (coeffs.c_h, coeffs.d_h)

    # Group 1 carries budget t, group 2 the leftover s.  A nonnegative
    # coefficient inflates (sphere problem, kappa = -budget/||f||); a
    # negative one deflates within the ball (kappa = +budget/||f||, or 1
    # when the budget covers the residual entirely).
    def solve_inner(coef: float, f: np.ndarray, fn: float, budget: float):
        if coef >= 0.0:
            kappa = -budget / fn if fn > 0.0 else 0.0
            e = f - kappa * f
            enorm = fn + budget
        elif fn <= budget:
            kappa = 1.0
            e = np.zeros_like(f)
            enorm = 0.0
        else:
            kappa = budget / fn
            e = f - kappa * f
            enorm = fn - budget
        return kappa, e, enorm

    k1, e1, en1 = solve_inner(cc, f1, n1, t)
    k2, e2, en2 = solve_inner(dd, f2, n2, s)

    # Profile value as a quadratic in u = d'beta: each group term is
    # coef*(||r_g|| + h_g*u)^2 with ||r_g|| = n_g*u and h_g = (||e_g|| - n_g)
    # the signed per-unit shift produced by the inner solution.
    quad_a = cc * (en1 - n1) ** 2 + dd * (en2 - n2) ** 2
    quad_b = 2.0 * (cc * (n1 * u) * (en1 - n1) + dd * (n2 * u) * (en2 - n2))
    quad_c = cc * (n1 * u) ** 2 + dd * (n2 * u) ** 2
    return ProfileIntermediates(
        f1=f1,
        f2=f2,
        e1=e1,
        e2=e2,
        quad_a=float(quad_a),
        quad_b=float(quad_b),
        quad_c=float(quad_c),
        gamma_e1=float(k1),
        gamma_e2=float(k2),
    )


# ---------------------------------------------------------------------------
# Exact inner maximization and reconstruction
# ---------------------------------------------------------------------------

_BRANCH_TAGS = {(0, 0): "g_a", (0, 1): "g_b1", (0, 2): "g_b2",
                (1, 0): "h_a", (1, 1): "h_b1", (1, 2): "h_b2"}


def best_rankone(beta: np.ndarray, ds: Dataset, cfg: TradeoffConfig) -> RankOneAttack:
    """Exact worst-case rank-one attack against `beta`.

    Maximizes both profiles over the budget split (golden section per smooth
    segment plus endpoint and kink evaluation), reconstructs a perturbation
    attaining the larger one, and records the value.  A zero model is immune
    to feature perturbations and yields the zero attack at the clean loss.
    """
    beta = np.asarray(beta, dtype=float)
    coeffs = rankone_coeffs(ds.n, ds.m, cfg.lam)
    r1, r2, bn = _residual_norms(beta, ds)

    if bn == 0.0:
        val_g = coeffs.c_g * r1 * r1 + coeffs.d_g * r2 * r2
        val_h = coeffs.c_h * r1 * r1 + coeffs.d_h * r2 * r2
        return RankOneAttack(
            c=np.zeros(ds.n),
            d=np.zeros(ds.p),
            eta_c=0.0,
            eta_c1=0.0,
            eta_c2=0.0,
            branch="h_a" if val_h > val_g else "g_a",
            value=float(max(val_g, val_h)),
        )

    side, branch_code, t_star, value = profile_best_t_batch(
        np.array([r1]), np.array([r2]), np.array([bn]),
        cfg.eta, coeffs.c_g, coeffs.d_g, coeffs.c_h, coeffs.d_h,
    )
    branch = _BRANCH_TAGS[(int(side[0]), int(branch_code[0]))]
    c, d = reconstruct_cd(float(t_star[0]), beta, ds, branch, cfg.eta)
    c1n = float(np.linalg.norm(c[: ds.m]))
    c2n = float(np.linalg.norm(c[ds.m :]))
    return RankOneAttack(
        c=c,
        d=d,
        eta_c=float(np.linalg.norm(c) * np.linalg.norm(d)),
        eta_c1=c1n,
        eta_c2=c2n,
        branch=branch,
        value=float(value[0]),
    )


def reconstruct_cd(
    eta_c1_star: float,
    beta: np.ndarray,
    ds: Dataset,
    branch: str,
    eta: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Build (c, d) realizing a profile value at the given budget split.

    d is beta/||beta||; each group block of c is the closed-form inner
    solution (inflate along -f, deflate along +f, or exactly f to zero the
    residual).  Residual-zeroing branches check that the corresponding
    budget actually covers the residual.
    """
    if branch not in RANKONE_BRANCHES:
        raise ValidationError(f"unknown rank-one branch {branch!r}")
    beta = np.asarray(beta, dtype=float)
    bn = float(np.linalg.norm(beta))
    if bn == 0.0:
        raise ValidationError("reconstruction requires a nonzero beta")
    t = _check_split(eta_c1_star, eta)
    s = float(np.sqrt(max(eta * eta - t * t, 0.0)))
    d = beta / bn
    u = bn  # d'beta

    f1 = (ds.y1 - ds.x1 @ beta) / u
    f2 = (ds.y2 - ds.x2 @ beta) / u

    def inflate(f: np.ndarray, budget: float) -> np.ndarray:
        norm = float(np.linalg.norm(f))
        if norm > 0.0:
            return -budget / norm * f
        out = np.zeros_like(f)
        if out.size:
            out[0] = budget
        return out

    def deflate(f: np.ndarray, budget: float) -> np.ndarray:
        norm = float(np.linalg.norm(f))
        slack = 1e-9 * (1.0 + norm)
        if norm < budget - slack:
            raise ValidationError(
                f"branch {branch} deflates past zero: residual {norm} < budget {budget}"
            )
        return budget / norm * f if norm > 0.0 else np.zeros_like(f)

    def zeroing(f: np.ndarray, budget: float) -> np.ndarray:
        norm = float(np.linalg.norm(f))
        if norm > budget * (1.0 + 1e-9) + 1e-12:
            raise ValidationError(
                f"branch {branch} cannot zero the residual: needs {norm}, "
                f"budget {budget}"
            )
        return f.copy()

    if branch == "g_a":
        c1, c2 = inflate(f1, t), inflate(f2, s)
    elif branch == "g_b1":
        c1, c2 = inflate(f1, t), zeroing(f2, s)
    elif branch == "g_b2":
        c1, c2 = inflate(f1, t), deflate(f2, s)
    elif branch == "h_a":
        c1, c2 = inflate(f1, t), inflate(f2, s)
    elif branch == "h_b1":
        c1, c2 = zeroing(f1, t), inflate(f2, s)
    else:  # h_b2
        c1, c2 = deflate(f1, t), inflate(f2, s)
    return np.concatenate([c1, c2]), d


def apply_rankone(ds: Dataset, atk: RankOneAttack) -> Dataset:
    """Perturb the features by c d'; targets and groups stay put."""
    if atk.c.shape != (ds.n,) or atk.d.shape != (ds.p,):
        raise ValidationError(
            f"attack shapes c{atk.c.shape}, d{atk.d.shape} do not match "
            f"dataset (n={ds.n}, p={ds.p})"
        )
    return Dataset(
        features=ds.features + np.outer(atk.c, atk.d),
        targets=ds.targets,
        m=ds.m,
    )


def rankone_value_at(beta: np.ndarray, ds: Dataset, cfg: TradeoffConfig,
                     atk: RankOneAttack) -> float:
    """Loss of `beta` on the dataset perturbed by the attack."""
    return objective_l(beta, apply_rankone(ds, atk), cfg)
