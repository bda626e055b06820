"""Robust fit against the worst-case rank-one feature perturbation.

The defender minimizes the attack envelope Phi(beta) = max over feasible
rank-one perturbations of the fairness-penalized loss.  Phi splits into a
handful of smooth or once-kinked pieces indexed by which loss side is active
and whether the negative-coefficient group residual is inflated, partially
deflated, or zeroed.  Each piece is attacked with a matching solver (a
closed form over the budget split where one exists, an inexact proximal
point method on the saddle otherwise), every candidate model is then
certified by re-running the exact attack against it, and the best certified
model wins.  A direct subgradient descent on Phi serves as a fallback
candidate so the split never has to be exhaustive to be sound.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field

import numpy as np

from ._kernels import (
    VARIANT_INFLATE,
    VARIANT_KINK_G1,
    VARIANT_KINK_G2,
    gda_saddle,
    piece_value_grad,
    profile_best_t_batch,
)
from .dataset import Dataset
from .errors import ValidationError
from .objective import RankOneCoeffs, TradeoffConfig, rankone_coeffs
from .point_defense import RobustModel
from .rankone_attack import best_rankone, g_profile, h_profile

# Inner (saddle) and outer (proximal point) loop controls.
_INNER_TOL = 1e-6
_INNER_CAP = 2000
_OUTER_TOL = 1e-4
_OUTER_CAP = 500
_SMOOTHNESS_PROBES = 8
_GOLDEN_ITERS = 80
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# Curvature constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeakConvexityConstants:
    """Curvature bounds that size the proximal regularization.

    rho1 bounds how concave the objective can fail to be in the budget
    split; rho2 bounds how convex it can fail to be in the model weights.
    Both are valid on the model ball of radius b_beta.
    """

    rho1: float
    rho2: float
    b_beta: float

    def prox_rho(self) -> float:
        """Proximal weight making each regularized piece a strong saddle."""
        return 2.0 * max(self.rho1, self.rho2) + 1.0


def weak_convexity_constants(
    ds: Dataset, cfg: TradeoffConfig, b_beta: float | None = None
) -> WeakConvexityConstants:
    """Weak convexity/concavity bounds for the rank-one saddle pieces.

    The split-direction bound scales the fairness weight by the squared
    model radius; the model-direction bound comes from the negative
    coefficients times the worst perturbed spectral norm of the matching
    group block.  When no radius is given the default is ten times the
    ordinary least-squares norm (floored at one so a tiny fit still leaves
    room to move).
    """
    if b_beta is None:
        ols, *_ = np.linalg.lstsq(ds.features, ds.targets, rcond=None)
        b_beta = 10.0 * max(1.0, float(np.linalg.norm(ols)))
    b_beta = float(b_beta)
    if not np.isfinite(b_beta) or b_beta <= 0.0:
        raise ValidationError(f"b_beta must be finite and > 0, got {b_beta}")
    coeffs = rankone_coeffs(ds.n, ds.m, cfg.lam)
    sigma1 = float(np.linalg.norm(ds.x1, 2))
    sigma2 = float(np.linalg.norm(ds.x2, 2))
    n2 = ds.n - ds.m
    rho1 = 2.0 * cfg.lam * (1.0 / ds.m + 1.0 / n2) * b_beta * b_beta + 1e-9
    rho2 = (
        2.0
        * max(
            max(0.0, -coeffs.d_g) * (sigma2 + cfg.eta) ** 2,
            max(0.0, -coeffs.c_h) * (sigma1 + cfg.eta) ** 2,
        )
        + 1e-9
    )
    return WeakConvexityConstants(rho1=float(rho1), rho2=float(rho2), b_beta=b_beta)


# ---------------------------------------------------------------------------
# Piece descriptors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubproblemDescriptor:
    """One piece of the attack envelope and how to minimize it.

    `cc` weighs the group-1 residual term, `dd` the group-2 term.  The
    variant selects the smooth formula (both groups inflated, or one group
    clamped at zero past its kink).  `constraint` documents any a-posteriori
    feasibility condition a closed-form minimizer must satisfy.
    """

    name: str
    solver: str
    side: str
    variant: int
    cc: float
    dd: float
    constraint: str = ""


def split_subproblems(coeffs: RankOneCoeffs) -> list[SubproblemDescriptor]:
    """Enumerate envelope pieces for the sign pattern of the coefficients.

    With no fairness weight the two sides coincide and one smooth piece
    suffices.  Nonnegative cross coefficients give the two smooth sides.
    Each negative cross coefficient splits its side into a residual-zeroing
    piece (closed form over the split) and a partial-deflation piece
    (saddle).
    """
    c_g, d_g, c_h, d_h = coeffs.c_g, coeffs.d_g, coeffs.c_h, coeffs.d_h
    if c_g == c_h and d_g == d_h:
        return [
            SubproblemDescriptor("g_a", "ipp", "g", VARIANT_INFLATE, c_g, d_g)
        ]
    subs: list[SubproblemDescriptor] = []
    if d_g >= 0.0:
        subs.append(SubproblemDescriptor("g_a", "ipp", "g", VARIANT_INFLATE, c_g, d_g))
    else:
        subs.append(
            SubproblemDescriptor(
                "g_b1", "closed", "g", VARIANT_KINK_G2, c_g, d_g,
                constraint="group-2 residual within the leftover budget",
            )
        )
        subs.append(
            SubproblemDescriptor("g_b2", "ipp", "g", VARIANT_KINK_G2, c_g, d_g)
        )
    if c_h >= 0.0:
        subs.append(SubproblemDescriptor("h_a", "ipp", "h", VARIANT_INFLATE, c_h, d_h))
    else:
        subs.append(
            SubproblemDescriptor(
                "h_b1", "closed", "h", VARIANT_KINK_G1, c_h, d_h,
                constraint="group-1 residual within its budget share",
            )
        )
        subs.append(
            SubproblemDescriptor("h_b2", "ipp", "h", VARIANT_KINK_G1, c_h, d_h)
        )
    return subs


# ---------------------------------------------------------------------------
# Shared pieces: profiles, projections, starts
# ---------------------------------------------------------------------------


def _side_profile_max(
    side: str, beta: np.ndarray, ds: Dataset, coeffs: RankOneCoeffs, eta: float
) -> float:
    """Exact inner maximum of one side's profile over the budget split."""
    prof = g_profile if side == "g" else h_profile

    def val(t: float) -> float:
        return prof(t, beta, ds, coeffs, eta)

    beta = np.asarray(beta, dtype=float)
    bn = float(np.linalg.norm(beta))
    cands = [0.0, eta]
    segments: list[tuple[float, float]] = []
    if bn == 0.0:
        segments = []
    elif side == "g":
        if coeffs.d_g >= 0.0:
            segments = [(0.0, eta)]
        else:
            r2 = float(np.linalg.norm(ds.y2 - ds.x2 @ beta))
            t0 = float(np.sqrt(max(eta * eta - (r2 / bn) ** 2, 0.0)))
            cands.append(t0)
            segments = [(t0, eta)]
    else:
        if coeffs.c_h >= 0.0:
            segments = [(0.0, eta)]
        else:
            r1 = float(np.linalg.norm(ds.y1 - ds.x1 @ beta))
            t0 = min(r1 / bn, eta)
            cands.append(t0)
            segments = [(0.0, t0)]

    for lo, hi in segments:
        if hi - lo <= 0.0:
            continue
        a, b = lo, hi
        for _ in range(_GOLDEN_ITERS):
            h = b - a
            c = b - _INVPHI * h
            d = a + _INVPHI * h
            if val(c) >= val(d):
                b = d
            else:
                a = c
        cands.append(0.5 * (a + b))
    return max(val(t) for t in cands)


def envelope_value(beta: np.ndarray, ds: Dataset, cfg: TradeoffConfig) -> float:
    """Worst-case rank-one loss of a model (the defended quantity)."""
    coeffs = rankone_coeffs(ds.n, ds.m, cfg.lam)
    return max(
        _side_profile_max("g", beta, ds, coeffs, cfg.eta),
        _side_profile_max("h", beta, ds, coeffs, cfg.eta),
    )


def _project_ball(beta: np.ndarray, radius: float) -> np.ndarray:
    norm = float(np.linalg.norm(beta))
    if norm > radius:
        return beta * (radius / norm)
    return beta


def _start_points(ds: Dataset, n_extra: int, seed: int = 0) -> np.ndarray:
    ols, *_ = np.linalg.lstsq(ds.features, ds.targets, rcond=None)
    spread = 1.0 + float(np.linalg.norm(ols))
    rng = np.random.default_rng(seed)
    extra = ols + spread * rng.standard_normal((n_extra, ds.p))
    return np.vstack([ols, np.zeros(ds.p), extra])


# ---------------------------------------------------------------------------
# Closed-form pieces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClosedCandidate:
    """Minimizer of a residual-zeroing piece with its feasibility status."""

    beta: np.ndarray
    value: float
    feasible: bool

    def __post_init__(self):
        arr = np.asarray(self.beta, dtype=float).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "beta", arr)


def _closed_value_grad(
    desc: SubproblemDescriptor, beta: np.ndarray, ds: Dataset, eta: float
) -> tuple[float, np.ndarray]:
    """Value and subgradient of a zeroing piece at its pinned budget split.

    Zeroing one group's residual costs exactly that residual's norm, so the
    other group keeps sqrt(eta^2 B^2 - r^2) of perturbation and the piece
    value is coef*(r_kept + sqrt(max(eta^2 B^2 - r_zeroed^2, 0)))^2.
    """
    res1 = ds.y1 - ds.x1 @ beta
    res2 = ds.y2 - ds.x2 @ beta
    r1 = float(np.linalg.norm(res1))
    r2 = float(np.linalg.norm(res2))
    bn = float(np.linalg.norm(beta))
    g_r1 = -(ds.x1.T @ res1) / r1 if r1 > 1e-300 else np.zeros_like(beta)
    g_r2 = -(ds.x2.T @ res2) / r2 if r2 > 1e-300 else np.zeros_like(beta)
    g_bn = beta / bn if bn > 1e-300 else np.zeros_like(beta)

    if desc.name == "g_b1":
        coef, r_keep, g_keep, r_zero, g_zero = desc.cc, r1, g_r1, r2, g_r2
    elif desc.name == "h_b1":
        coef, r_keep, g_keep, r_zero, g_zero = desc.dd, r2, g_r2, r1, g_r1
    else:
        raise ValidationError(f"no closed form for piece {desc.name!r}")

    qsq = eta * eta * bn * bn - r_zero * r_zero
    q = float(np.sqrt(max(qsq, 0.0)))
    u = r_keep + q
    value = coef * u * u
    grad = 2.0 * coef * u * g_keep
    if q > 1e-12 * (1.0 + eta * bn):
        grad = grad + 2.0 * coef * u * (eta * eta * bn * g_bn - r_zero * g_zero) / q
    return float(value), grad


def solve_sp_closed(
    desc: SubproblemDescriptor,
    ds: Dataset,
    cfg: TradeoffConfig,
    constants: WeakConvexityConstants | None = None,
) -> ClosedCandidate:
    """Minimize a residual-zeroing piece over the model ball.

    Multi-start projected descent with an adaptive step; the zeroing
    feasibility condition (the doomed residual must fit inside the budget
    times the model norm) is checked a posteriori on the winner.
    """
    if desc.solver != "closed":
        raise ValidationError(f"piece {desc.name!r} has no closed-form solver")
    if constants is None:
        constants = weak_convexity_constants(ds, cfg)
    radius = constants.b_beta

    best_beta = None
    best_val = np.inf
    for start in _start_points(ds, 8, seed=3):
        beta = _project_ball(np.array(start, dtype=float), radius)
        val, grad = _closed_value_grad(desc, beta, ds, cfg.eta)
        step = 0.5 * (1.0 + float(np.linalg.norm(beta))) / (
            1.0 + float(np.linalg.norm(grad))
        )
        for _ in range(400):
            trial = _project_ball(beta - step * grad, radius)
            tval, tgrad = _closed_value_grad(desc, trial, ds, cfg.eta)
            if tval < val:
                beta, val, grad = trial, tval, tgrad
                step *= 1.2
            else:
                step *= 0.5
                if step < 1e-14:
                    break
        if val < best_val:
            best_val, best_beta = val, beta

    res1 = ds.y1 - ds.x1 @ best_beta
    res2 = ds.y2 - ds.x2 @ best_beta
    bn = float(np.linalg.norm(best_beta))
    zeroed = float(np.linalg.norm(res2 if desc.name == "g_b1" else res1))
    feasible = zeroed <= cfg.eta * bn * (1.0 + 1e-9) + 1e-12
    return ClosedCandidate(beta=best_beta, value=float(best_val), feasible=feasible)


# ---------------------------------------------------------------------------
# Inexact proximal point on the saddle pieces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IppResult:
    """Outcome of the proximal point loop on one saddle piece."""

    beta: np.ndarray
    t: float
    value: float
    outer_iters: int
    residual: float
    stationary: bool
    trace: tuple = ()

    def __post_init__(self):
        arr = np.asarray(self.beta, dtype=float).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "beta", arr)


def _estimate_smoothness(
    desc: SubproblemDescriptor,
    ds: Dataset,
    eta: float,
    beta_c: np.ndarray,
    t_c: float,
    rng: np.random.Generator,
) -> float:
    """Gradient-Lipschitz estimate from randomized finite differences.

    Probes the piece gradient along random directions around the proximal
    center; the largest observed gradient change per unit step bounds the
    local smoothness seen by the inner loop.
    """
    p = beta_c.size
    scale = 1.0 + float(np.linalg.norm(beta_c)) + abs(t_c)
    eps = 1e-5 * scale
    _, gb0, gt0 = piece_value_grad(
        ds.x1, ds.y1, ds.x2, ds.y2, desc.cc, desc.dd, desc.variant, eta, beta_c, t_c
    )
    g0 = np.concatenate([gb0, [gt0]])
    l_hat = 1e-9
    for _ in range(_SMOOTHNESS_PROBES):
        direction = rng.standard_normal(p + 1)
        direction /= float(np.linalg.norm(direction))
        beta_p = beta_c + eps * direction[:p]
        t_p = min(max(t_c + eps * direction[p], 0.0), eta)
        _, gb1, gt1 = piece_value_grad(
            ds.x1, ds.y1, ds.x2, ds.y2, desc.cc, desc.dd, desc.variant, eta,
            beta_p, t_p,
        )
        g1 = np.concatenate([gb1, [gt1]])
        l_hat = max(l_hat, float(np.linalg.norm(g1 - g0)) / eps)
    return l_hat


def ipp_solve(
    desc: SubproblemDescriptor,
    ds: Dataset,
    cfg: TradeoffConfig,
    constants: WeakConvexityConstants,
) -> IppResult:
    """Inexact proximal point method on one saddle piece.

    Each outer iteration recenters a proximally regularized saddle (strongly
    convex in the model, strongly concave in the budget split, by the choice
    of the proximal weight) and solves it inexactly with projected gradient
    descent-ascent.  The loop stops when an outer step barely moves; hitting
    the cap leaves the result flagged non-stationary but still usable.
    """
    if desc.solver != "ipp":
        raise ValidationError(f"piece {desc.name!r} is not a saddle piece")
    coeffs = rankone_coeffs(ds.n, ds.m, cfg.lam)
    rho = constants.prox_rho()
    # A checksum seed keeps runs reproducible across processes; the builtin
    # string hash is salted per interpreter and would not be.
    rng = np.random.default_rng(zlib.crc32(desc.name.encode()))

    ols, *_ = np.linalg.lstsq(ds.features, ds.targets, rcond=None)
    beta_c = _project_ball(np.asarray(ols, dtype=float), constants.b_beta)
    t_c = 0.5 * cfg.eta

    trace = []
    stationary = False
    move = np.inf
    outer = 0
    for outer in range(1, _OUTER_CAP + 1):
        l_hat = _estimate_smoothness(desc, ds, cfg.eta, beta_c, t_c, rng)
        step = 1.0 / (2.0 * rho + l_hat)
        beta_k, t_k, _, _ = gda_saddle(
            ds.x1, ds.y1, ds.x2, ds.y2, desc.cc, desc.dd, desc.variant, cfg.eta,
            beta_c, t_c, rho, constants.b_beta, step, _INNER_CAP, _INNER_TOL,
        )
        move = float(
            np.sqrt(np.sum((beta_k - beta_c) ** 2) + (t_k - t_c) ** 2)
        )
        value = _side_profile_max(desc.side, beta_k, ds, coeffs, cfg.eta)
        trace.append((outer, move, value))
        beta_c, t_c = beta_k, t_k
        if move <= _OUTER_TOL:
            stationary = True
            break

    final_value = _side_profile_max(desc.side, beta_c, ds, coeffs, cfg.eta)
    return IppResult(
        beta=beta_c,
        t=float(t_c),
        value=float(final_value),
        outer_iters=outer,
        residual=float(move),
        stationary=stationary,
        trace=tuple(trace),
    )


# ---------------------------------------------------------------------------
# Fallback: subgradient descent on the true envelope
# ---------------------------------------------------------------------------


def _danskin_descent(
    ds: Dataset,
    cfg: TradeoffConfig,
    coeffs: RankOneCoeffs,
    constants: WeakConvexityConstants,
    n_starts: int = 10,
    n_iters: int = 300,
) -> tuple[np.ndarray, float]:
    """Multi-start subgradient descent directly on the attack envelope.

    At each iterate the exact inner maximum is computed for every start in
    one batch; the gradient of the active piece at its maximizing split is
    an envelope subgradient, and a normalized diminishing step follows it.
    """
    betas = _start_points(ds, max(n_starts - 2, 0), seed=7)
    betas = np.array([_project_ball(b, constants.b_beta) for b in betas])
    s_count = betas.shape[0]

    best_beta = betas[0].copy()
    best_val = np.inf

    def batch_envelope(points: np.ndarray):
        res1 = ds.y1[None, :] - points @ ds.x1.T
        res2 = ds.y2[None, :] - points @ ds.x2.T
        r1 = np.linalg.norm(res1, axis=1)
        r2 = np.linalg.norm(res2, axis=1)
        bn = np.linalg.norm(points, axis=1)
        return profile_best_t_batch(
            r1, r2, bn, cfg.eta, coeffs.c_g, coeffs.d_g, coeffs.c_h, coeffs.d_h
        )

    for it in range(n_iters):
        side, _, t_star, values = batch_envelope(betas)
        idx = int(np.argmin(values))
        if values[idx] < best_val:
            best_val = float(values[idx])
            best_beta = betas[idx].copy()
        step = 1.0 / np.sqrt(it + 1.0)
        for s in range(s_count):
            if side[s] == 0:
                cc, dd = coeffs.c_g, coeffs.d_g
                variant = VARIANT_INFLATE if coeffs.d_g >= 0.0 else VARIANT_KINK_G2
            else:
                cc, dd = coeffs.c_h, coeffs.d_h
                variant = VARIANT_INFLATE if coeffs.c_h >= 0.0 else VARIANT_KINK_G1
            _, gb, _ = piece_value_grad(
                ds.x1, ds.y1, ds.x2, ds.y2, cc, dd, variant, cfg.eta,
                betas[s], float(t_star[s]),
            )
            norm = float(np.linalg.norm(gb))
            if norm > 1e-300:
                betas[s] = _project_ball(betas[s] - step * gb / norm,
                                         constants.b_beta)

    _, _, _, values = batch_envelope(betas)
    idx = int(np.argmin(values))
    if values[idx] < best_val:
        best_val = float(values[idx])
        best_beta = betas[idx].copy()
    return best_beta, best_val


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankOneDefenseDiagnostics:
    """How the winning rank-one defense candidate was produced."""

    case_label: str
    claimed_value: float
    certified_value: float
    stationary: bool
    outer_iters: int
    residual: float
    rho1: float
    rho2: float
    b_beta: float
    certified: bool = True
    notes: str = ""
    trace: tuple = field(default=(), repr=False)


def _write_trace(path: str, rows: list[tuple[str, int, float, float]]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["piece", "outer_iter", "residual", "value"])
        for piece, outer, residual, value in rows:
            writer.writerow([piece, outer, f"{residual:.12g}", f"{value:.12g}"])


def robust_fit_rankone(
    ds: Dataset,
    cfg: TradeoffConfig,
    b_beta: float | None = None,
    trace_path: str | None = None,
) -> RobustModel:
    """Fit weights minimizing the worst-case rank-one perturbation loss.

    Runs every envelope piece's solver plus the direct envelope descent,
    certifies each candidate by recomputing the exact attack against it,
    and returns the candidate with the smallest certified value.  The
    optional trace file records (piece, outer iteration, step movement,
    piece value) rows for the proximal point runs.
    """
    coeffs = rankone_coeffs(ds.n, ds.m, cfg.lam)
    constants = weak_convexity_constants(ds, cfg, b_beta)
    descriptors = split_subproblems(coeffs)

    candidates: list[tuple[np.ndarray, float, str, dict]] = []
    trace_rows: list[tuple[str, int, float, float]] = []
    for desc in descriptors:
        if desc.solver == "closed":
            cand = solve_sp_closed(desc, ds, cfg, constants)
            extras = {
                "stationary": True,
                "outer_iters": 0,
                "residual": 0.0,
                "notes": "" if cand.feasible else "zeroing constraint violated",
            }
            candidates.append(
                (np.asarray(cand.beta), cand.value, f"closed({desc.name})", extras)
            )
        else:
            res = ipp_solve(desc, ds, cfg, constants)
            for outer, move, value in res.trace:
                trace_rows.append((desc.name, outer, move, value))
            extras = {
                "stationary": res.stationary,
                "outer_iters": res.outer_iters,
                "residual": res.residual,
                "notes": "" if res.stationary else "outer iteration cap reached",
            }
            candidates.append(
                (np.asarray(res.beta), res.value, f"ipp({desc.name})", extras)
            )

    fb_beta, fb_val = _danskin_descent(ds, cfg, coeffs, constants)
    candidates.append(
        (
            fb_beta,
            fb_val,
            "fallback",
            {"stationary": True, "outer_iters": 0, "residual": 0.0, "notes": ""},
        )
    )

    best = None
    for beta, claimed, label, extras in candidates:
        certified = best_rankone(beta, ds, cfg).value
        notes = extras["notes"]
        if claimed > certified + 1e-6:
            extra = f"claimed {claimed:.6g} exceeds certified {certified:.6g}"
            notes = f"{notes}; {extra}" if notes else extra
        entry = (certified, beta, claimed, label, extras, notes)
        if best is None or certified < best[0]:
            best = entry

    certified, beta, claimed, label, extras, notes = best
    if trace_path is not None:
        _write_trace(trace_path, trace_rows)
    diag = RankOneDefenseDiagnostics(
        case_label=label,
        claimed_value=float(claimed),
        certified_value=float(certified),
        stationary=bool(extras["stationary"]),
        outer_iters=int(extras["outer_iters"]),
        residual=float(extras["residual"]),
        rho1=constants.rho1,
        rho2=constants.rho2,
        b_beta=constants.b_beta,
        notes=notes,
        trace=tuple(trace_rows),
    )
    return RobustModel(
        beta=beta,
        minimax_value=float(certified),
        diagnostics=diag,
        source="rankone_defense",
    )
