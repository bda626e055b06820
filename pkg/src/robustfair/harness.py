"""Baselines, attack-aware evaluation, and experiment sweeps.

Ties the attack and defense pieces together: ordinary least squares and the
non-robust fairness-penalized fit as baselines, a scorer that recomputes the
exact worst-case attack against whichever model is being judged, and a
deterministic sweep runner that walks a parameter grid and emits stable CSV
and JSON outputs.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset, SynthParams, synth_generate
from .errors import ValidationError
from .objective import TradeoffConfig, fairness_gap, mse, rankone_coeffs
from .point_attack import apply_point, best_point
from .point_defense import RobustModel, minimize_envelope, robust_fit_point
from .rankone_attack import apply_rankone, best_rankone
from .rankone_defense import robust_fit_rankone

ATTACK_SCHEMES = ("point", "rankone")
DEFENDERS = ("ols", "fair", "robust")


# ---------------------------------------------------------------------------
# Baseline fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaselineDiagnostics:
    """Minimal provenance for a non-minimax fit."""

    case_label: str
    notes: str = ""


def ols_fit(ds: Dataset) -> RobustModel:
    """Ordinary least squares on the pooled data."""
    beta, *_ = np.linalg.lstsq(ds.features, ds.targets, rcond=None)
    return RobustModel(
        beta=beta,
        minimax_value=mse(beta, ds),
        diagnostics=BaselineDiagnostics(case_label="ols"),
        source="baseline",
    )


def fair_fit_unrobust(ds: Dataset, lam: float) -> RobustModel:
    """Fairness-penalized fit on clean data (no adversary).

    The penalized loss is the larger of two quadratics, one per sign of the
    group residual gap.  Each branch has normal equations; a branch solution
    counts when its quadratic is convex and the solution lands on its own
    side of the gap.  If neither branch closes, a descent on the two-piece
    envelope takes over.  A zero penalty reduces to least squares.
    """
    coeffs = rankone_coeffs(ds.n, ds.m, lam)
    if lam == 0.0:
        base = ols_fit(ds)
        return RobustModel(
            beta=base.beta,
            minimax_value=base.minimax_value,
            diagnostics=BaselineDiagnostics(case_label="fair_unrobust(ols)"),
            source="baseline",
        )

    g1 = ds.x1.T @ ds.x1
    g2 = ds.x2.T @ ds.x2
    b1 = ds.x1.T @ ds.y1
    b2 = ds.x2.T @ ds.y2
    yy1 = float(ds.y1 @ ds.y1)
    yy2 = float(ds.y2 @ ds.y2)

    def clean_value(beta: np.ndarray) -> float:
        return mse(beta, ds) + lam * fairness_gap(beta, ds)

    def signed_gap(beta: np.ndarray) -> float:
        r1 = ds.y1 - ds.x1 @ beta
        r2 = ds.y2 - ds.x2 @ beta
        return float(r1 @ r1) / ds.m - float(r2 @ r2) / ds.n2

    accepted = []
    branches = (
        ("g", coeffs.c_g, coeffs.d_g, 1.0),
        ("h", coeffs.c_h, coeffs.d_h, -1.0),
    )
    for name, cc, dd, sign in branches:
        hess = cc * g1 + dd * g2
        hess = 0.5 * (hess + hess.T)
        w = np.linalg.eigvalsh(hess)
        tol = 1e-10 * (1.0 + abs(float(np.trace(hess))))
        if w[0] < -tol:
            continue
        if w[0] <= tol:
            beta, *_ = np.linalg.lstsq(hess, cc * b1 + dd * b2, rcond=None)
        else:
            beta = np.linalg.solve(hess, cc * b1 + dd * b2)
        gap_tol = 1e-9 * (1.0 + yy1 / ds.m + yy2 / ds.n2)
        if sign * signed_gap(beta) >= -gap_tol:
            accepted.append((clean_value(beta), name, beta))

    if accepted:
        value, name, beta = min(accepted, key=lambda entry: entry[0])
        label = f"fair_unrobust({name})"
    else:
        m_stack = np.array(
            [cc * g1 + dd * g2 for _, cc, dd, _ in branches]
        )
        e_stack = np.array([cc * b1 + dd * b2 for _, cc, dd, _ in branches])
        k_stack = np.array([cc * yy1 + dd * yy2 for _, cc, dd, _ in branches])
        ols, *_ = np.linalg.lstsq(ds.features, ds.targets, rcond=None)
        rng = np.random.default_rng(0)
        spread = 1.0 + float(np.linalg.norm(ols))
        starts = np.vstack(
            [ols, np.zeros(ds.p), ols + spread * rng.standard_normal((10, ds.p))]
        )
        beta, value, _ = minimize_envelope(m_stack, e_stack, k_stack, starts)
        label = "fair_unrobust(envelope)"
        value = clean_value(beta)
    return RobustModel(
        beta=beta,
        minimax_value=float(value),
        diagnostics=BaselineDiagnostics(case_label=label),
        source="baseline",
    )


# ---------------------------------------------------------------------------
# Attack-aware evaluation
# ---------------------------------------------------------------------------


def r2_score(beta: np.ndarray, ds: Dataset) -> float:
    """Coefficient of determination against the pooled target mean."""
    res = ds.targets - ds.features @ beta
    centered = ds.targets - ds.targets.mean()
    tss = float(centered @ centered)
    if tss == 0.0:
        return 0.0
    return 1.0 - float(res @ res) / tss


@dataclass(frozen=True)
class AttackReport:
    """Clean and worst-case-poisoned metrics for one model."""

    scheme: str
    clean_mse: float
    clean_gap: float
    clean_objective: float
    clean_r2: float
    poisoned_value: float
    poisoned_mse: float
    poisoned_gap: float
    poisoned_r2: float
    attack_branch: str
    attack: dict

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "clean": {
                "mse": self.clean_mse,
                "gap": self.clean_gap,
                "objective": self.clean_objective,
                "r2": self.clean_r2,
            },
            "poisoned": {
                "value": self.poisoned_value,
                "mse": self.poisoned_mse,
                "gap": self.poisoned_gap,
                "r2": self.poisoned_r2,
            },
            "attack_branch": self.attack_branch,
            "attack": self.attack,
        }


def evaluate_under_attack(
    beta: np.ndarray, ds: Dataset, cfg: TradeoffConfig, scheme: str
) -> AttackReport:
    """Score a model on clean data and under its own worst-case attack.

    The attack is always recomputed against the model being evaluated, so
    comparisons between defenders face each one with its personal adversary
    rather than a shared perturbation.
    """
    if scheme not in ATTACK_SCHEMES:
        raise ValidationError(
            f"scheme must be one of {ATTACK_SCHEMES}, got {scheme!r}"
        )
    beta = np.asarray(beta, dtype=float)
    clean_m = mse(beta, ds)
    clean_gap = fairness_gap(beta, ds)
    if scheme == "point":
        atk = best_point(beta, ds, cfg)
        poisoned = apply_point(ds, atk)
    else:
        atk = best_rankone(beta, ds, cfg)
        poisoned = apply_rankone(ds, atk)
    poisoned_gap = fairness_gap(beta, poisoned)
    poisoned_m = mse(beta, poisoned)
    return AttackReport(
        scheme=scheme,
        clean_mse=clean_m,
        clean_gap=clean_gap,
        clean_objective=clean_m + cfg.lam * clean_gap,
        clean_r2=r2_score(beta, ds),
        poisoned_value=poisoned_m + cfg.lam * poisoned_gap,
        poisoned_mse=poisoned_m,
        poisoned_gap=poisoned_gap,
        poisoned_r2=r2_score(beta, poisoned),
        attack_branch=atk.branch,
        attack=atk.to_json(),
    )


# ---------------------------------------------------------------------------
# Sweep runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid description for a sweep: scheme x seeds x lams x etas x defenders."""

    scheme: str
    synth: SynthParams
    seeds: tuple
    lams: tuple
    etas: tuple
    defenders: tuple = DEFENDERS
    csv_path: str | None = None
    json_path: str | None = None

    def __post_init__(self):
        if self.scheme not in ATTACK_SCHEMES:
            raise ValidationError(
                f"scheme must be one of {ATTACK_SCHEMES}, got {self.scheme!r}"
            )
        for field_name in ("seeds", "lams", "etas", "defenders"):
            seq = tuple(getattr(self, field_name))
            if not seq:
                raise ValidationError(f"{field_name} must be nonempty")
            object.__setattr__(self, field_name, seq)
        bad = [d for d in self.defenders if d not in DEFENDERS]
        if bad:
            raise ValidationError(f"unknown defenders {bad}; choose from {DEFENDERS}")
        for lam in self.lams:
            if not np.isfinite(lam) or lam < 0:
                raise ValidationError(f"lam grid values must be finite and >= 0, got {lam}")
        for eta in self.etas:
            if not np.isfinite(eta) or eta <= 0:
                raise ValidationError(f"eta grid values must be finite and > 0, got {eta}")


SWEEP_COLUMNS = (
    "scheme",
    "seed",
    "lam",
    "eta",
    "defender",
    "status",
    "minimax_value",
    "beta_norm",
    "clean_mse",
    "clean_gap",
    "clean_objective",
    "clean_r2",
    "attack_branch",
    "poisoned_value",
    "poisoned_mse",
    "poisoned_gap",
    "poisoned_r2",
    "error",
)


@dataclass(frozen=True)
class Report:
    """Sweep results: formatted rows plus machine-readable diagnostics."""

    columns: tuple
    rows: tuple
    diagnostics: dict

    def to_csv_text(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow(row)
        return buffer.getvalue()

    def to_json_text(self) -> str:
        return json.dumps(self.diagnostics, sort_keys=True, indent=2) + "\n"


def _fmt(value: float) -> str:
    return format(float(value), ".12g")


def _fit_defender(
    defender: str, scheme: str, ds: Dataset, cfg: TradeoffConfig
) -> RobustModel:
    if defender == "ols":
        return ols_fit(ds)
    if defender == "fair":
        return fair_fit_unrobust(ds, cfg.lam)
    if scheme == "point":
        return robust_fit_point(ds, cfg)
    return robust_fit_rankone(ds, cfg)


def run_sweep(cfg: ExperimentConfig) -> Report:
    """Walk the experiment grid; never let one failing cell kill the run.

    Rows come out in loop order (seed, lam, eta, defender) with all floats
    formatted to 12 significant digits, so repeated runs produce
    byte-identical CSV text.  Cells that raise are recorded with their error
    message and the sweep continues.
    """
    rows = []
    errors = []
    datasets = {}
    for seed in cfg.seeds:
        if seed not in datasets:
            datasets[seed] = synth_generate(replace(cfg.synth, seed=int(seed)))
        ds = datasets[seed]
        for lam in cfg.lams:
            for eta in cfg.etas:
                tradeoff = TradeoffConfig(lam=float(lam), eta=float(eta))
                for defender in cfg.defenders:
                    prefix = [
                        cfg.scheme,
                        str(int(seed)),
                        _fmt(lam),
                        _fmt(eta),
                        defender,
                    ]
                    try:
                        model = _fit_defender(defender, cfg.scheme, ds, tradeoff)
                        report = evaluate_under_attack(
                            model.beta, ds, tradeoff, cfg.scheme
                        )
                        rows.append(tuple(prefix + [
                            "ok",
                            _fmt(model.minimax_value),
                            _fmt(float(np.linalg.norm(model.beta))),
                            _fmt(report.clean_mse),
                            _fmt(report.clean_gap),
                            _fmt(report.clean_objective),
                            _fmt(report.clean_r2),
                            report.attack_branch,
                            _fmt(report.poisoned_value),
                            _fmt(report.poisoned_mse),
                            _fmt(report.poisoned_gap),
                            _fmt(report.poisoned_r2),
                            "",
                        ]))
                    except Exception as exc:  # noqa: BLE001 - recorded, not hidden
                        message = f"{type(exc).__name__}: {exc}"
                        errors.append({
                            "seed": int(seed),
                            "lam": float(lam),
                            "eta": float(eta),
                            "defender": defender,
                            "message": message,
                        })
                        rows.append(tuple(
                            prefix + ["error"] + [""] * 11 + [message]
                        ))

    diagnostics = {
        "scheme": cfg.scheme,
        "seeds": [int(s) for s in cfg.seeds],
        "lams": [float(v) for v in cfg.lams],
        "etas": [float(v) for v in cfg.etas],
        "defenders": list(cfg.defenders),
        "n_rows": len(rows),
        "n_errors": len(errors),
        "errors": errors,
    }
    report = Report(columns=SWEEP_COLUMNS, rows=tuple(rows), diagnostics=diagnostics)
    if cfg.csv_path is not None:
        with open(cfg.csv_path, "w", newline="") as handle:
            handle.write(report.to_csv_text())
    if cfg.json_path is not None:
        with open(cfg.json_path, "w") as handle:
            handle.write(report.to_json_text())
    return report
