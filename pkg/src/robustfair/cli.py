"""Command line entry points.

Four subcommands: `fit` trains a model (baseline or robust) and prints it as
JSON, `attack` computes the exact worst-case perturbation against a model,
`sweep` runs an experiment grid to CSV/JSON, and `stats` prints dataset
summary quantities.  Validation problems (bad arguments, malformed CSV)
exit with status 2; success exits 0.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .dataset import compute_stats, demo_synth_params, load_csv, synth_generate
from .errors import ValidationError
from .harness import (
    ATTACK_SCHEMES,
    DEFENDERS,
    ExperimentConfig,
    evaluate_under_attack,
    fair_fit_unrobust,
    ols_fit,
    run_sweep,
)
from .objective import TradeoffConfig
from .point_defense import robust_fit_point
from .rankone_defense import robust_fit_rankone

_FIT_CHOICES = ("ols", "fair", "robust-point", "robust-rankone")


# ---------------------------------------------------------------------------
# Shared argument plumbing
# ---------------------------------------------------------------------------


def _add_data_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--csv",
        help="dataset CSV with a header; needs 'target' and 'group' (1 or 2) "
        "columns, every other column is a feature",
    )
    parser.add_argument(
        "--synth-seed",
        type=int,
        help="generate the demo synthetic dataset with this seed instead of "
        "reading a CSV",
    )
    parser.add_argument("--group1-size", type=int, default=100,
                        help="synthetic group-1 rows (default 100)")
    parser.add_argument("--group2-size", type=int, default=100,
                        help="synthetic group-2 rows (default 100)")
    parser.add_argument("--features", type=int, default=5,
                        help="synthetic feature count (default 5)")
    parser.add_argument("--standardize", action="store_true",
                        help="z-score the feature columns")


def _load_dataset(args: argparse.Namespace):
    if (args.csv is None) == (args.synth_seed is None):
        raise ValidationError("provide exactly one of --csv or --synth-seed")
    if args.csv is not None:
        return load_csv(args.csv, standardize=args.standardize)
    params = demo_synth_params(
        seed=args.synth_seed,
        m=args.group1_size,
        n2=args.group2_size,
        p=args.features,
    )
    if args.standardize:
        from dataclasses import replace

        params = replace(params, standardize=True)
    return synth_generate(params)


def _float_list(text: str) -> tuple:
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise ValidationError(f"empty number list {text!r}")
    return values


def _seed_list(text: str) -> tuple:
    """Seeds as a comma list ('0,1,2') or a half-open range ('0:20')."""
    text = text.strip()
    if ":" in text:
        lo, _, hi = text.partition(":")
        try:
            return tuple(range(int(lo), int(hi)))
        except ValueError:
            raise ValidationError(f"bad seed range {text!r}") from None
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from None


def _emit(payload: dict, out_path: str | None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w") as handle:
            handle.write(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_fit(args: argparse.Namespace) -> int:
    ds = _load_dataset(args)
    if args.defender == "ols":
        model = ols_fit(ds)
    elif args.defender == "fair":
        if args.lam is None:
            raise ValidationError("--lam is required for the fair defender")
        model = fair_fit_unrobust(ds, args.lam)
    else:
        if args.lam is None or args.eta is None:
            raise ValidationError(
                "--lam and --eta are required for robust defenders"
            )
        cfg = TradeoffConfig(lam=args.lam, eta=args.eta)
        if args.defender == "robust-point":
            model = robust_fit_point(ds, cfg)
        else:
            model = robust_fit_rankone(ds, cfg)
    payload = model.to_json()
    payload["defender"] = args.defender
    _emit(payload, args.out)
    return 0


def _cmd_attack(args: argparse.Namespace) -> int:
    ds = _load_dataset(args)
    cfg = TradeoffConfig(lam=args.lam, eta=args.eta)
    if args.beta is not None:
        beta = np.array(_float_list(args.beta))
        if beta.shape != (ds.p,):
            raise ValidationError(
                f"--beta has {beta.size} entries, dataset has {ds.p} features"
            )
        fitted_with = "given"
    else:
        if args.defender == "ols":
            beta = ols_fit(ds).beta
        elif args.defender == "fair":
            beta = fair_fit_unrobust(ds, args.lam).beta
        elif args.defender == "robust-point":
            beta = robust_fit_point(ds, cfg).beta
        else:
            beta = robust_fit_rankone(ds, cfg).beta
        fitted_with = args.defender
    report = evaluate_under_attack(beta, ds, cfg, args.scheme)
    payload = report.to_json()
    payload["beta"] = [float(v) for v in beta]
    payload["fitted_with"] = fitted_with
    _emit(payload, args.out)
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    synth = demo_synth_params(
        seed=0, m=args.group1_size, n2=args.group2_size, p=args.features
    )
    cfg = ExperimentConfig(
        scheme=args.scheme,
        synth=synth,
        seeds=_seed_list(args.seeds),
        lams=_float_list(args.lams),
        etas=_float_list(args.etas),
        defenders=tuple(args.defenders.split(",")),
        csv_path=args.csv_out,
        json_path=args.json_out,
    )
    report = run_sweep(cfg)
    if args.csv_out is None:
        sys.stdout.write(report.to_csv_text())
    summary = {
        "rows": report.diagnostics["n_rows"],
        "errors": report.diagnostics["n_errors"],
    }
    sys.stderr.write(json.dumps(summary) + "\n")
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    ds = _load_dataset(args)
    stats = compute_stats(ds)
    text = stats.to_json()
    if args.out is None:
        sys.stdout.write(text + "\n")
    else:
        with open(args.out, "w") as handle:
            handle.write(text + "\n")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustfair",
        description="Adversarially robust fairness-aware linear regression.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model and print it as JSON")
    _add_data_args(p_fit)
    p_fit.add_argument("--defender", choices=_FIT_CHOICES, default="robust-point")
    p_fit.add_argument("--lam", type=float, help="fairness penalty weight")
    p_fit.add_argument("--eta", type=float, help="attack budget")
    p_fit.add_argument("--out", help="write JSON here instead of stdout")
    p_fit.set_defaults(func=_cmd_fit)

    p_atk = sub.add_parser(
        "attack", help="compute the exact worst-case perturbation for a model"
    )
    _add_data_args(p_atk)
    p_atk.add_argument("--scheme", choices=ATTACK_SCHEMES, required=True)
    p_atk.add_argument("--lam", type=float, required=True)
    p_atk.add_argument("--eta", type=float, required=True)
    p_atk.add_argument(
        "--beta", help="comma-separated coefficients to attack (skips fitting)"
    )
    p_atk.add_argument(
        "--defender",
        choices=_FIT_CHOICES,
        default="ols",
        help="fit this model first when --beta is not given",
    )
    p_atk.add_argument("--out", help="write JSON here instead of stdout")
    p_atk.set_defaults(func=_cmd_attack)

    p_sweep = sub.add_parser("sweep", help="run an experiment grid")
    p_sweep.add_argument("--scheme", choices=ATTACK_SCHEMES, required=True)
    p_sweep.add_argument("--seeds", default="0:5",
                         help="comma list or lo:hi range (default 0:5)")
    p_sweep.add_argument("--lams", default="0.2,0.8")
    p_sweep.add_argument("--etas", required=True)
    p_sweep.add_argument("--defenders", default=",".join(DEFENDERS))
    p_sweep.add_argument("--group1-size", type=int, default=100)
    p_sweep.add_argument("--group2-size", type=int, default=100)
    p_sweep.add_argument("--features", type=int, default=5)
    p_sweep.add_argument("--csv-out", help="write result rows here")
    p_sweep.add_argument("--json-out", help="write diagnostics here")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_stats = sub.add_parser("stats", help="print dataset summary quantities")
    _add_data_args(p_stats)
    p_stats.add_argument("--out", help="write JSON here instead of stdout")
    p_stats.set_defaults(func=_cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
