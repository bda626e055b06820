"""Two-group regression datasets: loading, synthesis, and spectral statistics.

A dataset holds an n-by-p feature matrix and an n-vector of targets, with the
first ``m`` rows belonging to group 1 and the remaining ``n - m`` rows to
group 2. All downstream solvers rely on that row convention, so construction
reorders rows group-1-first (stable within each group) and freezes the arrays.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import ParseError, ValidationError

__all__ = [
    "Dataset",
    "DatasetStats",
    "SynthParams",
    "load_csv",
    "save_csv",
    "synth_generate",
    "compute_stats",
    "demo_synth_params",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Immutable two-group regression data (group-1 rows first)."""

    features: np.ndarray
    targets: np.ndarray
    m: int

    def __post_init__(self):
        X = _frozen(self.features)
        y = _frozen(self.targets)
        if X.ndim != 2:
            raise ValidationError("features must be a 2-D matrix")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValidationError("targets length must equal the feature row count")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValidationError("dataset entries must all be finite")
        if not (1 <= self.m <= X.shape[0] - 1):
            raise ValidationError(
                f"group sizes must both be nonempty: m={self.m}, n={X.shape[0]}"
            )
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n2(self) -> int:
        """Group-2 row count, n - m."""
        return self.n - self.m

    @property
    def x1(self) -> np.ndarray:
        return self.features[: self.m]

    @property
    def x2(self) -> np.ndarray:
        return self.features[self.m :]

    @property
    def y1(self) -> np.ndarray:
        return self.targets[: self.m]

    @property
    def y2(self) -> np.ndarray:
        return self.targets[self.m :]

    def group_sizes(self) -> tuple[int, int]:
        return self.m, self.n2


@dataclass(frozen=True)
class DatasetStats:
    """Spectral quantities the solvers' assumptions are stated in terms of."""

    v_x1_max: float
    v_x2_max: float
    eta_min: float
    eta_d: float
    sigma_min: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "v_x1_max": self.v_x1_max,
                "v_x2_max": self.v_x2_max,
                "eta_min": self.eta_min,
                "eta_d": self.eta_d,
                "sigma_min": self.sigma_min,
            }
        )


@dataclass(frozen=True)
class SynthParams:
    """Parameters of the two-group synthetic generator.

    Group-1 targets are ``X1 @ beta01 + group1_offset + noise`` and group-2
    targets are ``X2 @ beta02 + noise``.  A scalar ``group1_offset`` is
    broadcast to one shift per group-1 row.
    """

    m: int
    n2: int
    p: int
    beta01: np.ndarray
    beta02: np.ndarray
    group1_offset: np.ndarray
    noise_std: float
    feature_low: float
    feature_high: float
    seed: int
    standardize: bool = field(default=False)

    def __post_init__(self):
        if self.m < 1 or self.n2 < 1 or self.p < 1:
            raise ValidationError("m, n2, p must all be >= 1")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        if not self.feature_low < self.feature_high:
            raise ValidationError("feature_low must be < feature_high")
        b1 = _frozen(np.broadcast_to(np.asarray(self.beta01, float), (self.p,)))
        b2 = _frozen(np.broadcast_to(np.asarray(self.beta02, float), (self.p,)))
        c1 = _frozen(np.broadcast_to(np.asarray(self.group1_offset, float), (self.m,)))
        object.__setattr__(self, "beta01", b1)
        object.__setattr__(self, "beta02", b2)
        object.__setattr__(self, "group1_offset", c1)


def demo_synth_params(seed: int = 0, m: int = 100, n2: int = 100, p: int = 5) -> SynthParams:
    """The stock synthetic configuration used by the experiment harness.

    Features uniform on [0, 10]; group-1 coefficients all ones with a +1
    target offset, group-2 coefficients all 1.1, unit noise.
    """
    return SynthParams(
        m=m,
        n2=n2,
        p=p,
        beta01=np.ones(p),
        beta02=1.1 * np.ones(p),
        group1_offset=1.0,
        noise_std=1.0,
        feature_low=0.0,
        feature_high=10.0,
        seed=seed,
    )


def synth_generate(params: SynthParams) -> Dataset:
    """Generate a two-group dataset.

    Randomness is fully pinned: a PCG64 generator seeded with ``params.seed``
    produces uniforms in row-major order (all feature entries first, then the
    noise vector), and normal variates are obtained from those uniforms by
    the inverse normal CDF. Identical parameters give bitwise-identical data.
    """
    n = params.m + params.n2
    rng = np.random.Generator(np.random.PCG64(params.seed))
    span = params.feature_high - params.feature_low
    X = params.feature_low + span * rng.random((n, params.p))
    eps = params.noise_std * ndtri(rng.random(n))
    y = np.empty(n)
    y[: params.m] = X[: params.m] @ params.beta01 + params.group1_offset + eps[: params.m]
    y[params.m :] = X[params.m :] @ params.beta02 + eps[params.m :]
    if params.standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        X = (X - mu) / sd
    return Dataset(features=X, targets=y, m=params.m)


def load_csv(
    path,
    feature_cols: list[str] | None = None,
    target_col: str = "target",
    group_col: str = "group",
    standardize: bool = False,
) -> Dataset:
    """Load a dataset from CSV.

    The file needs a header row. By default every column except ``target``
    and ``group`` is a feature; pass ``feature_cols`` to select a subset
    (used for real datasets whose published preprocessing is not specified).
    Group labels must be 1 or 2. Rows are reordered group-1-first, keeping
    the file order within each group.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for required in (target_col, group_col):
            if required not in header:
                raise ParseError(f"{path}: missing required column {required!r}")
        if feature_cols is None:
            feature_cols = [h for h in header if h not in (target_col, group_col)]
        if not feature_cols:
            raise ParseError(f"{path}: no feature columns")
        missing = [c for c in feature_cols if c not in header]
        if missing:
            raise ParseError(f"{path}: unknown feature columns {missing}")
        idx = {name: header.index(name) for name in header}

        rows1, rows2 = [], []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            vals = []
            for col in feature_cols + [target_col]:
                cell = row[idx[col]].strip() if idx[col] < len(row) else ""
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {rownum}, column {col!r}: not a number ({cell!r})"
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: row {rownum}, column {col!r}: non-finite value")
                vals.append(v)
            gcell = row[idx[group_col]].strip() if idx[group_col] < len(row) else ""
            if gcell not in ("1", "2"):
                raise ParseError(
                    f"{path}: row {rownum}, column {group_col!r}: group must be 1 or 2, got {gcell!r}"
                )
            (rows1 if gcell == "1" else rows2).append(vals)

    if not rows1 or not rows2:
        raise ValidationError(f"{path}: both groups must be nonempty")
    data = np.array(rows1 + rows2, dtype=np.float64)
    X, y = data[:, :-1], data[:, -1]
    if standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        X = (X - mu) / sd
    return Dataset(features=X, targets=y, m=len(rows1))


def save_csv(ds: Dataset, path) -> None:
    """Write a dataset in the canonical CSV layout (round-trips bit-exactly)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(ds.p)] + ["target", "group"])
        for i in range(ds.n):
            group = 1 if i < ds.m else 2
            writer.writerow(
                [repr(float(v)) for v in ds.features[i]]
                + [repr(float(ds.targets[i])), group]
            )


def compute_stats(ds: Dataset) -> DatasetStats:
    """Largest per-group Gram eigenvalues, the budget threshold eta_min, the
    mean per-row energy eta_d, and the smallest singular value of X."""
    v1 = float(np.linalg.eigvalsh(ds.x1.T @ ds.x1)[-1])
    v2 = float(np.linalg.eigvalsh(ds.x2.T @ ds.x2)[-1])
    n, m = ds.n, ds.m
    eta_min_sq = max(
        (n + 1) * v1 / (m * (m + 1)),
        (n + 1) * v2 / ((n - m + 1) * (n - m)),
    )
    rows = np.hstack([ds.features, ds.targets[:, None]])
    eta_d = float(np.linalg.norm(rows, axis=1).mean())
    sigma_min = float(np.linalg.svd(ds.features, compute_uv=False)[-1])
    return DatasetStats(
        v_x1_max=v1,
        v_x2_max=v2,
        eta_min=float(np.sqrt(eta_min_sq)),
        eta_d=eta_d,
        sigma_min=sigma_min,
    )
