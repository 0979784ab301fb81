"""Similarity-weighted graph Laplacian feature filter.

Rows of X are graph nodes on the complete graph; edge weights decay as
exp(-beta * ||x_i - x_j||). The symmetric normalized Laplacian, shifted by
gamma times each row's mean distance to the others, is applied as
``X + alpha * L_final @ X`` and the result rescaled to keep max(X).
"""
import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .descriptors import FeatureMatrix
from .diagnostics import warn
from .errors import DegenerateWeights, TooFewRows


@dataclass(frozen=True)
class FilterParams:
    alpha: float = 0.2
    beta: float = 0.2
    gamma: float = 0.001

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


def laplacian_filter(X, params=FilterParams()):
    """Filter a feature matrix (or array); returns a ``filtered`` FeatureMatrix."""
    values = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    row_meaning = X.row_meaning if isinstance(X, FeatureMatrix) else "per-patch"
    n = values.shape[0]
    if n < 2:
        raise TooFewRows(f"filter needs at least 2 rows, got {n}")

    M = cdist(values, values)
    W = np.exp(-params.beta * M)
    np.fill_diagonal(W, 0.0)
    deg = W.sum(axis=1)
    if np.any(deg <= 0):
        raise DegenerateWeights("a node has zero total similarity weight")
    s = 1.0 / np.sqrt(deg)
    E = M.sum(axis=1) / (n - 1)

    # L_final @ X without forming the n x n Laplacian
    smoothed = s[:, None] * (W @ (s[:, None] * values))
    lx = values - smoothed + params.gamma * E[:, None] * values
    pre = values + params.alpha * lx

    x_max = values.max()
    pre_max = pre.max()
    notes = ()
    if x_max > 0 and pre_max > 0:
        out = pre * (x_max / pre_max)
    else:
        warn("filtering", "NonPositiveMax", "max(X) or max(X_pre) <= 0; rescale skipped")
        out = pre
        notes = ("NonPositiveMax",)
    return FeatureMatrix(out, provenance="filtered", row_meaning=row_meaning, notes=notes)


def filter_sweep(X, alphas, betas, gammas):
    """Mean/variance shift of the filtered matrix over a parameter grid."""
    values = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    if not (len(alphas) and len(betas) and len(gammas)):
        raise ValueError("parameter grids must be non-empty")
    base_mean, base_var = values.mean(), values.var()
    rows = []
    for a in alphas:
        for b in betas:
            for g in gammas:
                out = laplacian_filter(values, FilterParams(a, b, g)).values
                rows.append((a, b, g, abs(out.mean() - base_mean), abs(out.var() - base_var)))
    return rows


SWEEP_COLUMNS = ("alpha", "beta", "gamma", "mean_delta", "var_delta")


def sweep_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([repr(float(v)) for v in r])
    return buf.getvalue()
