"""
Relation transforms, applied in listed order.

Global transforms map a RelationMatrix to a RelationMatrix (calibrations,
symmetrization, normalization, rescaling). Batch transforms map differentiable
distances to similarities (Student-t and Cauchy kernels).
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from pydantic import AliasChoices, Field
from scipy import sparse
from scipy.optimize import curve_fit

from ..errors import CalibrationError, CurveFitError, DataError
from . import StrictOptions
from .autodiff import DiffTensor, add, mul, pow_, sum_
from .relations import BatchRelations, RelationMatrix

logger = logging.getLogger(__name__)

SIGMA_MIN = 1e-12
SIGMA_MAX = 1e12
MAX_BISECTION_STEPS = 100
CALIBRATION_TOL = 1e-4
CAUCHY_GRID_POINTS = 300
KERNEL_EPS = 1e-12


@dataclass
class CalibrationResult:
    probabilities: RelationMatrix
    # sigma per row for perplexity; (rho, sigma) per row for connectivity
    bandwidths: np.ndarray


# ---------------------------------------------------------------------------
# Row access shared by the calibrations
# ---------------------------------------------------------------------------

def _padded_rows(rel: RelationMatrix) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(columns, values, mask) padded to the longest row, diagonal excluded."""
    n = rel.n
    if rel.is_sparse:
        csr = rel.values.tocsr()
        csr.sort_indices()
        lengths = np.diff(csr.indptr)
        row_ids = np.repeat(np.arange(n), lengths)
        off_diag = csr.indices != row_ids
        row_ids, cols_flat, vals_flat = row_ids[off_diag], csr.indices[off_diag], csr.data[off_diag]
        lengths = np.bincount(row_ids, minlength=n)
        width = max(int(lengths.max()) if n else 0, 1)
        starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        pos = np.arange(len(row_ids)) - starts[row_ids]
        cols = np.zeros((n, width), dtype=np.intp)
        vals = np.full((n, width), np.inf)
        mask = np.zeros((n, width), dtype=bool)
        cols[row_ids, pos] = cols_flat
        vals[row_ids, pos] = vals_flat
        mask[row_ids, pos] = True
        return cols, vals, mask
    off = ~np.eye(n, dtype=bool)
    cols = np.nonzero(off)[1].reshape(n, n - 1)
    vals = np.asarray(rel.values, dtype=np.float64)[off].reshape(n, n - 1)
    return cols, vals, np.ones_like(vals, dtype=bool)


def _from_rows(rel: RelationMatrix, cols: np.ndarray, vals: np.ndarray, mask: np.ndarray) -> np.ndarray:
    n = rel.n
    rows = np.repeat(np.arange(n), mask.sum(axis=1))
    if rel.is_sparse:
        out = sparse.csr_matrix((vals[mask], (rows, cols[mask])), shape=(n, n))
        out.sort_indices()
        return out
    out = np.zeros((n, n))
    out[rows, cols[mask]] = vals[mask]
    return out


# ---------------------------------------------------------------------------
# Calibrations
# ---------------------------------------------------------------------------

def _row_entropy(d2: np.ndarray, mask: np.ndarray, log_sigma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    beta = 0.5 * np.exp(-2.0 * log_sigma)[:, None]
    weights = np.where(mask, np.exp(-d2 * beta), 0.0)
    probs = weights / weights.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log2(probs), 0.0)
    return -terms.sum(axis=1), probs


def perplexity_calibrate(dists: RelationMatrix, perplexity: float) -> CalibrationResult:
    """
    Conditional probabilities p_{j|i} with per-row Gaussian bandwidths.

    sigma_i is found by bisection in log-space so that the row entropy
    matches log2(perplexity).
    """
    cols, d, mask = _padded_rows(dists)
    counts = mask.sum(axis=1)
    if np.any(counts < 2):
        raise CalibrationError("perplexity calibration needs at least two neighbors per row",
                               row=int(np.argmax(counts < 2)))
    if np.any(perplexity > counts):
        row = int(np.argmax(perplexity > counts))
        raise CalibrationError(f"perplexity {perplexity} exceeds the {counts[row]} neighbors available", row=row)

    d2 = np.where(mask, d ** 2, np.inf)
    d2 = d2 - d2.min(axis=1, keepdims=True)
    target = np.log2(perplexity)
    # Tight enough that both the entropy and 2^H land within 1e-4
    tol = min(CALIBRATION_TOL, CALIBRATION_TOL / (perplexity * np.log(2.0)))

    n = len(d)
    lo = np.full(n, np.log(SIGMA_MIN))
    hi = np.full(n, np.log(SIGMA_MAX))
    log_sigma = 0.5 * (lo + hi)
    done = np.zeros(n, dtype=bool)
    for _ in range(MAX_BISECTION_STEPS):
        entropy, _probs = _row_entropy(d2, mask, log_sigma)
        gap = entropy - target
        done = np.abs(gap) < tol
        if done.all():
            break
        too_wide = (gap > 0) & ~done
        too_narrow = (gap < 0) & ~done
        hi = np.where(too_wide, log_sigma, hi)
        lo = np.where(too_narrow, log_sigma, lo)
        log_sigma = np.where(done, log_sigma, 0.5 * (lo + hi))

    entropy, probs = _row_entropy(d2, mask, log_sigma)
    failed = np.abs(entropy - target) >= tol
    if failed.any():
        row = int(np.argmax(failed))
        raise CalibrationError(
            f"perplexity bisection did not converge after {MAX_BISECTION_STEPS} steps "
            f"(entropy {entropy[row]:.6f} bits, target {target:.6f})", row=row)

    values = _from_rows(dists, cols, probs, mask)
    return CalibrationResult(RelationMatrix(values), np.exp(log_sigma))


def connectivity_calibrate(dists: RelationMatrix, n_neighbors: Optional[int] = None) -> CalibrationResult:
    """
    Fuzzy memberships v_{j|i} = exp(-max(0, d_ij - rho_i) / sigma_i).

    rho_i is the distance to i's nearest neighbor; sigma_i is solved so the
    row sums to log2(n_neighbors). Rows that cannot reach the target (too few
    neighbors, or all mass already at the nearest distance) clamp to the
    nearest bracket end, so a row sums to min(count, log2(n_neighbors)).
    """
    cols, d, mask = _padded_rows(dists)
    counts = mask.sum(axis=1)
    if n_neighbors is None:
        n_neighbors = int(counts.max())
    if n_neighbors < 1:
        raise CalibrationError("n_neighbors must be positive")
    target = np.log2(n_neighbors)
    d = np.where(mask, d, np.inf)
    rho = d.min(axis=1)
    shifted = np.maximum(0.0, d - rho[:, None])

    def row_sums(log_sigma):
        values = np.where(mask, np.exp(-shifted / np.exp(log_sigma)[:, None]), 0.0)
        return values.sum(axis=1), values

    n = len(d)
    lo = np.full(n, np.log(SIGMA_MIN))
    hi = np.full(n, np.log(SIGMA_MAX))
    sum_lo, _ = row_sums(lo)
    sum_hi, _ = row_sums(hi)
    clamp_lo = sum_lo >= target - CALIBRATION_TOL
    clamp_hi = (sum_hi <= target + CALIBRATION_TOL) & ~clamp_lo
    if (clamp_lo | clamp_hi).any():
        logger.debug(f"{int((clamp_lo | clamp_hi).sum())} rows clamped during connectivity calibration")

    log_sigma = np.where(clamp_lo, lo, np.where(clamp_hi, hi, 0.5 * (lo + hi)))
    fixed = clamp_lo | clamp_hi
    for _ in range(MAX_BISECTION_STEPS):
        sums, _ = row_sums(log_sigma)
        gap = sums - target
        done = fixed | (np.abs(gap) < CALIBRATION_TOL)
        if done.all():
            break
        # Row sum grows with sigma
        hi = np.where(~done & (gap > 0), log_sigma, hi)
        lo = np.where(~done & (gap < 0), log_sigma, lo)
        log_sigma = np.where(done, log_sigma, 0.5 * (lo + hi))

    sums, values = row_sums(log_sigma)
    # Tied nearest distances keep membership 1 for every sigma; scale those rows down to the target
    over = clamp_lo & (sums > target)
    values[over] *= (target / sums[over])[:, None]
    failed = ~fixed & (np.abs(sums - target) >= CALIBRATION_TOL)
    if failed.any():
        row = int(np.argmax(failed))
        raise CalibrationError(f"connectivity bisection did not converge (row sum {sums[row]:.6f}, "
                               f"target {target:.6f})", row=row)

    result = _from_rows(dists, cols, values, mask)
    return CalibrationResult(RelationMatrix(result), np.column_stack([rho, np.exp(log_sigma)]))


# ---------------------------------------------------------------------------
# Structural transforms
# ---------------------------------------------------------------------------

def symmetrize(rel: RelationMatrix, mode: str = "mean") -> RelationMatrix:
    r = rel.values
    if rel.is_sparse:
        rt = r.transpose().tocsr()
        out = (r + rt) * 0.5 if mode == "mean" else r + rt - r.multiply(rt)
        out = sparse.csr_matrix(out)
        out.sort_indices()
    else:
        out = (r + r.T) * 0.5 if mode == "mean" else r + r.T - r * r.T
    return rel.with_values(out, symmetric=True)


def normalize(rel: RelationMatrix) -> RelationMatrix:
    total = rel.off_diagonal_total()
    if total <= 0:
        raise DataError("cannot normalize an all-zero relation")
    values = rel.values.copy()
    if rel.is_sparse:
        values = sparse.csr_matrix(values - sparse.diags(values.diagonal()))
        values.eliminate_zeros()
        values = values * (1.0 / total)
    else:
        np.fill_diagonal(values, 0.0)
        values = values / total
    return rel.with_values(values, normalized=True, scale=1.0)


def rescale(rel: RelationMatrix, factor: float) -> RelationMatrix:
    values = rel.values * factor
    return rel.with_values(values, scale=rel.scale * factor)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def student_t_kernel(dists: BatchRelations, alpha: float = 1.0) -> BatchRelations:
    """q = (1 + d^2/alpha)^(-(alpha+1)/2), diagonal zeroed."""
    d = dists.values
    q = pow_(add(mul(d * d, 1.0 / alpha), 1.0), -(alpha + 1.0) / 2.0)
    if not dists.per_edge:
        q = mul(q, dists.off_diagonal_mask())
    return BatchRelations(q, dists.indices, dists.per_edge)


def _cauchy_curve(x, a, b):
    return 1.0 / (1.0 + a * x ** (2.0 * b))


@lru_cache(maxsize=32)
def fit_cauchy_params(spread: float, min_dist: float) -> Tuple[float, float]:
    """Least-squares (a, b) for 1/(1 + a d^2b) against the offset exponential target."""
    xv = np.linspace(0.0, spread * 3.0, CAUCHY_GRID_POINTS)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    try:
        params, _covar = curve_fit(_cauchy_curve, xv, yv, p0=(1.0, 1.0))
    except (RuntimeError, ValueError) as exc:
        raise CurveFitError(f"Cauchy parameter fit failed: {exc}")
    a, b = float(params[0]), float(params[1])
    residual = np.sum((_cauchy_curve(xv, a, b) - yv) ** 2)
    if not (np.isfinite(a) and np.isfinite(b) and np.isfinite(residual)):
        raise CurveFitError(f"Cauchy parameter fit is not finite (a={a}, b={b})")
    logger.debug(f"Fitted Cauchy kernel a={a:.4f} b={b:.4f} (spread={spread}, min_dist={min_dist})")
    return a, b


def cauchy_kernel(dists: BatchRelations, spread: float = 1.0, min_dist: float = 0.1,
                  a: Optional[float] = None, b: Optional[float] = None) -> BatchRelations:
    """q = 1/(1 + a (d^2)^b), diagonal zeroed."""
    if a is None or b is None:
        a, b = fit_cauchy_params(float(spread), float(min_dist))
    d = dists.values
    q = 1.0 / add(mul(pow_(d * d + KERNEL_EPS, b), a), 1.0)
    if not dists.per_edge:
        q = mul(q, dists.off_diagonal_mask())
    return BatchRelations(q, dists.indices, dists.per_edge)


def _batch_normalize(rel: BatchRelations) -> BatchRelations:
    return BatchRelations(rel.values / sum_(rel.values), rel.indices, rel.per_edge)


def _batch_rescale(rel: BatchRelations, factor: float) -> BatchRelations:
    return BatchRelations(mul(rel.values, factor), rel.indices, rel.per_edge)


def _global_kernel(rel: RelationMatrix, fn) -> RelationMatrix:
    if rel.is_sparse:
        values = rel.values.copy()
        values.data = fn(values.data)
        return rel.with_values(values)
    values = fn(np.asarray(rel.values, dtype=np.float64))
    np.fill_diagonal(values, 0.0)
    return rel.with_values(values)


# ---------------------------------------------------------------------------
# Registered transforms
# ---------------------------------------------------------------------------

class PerplexityOptions(StrictOptions):
    perplexity: float = Field(30.0, gt=0)


class ConnectOptions(StrictOptions):
    n_neighbors: Optional[int] = Field(None, ge=1, validation_alias=AliasChoices("n_neighbors", "neighbors"))


class SymmetrizeOptions(StrictOptions):
    sub_prod: bool = False


class NormalizeOptions(StrictOptions):
    pass


class StudentTOptions(StrictOptions):
    alpha: float = Field(1.0, gt=0)


class CauchyOptions(StrictOptions):
    spread: float = Field(1.0, gt=0)
    min_dist: float = Field(0.1, ge=0)
    a: Optional[float] = Field(None, gt=0)
    b: Optional[float] = Field(None, gt=0)


class MultiplyOptions(StrictOptions):
    factor: float = 1.0


class PerplexityTransform:
    levels = ("global",)
    Options = PerplexityOptions

    def apply_global(self, rel: RelationMatrix, options: PerplexityOptions) -> RelationMatrix:
        return perplexity_calibrate(rel, options.perplexity).probabilities


class ConnectTransform:
    levels = ("global",)
    Options = ConnectOptions

    def apply_global(self, rel: RelationMatrix, options: ConnectOptions) -> RelationMatrix:
        return connectivity_calibrate(rel, options.n_neighbors).probabilities


class SymmetrizeTransform:
    levels = ("global",)
    Options = SymmetrizeOptions

    def apply_global(self, rel: RelationMatrix, options: SymmetrizeOptions) -> RelationMatrix:
        return symmetrize(rel, "sub_prod" if options.sub_prod else "mean")


class NormalizeTransform:
    levels = ("global", "batch")
    Options = NormalizeOptions

    def apply_global(self, rel: RelationMatrix, options: NormalizeOptions) -> RelationMatrix:
        return normalize(rel)

    def apply_batch(self, rel: BatchRelations, options: NormalizeOptions) -> BatchRelations:
        return _batch_normalize(rel)


class StudentTTransform:
    levels = ("global", "batch")
    Options = StudentTOptions

    def apply_global(self, rel: RelationMatrix, options: StudentTOptions) -> RelationMatrix:
        alpha = options.alpha
        return _global_kernel(rel, lambda d: (1.0 + d ** 2 / alpha) ** (-(alpha + 1.0) / 2.0))

    def apply_batch(self, rel: BatchRelations, options: StudentTOptions) -> BatchRelations:
        return student_t_kernel(rel, options.alpha)


class CauchyTransform:
    levels = ("global", "batch")
    Options = CauchyOptions

    def _params(self, options: CauchyOptions) -> Tuple[float, float]:
        if options.a is not None and options.b is not None:
            return options.a, options.b
        return fit_cauchy_params(float(options.spread), float(options.min_dist))

    def apply_global(self, rel: RelationMatrix, options: CauchyOptions) -> RelationMatrix:
        a, b = self._params(options)
        return _global_kernel(rel, lambda d: 1.0 / (1.0 + a * (d ** 2) ** b))

    def apply_batch(self, rel: BatchRelations, options: CauchyOptions) -> BatchRelations:
        a, b = self._params(options)
        return cauchy_kernel(rel, a=a, b=b)


class MultiplyTransform:
    levels = ("global", "batch")
    Options = MultiplyOptions

    def apply_global(self, rel: RelationMatrix, options: MultiplyOptions) -> RelationMatrix:
        return rescale(rel, options.factor)

    def apply_batch(self, rel: BatchRelations, options: MultiplyOptions) -> BatchRelations:
        return _batch_rescale(rel, options.factor)
