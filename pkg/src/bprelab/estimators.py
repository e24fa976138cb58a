"""Monte Carlo reductions: L^p norms, decay-rate fits, sandwich and rate checks.

Every estimator drops capped replicas (their trajectories are frozen, not
simulated) and reports the dropped fraction; extinct replicas stay in, since
W = 0 is genuine mass of the limit law. Standard errors come from 30
contiguous batch means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EstimateUnavailableError, FitUnavailableError, ParameterError
from .simulate import STATUS_CAPPED, TrajectoryBatch

N_BATCHES = 30
MIN_REPLICAS = 100
CI_Z = 1.96

# |W_{n+gap} - W_n| below ~1e-10 is indistinguishable from accumulated
# rounding of the P_n normalization; p-th powers of such values carry no
# information and are treated as exact zeros by the fitter.
ROUNDOFF_DISTANCE = 1e-10


def _batch_means(x: np.ndarray, n_batches: int = N_BATCHES) -> np.ndarray:
    n_batches = min(n_batches, len(x))
    return np.array([chunk.mean() for chunk in np.array_split(x, n_batches)])


def _stderr_of(means: np.ndarray) -> float:
    if len(means) < 2:
        return float("inf")
    return float(means.std(ddof=1) / math.sqrt(len(means)))


def _batch_means_stderr(x: np.ndarray, n_batches: int = N_BATCHES) -> float:
    return _stderr_of(_batch_means(x, n_batches))


def _uncapped_w(batch: TrajectoryBatch) -> np.ndarray:
    mask = batch.status != STATUS_CAPPED
    if int(mask.sum()) < MIN_REPLICAS:
        raise EstimateUnavailableError(
            f"only {int(mask.sum())} uncapped replicas; need >= {MIN_REPLICAS}"
        )
    return batch.w[mask]


@dataclass
class LpEstimate:
    """Sample estimate of E|W_{n+gap} - W_n|^p (or E W_n^p when gap == 0).

    batch_values are the 30 contiguous batch means behind stderr; the decay
    fitter uses them to propagate the cross-n correlation (every n shares
    the same replicas) into the slope's confidence interval.
    """

    p: float
    n: int
    value: float
    stderr: float
    proxy_gap: int
    capped_fraction: float
    replicas_used: int
    bias_bound: float | None = None
    batch_values: np.ndarray | None = None


def _estimate_from(x: np.ndarray, batch: TrajectoryBatch, p: float, n: int, gap: int) -> LpEstimate:
    means = _batch_means(x)
    return LpEstimate(
        p=p,
        n=n,
        value=float(x.mean()),
        stderr=_stderr_of(means),
        proxy_gap=gap,
        capped_fraction=batch.capped_fraction,
        replicas_used=len(x),
        batch_values=means,
    )


def lp_norm(batch: TrajectoryBatch, p: float, n: int, proxy_gap: int) -> LpEstimate:
    """Mean of |W_{n+gap} - W_n|^p over uncapped replicas."""
    if p <= 1.0:
        raise ParameterError("p must be > 1")
    if proxy_gap < 1 or n < 0 or n + proxy_gap > batch.n_max:
        raise ParameterError(
            f"need 0 <= n and 1 <= gap with n+gap <= {batch.n_max}"
        )
    w = _uncapped_w(batch)
    x = np.abs(w[:, n + proxy_gap] - w[:, n]) ** p
    return _estimate_from(x, batch, p, n, proxy_gap)


def w_moment(batch: TrajectoryBatch, p: float, n: int) -> LpEstimate:
    """Mean of W_n^p over uncapped replicas (proxy_gap 0 marks a plain moment)."""
    if p <= 0.0:
        raise ParameterError("p must be > 0")
    if not 0 <= n <= batch.n_max:
        raise ParameterError(f"need 0 <= n <= {batch.n_max}")
    w = _uncapped_w(batch)
    x = w[:, n] ** p
    return _estimate_from(x, batch, p, n, 0)


@dataclass
class DecayFit:
    """Weighted log-linear fit of an L^p-norm sequence against n.

    ci_method is "batch-curves" when the slope spread was measured across
    the per-batch curves (the default whenever batch means are available;
    robust to the shared-replica correlation between n's), else "wls-cov".
    """

    fitted_rho: float
    ci_low: float
    ci_high: float
    window: tuple[int, int]
    r_squared: float
    slope: float
    slope_se: float
    intercept: float
    points_used: int
    ci_method: str = "wls-cov"
    bias_bounds: dict[int, float] = field(default_factory=dict)


def _prelim_rho(ns: np.ndarray, ys: np.ndarray) -> float:
    slope = np.polyfit(ns, ys, 1)[0]
    return float(np.exp(-slope)) if slope < 0 else 1.0


def fit_decay(estimates: list[LpEstimate]) -> DecayFit:
    """Fit value_n ~ C rho^{-pn} by weighted least squares on log(value)/p.

    Points enter the window only where the proxy bias is under 10% of the
    value: a caller-supplied bias_bound when available, otherwise the
    heuristic value * rho_prelim^{-gap} with rho_prelim from an unweighted
    pass. The fit uses the longest admissible run of consecutive points and
    needs at least 4 of them.
    """
    if not estimates:
        raise FitUnavailableError("no estimates given")
    p = estimates[0].p
    if any(e.p != p for e in estimates):
        raise ParameterError("estimates mix different p values")
    est = sorted(estimates, key=lambda e: e.n)
    ns = np.array([e.n for e in est], dtype=float)
    floor = ROUNDOFF_DISTANCE**p
    stderr_ok = np.array(
        [
            e.value > floor and np.isfinite(e.value) and e.stderr < 0.5 * e.value
            for e in est
        ]
    )
    if stderr_ok.sum() >= 2:
        rho_prelim = _prelim_rho(
            ns[stderr_ok], np.log([e.value for e, k in zip(est, stderr_ok) if k]) / p
        )
    else:
        rho_prelim = 1.0

    bias_bounds: dict[int, float] = {}
    admissible = np.zeros(len(est), dtype=bool)
    for idx, e in enumerate(est):
        if not stderr_ok[idx]:
            continue
        bias = e.bias_bound if e.bias_bound is not None else e.value * rho_prelim ** (-e.proxy_gap)
        bias_bounds[e.n] = bias
        admissible[idx] = bias < 0.1 * e.value

    best_lo, best_len = 0, 0
    run_lo = None
    for idx in range(len(est) + 1):
        if idx < len(est) and admissible[idx]:
            if run_lo is None:
                run_lo = idx
        elif run_lo is not None:
            if idx - run_lo > best_len:
                best_lo, best_len = run_lo, idx - run_lo
            run_lo = None
    if best_len < 4:
        raise FitUnavailableError(
            f"longest admissible run has {best_len} points; need >= 4"
        )
    window = est[best_lo : best_lo + best_len]
    xs = ns[best_lo : best_lo + best_len]
    ys = np.log([e.value for e in window]) / p
    sds = np.array([max(e.stderr / (p * e.value), 1e-12) for e in window])

    wts = 1.0 / sds**2
    x_mat = np.column_stack([np.ones_like(xs), xs])
    gram = x_mat.T @ (wts[:, None] * x_mat)
    beta = np.linalg.solve(gram, x_mat.T @ (wts * ys))
    cov = np.linalg.inv(gram)
    intercept, slope = float(beta[0]), float(beta[1])
    se_slope = math.sqrt(cov[1, 1])
    ci_method = "wls-cov"

    batch_slopes = _batch_curve_slopes(window, x_mat, wts, p)
    if batch_slopes is not None:
        se_slope = _stderr_of(batch_slopes)
        ci_method = "batch-curves"

    resid = ys - x_mat @ beta
    y_bar = float(np.average(ys, weights=wts))
    tss = float(np.sum(wts * (ys - y_bar) ** 2))
    rss = float(np.sum(wts * resid**2))
    r_squared = 1.0 - rss / tss if tss > 0 else 1.0

    return DecayFit(
        fitted_rho=math.exp(-slope),
        ci_low=math.exp(-(slope + CI_Z * se_slope)),
        ci_high=math.exp(-(slope - CI_Z * se_slope)),
        window=(int(xs[0]), int(xs[-1])),
        r_squared=r_squared,
        slope=slope,
        slope_se=se_slope,
        intercept=intercept,
        points_used=best_len,
        ci_method=ci_method,
        bias_bounds=bias_bounds,
    )


def _batch_curve_slopes(
    window: list[LpEstimate], x_mat: np.ndarray, wts: np.ndarray, p: float
) -> np.ndarray | None:
    """Slope of each batch's own curve, for a correlation-aware stderr.

    The per-n estimates come from the same replicas, so their errors are
    correlated; refitting the window on every batch's means and spreading
    the slopes measures that correlation instead of assuming it away.
    """
    mats = [e.batch_values for e in window]
    if any(m is None for m in mats):
        return None
    counts = {len(m) for m in mats}
    if len(counts) != 1 or counts.pop() < 8:
        return None
    curves = np.stack(mats, axis=1)  # (n_batches, window length)
    if np.any(curves <= 0.0):
        return None
    gram = x_mat.T @ (wts[:, None] * x_mat)
    rhs = (wts * (np.log(curves) / p)) @ x_mat
    try:
        betas = np.linalg.solve(gram, rhs.T)
    except np.linalg.LinAlgError:
        return None
    return betas[1]


def burkholder_constants(p: float) -> tuple[float, float]:
    """(a_p, b_p) with a_p ||Q||_p <= ||A_hat||_p <= b_p ||Q||_p."""
    if p <= 1.0:
        raise ParameterError("p must be > 1")
    return (p - 1.0) / (18.0 * p**1.5), 18.0 * p**1.5 / math.sqrt(p - 1.0)


@dataclass
class SandwichCheck:
    """Observed ||A_hat_n||_p against the square-function bracket."""

    p: float
    rho: float
    n: int
    a_norm: float
    q_norm: float
    a_stderr: float
    q_stderr: float
    lower: float
    upper: float
    lower_ok: bool
    upper_ok: bool

    @property
    def ok(self) -> bool:
        return self.lower_ok and self.upper_ok


def _norm_with_stderr(x: np.ndarray, p: float) -> tuple[float, float]:
    """(mean |x|^p)^{1/p} with a delta-method stderr."""
    powered = np.abs(x) ** p
    m = float(powered.mean())
    se_m = _batch_means_stderr(powered)
    if m == 0.0:
        return 0.0, 0.0
    norm = m ** (1.0 / p)
    return norm, se_m * norm / (p * m)


def burkholder_sandwich(
    batch: TrajectoryBatch, p: float, rho: float, n: int, slack_sigmas: float = 4.0
) -> SandwichCheck:
    """Check a_p ||Q_n||_p <= ||A_hat_n||_p <= b_p ||Q_n||_p on the batch.

    Both inequalities get a slack of slack_sigmas combined standard errors,
    so a pass is Monte Carlo evidence rather than an exact certificate.
    """
    a_p, b_p = burkholder_constants(p)
    j = batch.rho_index(rho)
    if not 0 <= n <= batch.n_max - 1:
        raise ParameterError(f"need 0 <= n <= {batch.n_max - 1}")
    mask = batch.status != STATUS_CAPPED
    if int(mask.sum()) < MIN_REPLICAS:
        raise EstimateUnavailableError("too few uncapped replicas")
    a_vals = batch.a_hat[mask, j, n]
    diffs = np.diff(batch.w[mask, : n + 2], axis=1)
    q_vals = np.sqrt((rho ** (2 * np.arange(n + 1)) * diffs**2).sum(axis=1))
    a_norm, a_se = _norm_with_stderr(a_vals, p)
    q_norm, q_se = _norm_with_stderr(q_vals, p)
    if a_norm <= ROUNDOFF_DISTANCE and q_norm <= ROUNDOFF_DISTANCE:
        # both sides are rounding residue of a degenerate batch: the exact
        # quantities are zero and the bracket holds trivially
        return SandwichCheck(
            p=p, rho=rho, n=n, a_norm=a_norm, q_norm=q_norm,
            a_stderr=a_se, q_stderr=q_se, lower=0.0, upper=0.0,
            lower_ok=True, upper_ok=True,
        )
    lower, upper = a_p * q_norm, b_p * q_norm
    lower_slack = slack_sigmas * math.hypot(a_p * q_se, a_se)
    upper_slack = slack_sigmas * math.hypot(b_p * q_se, a_se)
    return SandwichCheck(
        p=p,
        rho=rho,
        n=n,
        a_norm=a_norm,
        q_norm=q_norm,
        a_stderr=a_se,
        q_stderr=q_se,
        lower=lower,
        upper=upper,
        lower_ok=lower <= a_norm + lower_slack,
        upper_ok=a_norm <= upper + upper_slack,
    )


@dataclass
class AsRateDiagnostic:
    """Growth profile of c^n |W_N - W_n| with c = m_geo^{1/(q+epsilon)}."""

    p: float
    epsilon: float
    growth_factor: float
    n_window: tuple[int, int]
    max_quantiles: dict[int, float]
    growing_fraction: float
    median_curve: np.ndarray
    consistent: bool

    @property
    def verdict(self) -> str:
        return "consistent" if self.consistent else "inconsistent"


def as_rate_diagnostic(
    batch: TrajectoryBatch, p: float, m_geo: float, epsilon: float, gap: int = 20
) -> AsRateDiagnostic:
    """Probe the almost-sure decay exponent q = p/(p-1) of the proxy error.

    If |W_N - W_n| really decays like m_geo^{-n/q}, scaling by
    m_geo^{n/(q+epsilon)} still leaves a vanishing sequence; systematic
    growth along n across replicas would contradict the claimed rate.
    """
    if not 1.0 < p < 2.0:
        raise ParameterError("p must lie in (1, 2)")
    if epsilon <= 0.0 or m_geo <= 1.0:
        raise ParameterError("need epsilon > 0 and m_geo > 1")
    last = batch.n_max - gap
    if last < 2:
        raise ParameterError(f"gap {gap} leaves fewer than 3 usable generations")
    q = p / (p - 1.0)
    c = m_geo ** (1.0 / (q + epsilon))
    w = _uncapped_w(batch)
    ns = np.arange(last + 1)
    stat = c**ns * np.abs(w[:, batch.n_max, None] - w[:, : last + 1])
    maxima = stat.max(axis=1)
    cut = max(1, (2 * len(ns)) // 3)
    growing = stat[:, cut:].max(axis=1) > stat[:, :cut].max(axis=1)
    median_curve = np.median(stat, axis=0)
    head = float(median_curve[: max(1, len(ns) // 3)].mean())
    tail = float(median_curve[cut:].mean())
    return AsRateDiagnostic(
        p=p,
        epsilon=epsilon,
        growth_factor=c,
        n_window=(0, last),
        max_quantiles={
            50: float(np.quantile(maxima, 0.50)),
            90: float(np.quantile(maxima, 0.90)),
            99: float(np.quantile(maxima, 0.99)),
        },
        growing_fraction=float(growing.mean()),
        median_curve=median_curve,
        consistent=tail <= head or tail <= 1e-12,
    )
