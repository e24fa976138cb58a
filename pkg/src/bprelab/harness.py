"""Suite orchestration: run configured check suites and write versioned reports.

A report is deterministic for a given config (the timings block aside): suites
execute in declared order, every verdict lands in `checks` as
{id, suite, statement, passed, observed}, and the exit code is 0 when all
checks pass, 2 when any fails, 1 for config or precondition errors (decided
by the CLI, which maps raised errors).
"""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np

from . import estimators, exact_moments, rates
from ._version import __version__
from .config import ExperimentConfig
from .environment import EnvPath, Environment, FixedPath, IIDMixture
from .errors import BpreLabError, FitUnavailableError, ParameterError
from .estimators import LpEstimate, fit_decay, lp_norm
from .simulate import (
    MODE_ANNEALED,
    MODE_QUENCHED,
    SimConfig,
    TrajectoryBatch,
    increment_identity_check,
    run,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK_FAILED = 2

EXACT_TABLE_ORDER = 4
EXACT_TABLE_LEN = 12


class _Context:
    """Per-experiment scratch: cached batches, checks, and CSV side tables."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.checks: list[dict] = []
        self.csv: dict[str, list[str]] = {}
        self._batches: dict = {}

    # -- verdict and side-table collection ------------------------------

    def check(self, suite: str, check_id: str, statement: str, passed: bool, **observed) -> bool:
        self.checks.append(
            {
                "id": check_id,
                "suite": suite,
                "statement": statement,
                "passed": bool(passed),
                "observed": observed,
            }
        )
        return bool(passed)

    def add_csv(self, name: str, header: str, rows: list[str]) -> None:
        self.csv[name] = [header] + rows

    # -- environment geometry --------------------------------------------

    @property
    def env(self) -> Environment:
        return self.cfg.env

    @property
    def is_mixture(self) -> bool:
        return isinstance(self.env, IIDMixture)

    def geo_mean(self) -> float:
        """Stationary geometric mean, or the stored path's partial version."""
        if self.is_mixture:
            return self.env.geo_mean()
        return float(np.exp(np.mean([law.log_mean for law in self.env.laws])))

    def is_degenerate(self) -> bool:
        if self.is_mixture:
            return self.env.is_degenerate
        return all(law.is_deterministic for law in self.env.laws)

    def rho_grid(self) -> tuple[float, ...]:
        """Accumulator grid: config rho list, or 3 spread points of the default grid."""
        if self.cfg.rho is not None:
            return self.cfg.rho
        grid = rates.default_rho_grid(math.sqrt(max(self.geo_mean(), 1.0)))
        return (float(grid[0]), float(grid[len(grid) // 2]), float(grid[-1]))

    def series_path(self, length: int) -> EnvPath:
        """A realized path for BPVE diagnostics; falls back to master_seed."""
        if isinstance(self.env, FixedPath):
            return self.env.sample_path(min(length, len(self.env.laws)))
        seed = self.cfg.path_seed if self.cfg.path_seed is not None else self.cfg.master_seed
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        return self.env.sample_path(length, rng)

    # -- cached simulation batches ----------------------------------------

    def batch(self, mode: str, replicas: int | None = None, path_seed: int | None = None) -> TrajectoryBatch:
        cfg = self.cfg
        replicas = cfg.replicas if replicas is None else replicas
        path_seed = cfg.path_seed if path_seed is None else path_seed
        key = (mode, replicas, path_seed)
        if key not in self._batches:
            sim = SimConfig(
                env=cfg.env,
                mode=mode,
                n_max=cfg.n_max,
                replicas=replicas,
                master_seed=cfg.master_seed,
                path_seed=path_seed,
                pop_cap=cfg.pop_cap,
                rho_grid=self.rho_grid(),
            )
            self._batches[key] = run(sim, threads=cfg.threads)
        return self._batches[key]

    def default_mode(self) -> str:
        return MODE_ANNEALED if self.is_mixture else MODE_QUENCHED


# ---------------------------------------------------------------------------
# suite: rates


def _suite_rates(ctx: _Context) -> dict:
    reports = []
    rows = []
    for p in ctx.cfg.p:
        rep = rates.rate_report(ctx.env, p)
        reports.append(rep.to_dict())
        rows.append(
            f"{p!r},{rep.m_geo!r},{rep.quenched_sufficient_bound!r},"
            f"{rep.quenched_critical!r},{rep.annealed_rho0!r},{rep.annealed_rhoc!r}"
        )
        tag = f"rates.p{p:g}"
        ctx.check(
            "rates",
            f"{tag}.sufficient-le-critical",
            "the sufficient quenched rate bound never exceeds the critical one",
            rep.quenched_sufficient_bound <= rep.quenched_critical + 1e-12,
            sufficient=rep.quenched_sufficient_bound,
            critical=rep.quenched_critical,
        )
        ctx.check(
            "rates",
            f"{tag}.annealed-le-quenched",
            "the annealed critical rate never exceeds the quenched critical rate",
            rep.annealed_rhoc <= rep.quenched_critical + 1e-12,
            annealed_rhoc=rep.annealed_rhoc,
            quenched_critical=rep.quenched_critical,
        )
        if p >= 2.0:
            ctx.check(
                "rates",
                f"{tag}.rates-collapse",
                "for p >= 2 the two annealed rate formulas agree",
                math.isclose(rep.annealed_rho0, rep.annealed_rhoc, rel_tol=1e-12),
                rho0=rep.annealed_rho0,
                rhoc=rep.annealed_rhoc,
            )
        elif rep.condition_flags.get("tilt_positive"):
            ctx.check(
                "rates",
                f"{tag}.rho0-le-rhoc",
                "under a positive tilt the sufficient annealed rate is below the critical one",
                rep.annealed_rho0 <= rep.annealed_rhoc + 1e-12,
                rho0=rep.annealed_rho0,
                rhoc=rep.annealed_rhoc,
            )
    ctx.add_csv(
        "rates.csv",
        "p,m_geo,quenched_sufficient_bound,quenched_critical,annealed_rho0,annealed_rhoc",
        rows,
    )
    return {"reports": reports}


# ---------------------------------------------------------------------------
# suite: exact


def _table_rows(table: exact_moments.MomentTable) -> list[str]:
    rows = []
    for n in range(table.values.shape[0]):
        for j in range(1, table.values.shape[1]):
            rows.append(f"{n},{j},{float(table.values[n, j])!r}")
    return rows


def _exact_segment(inc: list[float] | np.ndarray, n: int, upto: int) -> float:
    return float(math.fsum(inc[n:upto]))


def _suite_exact(ctx: _Context) -> dict:
    tol = ctx.cfg.tolerances["exact_rel"]
    n_table = min(ctx.cfg.n_max, EXACT_TABLE_LEN)
    section: dict = {}

    if ctx.is_mixture:
        u_by_order = {
            r: exact_moments.annealed_u(ctx.env, 0.0, r, n_table)
            for r in range(1, EXACT_TABLE_ORDER + 1)
        }
        ctx.add_csv(
            "exact_annealed.csv",
            "n,j,value",
            [
                f"{n},{r},{float(u_by_order[r][n])!r}"
                for n in range(n_table + 1)
                for r in range(1, EXACT_TABLE_ORDER + 1)
            ],
        )
        section["annealed_table"] = {
            "orders": EXACT_TABLE_ORDER,
            "n_max": n_table,
            "last_row": [float(u_by_order[r][-1]) for r in range(1, EXACT_TABLE_ORDER + 1)],
        }
        mean_err = float(np.abs(u_by_order[1] - 1.0).max())
        ctx.check(
            "exact",
            "exact.martingale-mean",
            "the normalized population has exact mean one at every generation",
            mean_err <= tol,
            max_abs_error=mean_err,
        )
        forms = exact_moments.p2_closed_forms(ctx.env)
        section["p2_closed_forms"] = {
            "q1": forms.q1,
            "b2": forms.b2,
            "summable": forms.summable,
            "sup_w2": forms.sup_w2(),
        }
        inc = [forms.increment_second_moment(k) for k in range(n_table)]
        worst = 0.0
        for n in range(n_table + 1):
            closed = 1.0 + _exact_segment(inc, 0, n)
            worst = max(worst, abs(u_by_order[2][n] - closed) / max(closed, 1.0))
        ctx.check(
            "exact",
            "exact.p2-partial-sums",
            "second moments from the recursion match the closed-form partial sums",
            worst <= tol,
            max_rel_error=worst,
        )
        envelope_ok = all(
            exact_moments.growth_envelope_check(ctx.env, 0.0, r, max(n_table, 10))
            for r in range(2, EXACT_TABLE_ORDER + 1)
        )
        ctx.check(
            "exact",
            "exact.growth-envelope",
            "scaled moment sequences stay under the polynomial-times-base envelope",
            envelope_ok,
            orders=list(range(2, EXACT_TABLE_ORDER + 1)),
        )
        min_slack = min(
            float(exact_moments.recursion_inequality_slacks(ctx.env, s, r, max(n_table, 10)).min())
            for r in (3, 4)
            for s in (0.0, 1.0)
        )
        ctx.check(
            "exact",
            "exact.recursion-slack",
            "the split-moment recursion inequality holds with non-negative slack",
            min_slack >= -1e-12,
            min_slack=min_slack,
        )

    path = None
    if isinstance(ctx.env, FixedPath):
        path = ctx.env.sample_path(min(n_table, len(ctx.env.laws)))
    elif ctx.cfg.path_seed is not None:
        path = ctx.series_path(n_table)
    if path is not None:
        qtable = exact_moments.quenched_moments(path, EXACT_TABLE_ORDER, len(path))
        ctx.add_csv("exact_quenched.csv", "n,j,value", _table_rows(qtable))
        section["quenched_table"] = {
            "orders": EXACT_TABLE_ORDER,
            "n_max": len(path),
            "last_row": [float(v) for v in qtable.values[-1, 1:]],
        }
        w_mean_err = float(np.abs(qtable.w_moments(1) - 1.0).max())
        ctx.check(
            "exact",
            "exact.quenched-mean",
            "along the realized path the normalized mean stays exactly one",
            w_mean_err <= tol,
            max_abs_error=w_mean_err,
        )
        horizon = len(path) - 1
        if horizon >= 2:
            tails = [exact_moments.quenched_p2_tail(path, n, horizon) for n in range(horizon)]
            bracket_ok = all(t.lower <= t.upper + 1e-15 for t in tails)
            monotone_ok = all(
                tails[n + 1].lower <= tails[n].lower + 1e-15 for n in range(len(tails) - 1)
            )
            ctx.check(
                "exact",
                "exact.quenched-p2-tail",
                "path tail bounds bracket correctly and shrink with the generation",
                bracket_ok and monotone_ok,
                bracket_ok=bracket_ok,
                monotone_ok=monotone_ok,
            )

    if ctx.is_mixture and len(ctx.env.states) == 1 and path is not None:
        qtable = exact_moments.quenched_moments(path, EXACT_TABLE_ORDER, len(path))
        table = exact_moments.annealed_moment_table(ctx.env, 0.0, EXACT_TABLE_ORDER, len(path))
        diff = float(
            np.max(
                np.abs(qtable.values - table.values)
                / np.maximum(np.abs(table.values), 1.0)
            )
        )
        ctx.check(
            "exact",
            "exact.single-state-consistency",
            "with one state the annealed and path tables coincide",
            diff <= 1e-10,
            max_rel_diff=diff,
        )
    return section


# ---------------------------------------------------------------------------
# suites: quenched-rate / annealed-rate


def _estimate_rows(estimates: list[LpEstimate]) -> list[str]:
    return [f"{e.p!r},{e.n},{e.value!r},{e.stderr!r}" for e in estimates]


def _fit_payload(fit) -> dict:
    return {
        "fitted_rho": fit.fitted_rho,
        "ci_low": fit.ci_low,
        "ci_high": fit.ci_high,
        "window": list(fit.window),
        "r_squared": fit.r_squared,
        "points_used": fit.points_used,
    }


def _wls_slope(ns, ys, sds) -> tuple[float, float]:
    wts = 1.0 / np.maximum(np.asarray(sds), 1e-12) ** 2
    x = np.column_stack([np.ones(len(ns)), np.asarray(ns, dtype=float)])
    gram = x.T @ (wts[:, None] * x)
    beta = np.linalg.solve(gram, x.T @ (wts * np.asarray(ys)))
    cov = np.linalg.inv(gram)
    return float(beta[1]), float(math.sqrt(cov[1, 1]))


def _rate_estimates(
    ctx: _Context, batch: TrajectoryBatch, p: float, bias: "callable | None"
) -> list[LpEstimate]:
    gap = ctx.cfg.gap
    out = []
    for n in range(0, batch.n_max - gap + 1):
        est = lp_norm(batch, p, n, gap)
        if bias is not None:
            est.bias_bound = bias(n, n + gap)
        out.append(est)
    return out


def _fit_with_oracle(
    ctx: _Context,
    suite: str,
    p: float,
    estimates: list[LpEstimate],
    exact_values: list[float] | None,
    predicted_rho: float | None,
) -> dict:
    """Fit the decay rate and, when an exact curve exists, check against it."""
    sigmas = ctx.cfg.tolerances["sigmas"]
    tag = f"{suite}.p{p:g}"
    section: dict = {"p": p, "estimates": [vars(e).copy() for e in estimates]}

    if exact_values is not None:
        worst = 0.0
        ok = True
        for est, exact in zip(estimates, exact_values):
            slack = sigmas * est.stderr + 1e-12
            worst = max(worst, abs(est.value - exact) - sigmas * est.stderr)
            ok = ok and abs(est.value - exact) <= slack
        ctx.check(
            suite,
            f"{tag}.estimates-match-exact",
            "sampled moment distances sit within the Monte Carlo slack of the exact curve",
            ok,
            worst_excess=worst,
        )

    if all(e.value <= estimators.ROUNDOFF_DISTANCE**p for e in estimates):
        section["fit"] = None
        section["fit_note"] = "degenerate: all distances are zero up to rounding, nothing to fit"
        ctx.check(
            suite,
            f"{tag}.degenerate-no-fit",
            "a deterministic population has zero distances and no decay rate to fit",
            True,
            estimates_checked=len(estimates),
        )
        return section

    try:
        fit = fit_decay(estimates)
    except FitUnavailableError as exc:
        section["fit"] = None
        section["fit_note"] = str(exc)
        ctx.check(
            suite,
            f"{tag}.fit-available",
            "a decay-rate fit is available for a non-degenerate run",
            False,
            error=str(exc),
        )
        return section
    section["fit"] = _fit_payload(fit)
    ctx.check(
        suite,
        f"{tag}.fit-available",
        "a decay-rate fit is available for a non-degenerate run",
        True,
        fitted_rho=fit.fitted_rho,
    )

    if exact_values is not None:
        lo, hi = fit.window
        sel = [(e, x) for e, x in zip(estimates, exact_values) if lo <= e.n <= hi and x > 0]
        if len(sel) >= 2:
            ns = [e.n for e, _ in sel]
            ys = [math.log(x) / p for _, x in sel]
            sds = [e.stderr / (p * e.value) for e, _ in sel]
            slope_exact, _ = _wls_slope(ns, ys, sds)
            drift = abs(fit.slope - slope_exact)
            ctx.check(
                suite,
                f"{tag}.fit-matches-exact",
                "the fitted decay slope agrees with the exact curve's slope within slack",
                drift <= sigmas * fit.slope_se + 1e-12,
                fitted_rho=fit.fitted_rho,
                exact_rho=math.exp(-slope_exact),
                slack_sigmas=sigmas,
            )
    if predicted_rho is not None:
        ctx.check(
            suite,
            f"{tag}.ci-contains-predicted",
            "the fitted rate's confidence interval contains the predicted critical rate",
            fit.ci_low <= predicted_rho <= fit.ci_high,
            predicted=predicted_rho,
            ci=[fit.ci_low, fit.ci_high],
        )
        section["predicted_rho"] = predicted_rho
    return section


def _suite_quenched_rate(ctx: _Context) -> dict:
    cfg = ctx.cfg
    if not ctx.env.is_supercritical:
        raise ParameterError("quenched-rate suite needs a supercritical environment")
    if ctx.is_mixture and cfg.path_seed is None:
        raise ParameterError("quenched-rate on a mixture needs a path_seed")
    if cfg.n_max - cfg.gap < 3:
        raise ParameterError("n_max must exceed gap by at least 3 for rate fits")
    batch = ctx.batch(MODE_QUENCHED)
    path = batch.path
    inc = exact_moments.quenched_increment_second_moments(path, batch.n_max)

    section: dict = {"path_means": [float(m) for m in path.means], "per_p": []}
    for p in cfg.p:
        if p == 2.0:
            exact_vals = [
                _exact_segment(inc, n, n + cfg.gap) for n in range(0, batch.n_max - cfg.gap + 1)
            ]
            bias = lambda n, upto: _exact_segment(inc, upto, batch.n_max) + _tail_remainder(path, inc)
        else:
            exact_vals, bias = None, None
        estimates = _rate_estimates(ctx, batch, p, bias)
        ctx.add_csv(
            f"quenched_rate_p{p:g}.csv", "p,n,value,stderr", _estimate_rows(estimates)
        )
        section["per_p"].append(
            _fit_with_oracle(ctx, "quenched-rate", p, estimates, exact_vals, None)
        )

    if ctx.is_mixture:
        spread = []
        replicas = max(2_000, min(cfg.replicas // 4, 10_000))
        for offset in (1, 2):
            extra = ctx.batch(MODE_QUENCHED, replicas=replicas, path_seed=cfg.path_seed + offset)
            try:
                fit = fit_decay(_rate_estimates(ctx, extra, cfg.p[0], None))
                spread.append(fit.fitted_rho)
            except FitUnavailableError:
                spread.append(None)
        fits = [s for s in spread if s is not None]
        section["path_spread"] = {
            "extra_paths": spread,
            "range": (max(fits) - min(fits)) if len(fits) >= 2 else None,
            "note": "single-path heuristic: spread across independently drawn paths",
        }
    return section


def _tail_remainder(path: EnvPath, inc: np.ndarray) -> float:
    """Upper bound on the part of the distance-to-limit the path cannot see."""
    mu_min = float(path.means.min())
    if mu_min <= 1.0:
        return float("inf")
    bar_max = float((inc * np.exp(path.log_means[: len(inc)])).max())
    return bar_max * math.exp(-float(path.log_means[len(inc)])) / (1.0 - 1.0 / mu_min)


def _suite_annealed_rate(ctx: _Context) -> dict:
    cfg = ctx.cfg
    if not ctx.is_mixture:
        raise ParameterError("annealed-rate suite needs an i.i.d. mixture environment")
    if not ctx.env.is_supercritical:
        raise ParameterError("annealed-rate suite needs a supercritical environment")
    if cfg.n_max - cfg.gap < 3:
        raise ParameterError("n_max must exceed gap by at least 3 for rate fits")
    batch = ctx.batch(MODE_ANNEALED)
    forms = exact_moments.p2_closed_forms(ctx.env)
    inc = [forms.increment_second_moment(k) for k in range(batch.n_max)]

    section: dict = {"per_p": []}
    for p in cfg.p:
        bias = None
        exact_vals = None
        predicted = None
        if p == 2.0:
            exact_vals = [
                _exact_segment(inc, n, n + cfg.gap) for n in range(0, batch.n_max - cfg.gap + 1)
            ]
            if forms.summable:
                bias = lambda n, upto: forms.tail(upto)
                predicted = 1.0 / math.sqrt(forms.q1) if forms.q1 > 0 else None
        estimates = _rate_estimates(ctx, batch, p, bias)
        ctx.add_csv(
            f"annealed_rate_p{p:g}.csv", "p,n,value,stderr", _estimate_rows(estimates)
        )
        per_p = _fit_with_oracle(ctx, "annealed-rate", p, estimates, exact_vals, predicted)
        if 1.0 < p < 2.0:
            per_p["bias_label"] = "oracle-unbounded bias"
        if p == 2.0 and not forms.summable:
            per_p["fit_note"] = "second moments are unbounded here; no finite rate predicted"
            ctx.check(
                "annealed-rate",
                f"annealed-rate.p{p:g}.l2-unbounded-reported",
                "an environment without bounded second moments is reported, not fitted",
                True,
                q1=forms.q1,
            )
        section["per_p"].append(per_p)
    return section


# ---------------------------------------------------------------------------
# suite: burkholder


def _probe_ns(n_max: int) -> list[int]:
    return sorted({min(2, n_max - 1), (n_max - 1) // 2, n_max - 1})


def _suite_burkholder(ctx: _Context) -> dict:
    batch = ctx.batch(ctx.default_mode())
    results = []
    for p in ctx.cfg.p:
        for rho in batch.rho_grid:
            for n in _probe_ns(batch.n_max):
                sc = estimators.burkholder_sandwich(
                    batch, p, rho, n, slack_sigmas=ctx.cfg.tolerances["sigmas"]
                )
                results.append(vars(sc).copy())
                ctx.check(
                    "burkholder",
                    f"burkholder.p{p:g}.rho{rho:.4g}.n{n}",
                    "the weighted-increment norm sits inside the square-function bracket",
                    sc.ok,
                    a_norm=sc.a_norm,
                    lower=sc.lower,
                    upper=sc.upper,
                )
    ctx.add_csv(
        "burkholder.csv",
        "p,rho,n,a_norm,q_norm,lower,upper,ok",
        [
            f"{r['p']!r},{r['rho']!r},{r['n']},{r['a_norm']!r},{r['q_norm']!r},"
            f"{r['lower']!r},{r['upper']!r},{r['lower_ok'] and r['upper_ok']}"
            for r in results
        ],
    )
    return {"results": results}


# ---------------------------------------------------------------------------
# suite: criteria


def _suite_criteria(ctx: _Context) -> dict:
    cfg = ctx.cfg
    section: dict = {}
    margin = cfg.tolerances["series_margin"]

    if ctx.is_mixture:
        crits = []
        for p in cfg.p:
            crit = rates.annealed_lp_criterion(ctx.env, p)
            crits.append(crit.to_dict())
            ctx.check(
                "criteria",
                f"criteria.p{p:g}.lp-criterion",
                "the moment-shrinkage criterion evaluates on the stationary law",
                True,
                value=crit.mean_power_value,
                holds=crit.holds,
            )
        section["lp_criteria"] = crits
        conds = []
        for p in cfg.p:
            if 1.0 < p < 2.0:
                cond = rates.annealed_critical_conditions(ctx.env, p)
                conds.append(cond.to_dict())
                ctx.check(
                    "criteria",
                    f"criteria.p{p:g}.critical-conditions",
                    "the critical-rate hypotheses evaluate on the stationary law",
                    True,
                    all_hold=cond.all_hold,
                )
        if conds:
            section["critical_conditions"] = conds
    else:
        section["lp_criteria"] = None
        section["note"] = "stationary-law criteria need a mixture; this is a fixed path"

    length = max(12, min(cfg.n_max, 40))
    if isinstance(ctx.env, FixedPath):
        length = len(ctx.env.laws)
    if length >= 8:
        path = ctx.series_path(length)
        m_geo = ctx.geo_mean()
        if m_geo > 1.0:
            probes = []
            rho_sub = max(1.0, 0.9 * math.sqrt(m_geo))
            rho_super = 1.2 * math.sqrt(m_geo)
            diag_sub = rates.series_diagnostic(
                path, 2.0, rho_sub, rates.VARIANT_QUADRATIC, margin=margin
            )
            probes.append(_series_payload(diag_sub))
            ctx.check(
                "criteria",
                "criteria.series.sub-rho",
                "below the critical rate the rate series shows no divergence",
                diag_sub.verdict in ("converging", "inconclusive"),
                verdict=diag_sub.verdict,
                root_stat=diag_sub.root_stat,
                rho=rho_sub,
            )
            if not ctx.is_degenerate():
                diag_super = rates.series_diagnostic(
                    path, 2.0, rho_super, rates.VARIANT_QUADRATIC, margin=margin
                )
                probes.append(_series_payload(diag_super))
                ctx.check(
                    "criteria",
                    "criteria.series.super-rho",
                    "above the critical rate the rate series shows no convergence",
                    diag_super.verdict in ("diverging", "inconclusive"),
                    verdict=diag_super.verdict,
                    root_stat=diag_super.root_stat,
                    rho=rho_super,
                )
            small_p = [p for p in cfg.p if 1.0 < p < 2.0]
            if small_p:
                diag_inc = rates.series_diagnostic(
                    path, small_p[0], rho_sub, rates.VARIANT_INCREMENT, r=2.0, margin=margin
                )
                probes.append(_series_payload(diag_inc))
                ctx.check(
                    "criteria",
                    "criteria.series.increment-sub-rho",
                    "the increment-variant series shows no divergence below the critical rate",
                    diag_inc.verdict in ("converging", "inconclusive"),
                    verdict=diag_inc.verdict,
                    root_stat=diag_inc.root_stat,
                )
            section["series_probes"] = probes
        else:
            section["series_note"] = "path is not supercritical on average; no probes run"
    else:
        section["series_note"] = "stored path shorter than 8 states; series probes skipped"
    return section


def _series_payload(diag: rates.SeriesDiagnostic) -> dict:
    return {
        "variant": diag.variant,
        "p": diag.p,
        "r": diag.r,
        "rho": diag.rho,
        "margin": diag.margin,
        "root_stat": diag.root_stat,
        "verdict": diag.verdict,
        "partial_sum": float(diag.partial_sums[-1]),
    }


# ---------------------------------------------------------------------------
# suite: identity


def _suite_identity(ctx: _Context) -> dict:
    tol = ctx.cfg.tolerances["identity"]
    batch = ctx.batch(ctx.default_mode())
    rhos = [r for r in batch.rho_grid if r > 1.0]
    if not rhos:
        raise ParameterError("identity suite needs at least one rho > 1 in the grid")
    ns = sorted({1, batch.n_max // 2, batch.n_max - 2})
    ns = [n for n in ns if 0 <= n < batch.n_max - 1]
    results = []
    for rho in rhos[:3]:
        for n in ns:
            residual = increment_identity_check(batch, rho, n)
            results.append({"rho": rho, "n": n, "residual": residual})
            ctx.check(
                "identity",
                f"identity.rho{rho:.4g}.n{n}",
                "the telescoped and accumulator forms of the weighted sum agree",
                residual <= tol,
                residual=residual,
                tolerance=tol,
            )
    return {"results": results}


_SUITES = {
    "rates": _suite_rates,
    "exact": _suite_exact,
    "quenched-rate": _suite_quenched_rate,
    "annealed-rate": _suite_annealed_rate,
    "burkholder": _suite_burkholder,
    "criteria": _suite_criteria,
    "identity": _suite_identity,
}


# ---------------------------------------------------------------------------
# report assembly


def _sanitize(obj):
    """Make a structure JSON-safe: numpy scalars to Python, non-finite to strings."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _build_report(cfg: ExperimentConfig, suites: dict, checks: list[dict], timings: dict) -> dict:
    failed = sum(1 for c in checks if not c["passed"])
    return _sanitize(
        {
            "schema": 1,
            "tool": {"name": "bprelab", "version": __version__},
            "config": {"source": cfg.source, "values": cfg.raw},
            "suites": suites,
            "checks": checks,
            "summary": {
                "checks": len(checks),
                "passed": len(checks) - failed,
                "failed": failed,
                "ok": failed == 0,
            },
            "timings": timings,
        }
    )


def write_outputs(report: dict, csv_tables: dict[str, list[str]], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for name, lines in csv_tables.items():
        (out / name).write_text("\n".join(lines) + "\n")
    return report_path


def run_experiment(cfg: ExperimentConfig) -> tuple[dict, dict[str, list[str]], int]:
    """Execute the config's suites in order; returns (report, csv tables, exit code)."""
    ctx = _Context(cfg)
    suites: dict = {}
    timings: dict = {}
    t_start = time.perf_counter()
    seen = []
    for suite in cfg.suites:
        if suite in seen:
            continue
        seen.append(suite)
        t0 = time.perf_counter()
        suites[suite] = _SUITES[suite](ctx)
        timings[suite] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start
    report = _build_report(cfg, suites, ctx.checks, timings)
    code = EXIT_OK if report["summary"]["ok"] else EXIT_CHECK_FAILED
    return report, ctx.csv, code


# ---------------------------------------------------------------------------
# verify suite: cross-module consistency checks with recorded errors


def _verify_sizes(cfg: ExperimentConfig) -> tuple[int, int]:
    replicas = max(1_000, min(cfg.replicas, 4_000))
    n_small = max(4, min(cfg.n_max, 12))
    return replicas, n_small


def _verify_p2_closed_forms(ctx: _Context, n_small: int) -> dict:
    if ctx.is_mixture:
        forms = exact_moments.p2_closed_forms(ctx.env)
        u2 = exact_moments.annealed_u(ctx.env, 0.0, 2, n_small)
        inc = [forms.increment_second_moment(k) for k in range(n_small)]
        worst = max(
            abs(u2[n] - (1.0 + _exact_segment(inc, 0, n)))
            / max(1.0 + _exact_segment(inc, 0, n), 1.0)
            for n in range(n_small + 1)
        )
        observed = {"max_rel_error": worst, "q1": forms.q1, "summable": forms.summable}
        if forms.summable:
            rho = min(1.05, 1.0 / math.sqrt(forms.q1) if forms.q1 > 0 else 1.05)
            rho = max(rho, 1.0)
            if forms.q1 * rho**2 < 1.0:
                partial = exact_moments.a_hat_second_moment_partial(ctx.env, rho, n_small)
                sup = forms.sup_a_hat2(rho)
                remainder = (
                    forms.b2
                    * (rho**2 * forms.q1) ** n_small
                    / (1.0 - rho**2 * forms.q1)
                )
                observed["a_hat_gap"] = sup - partial
                observed["a_hat_remainder_bound"] = remainder
                if not (-1e-12 <= sup - partial <= remainder + 1e-12):
                    return {"passed": False, **observed}
        return {"passed": worst <= ctx.cfg.tolerances["exact_rel"], **observed}
    path = ctx.series_path(n_small)
    qtable = exact_moments.quenched_moments(path, 2, len(path))
    inc = exact_moments.quenched_increment_second_moments(path, len(path))
    worst = max(
        abs(qtable.w_moments(2)[n] - (1.0 + _exact_segment(inc, 0, n)))
        / max(1.0 + _exact_segment(inc, 0, n), 1.0)
        for n in range(len(path) + 1)
    )
    return {"passed": worst <= ctx.cfg.tolerances["exact_rel"], "max_rel_error": worst}


def _verify_recursion(ctx: _Context, n_small: int) -> dict:
    if not ctx.is_mixture:
        return {"passed": True, "skipped": "needs a stationary mixture"}
    min_slack = min(
        float(exact_moments.recursion_inequality_slacks(ctx.env, s, r, max(n_small, 10)).min())
        for r in (3, 4)
        for s in (0.0, 1.0)
    )
    return {"passed": min_slack >= -1e-12, "min_slack": min_slack}


def _verify_envelope(ctx: _Context, n_small: int) -> dict:
    if not ctx.is_mixture:
        return {"passed": True, "skipped": "needs a stationary mixture"}
    holds = {
        r: exact_moments.growth_envelope_check(ctx.env, 0.0, r, max(n_small, 10))
        for r in (2, 3, 4, 5)
    }
    return {"passed": all(holds.values()), "per_order": {str(k): v for k, v in holds.items()}}


def _verify_batch(ctx: _Context, replicas: int, n_small: int) -> TrajectoryBatch:
    path = ctx.series_path(n_small)
    env = FixedPath(path.laws) if ctx.is_mixture else ctx.env
    sim = SimConfig(
        env=env,
        mode=MODE_QUENCHED,
        n_max=n_small,
        replicas=replicas,
        master_seed=ctx.cfg.master_seed,
        pop_cap=ctx.cfg.pop_cap,
        rho_grid=(1.1, 1.3),
    )
    return run(sim, threads=ctx.cfg.threads)


def _verify_identity(ctx: _Context, batch: TrajectoryBatch) -> dict:
    tol = ctx.cfg.tolerances["identity"]
    worst = max(
        increment_identity_check(batch, rho, n)
        for rho in batch.rho_grid
        for n in (1, batch.n_max - 2)
        if n >= 0
    )
    return {"passed": worst <= tol, "max_residual": worst, "tolerance": tol}


def _verify_burkholder(ctx: _Context, batch: TrajectoryBatch) -> dict:
    p = ctx.cfg.p[0]
    sc = estimators.burkholder_sandwich(
        batch, p, batch.rho_grid[0], batch.n_max - 1,
        slack_sigmas=ctx.cfg.tolerances["sigmas"],
    )
    return {
        "passed": sc.ok,
        "p": p,
        "a_norm": sc.a_norm,
        "lower": sc.lower,
        "upper": sc.upper,
    }


def _verify_orderings(ctx: _Context) -> dict:
    if not ctx.is_mixture:
        return {"passed": True, "skipped": "needs a stationary mixture"}
    if not ctx.env.is_supercritical:
        return {"passed": True, "skipped": "environment is not supercritical"}
    ok = True
    worst = None
    for p in ctx.cfg.p:
        rep = rates.rate_report(ctx.env, p)
        ok = ok and rep.annealed_rhoc <= rep.quenched_critical + 1e-12
        ok = ok and rep.quenched_sufficient_bound <= rep.quenched_critical + 1e-12
        if p >= 2.0:
            ok = ok and math.isclose(rep.annealed_rho0, rep.annealed_rhoc, rel_tol=1e-12)
        elif rep.condition_flags.get("tilt_positive"):
            ok = ok and rep.annealed_rho0 <= rep.annealed_rhoc + 1e-12
        worst = rep.to_dict()
    return {"passed": ok, "last_report": worst}


def _verify_quenched_increments(ctx: _Context, batch: TrajectoryBatch) -> dict:
    path = batch.path
    inc = exact_moments.quenched_increment_second_moments(path, batch.n_max)
    sigmas = ctx.cfg.tolerances["sigmas"]
    mask = batch.uncapped
    ok = True
    worst = 0.0
    for n in range(min(6, batch.n_max)):
        x = (batch.w[mask, n + 1] - batch.w[mask, n]) ** 2
        mean = float(x.mean())
        se = estimators._batch_means_stderr(x)
        gap = abs(mean - float(inc[n]))
        ok = ok and gap <= sigmas * se + 1e-12
        worst = max(worst, gap - sigmas * se)
    return {"passed": ok, "worst_excess": worst}


def verify_suite(cfg: ExperimentConfig) -> tuple[dict, dict[str, list[str]], int]:
    """Run the cross-module consistency checks; errors are recorded per check."""
    ctx = _Context(cfg)
    replicas, n_small = _verify_sizes(cfg)
    batch = None
    statements = {
        "p2-closed-forms": "closed-form second moments match the recursion tables",
        "recursion-inequality": "the split-moment recursion inequality has non-negative slack",
        "growth-envelope": "scaled moments stay under the polynomial-times-base envelope",
        "increment-identity": "the telescoped and accumulator forms agree to rounding",
        "burkholder-sandwich": "the weighted-increment norm sits inside the square-function bracket",
        "rate-orderings": "computed rates obey their proven orderings",
        "quenched-increments": "simulated squared increments match the exact path values",
    }
    timings: dict = {}
    t_start = time.perf_counter()
    for name in cfg.verify:
        t0 = time.perf_counter()
        try:
            if name == "p2-closed-forms":
                result = _verify_p2_closed_forms(ctx, n_small)
            elif name == "recursion-inequality":
                result = _verify_recursion(ctx, n_small)
            elif name == "growth-envelope":
                result = _verify_envelope(ctx, n_small)
            elif name == "rate-orderings":
                result = _verify_orderings(ctx)
            else:
                if batch is None:
                    batch = _verify_batch(ctx, replicas, n_small)
                if name == "increment-identity":
                    result = _verify_identity(ctx, batch)
                elif name == "burkholder-sandwich":
                    result = _verify_burkholder(ctx, batch)
                else:
                    result = _verify_quenched_increments(ctx, batch)
            passed = bool(result.pop("passed"))
            ctx.check("verify", f"verify.{name}", statements[name], passed, **result)
        except BpreLabError as exc:
            ctx.check(
                "verify", f"verify.{name}", statements[name], False, error=str(exc)
            )
        timings[name] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start
    report = _build_report(cfg, {"verify": {"checks_run": list(cfg.verify)}}, ctx.checks, timings)
    code = EXIT_OK if report["summary"]["ok"] else EXIT_CHECK_FAILED
    return report, ctx.csv, code
