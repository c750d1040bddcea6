"""Monte Carlo estimation of the limit functionals and statistical comparison.

Per replica the module computes, from an ensemble of paths,

* the principal martingale ``W_u = e^{lam1 u} <phi_1, X_u>`` and every
  eigen-martingale ``H_u = e^{lam_k u} <phi_j^{(k)}, X_u>`` on the grid,
* the three fluctuation functionals at each lag tau:
  ``Y1(tau) = e^{lam1 (t+tau)/2} <U_q f, X_{t+tau}>`` (f in the small span),
  ``Y2(tau) = t^{-1/2} e^{lam1 (t+tau)/2} <h, X_{t+tau}>`` (h critical),
  ``Y3(tau) = e^{lam1 (t+tau)/2} (<g, X_{t+tau}> - F_{t+tau}(g))`` (g in the
  large span), where ``F`` projects onto the martingale limits, estimated
  from the eigen-martingales at the horizon.

Every statistical test is paired: both sides of a comparison are built from
the same replicas, standard errors shrink like 1/sqrt(replicas), and a test
passes when |estimate - predicted| <= level * SE + bias budget.  Reports are
deterministic functions of (seed, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .limits import (
    LimitCovariance,
    beta_cov,
    eta_cov,
    limit_covariance_matrix,
    rho_sq,
    sigma_cov,
)
from .model import FiniteTypeModel, derive_coefficients
from .simulate import EnsembleResult, SimConfig, simulate_ensemble
from .spectral import (
    EigenClassification,
    EigenFunction,
    SpectralDecomposition,
    classify,
    decompose,
    project_components,
    resolvent_apply,
)

__all__ = [
    "ReplicaStatistics",
    "VerificationRow",
    "VerificationReport",
    "horizon_margin",
    "estimate_statistics",
    "covariance_test",
    "cf_mixture_test",
    "critical_constancy_test",
    "critical_decay_rows",
    "martingale_test",
    "independence_surrogate_rows",
    "remark_recombination_test",
    "default_functions",
    "default_resolvent_shift",
    "run_verification",
]

# Default bias budget (fraction of |predicted|) absorbing finite-t error.
DEFAULT_BIAS_FRACTION = 0.02
# Fixed batch count for batch-means standard errors of ratio statistics.
_N_BATCHES = 200
# Safety factor on the declared O(1/t) budget of the critical difference test.
_DIFF_BUDGET_FACTOR = 1.2


def horizon_margin(decomp: SpectralDecomposition, classification: EigenClassification) -> float:
    """Run-out time needed for the horizon estimate of the martingale limits.

    The squared truncation error of an eigen-martingale in the large group k
    decays at rate |lam1 - 2 lam_k|; eight e-foldings of the slowest such
    rate keep it well below the statistical resolution.
    """
    rates = [abs(decomp.principal_rate - 2.0 * decomp.rates[k]) for k in classification.large]
    return 8.0 / min(rates)


@dataclass(frozen=True)
class ReplicaStatistics:
    """Per-replica functionals extracted from an ensemble."""

    t: float
    taus: tuple[float, ...]
    q: float
    horizon: float
    grid_times: np.ndarray
    w: np.ndarray            # (R, T) principal martingale at each grid time
    eigen_mart: np.ndarray   # (R, T, n) all eigen-martingales
    y1: np.ndarray           # (R, k)
    y2: np.ndarray           # (R, k)
    y3: np.ndarray           # (R, k)
    extinct_at_t: np.ndarray
    mu0: np.ndarray
    seed: int

    @property
    def n_replicas(self) -> int:
        return self.w.shape[0]

    def w_at(self, time: float) -> np.ndarray:
        idx = np.nonzero(np.isclose(self.grid_times, time, rtol=0.0, atol=1e-10))[0]
        if idx.size != 1:
            raise ConfigError(f"time {time} not on the statistics grid")
        return self.w[:, int(idx[0])]


@dataclass(frozen=True)
class VerificationRow:
    """One statistic: prediction, estimate, standard error, and verdict."""

    test: str
    label: str
    predicted: float
    estimate: float
    se: float
    level: float
    bias_budget: float
    passed: bool


@dataclass(frozen=True)
class VerificationReport:
    rows: tuple[VerificationRow, ...]
    seed: int
    n_replicas: int
    level: float
    model_name: str
    t: float
    taus: tuple[float, ...]
    q: float
    scheme: str
    h: float
    notes: tuple[str, ...] = ()

    @property
    def n_failed(self) -> int:
        return sum(1 for row in self.rows if not row.passed)

    def to_dict(self) -> dict:
        return {
            "model": self.model_name,
            "seed": self.seed,
            "replicas": self.n_replicas,
            "level": self.level,
            "t": self.t,
            "taus": list(self.taus),
            "q": self.q,
            "scheme": self.scheme,
            "h": self.h,
            "notes": list(self.notes),
            "failed": self.n_failed,
            "rows": [
                {
                    "test": r.test,
                    "label": r.label,
                    "predicted": r.predicted,
                    "estimate": r.estimate,
                    "se": r.se,
                    "level": r.level,
                    "bias_budget": r.bias_budget,
                    "pass": r.passed,
                }
                for r in self.rows
            ],
        }


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.shape[0]
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def _row(test, label, pred, samples, level, bias_budget=0.0) -> VerificationRow:
    est, se = _mean_se(samples)
    passed = abs(est - pred) <= level * se + bias_budget
    return VerificationRow(
        test=test, label=label, predicted=float(pred), estimate=est, se=se,
        level=level, bias_budget=float(bias_budget), passed=bool(passed),
    )


def estimate_statistics(
    ensemble: EnsembleResult,
    decomp: SpectralDecomposition,
    classification: EigenClassification,
    f: EigenFunction,
    h: EigenFunction,
    g: EigenFunction,
    t: float,
    taus,
    q: float,
    horizon: float,
) -> ReplicaStatistics:
    """Compute all per-replica functionals from an ensemble.

    Preconditions: t + max(taus) must leave the horizon margin free, the
    observation grid must contain t, every t + tau, and the horizon, and
    (f, h, g) must lie in the small/critical/large spans (each may be zero).
    Extinct replicas contribute exact zeros to every functional.
    """
    taus = tuple(float(x) for x in taus)
    if not taus:
        raise ConfigError("need at least one lag")
    margin = horizon_margin(decomp, classification)
    if t + max(taus) > horizon - margin + 1e-9:
        raise ConfigError(
            f"horizon {horizon} leaves less than the required margin {margin:.3g} "
            f"after t + max(tau) = {t + max(taus)}"
        )
    for fn, groups, name in (
        (f, classification.small, "small"),
        (h, classification.critical, "critical"),
        (g, classification.large, "large"),
    ):
        outside = set(fn.support_groups()) - set(groups)
        if outside:
            raise ConfigError(f"{name}-span argument has groups {sorted(outside)} outside it")

    bound = derive_coefficients(ensemble.model).bound
    uqf = f if f.is_zero() else resolvent_apply(decomp, f, q, bound)
    lam1 = decomp.principal_rate
    times = ensemble.times
    paths = ensemble.paths

    # Eigen-martingales at every grid time.
    rates = decomp.flat_rates
    H = np.einsum("rtn,jn->rtj", paths, decomp.basis)
    H *= np.exp(times[:, None] * rates[None, :])[None, :, :]
    w = H[:, :, 0]

    idx_h = ensemble.time_index(horizon)
    large_flat = np.nonzero(np.isin(decomp.group, classification.large))[0]

    k = len(taus)
    R = paths.shape[0]
    y1 = np.zeros((R, k))
    y2 = np.zeros((R, k))
    y3 = np.zeros((R, k))
    uqf_vals = uqf.values()
    h_vals = h.values()
    g_vals = g.values()
    g_coeffs = g.coeffs
    for i, tau in enumerate(taus):
        u = t + tau
        idx = ensemble.time_index(u)
        scale = math.exp(0.5 * lam1 * u)
        masses = paths[:, idx, :]
        y1[:, i] = scale * (masses @ uqf_vals)
        y2[:, i] = scale / math.sqrt(t) * (masses @ h_vals)
        proj = np.zeros(R)
        for j in large_flat:
            if g_coeffs[j] != 0.0:
                proj += math.exp(-rates[j] * u) * g_coeffs[j] * H[:, idx_h, j]
        y3[:, i] = scale * ((masses @ g_vals) - proj)

    idx_t = ensemble.time_index(t)
    extinct_at_t = ~np.any(paths[:, idx_t, :] > 0, axis=1)
    return ReplicaStatistics(
        t=t, taus=taus, q=q, horizon=horizon, grid_times=times,
        w=w, eigen_mart=H, y1=y1, y2=y2, y3=y3,
        extinct_at_t=extinct_at_t, mu0=ensemble.mu0, seed=ensemble.seed,
    )


def covariance_test(
    stats: ReplicaStatistics,
    limit_cov: LimitCovariance,
    mu0: np.ndarray,
    phi1: np.ndarray,
    level: float,
    bias_frac: float = DEFAULT_BIAS_FRACTION,
) -> list[VerificationRow]:
    """Compare every empirical second moment to the mixed-limit covariance.

    The limit factorises the principal martingale out of the Gaussian block,
    so each predicted moment is <phi_1, mu0> times a limit covariance entry.
    """
    scale = float(np.dot(phi1, mu0))
    taus = stats.taus
    k = len(taus)
    rows = []
    have_y2 = bool(np.any(stats.y2 != 0.0))
    for i in range(k):
        for j in range(i, k):
            pred = scale * limit_cov.sigma_block[i, j]
            rows.append(_row(
                "sigma", f"E[Y1({taus[i]:g})Y1({taus[j]:g})]", pred,
                stats.y1[:, i] * stats.y1[:, j], level, bias_frac * abs(pred),
            ))
    for i in range(k):
        for j in range(i, k):
            pred = scale * limit_cov.beta_block[i, j]
            rows.append(_row(
                "beta", f"E[Y3({taus[i]:g})Y3({taus[j]:g})]", pred,
                stats.y3[:, i] * stats.y3[:, j], level, bias_frac * abs(pred),
            ))
    for i in range(k):
        for j in range(k):
            pred = scale * limit_cov.cross_block[i, j]
            rows.append(_row(
                "eta", f"E[Y3({taus[i]:g})Y1({taus[j]:g})]", pred,
                stats.y3[:, i] * stats.y1[:, j], level, bias_frac * abs(pred),
            ))
    if have_y2:
        for i in range(k):
            for j in range(k):
                rows.append(_row(
                    "y2-cross", f"E[Y2({taus[i]:g})Y1({taus[j]:g})]", 0.0,
                    stats.y2[:, i] * stats.y1[:, j], level,
                ))
                rows.append(_row(
                    "y2-cross", f"E[Y2({taus[i]:g})Y3({taus[j]:g})]", 0.0,
                    stats.y2[:, i] * stats.y3[:, j], level,
                ))
    return rows


def cf_mixture_test(
    stats: ReplicaStatistics,
    sigma_sq: float,
    theta_grid,
    level: float,
) -> list[VerificationRow]:
    """Paired characteristic-function test of the mixed-Gaussian limit.

    In the limit E cos(theta Y1(0)) equals E exp(-theta^2 sigma^2 W / 2)
    with W the principal martingale; both sides are estimated from the same
    replicas and their difference is tested against zero, as is the odd part
    E sin(theta Y1(0)).
    """
    y = stats.y1[:, 0]
    w_t = stats.w_at(stats.t)
    rows = []
    for theta in theta_grid:
        lhs = np.cos(theta * y)
        rhs = np.exp(-0.5 * theta * theta * sigma_sq * w_t)
        rows.append(_row("cf", f"CF diff theta={theta:g}", 0.0, lhs - rhs, level))
        rows.append(_row("cf-imag", f"CF imag theta={theta:g}", 0.0, np.sin(theta * y), level))
    return rows


def critical_constancy_test(
    stats: ReplicaStatistics,
    rho_sq_value: float,
    mu0: np.ndarray,
    phi1: np.ndarray,
    level: float,
    bias_frac: float = 0.05,
) -> list[VerificationRow]:
    """Second-moment and constancy checks of the critical component.

    Moment rows compare E[Y2(tau)^2] with <phi_1, mu0> rho^2 inside
    ``bias_frac``; difference rows check E[(Y2(tau_i) - Y2(tau_j))^2]
    against its declared O(1/t) budget (tau_j - tau_i)/t times the moment
    scale, with a 1.2 safety factor.
    """
    if not np.any(stats.y2 != 0.0):
        raise ConfigError("critical span is empty; no critical component to test")
    scale = float(np.dot(phi1, mu0))
    pred = scale * rho_sq_value
    taus = stats.taus
    rows = []
    for i, tau in enumerate(taus):
        rows.append(_row(
            "critical", f"E[Y2({tau:g})^2]", pred,
            stats.y2[:, i] ** 2, level, bias_frac * pred,
        ))
    for i in range(len(taus)):
        for j in range(i + 1, len(taus)):
            budget = _DIFF_BUDGET_FACTOR * (taus[j] - taus[i]) / stats.t * pred
            rows.append(_row(
                "critical-diff", f"E[(Y2({taus[i]:g})-Y2({taus[j]:g}))^2]", 0.0,
                (stats.y2[:, i] - stats.y2[:, j]) ** 2, level, budget,
            ))
    return rows


def critical_decay_rows(
    stats_early: ReplicaStatistics, stats_late: ReplicaStatistics, level: float
) -> list[VerificationRow]:
    """Paired check that the critical difference moment shrinks with t."""
    d_early = (stats_early.y2[:, 0] - stats_early.y2[:, -1]) ** 2
    d_late = (stats_late.y2[:, 0] - stats_late.y2[:, -1]) ** 2
    diff = d_early - d_late
    est, se = _mean_se(diff)
    return [VerificationRow(
        test="critical-decay",
        label=f"E[dY2^2] t={stats_early.t:g} minus t={stats_late.t:g}",
        predicted=0.0, estimate=est, se=se, level=level, bias_budget=0.0,
        passed=bool(est > level * se),
    )]


def martingale_test(
    stats: ReplicaStatistics,
    mu0: np.ndarray,
    phi1: np.ndarray,
    level: float,
) -> list[VerificationRow]:
    """Null tests: E[W_u] equals <phi_1, mu0> at every grid time, and every
    eigen-martingale has zero expected increment over the earliest grid pair.
    """
    scale = float(np.dot(phi1, mu0))
    rows = []
    for i, u in enumerate(stats.grid_times):
        rows.append(_row("w-mean", f"E[W({u:g})]", scale, stats.w[:, i], level))
    if stats.grid_times.shape[0] >= 2:
        u0, u1 = stats.grid_times[0], stats.grid_times[1]
        n_flat = stats.eigen_mart.shape[2]
        for j in range(n_flat):
            inc = stats.eigen_mart[:, 1, j] - stats.eigen_mart[:, 0, j]
            rows.append(_row(
                "martingale", f"E[H_{j}({u1:g}) - H_{j}({u0:g})]", 0.0, inc, level,
            ))
    return rows


def independence_surrogate_rows(
    stats: ReplicaStatistics, level: float
) -> list[VerificationRow]:
    """Partial check of the independence between the martingale limit and the
    Gaussian block, through the cross-moment surrogate
    E[W Y1(0)^2] E[W] - E[W^2] E[Y1(0)^2] = 0.

    The plug-in estimate of the product difference is tested with its
    delta-method standard error (influence-function form), which avoids the
    O(1/batch) bias a batch-means product estimate would carry.
    """
    w = stats.w_at(stats.t)
    y2 = stats.y1[:, 0] ** 2
    a, b, c, d = np.mean(w * y2), np.mean(w), np.mean(w * w), np.mean(y2)
    est = a * b - c * d
    influence = (w * y2) * b + a * w - (w * w) * d - c * y2
    se = float(np.std(influence, ddof=1) / math.sqrt(w.shape[0]))
    return [VerificationRow(
        test="independence", label="E[W Y1^2]E[W] - E[W^2]E[Y1^2]",
        predicted=0.0, estimate=float(est), se=se, level=level,
        bias_budget=0.0, passed=bool(abs(est) <= level * se),
    )]


def remark_recombination_test(
    ensemble: EnsembleResult,
    decomp: SpectralDecomposition,
    classification: EigenClassification,
    f_general: EigenFunction,
    t: float,
    taus,
    q: float,
    level: float,
    bias_frac: float = DEFAULT_BIAS_FRACTION,
) -> list[VerificationRow]:
    """Verify the recombined fluctuation of a general function.

    With g = U_q f split into its spectral parts, the statistic
    e^{lam1 (t+tau)/2} (<g, X_{t+tau}> - F(g's large part)) has limit
    covariance sigma + eta + beta of the parts when f has no critical
    component; otherwise the t^{-1/2}-normalised statistic converges to the
    critical limit rho^2 of g's critical part while the rest vanishes at
    rate 1/sqrt(t).  The O(1/t) bias budget of the critical moment row is
    declared explicitly from the exact finite-t moment structure.
    """
    taus = tuple(float(x) for x in taus)
    var_rate = derive_coefficients(ensemble.model).var_rate
    bound = derive_coefficients(ensemble.model).bound
    parts = project_components(decomp, classification, f_general)
    uq = lambda fn: fn if fn.is_zero() else resolvent_apply(decomp, fn, q, bound)
    g_s, g_c, g_l = uq(parts.f_s), uq(parts.f_c), uq(parts.f_l)
    g_full = uq(f_general)

    lam1 = decomp.principal_rate
    rates = decomp.flat_rates
    large_flat = np.nonzero(np.isin(decomp.group, classification.large))[0]
    # The martingale limits are read off at the last observed time.
    idx_h = ensemble.time_index(float(ensemble.times[-1]))
    paths = ensemble.paths
    H_h = np.einsum("rn,jn->rj", paths[:, idx_h, :], decomp.basis)
    H_h *= np.exp(float(ensemble.times[idx_h]) * rates)[None, :]

    R = paths.shape[0]
    Z = np.zeros((R, len(taus)))
    g_vals = g_full.values()
    for i, tau in enumerate(taus):
        u = t + tau
        masses = paths[:, ensemble.time_index(u), :]
        proj = np.zeros(R)
        for j in large_flat:
            if g_s.coeffs[j] != 0.0:
                proj += math.exp(-rates[j] * u) * g_s.coeffs[j] * H_h[:, j]
        Z[:, i] = math.exp(0.5 * lam1 * u) * ((masses @ g_vals) - proj)

    mu0 = ensemble.mu0
    scale = float(np.dot(decomp.basis[0], mu0))
    rows = []
    if parts.f_c.is_zero():
        for i in range(len(taus)):
            for j in range(i, len(taus)):
                t1, t2 = taus[i], taus[j]
                pred = 0.0
                if not g_l.is_zero():
                    pred += sigma_cov(decomp, var_rate, g_l, t2 - t1, classification)
                if not g_s.is_zero():
                    pred += beta_cov(decomp, var_rate, g_s, t2 - t1, classification)
                if not (g_l.is_zero() or g_s.is_zero()):
                    pred += eta_cov(decomp, var_rate, g_l, g_s, t1, t2,
                                    classification=classification)
                pred *= scale
                rows.append(_row(
                    "recombination", f"E[Z({t1:g})Z({t2:g})]", pred,
                    Z[:, i] * Z[:, j], level, bias_frac * abs(pred),
                ))
        return rows

    # Critical component present: t^{-1/2}-normalised statistic.  The O(1/t)
    # budget carries the exact finite-t terms: lag growth tau/t and the
    # squared mean <g_c, mu0>^2 / t (not damped, since the critical decay
    # rate is exactly half the principal one).
    rho_val = rho_sq(var_rate, g_c, decomp.basis[0], decomp.m, classification)
    pred_c = scale * rho_val
    mean_sq = float(np.dot(g_c.values(), mu0)) ** 2
    V = Z / math.sqrt(t)
    for i, tau in enumerate(taus):
        budget = pred_c * (tau / t) + mean_sq / t + bias_frac * pred_c
        rows.append(_row(
            "recombination-critical", f"E[V({tau:g})^2]", pred_c,
            V[:, i] ** 2, level, budget,
        ))
    # The non-critical parts, scaled by t^{-1/2}, vanish like 1/t: subtract
    # the critical contribution from Z and test the residual second moment
    # at lag 0 against its predicted leading term.
    gc_vals = g_c.values()
    resid0 = Z[:, 0] - math.exp(0.5 * lam1 * t) * (
        paths[:, ensemble.time_index(t), :] @ gc_vals
    )
    resid = 0.0
    if not g_l.is_zero():
        resid += sigma_cov(decomp, var_rate, g_l, 0.0, classification)
    if not g_s.is_zero():
        resid += beta_cov(decomp, var_rate, g_s, 0.0, classification)
    pred_r = scale * resid / t
    rows.append(_row(
        "recombination-vanish", "E[(noncritical part of V(0))^2]", pred_r,
        resid0**2 / t, level, bias_frac * pred_r,
    ))
    return rows


def default_resolvent_shift(model: FiniteTypeModel, decomp: SpectralDecomposition) -> float:
    """Default resolvent shift: one above the admissibility floor."""
    bound = derive_coefficients(model).bound
    return max(bound, -2.0 * decomp.principal_rate) + 1.0


def default_functions(
    decomp: SpectralDecomposition, classification: EigenClassification
) -> tuple[EigenFunction, EigenFunction, EigenFunction]:
    """Default (f, h, g): first small eigenfunction (or zero), first critical
    eigenfunction (or zero), and the principal eigenfunction."""
    f = (
        EigenFunction.basis_element(decomp, classification.small[0])
        if classification.small
        else EigenFunction.zero(decomp)
    )
    h = (
        EigenFunction.basis_element(decomp, classification.critical[0])
        if classification.critical
        else EigenFunction.zero(decomp)
    )
    g = EigenFunction.basis_element(decomp, 0)
    return f, h, g


_TEST_ALIASES = {"eta-zero": "eta"}
KNOWN_TESTS = (
    "sigma", "beta", "eta", "y2-cross", "cf", "cf-imag", "critical",
    "critical-diff", "w-mean", "martingale", "independence",
    "recombination", "recombination-critical",
)


def _lattice_ceil(t: float, h: float) -> float:
    return math.ceil(t / h - 1e-9) * h


def run_verification(
    model: FiniteTypeModel,
    *,
    t: float,
    taus=(0.0, 1.0),
    q: float | None = None,
    replicas: int = 20000,
    seed: int = 0,
    level: float = 3.0,
    scheme: str = "strang_exact",
    h: float = 0.05,
    mu0=None,
    threads: int = 1,
    tests=None,
    block_size: int = 4096,
    theta_grid=(0.5, 1.0, 2.0),
    bias_frac: float = DEFAULT_BIAS_FRACTION,
) -> VerificationReport:
    """End-to-end verification run: simulate, estimate, test, report.

    ``tests`` selects a subset of test families by name (see KNOWN_TESTS);
    None runs every applicable family.  The default test functions are the
    first small eigenfunction, the first critical eigenfunction (when the
    critical span is nonempty), and the principal eigenfunction.
    """
    decomp = decompose(model)
    classification = classify(decomp)
    der = derive_coefficients(model)
    if q is None:
        q = default_resolvent_shift(model, decomp)
    if mu0 is None:
        mu0 = np.zeros(model.n_types)
        mu0[0] = 1.0
    mu0 = np.asarray(mu0, dtype=float)
    taus = tuple(float(x) for x in taus)

    if tests is not None:
        wanted = {_TEST_ALIASES.get(name, name) for name in tests}
        unknown = wanted - set(KNOWN_TESTS)
        if unknown:
            raise ConfigError(f"unknown test names: {sorted(unknown)}")
    else:
        wanted = None

    margin = horizon_margin(decomp, classification)
    horizon = _lattice_ceil(t + max(taus) + margin, h)
    early = (10 * h, 20 * h)
    grid = sorted({*early, t, *(t + tau for tau in taus), horizon})
    cfg = SimConfig(
        scheme=scheme, h=h, horizon=horizon, grid=tuple(grid), seed=seed, mu0=mu0
    )
    ensemble = simulate_ensemble(model, cfg, replicas, block_size=block_size, threads=threads)

    f, h_fn, g = default_functions(decomp, classification)
    stats = estimate_statistics(
        ensemble, decomp, classification, f, h_fn, g, t, taus, q, horizon
    )
    limit_cov = limit_covariance_matrix(
        decomp, der.var_rate, f, h_fn, g, taus, q, der.bound, classification
    )
    phi1 = decomp.basis[0]

    rows: list[VerificationRow] = []
    rows += covariance_test(stats, limit_cov, mu0, phi1, level, bias_frac)
    if not f.is_zero():
        rows += cf_mixture_test(stats, limit_cov.sigma0, theta_grid, level)
        rows += independence_surrogate_rows(stats, level)
    if classification.critical and not h_fn.is_zero():
        rows += critical_constancy_test(stats, limit_cov.rho_sq, mu0, phi1, level)
    rows += martingale_test(stats, mu0, phi1, level)

    lead = [decomp.flat_indices(k)[0] for k in range(decomp.n_groups)]
    coeffs = np.zeros(decomp.n_states)
    coeffs[lead] = 1.0
    f_general = EigenFunction.from_coeffs(decomp, coeffs)
    rows += remark_recombination_test(
        ensemble, decomp, classification, f_general, t, taus, q, level, bias_frac
    )

    if wanted is not None:
        rows = [row for row in rows if row.test in wanted]

    notes = []
    if len(rows) > 20:
        notes.append(
            f"{len(rows)} tests at level {level}: expect ~{len(rows) * 0.003:.1f} "
            "false failures from multiple comparisons"
        )
    return VerificationReport(
        rows=tuple(rows),
        seed=seed,
        n_replicas=replicas,
        level=level,
        model_name=model.name,
        t=t,
        taus=taus,
        q=q,
        scheme=scheme,
        h=h,
        notes=tuple(notes),
    )
