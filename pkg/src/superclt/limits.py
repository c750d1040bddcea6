"""Closed-form Gaussian-limit covariances and exact finite-time variances.

Every quantity here is an integral of products of mean-flow images against
the principal eigenfunction, e.g.

    sigma_{f,tau} = e^{lam1 tau/2} Int_0^inf e^{lam1 s}
                    (V (T_s f)(T_{s+tau} f), phi_1)_m ds,

with V the per-type variance rate and T the mean flow.  On a finite type
space the eigen-expansion turns each of them into a finite sum of explicit
exponential integrals, evaluated here in closed form; adaptive quadrature
of the defining integrals exists in the test suite as an independent
oracle.

Subspace conventions (see spectral.classify): ``sigma_cov`` needs its
argument in the small-group span, ``beta_cov`` in the large-group span,
``rho_sq`` in the critical span, and ``eta_cov`` pairs one of each.  The
canonical cross-covariance argument pattern feeds ``eta_cov`` a resolvented
function; the general bilinear form is exposed all the same.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NotSupercritical
from .spectral import (
    EigenClassification,
    EigenFunction,
    SpectralDecomposition,
    classify,
    resolvent_apply,
)

__all__ = [
    "LimitCovariance",
    "sigma_cov",
    "rho_sq",
    "beta_cov",
    "eta_cov",
    "variance_exact",
    "variance_exact_measure",
    "variance_asymptote",
    "limit_covariance_matrix",
]

# Residual tolerance for PSD checks of assembled covariance matrices.
_PSD_RTOL = 1e-9


def _triple_tensor(decomp: SpectralDecomposition, var_rate: np.ndarray) -> np.ndarray:
    """T[a, b, c] = sum_i var_rate_i phi_a(i) phi_b(i) phi_c(i) m_i."""
    weighted = decomp.basis * (decomp.m * np.asarray(var_rate))[None, :]
    return np.einsum("ai,bi,ci->abc", decomp.basis, decomp.basis, weighted)


def _principal_products(decomp: SpectralDecomposition, var_rate: np.ndarray) -> np.ndarray:
    """G[a, b] = sum_i var_rate_i phi_a(i) phi_b(i) phi_1(i) m_i."""
    w = np.asarray(var_rate) * decomp.m * decomp.basis[0]
    return (decomp.basis * w[None, :]) @ decomp.basis.T


def _require_supercritical(decomp: SpectralDecomposition) -> None:
    if not decomp.supercritical:
        raise NotSupercritical(
            f"principal rate {decomp.principal_rate:.6g} >= 0; no Gaussian limit"
        )


def _require_span(f: EigenFunction, groups, label: str) -> None:
    outside = set(f.support_groups()) - set(groups)
    if outside:
        raise DomainError(f"function is not in the {label} span (groups {sorted(outside)})")


def _segment_integral(c: np.ndarray, tau1: float, tau2: float) -> np.ndarray:
    """Int_{tau1}^{tau2} e^{c u} du, elementwise; continuous through c = 0."""
    out = np.empty_like(c)
    nz = c != 0.0
    out[nz] = np.exp(c[nz] * tau1) * np.expm1(c[nz] * (tau2 - tau1)) / c[nz]
    out[~nz] = tau2 - tau1
    return out


def sigma_cov(
    decomp: SpectralDecomposition,
    var_rate: np.ndarray,
    f: EigenFunction,
    tau: float,
    classification: EigenClassification | None = None,
) -> float:
    """Stationary lag-tau covariance of the noise-dominated fluctuation of f.

    Requires f in the small-group span; returns 0 for the zero function.
    """
    _require_supercritical(decomp)
    if tau < 0:
        raise DomainError(f"tau must be nonnegative, got {tau}")
    cls = classification or classify(decomp)
    _require_span(f, cls.small, "small")
    idx = np.nonzero(np.isin(decomp.group, cls.small))[0]
    if idx.size == 0:
        return 0.0
    c = f.coeffs[idx]
    lam = decomp.flat_rates[idx]
    lam1 = decomp.principal_rate
    G = _principal_products(decomp, var_rate)[np.ix_(idx, idx)]
    denom = lam[:, None] + lam[None, :] - lam1
    weight = np.exp((0.5 * lam1 - lam)[None, :] * tau)
    return float(np.sum(np.outer(c, c) * G * weight / denom))


def rho_sq(
    var_rate: np.ndarray,
    h: EigenFunction,
    phi1: np.ndarray,
    m: np.ndarray,
    classification: EigenClassification | None = None,
) -> float:
    """Limit variance of the critically-normalised fluctuation:
    sum_i var_rate_i h(i)^2 phi_1(i) m_i.  Requires h in the critical span.
    """
    decomp = h.decomp
    _require_supercritical(decomp)
    cls = classification or classify(decomp)
    _require_span(h, cls.critical, "critical")
    vals = h.values()
    return float(np.sum(np.asarray(var_rate) * vals * vals * phi1 * m))


def beta_cov(
    decomp: SpectralDecomposition,
    var_rate: np.ndarray,
    g: EigenFunction,
    tau: float,
    classification: EigenClassification | None = None,
) -> float:
    """Stationary lag-tau covariance of the martingale-corrected fluctuation of g.

    Requires g in the large-group span; returns 0 for the zero function.
    """
    _require_supercritical(decomp)
    if tau < 0:
        raise DomainError(f"tau must be nonnegative, got {tau}")
    cls = classification or classify(decomp)
    _require_span(g, cls.large, "large")
    idx = np.nonzero(np.isin(decomp.group, cls.large))[0]
    if idx.size == 0:
        return 0.0
    c = g.coeffs[idx]
    lam = decomp.flat_rates[idx]
    lam1 = decomp.principal_rate
    G = _principal_products(decomp, var_rate)[np.ix_(idx, idx)]
    denom = lam1 - lam[:, None] - lam[None, :]
    weight = np.exp((lam - 0.5 * lam1)[None, :] * tau)
    return float(np.sum(np.outer(c, c) * G * weight / denom))


def eta_cov(
    decomp: SpectralDecomposition,
    var_rate: np.ndarray,
    f: EigenFunction,
    g: EigenFunction,
    tau1: float,
    tau2: float,
    q: float | None = None,
    bound: float | None = None,
    classification: EigenClassification | None = None,
) -> float:
    """Cross-covariance between the two fluctuation components at lags tau1 < tau2.

    Exactly 0 whenever tau1 >= tau2.  Requires f in the small span and g in
    the large span; the canonical argument pattern passes f already mapped
    through the resolvent, and supplying ``q``/``bound`` re-validates that
    q > max(bound, -2 lambda_1).  Resonant rate combinations (where
    lambda_a + lambda_b = lambda_1) are evaluated by the exact
    linear-in-(tau2 - tau1) limit of the segment integral.
    """
    _require_supercritical(decomp)
    if tau1 < 0 or tau2 < 0:
        raise DomainError(f"lags must be nonnegative, got ({tau1}, {tau2})")
    if q is not None:
        floor = max(bound if bound is not None else 0.0, -2.0 * decomp.principal_rate)
        if not q > floor:
            raise DomainError(f"q too small: need q > {floor:.6g}, got {q}")
    cls = classification or classify(decomp)
    _require_span(f, cls.small, "small")
    _require_span(g, cls.large, "large")
    if tau1 >= tau2:
        return 0.0
    idx_f = np.nonzero(np.isin(decomp.group, cls.small))[0]
    idx_g = np.nonzero(np.isin(decomp.group, cls.large))[0]
    if idx_f.size == 0 or idx_g.size == 0:
        return 0.0
    cf = f.coeffs[idx_f]
    cg = g.coeffs[idx_g]
    lam_f = decomp.flat_rates[idx_f]
    lam_g = decomp.flat_rates[idx_g]
    lam1 = decomp.principal_rate
    G = _principal_products(decomp, var_rate)[np.ix_(idx_f, idx_g)]
    c = lam_f[:, None] + lam_g[None, :] - lam1
    seg = _segment_integral(c, tau1, tau2)
    outer = np.exp(-lam_f[:, None] * tau2 - lam_g[None, :] * tau1)
    total = np.sum(np.outer(cf, cg) * G * outer * seg)
    return float(-np.exp(0.5 * lam1 * (tau1 + tau2)) * total)


def variance_exact(
    decomp: SpectralDecomposition,
    var_rate: np.ndarray,
    f: EigenFunction,
    t: float,
    x: int,
) -> float:
    """Variance of the mass functional of f at time t started from one unit at type x.

    Evaluates Int_0^t T_s[V (T_{t-s} f)^2](x) ds by double eigen-expansion,
    giving a finite sum of terms (e^{c1 t} - e^{c2 t})/(c1 - c2) with the
    confluent c1 = c2 limit handled exactly.
    """
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    if t == 0:
        return 0.0
    lam = decomp.flat_rates
    T3 = _triple_tensor(decomp, var_rate)
    pair = lam[:, None] + lam[None, :]
    d = pair[:, :, None] - lam[None, None, :]
    decay = np.exp(-lam * t)[None, None, :] * np.ones_like(d)
    with np.errstate(divide="ignore", invalid="ignore"):
        kernel = decay * -np.expm1(-d * t) / d
    kernel = np.where(d == 0.0, t * decay, kernel)
    weights = np.einsum("a,b,abc->c", f.coeffs, f.coeffs, T3 * kernel)
    return float(weights @ decomp.basis[:, x])


def variance_exact_measure(
    decomp: SpectralDecomposition,
    var_rate: np.ndarray,
    f: EigenFunction,
    t: float,
    mu0: np.ndarray,
) -> float:
    """Variance of the mass functional under an arbitrary starting mass vector."""
    return float(
        sum(
            mu0[x] * variance_exact(decomp, var_rate, f, t, x)
            for x in range(decomp.n_states)
            if mu0[x] != 0.0
        )
    )


def variance_asymptote(
    decomp: SpectralDecomposition,
    var_rate: np.ndarray,
    f: EigenFunction,
    x: int,
    regime: str,
    classification: EigenClassification | None = None,
) -> float:
    """Long-time variance constant of the mass functional of f, per regime.

    small:    limit of e^{lam1 t} Var is sigma_f^2 phi_1(x).
    critical: limit of t^{-1} e^{lam1 t} Var is rho_{f*}^2 phi_1(x), with f*
              the leading-group part of f.
    large:    limit of e^{2 lam_gamma t} Var is
              Int_0^inf e^{2 lam_gamma s} T_s[V (f*)^2](x) ds, in closed form.

    The requested regime must match the classification of f's leading group.
    """
    _require_supercritical(decomp)
    cls = classification or classify(decomp)
    gam = f.gamma
    if gam == float("inf"):
        raise DomainError("zero function has no asymptotic regime")
    actual = cls.regime_of(int(gam))
    if regime not in ("small", "critical", "large"):
        raise DomainError(f"unknown regime {regime!r}")
    if regime != actual:
        raise DomainError(f"requested regime {regime!r}, but leading group is {actual!r}")
    phi1_x = decomp.basis[0, x]
    if regime == "small":
        return sigma_cov(decomp, var_rate, f, 0.0, cls) * phi1_x
    f_star = f.restricted_to([int(gam)])
    if regime == "critical":
        return rho_sq(var_rate, f_star, decomp.basis[0], decomp.m, cls) * phi1_x
    # large: expand V (f*)^2 over the basis and integrate each mode.
    vals = f_star.values()
    mode_coeffs = decomp.basis @ (decomp.m * np.asarray(var_rate) * vals * vals)
    lam_gam = decomp.rates[int(gam)]
    denom = decomp.flat_rates - 2.0 * lam_gam
    return float(np.sum(mode_coeffs / denom * decomp.basis[:, x]))


@dataclass(frozen=True)
class LimitCovariance:
    """Assembled limit covariance structure on a lag grid.

    ``grid_matrix`` is the 2k x 2k covariance of the two fluctuation
    components evaluated on the k-point lag grid (first block the
    noise-dominated component, second the martingale-corrected one); the
    critical component contributes only the scalar ``rho_sq`` since its
    limit is a constant process.
    """

    tau_grid: tuple[float, ...]
    sigma: dict[float, float]
    rho_sq: float
    beta: dict[float, float]
    eta: dict[tuple[float, float], float]
    sigma_block: np.ndarray = field(repr=False)
    beta_block: np.ndarray = field(repr=False)
    cross_block: np.ndarray = field(repr=False)
    grid_matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        k = len(self.tau_grid)
        if self.grid_matrix.shape != (2 * k, 2 * k):
            raise DomainError("grid matrix has inconsistent shape")
        if self.sigma.get(0.0, 0.0) < 0 or self.beta.get(0.0, 0.0) < 0 or self.rho_sq < 0:
            raise DomainError("negative limit variance")
        if k > 0:
            eigs = np.linalg.eigvalsh(0.5 * (self.grid_matrix + self.grid_matrix.T))
            trace = max(float(np.trace(self.grid_matrix)), 0.0)
            if eigs.min(initial=0.0) < -_PSD_RTOL * max(trace, 1e-300):
                raise DomainError("assembled grid matrix is not PSD within tolerance")

    @property
    def sigma0(self) -> float:
        return self.sigma.get(0.0, 0.0)

    @property
    def beta0(self) -> float:
        return self.beta.get(0.0, 0.0)


def limit_covariance_matrix(
    decomp: SpectralDecomposition,
    var_rate: np.ndarray,
    f: EigenFunction,
    h: EigenFunction,
    g: EigenFunction,
    tau_grid,
    q: float,
    bound: float,
    classification: EigenClassification | None = None,
) -> LimitCovariance:
    """Assemble every limit covariance block for the lag grid.

    ``f`` (small span, resolvented internally), ``h`` (critical span) and
    ``g`` (large span) may each be the zero function, in which case the
    corresponding block is zero.  The cross block pairs the
    martingale-corrected component at the row lag with the noise-dominated
    component at the column lag and is nonzero only above the diagonal.
    """
    _require_supercritical(decomp)
    cls = classification or classify(decomp)
    taus = tuple(float(tau) for tau in tau_grid)
    if any(tau < 0 for tau in taus):
        raise DomainError("lag grid entries must be nonnegative")
    k = len(taus)

    f_zero, h_zero, g_zero = f.is_zero(), h.is_zero(), g.is_zero()
    if not f_zero:
        _require_span(f, cls.small, "small")
    if not h_zero:
        _require_span(h, cls.critical, "critical")
    if not g_zero:
        _require_span(g, cls.large, "large")
    uqf = f if f_zero else resolvent_apply(decomp, f, q, bound)

    diffs = sorted({abs(t2 - t1) for t1 in taus for t2 in taus} | ({0.0} if k else set()))
    sigma_map = {
        d: (0.0 if f_zero else sigma_cov(decomp, var_rate, uqf, d, cls)) for d in diffs
    }
    beta_map = {
        d: (0.0 if g_zero else beta_cov(decomp, var_rate, g, d, cls)) for d in diffs
    }
    eta_map = {}
    for t1 in taus:
        for t2 in taus:
            if f_zero or g_zero or t1 >= t2:
                eta_map[(t1, t2)] = 0.0
            else:
                eta_map[(t1, t2)] = eta_cov(
                    decomp, var_rate, uqf, g, t1, t2, classification=cls
                )

    sigma_block = np.array([[sigma_map[abs(t2 - t1)] for t2 in taus] for t1 in taus])
    beta_block = np.array([[beta_map[abs(t2 - t1)] for t2 in taus] for t1 in taus])
    cross_block = np.array([[eta_map[(t1, t2)] for t2 in taus] for t1 in taus])
    sigma_block = sigma_block.reshape(k, k)
    beta_block = beta_block.reshape(k, k)
    cross_block = cross_block.reshape(k, k)

    grid = np.zeros((2 * k, 2 * k))
    grid[:k, :k] = sigma_block
    grid[k:, k:] = beta_block
    grid[k:, :k] = cross_block       # rows: corrected component, cols: noise component
    grid[:k, k:] = cross_block.T

    rho_val = 0.0 if h_zero else rho_sq(var_rate, h, decomp.basis[0], decomp.m, cls)
    return LimitCovariance(
        tau_grid=taus,
        sigma=sigma_map,
        rho_sq=rho_val,
        beta=beta_map,
        eta=eta_map,
        sigma_block=sigma_block,
        beta_block=beta_block,
        cross_block=cross_block,
        grid_matrix=grid,
    )
