"""Spectral analysis of the mean-evolution generator.

The mean mass flow of a model is driven by L = Q + diag(alpha) where
alpha = beta * a.  Reversibility of Q with respect to the weights m makes L
self-adjoint in the weighted inner product (f, g)_m = sum_i f_i g_i m_i, so
L has a real spectrum and an m-orthonormal eigenbasis.  By convention this
module stores the *decay rates* lambda_k (the generator's eigenvalues are
-lambda_k), sorted ascending and grouped by multiplicity; the process grows
supercritically exactly when the principal rate lambda_1 is negative.

Eigenvalue groups are classified against the threshold lambda_1 / 2:

* ``large``    : 2 lambda_k < lambda_1 (slowly decaying modes; their mass
  projections, once rescaled, converge to martingale limits),
* ``critical`` : 2 lambda_k = lambda_1 (boundary modes, extra sqrt(t)
  normalisation),
* ``small``    : 2 lambda_k > lambda_1 (noise-dominated modes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, NotSupercritical, NumericalError
from .model import FiniteTypeModel, derive_coefficients

__all__ = [
    "SpectralDecomposition",
    "EigenClassification",
    "EigenFunction",
    "ComponentSplit",
    "decompose",
    "classify",
    "semigroup_apply",
    "resolvent_apply",
    "project_components",
    "i_operator",
    "propagator",
    "weighted_inner",
]

# Relative tolerance treating an eigen-coefficient as zero (support checks).
_SUPPORT_RTOL = 1e-12


def weighted_inner(u: np.ndarray, v: np.ndarray, m: np.ndarray) -> float:
    """Inner product sum_i u_i v_i m_i."""
    return float(np.dot(u * m, v))


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigenstructure of L = Q + diag(alpha) in the m-weighted inner product.

    Attributes
    ----------
    generator : (n, n) array
        The matrix L itself.
    m : (n,) array
        The symmetrizing weights.
    rates : (n_groups,) array
        Distinct decay rates lambda_k, ascending (rates[0] is principal).
    multiplicity : (n_groups,) int array
        Dimension of each eigenspace.
    basis : (n, n) array
        Row j is the j-th m-orthonormal eigenfunction, rows sorted by group.
    group : (n,) int array
        Group index (0-based) of each basis row.
    supercritical : bool
        Whether rates[0] < 0.  Recorded, not enforced.
    """

    generator: np.ndarray
    m: np.ndarray
    rates: np.ndarray
    multiplicity: np.ndarray
    basis: np.ndarray
    group: np.ndarray
    supercritical: bool

    def __post_init__(self):
        for arr in (self.generator, self.m, self.rates, self.multiplicity,
                    self.basis, self.group):
            arr.setflags(write=False)

    @property
    def n_states(self) -> int:
        return self.m.shape[0]

    @property
    def n_groups(self) -> int:
        return self.rates.shape[0]

    @property
    def principal_rate(self) -> float:
        return float(self.rates[0])

    @property
    def principal_vector(self) -> np.ndarray:
        """The everywhere-positive principal eigenfunction, unit m-norm."""
        return self.basis[0]

    @property
    def flat_rates(self) -> np.ndarray:
        """Decay rate of each basis row (rates expanded by multiplicity)."""
        return self.rates[self.group]

    def flat_indices(self, k: int) -> np.ndarray:
        """Basis-row indices belonging to eigenvalue group k."""
        return np.nonzero(self.group == k)[0]


class EigenClassification(NamedTuple):
    """Partition of eigenvalue groups relative to half the principal rate."""

    small: tuple[int, ...]
    critical: tuple[int, ...]
    large: tuple[int, ...]
    tolerance: float

    def regime_of(self, k: int) -> str:
        if k in self.small:
            return "small"
        if k in self.critical:
            return "critical"
        return "large"


@dataclass(frozen=True, eq=False)
class EigenFunction:
    """A function on the type space stored by its eigenbasis coefficients."""

    decomp: SpectralDecomposition
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs.setflags(write=False)

    @classmethod
    def from_coeffs(cls, decomp: SpectralDecomposition, coeffs) -> "EigenFunction":
        c = np.array(coeffs, dtype=float)
        if c.shape != (decomp.n_states,):
            raise DomainError(f"need {decomp.n_states} coefficients, got {c.shape}")
        return cls(decomp, c)

    @classmethod
    def from_values(cls, decomp: SpectralDecomposition, values) -> "EigenFunction":
        """Project a pointwise vector onto the eigenbasis."""
        v = np.asarray(values, dtype=float)
        if v.shape != (decomp.n_states,):
            raise DomainError(f"need {decomp.n_states} values, got {v.shape}")
        return cls(decomp, decomp.basis @ (decomp.m * v))

    @classmethod
    def basis_element(cls, decomp: SpectralDecomposition, k: int, j: int = 0) -> "EigenFunction":
        """The j-th eigenfunction of group k as an EigenFunction."""
        c = np.zeros(decomp.n_states)
        c[decomp.flat_indices(k)[j]] = 1.0
        return cls(decomp, c)

    @classmethod
    def zero(cls, decomp: SpectralDecomposition) -> "EigenFunction":
        return cls(decomp, np.zeros(decomp.n_states))

    def values(self) -> np.ndarray:
        """Pointwise values over the type space."""
        return self.coeffs @ self.decomp.basis

    def _support_mask(self) -> np.ndarray:
        scale = np.max(np.abs(self.coeffs), initial=0.0)
        return np.abs(self.coeffs) > _SUPPORT_RTOL * max(1.0, scale)

    @property
    def gamma(self) -> float:
        """Smallest group index carrying a nonzero coefficient; inf if zero."""
        mask = self._support_mask()
        if not mask.any():
            return math.inf
        return int(self.decomp.group[mask].min())

    def support_groups(self) -> tuple[int, ...]:
        mask = self._support_mask()
        return tuple(sorted(set(self.decomp.group[mask].tolist())))

    def restricted_to(self, groups) -> "EigenFunction":
        """Keep only the coefficients of the given eigenvalue groups."""
        keep = np.isin(self.decomp.group, list(groups))
        return EigenFunction(self.decomp, np.where(keep, self.coeffs, 0.0))

    def is_zero(self) -> bool:
        return not self._support_mask().any()

    def __add__(self, other: "EigenFunction") -> "EigenFunction":
        if other.decomp is not self.decomp:
            raise DomainError("cannot combine functions over different decompositions")
        return EigenFunction(self.decomp, self.coeffs + other.coeffs)

    def __rmul__(self, scalar: float) -> "EigenFunction":
        return EigenFunction(self.decomp, float(scalar) * self.coeffs)


class ComponentSplit(NamedTuple):
    """Spectral components of a function, in the traditional subscript order.

    The subscripts follow the fluctuation regimes the parts feed, not the
    eigenvalue sizes: ``f_s`` collects the *large* groups (2 lambda_k <
    lambda_1), ``f_c`` the critical group, and ``f_l`` the *small* groups.
    """

    f_s: EigenFunction
    f_c: EigenFunction
    f_l: EigenFunction


def decompose(
    model: FiniteTypeModel,
    *,
    residual_tol: float = 1e-10,
    group_tol: float = 1e-9,
) -> SpectralDecomposition:
    """Solve the eigenproblem of L = Q + diag(beta * a).

    Conjugating by diag(sqrt(m)) turns L into a symmetric matrix, which is
    solved with a dense symmetric eigensolver; this is exact for reversible
    Q and guarantees a real spectrum with an m-orthonormal basis.  Nearby
    eigenvalues (within ``group_tol`` relative to the spectral spread) are
    merged into one group with multiplicity.

    Raises NumericalError if the eigen-residual or orthonormality check
    exceeds ``residual_tol``, or if the principal eigenvalue fails to be
    simple with a strictly positive eigenfunction.
    """
    der = derive_coefficients(model)
    L = model.Q + np.diag(der.alpha)
    d = np.sqrt(model.m)
    S = L * (d[:, None] / d[None, :])
    S = 0.5 * (S + S.T)

    eigvals, eigvecs = np.linalg.eigh(S)
    # eigh sorts generator eigenvalues ascending; decay rates are their
    # negatives, so reverse to get rates ascending (principal first).
    rates_flat = -eigvals[::-1]
    vecs = eigvecs[:, ::-1]
    basis = (vecs / d[:, None]).T  # row j = eigenfunction j

    # Deterministic sign convention: largest-|entry| component positive.
    for row in range(basis.shape[0]):
        anchor = int(np.argmax(np.abs(basis[row])))
        if basis[row, anchor] < 0:
            basis[row] = -basis[row]

    spread = float(rates_flat[-1] - rates_flat[0])
    merge_tol = group_tol * max(1.0, spread)
    group = np.zeros(rates_flat.shape[0], dtype=int)
    for j in range(1, rates_flat.shape[0]):
        same = rates_flat[j] - rates_flat[j - 1] <= merge_tol
        group[j] = group[j - 1] if same else group[j - 1] + 1
    n_groups = int(group[-1]) + 1
    rates = np.array([rates_flat[group == k].mean() for k in range(n_groups)])
    multiplicity = np.array([int(np.sum(group == k)) for k in range(n_groups)])

    scale = max(1.0, float(np.max(np.abs(L))))
    residual = L @ basis.T + basis.T * rates[group][None, :]
    if float(np.max(np.abs(residual))) > residual_tol * scale:
        raise NumericalError("eigen-residual exceeds tolerance")
    gram = basis @ np.diag(model.m) @ basis.T
    if float(np.max(np.abs(gram - np.eye(model.n_types)))) > residual_tol:
        raise NumericalError("m-orthonormality residual exceeds tolerance")

    if multiplicity[0] != 1:
        raise NumericalError("principal eigenvalue is not simple")
    if not np.all(basis[0] > 0):
        raise NumericalError("principal eigenfunction is not strictly positive")

    return SpectralDecomposition(
        generator=L,
        m=model.m.copy(),
        rates=rates,
        multiplicity=multiplicity,
        basis=basis,
        group=group,
        supercritical=bool(rates[0] < 0),
    )


def classify(decomp: SpectralDecomposition, tol: float = 1e-9) -> EigenClassification:
    """Partition eigenvalue groups into small / critical / large.

    Group k is critical when |2 lambda_k - lambda_1| <= tol * max(1, |lambda_1|);
    beyond that band it is small (above) or large (below).  Overly large tol
    silently swallows near-critical groups into ``critical`` -- keep the
    default unless the model was engineered for exact criticality.
    """
    if not decomp.supercritical:
        raise NotSupercritical(
            f"principal rate {decomp.principal_rate:.6g} >= 0; classification undefined"
        )
    lam1 = decomp.principal_rate
    band = tol * max(1.0, abs(lam1))
    small, critical, large = [], [], []
    for k in range(decomp.n_groups):
        gap = 2.0 * decomp.rates[k] - lam1
        if abs(gap) <= band:
            critical.append(k)
        elif gap > band:
            small.append(k)
        else:
            large.append(k)
    return EigenClassification(
        small=tuple(small), critical=tuple(critical), large=tuple(large), tolerance=tol
    )


def semigroup_apply(decomp: SpectralDecomposition, f: EigenFunction, t: float) -> EigenFunction:
    """Mean-flow action: scale each coefficient by exp(-lambda_k t)."""
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    return EigenFunction(decomp, f.coeffs * np.exp(-decomp.flat_rates * t))


def resolvent_apply(
    decomp: SpectralDecomposition, f: EigenFunction, q: float, bound: float
) -> EigenFunction:
    """Resolvent action: scale each coefficient by 1 / (q + lambda_k).

    Requires q > max(bound, -2 lambda_1), where ``bound`` is the uniform
    rate bound of the model (DerivedCoefficients.bound); this is stronger
    than mere invertibility and matches the range in which downstream
    covariance formulas are valid.
    """
    floor = max(bound, -2.0 * decomp.principal_rate)
    if not q > floor:
        raise DomainError(f"q too small: need q > {floor:.6g}, got {q}")
    return EigenFunction(decomp, f.coeffs / (q + decomp.flat_rates))


def project_components(
    decomp: SpectralDecomposition,
    classification: EigenClassification,
    f: EigenFunction,
) -> ComponentSplit:
    """Split f into its large / critical / small spectral parts.

    The parts sum back to f exactly and are pairwise m-orthogonal.
    """
    return ComponentSplit(
        f_s=f.restricted_to(classification.large),
        f_c=f.restricted_to(classification.critical),
        f_l=f.restricted_to(classification.small),
    )


def i_operator(
    decomp: SpectralDecomposition,
    classification: EigenClassification,
    g: EigenFunction,
    u: float,
) -> EigenFunction:
    """Inverse mean flow on the large-group span: scale by exp(+lambda_k u).

    Defined only for g supported on the large groups, where it inverts the
    semigroup: semigroup_apply(i_operator(g, u), u) == g.
    """
    if u < 0:
        raise DomainError(f"time must be nonnegative, got {u}")
    outside = set(g.support_groups()) - set(classification.large)
    if outside:
        raise DomainError(
            f"function has components outside the large groups: {sorted(outside)}"
        )
    return EigenFunction(decomp, g.coeffs * np.exp(decomp.flat_rates * u))


def propagator(decomp: SpectralDecomposition, t: float) -> np.ndarray:
    """The matrix exp(t L) assembled from the eigenbasis.

    Acts on pointwise value vectors; its transpose pushes mass vectors
    forward in mean.
    """
    weights = np.exp(-decomp.flat_rates * t)
    return decomp.basis.T @ (weights[:, None] * decomp.basis) @ np.diag(decomp.m)
