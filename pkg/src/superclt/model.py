"""Finite-type branching models: definition, ingestion, validation, derived rates.

A model is the tuple (m, Q, beta, a, b, jumps) on a finite type space
{1, ..., n}: a positive weight vector m, an m-reversible irreducible rate
matrix Q for the motion of types, a nonnegative branching rate beta, and a
per-type reproduction mechanism

    psi(i, v) = -a_i v + b_i v^2 + sum_r w_r (exp(-v y_r) - 1 + v y_r),

whose jump part is a finite list of atoms (y_r, w_r) per type.  Configs are
JSON documents; the exact schema is documented in the README (type indices
in the ``jumps`` list are 1-based, matching the type labels).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ParseError, ValidationError

__all__ = [
    "JumpAtom",
    "FiniteTypeModel",
    "DerivedCoefficients",
    "ModelConfig",
    "load_model",
    "load_config",
    "serialize",
    "derive_coefficients",
    "check_grey_condition",
    "reference_config_text",
    "reference_model",
    "REFERENCE_NAMES",
]

_REQUIRED_KEYS = {"m", "Q", "beta", "a", "b", "mu0"}
_OPTIONAL_KEYS = {"name", "jumps"}

#: Names of the config fixtures shipped with the package.
REFERENCE_NAMES = ("sym2", "crit2", "asym2")

# Structural equalities (row sums, reversibility) on user-provided exact
# decimals are checked to this absolute tolerance.
_STRUCT_ATOL = 1e-12


@dataclass(frozen=True)
class JumpAtom:
    """One atom of the reproduction jump measure: mass jumps by y at weight w."""

    y: float
    w: float


@dataclass(frozen=True, eq=False)
class FiniteTypeModel:
    """Validated model parameters; immutable and safe to share across workers."""

    m: np.ndarray
    Q: np.ndarray
    beta: np.ndarray
    a: np.ndarray
    b: np.ndarray
    jumps: tuple[tuple[JumpAtom, ...], ...]
    name: str = ""

    def __post_init__(self):
        for arr in (self.m, self.Q, self.beta, self.a, self.b):
            arr.setflags(write=False)
        _validate(self)

    @property
    def n_types(self) -> int:
        return self.m.shape[0]

    def jump_moment(self, order: int) -> np.ndarray:
        """Per-type moment sum_r w_r * y_r**order of the jump measure."""
        out = np.zeros(self.n_types)
        for i, atoms in enumerate(self.jumps):
            out[i] = sum(atom.w * atom.y**order for atom in atoms)
        return out


@dataclass(frozen=True)
class DerivedCoefficients:
    """Rates derived from the mechanism.

    alpha
        Per-type linear mass-growth rate, beta_i * a_i.  This is the
        potential of the mean semigroup.
    var_rate
        Per-type branching-variance rate, beta_i * (2 b_i + sum_r w_r y_r^2).
        The local quadratic variation of the mass fluctuation at type i is
        var_rate_i times the current mass.
    bound
        max_i (|alpha_i| + var_rate_i), the tightest uniform rate bound.
    """

    alpha: np.ndarray
    var_rate: np.ndarray
    bound: float


@dataclass(frozen=True)
class ModelConfig:
    """A parsed config document: the model plus its initial mass vector."""

    model: FiniteTypeModel
    mu0: np.ndarray


def _as_vector(raw, key: str, n: int | None = None) -> np.ndarray:
    try:
        vec = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"key '{key}' is not a numeric vector") from exc
    if vec.ndim != 1:
        raise ParseError(f"key '{key}' must be a flat list of numbers")
    if n is not None and vec.shape[0] != n:
        raise ParseError(f"key '{key}' has length {vec.shape[0]}, expected {n}")
    if not np.all(np.isfinite(vec)):
        raise ParseError(f"key '{key}' contains non-finite entries")
    return vec


def _validate(model: FiniteTypeModel) -> None:
    """Check every structural invariant; raise naming the first violated one."""
    n = model.m.shape[0]
    if n < 1:
        raise ValidationError("model needs at least one type")
    if model.Q.shape != (n, n):
        raise ValidationError(f"Q must be {n}x{n}, got {model.Q.shape}")
    for key, vec in (("beta", model.beta), ("a", model.a), ("b", model.b)):
        if vec.shape != (n,):
            raise ValidationError(f"{key} must have length {n}")
    if len(model.jumps) != n:
        raise ValidationError("jumps must list one atom tuple per type")

    if not np.all(model.m > 0):
        i = int(np.argmin(model.m > 0))
        raise ValidationError(f"m positive violated at type {i + 1}")
    if not np.all(model.beta >= 0):
        i = int(np.argmin(model.beta >= 0))
        raise ValidationError(f"beta nonnegative violated at type {i + 1}")
    if not np.all(model.b >= 0):
        i = int(np.argmin(model.b >= 0))
        raise ValidationError(f"b nonnegative violated at type {i + 1}")

    off = model.Q - np.diag(np.diag(model.Q))
    if np.any(off < 0):
        i, j = np.argwhere(off < 0)[0]
        raise ValidationError(f"off-diagonal Q nonnegative violated at ({i + 1},{j + 1})")
    rowsums = model.Q.sum(axis=1)
    if np.any(np.abs(rowsums) > _STRUCT_ATOL):
        i = int(np.argmax(np.abs(rowsums)))
        raise ValidationError(f"Q row sum nonzero at row {i + 1}: {rowsums[i]:.3e}")

    flux = model.m[:, None] * model.Q
    asym = flux - flux.T
    if np.any(np.abs(asym) > _STRUCT_ATOL):
        i, j = np.argwhere(np.abs(asym) > _STRUCT_ATOL)[0]
        raise ValidationError(f"reversibility violated at ({i + 1},{j + 1})")

    if not _is_irreducible(model.Q):
        raise ValidationError("Q irreducible violated (type graph not connected)")

    for i, atoms in enumerate(model.jumps):
        for atom in atoms:
            if not atom.y > 0:
                raise ValidationError(f"jump size positive violated at type {i + 1}")
            if atom.w < 0:
                raise ValidationError(f"jump weight nonnegative violated at type {i + 1}")


def _is_irreducible(Q: np.ndarray) -> bool:
    # Reversibility makes the support of Q symmetric, so plain BFS suffices.
    n = Q.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(Q[i] > 0)[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


def load_config(config_text: str) -> ModelConfig:
    """Parse and validate a JSON config document (model plus mu0)."""
    try:
        doc = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("config must be a JSON object")

    unknown = set(doc) - _REQUIRED_KEYS - _OPTIONAL_KEYS
    if unknown:
        raise ParseError(f"unknown config keys: {sorted(unknown)}")
    missing = _REQUIRED_KEYS - set(doc)
    if missing:
        raise ParseError(f"missing config keys: {sorted(missing)}")

    m = _as_vector(doc["m"], "m")
    n = m.shape[0]
    try:
        Q = np.asarray(doc["Q"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError("key 'Q' is not a numeric matrix") from exc
    if Q.ndim != 2 or not np.all(np.isfinite(Q)):
        raise ParseError("key 'Q' must be a finite numeric matrix")

    beta = _as_vector(doc["beta"], "beta", n)
    a = _as_vector(doc["a"], "a", n)
    b = _as_vector(doc["b"], "b", n)
    mu0 = _as_vector(doc["mu0"], "mu0", n)
    if np.any(mu0 < 0):
        raise ValidationError("mu0 nonnegative violated")

    atoms: list[list[JumpAtom]] = [[] for _ in range(n)]
    for entry in doc.get("jumps", []):
        if not isinstance(entry, dict) or set(entry) != {"type", "y", "w"}:
            raise ParseError("each jump entry must be an object with keys type, y, w")
        t = entry["type"]
        if not isinstance(t, int) or not 1 <= t <= n:
            raise ParseError(f"jump type {t!r} out of range 1..{n}")
        atoms[t - 1].append(JumpAtom(y=float(entry["y"]), w=float(entry["w"])))

    model = FiniteTypeModel(
        m=m,
        Q=Q,
        beta=beta,
        a=a,
        b=b,
        jumps=tuple(tuple(lst) for lst in atoms),
        name=str(doc.get("name", "")),
    )
    return ModelConfig(model=model, mu0=mu0)


def load_model(config_text: str) -> FiniteTypeModel:
    """Parse a JSON config and return the validated model."""
    return load_config(config_text).model


def serialize(model: FiniteTypeModel, mu0: np.ndarray | None = None) -> str:
    """Render a model back to config JSON; load_config(serialize(...)) round-trips."""
    jumps = [
        {"type": i + 1, "y": atom.y, "w": atom.w}
        for i, atoms in enumerate(model.jumps)
        for atom in atoms
    ]
    if mu0 is None:
        mu0 = np.zeros(model.n_types)
    doc = {
        "name": model.name,
        "m": model.m.tolist(),
        "Q": model.Q.tolist(),
        "beta": model.beta.tolist(),
        "a": model.a.tolist(),
        "b": model.b.tolist(),
        "jumps": jumps,
        "mu0": np.asarray(mu0, dtype=float).tolist(),
    }
    return json.dumps(doc, indent=2)


def derive_coefficients(model: FiniteTypeModel) -> DerivedCoefficients:
    """Compute the growth rate, variance rate, and their tight uniform bound."""
    alpha = model.beta * model.a
    var_rate = model.beta * (2.0 * model.b + model.jump_moment(2))
    bound = float(np.max(np.abs(alpha) + var_rate))
    return DerivedCoefficients(alpha=alpha, var_rate=var_rate, bound=bound)


def check_grey_condition(model: FiniteTypeModel) -> bool:
    """Sufficient check that extinction has positive probability from any state.

    True iff min_i beta_i * b_i > 0, which makes the infimum mechanism grow
    quadratically, so the ODE for the log-Laplace functional comes down from
    infinity in finite time.  This is sufficient only: jump-dominated models
    may satisfy the integral test while failing this check.
    """
    return bool(np.all(model.beta * model.b > 0))


def reference_config_text(name: str) -> str:
    """Return the JSON text of a packaged reference config (see REFERENCE_NAMES)."""
    if name not in REFERENCE_NAMES:
        raise KeyError(f"unknown reference config {name!r}; choose from {REFERENCE_NAMES}")
    return resources.files("superclt.configs").joinpath(f"{name}.json").read_text()


def reference_model(name: str) -> FiniteTypeModel:
    """Load one of the packaged reference models by name."""
    return load_model(reference_config_text(name))
