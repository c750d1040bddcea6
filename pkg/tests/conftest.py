import numpy as np
import pytest

from superclt.model import FiniteTypeModel, JumpAtom, derive_coefficients, reference_model
from superclt.spectral import classify, decompose


@pytest.fixture(scope="session")
def m1():
    return reference_model("sym2")


@pytest.fixture(scope="session")
def m2():
    return reference_model("crit2")


@pytest.fixture(scope="session")
def m3():
    return reference_model("asym2")


@pytest.fixture(scope="session")
def d1(m1):
    return decompose(m1)


@pytest.fixture(scope="session")
def d2(m2):
    return decompose(m2)


@pytest.fixture(scope="session")
def d3(m3):
    return decompose(m3)


@pytest.fixture(scope="session")
def cls1(d1):
    return classify(d1)


@pytest.fixture(scope="session")
def cls2(d2):
    return classify(d2)


@pytest.fixture(scope="session")
def cls3(d3):
    return classify(d3)


@pytest.fixture(scope="session")
def var1(m1):
    return derive_coefficients(m1).var_rate


@pytest.fixture(scope="session")
def var2(m2):
    return derive_coefficients(m2).var_rate


@pytest.fixture(scope="session")
def var3(m3):
    return derive_coefficients(m3).var_rate


def make_random_model(rng, n=None, supercritical=True, jumps=False, min_gap=0.0):
    """Random reversible, irreducible model; optionally force a spectral gap."""
    while True:
        size = int(n if n is not None else rng.integers(1, 6))
        m = rng.uniform(0.5, 2.0, size)
        S = rng.uniform(0.2, 1.0, (size, size))
        S = 0.5 * (S + S.T)
        Q = S / m[:, None]
        np.fill_diagonal(Q, 0.0)
        np.fill_diagonal(Q, -Q.sum(axis=1))
        beta = rng.uniform(0.2, 1.5, size)
        a = rng.uniform(0.2, 1.0, size) if supercritical else rng.uniform(-1.0, 1.0, size)
        b = rng.uniform(0.05, 0.6, size)
        atoms = tuple(
            (JumpAtom(y=float(rng.uniform(0.2, 2.0)), w=float(rng.uniform(0.05, 0.5))),)
            if jumps and rng.random() < 0.5
            else ()
            for _ in range(size)
        )
        model = FiniteTypeModel(m=m, Q=Q, beta=beta, a=a, b=b, jumps=atoms)
        if min_gap > 0.0 and size > 1:
            rates = np.sort(np.linalg.eigvalsh(
                (Q + np.diag(beta * a)) * np.sqrt(m)[:, None] / np.sqrt(m)[None, :]
            ))
            if np.min(np.diff(rates)) < min_gap:
                continue
        return model
