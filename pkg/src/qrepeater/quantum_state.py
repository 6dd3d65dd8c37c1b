"""Two-qubit states, memory dephasing, Bell-measurement swapping and QBERs.

Basis order follows the tensor product: |00>, |01>, |10>, |11> for two
qubits and |q1 q2 q3 q4> (q1 most significant) for four.  Bell states are
Psi^+- = (|10> +- |01>)/sqrt2 and Phi^+- = (|00> +- |11>)/sqrt2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

Z = np.diag([1.0, -1.0])
I2 = np.eye(2)
PSI_PLUS = np.array([0, 1, 1, 0]) / math.sqrt(2)
PSI_MINUS = np.array([0, -1, 1, 0]) / math.sqrt(2)
PHI_PLUS = np.array([1, 0, 0, 1]) / math.sqrt(2)
PHI_MINUS = np.array([1, 0, 0, -1]) / math.sqrt(2)


def _projector(v: np.ndarray) -> np.ndarray:
    return np.outer(v, v.conj())


def lambda_from_alpha(alpha: float) -> float:
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return -math.expm1(-alpha) / 2


def alpha_from_lambda(lam: float) -> float:
    if not 0 <= lam < 0.5:
        raise ValueError("lambda must lie in [0, 1/2)")
    return -math.log1p(-2 * lam)


@dataclass(frozen=True)
class BellDiagonalState:
    """Depolarised mixture  mu*(F Psi+ + (1-F) Psi-) + (1-mu) I/4."""

    F: float | Fraction
    mu: float | Fraction

    def __post_init__(self):
        if not 0 <= self.F <= 1 or not 0 <= self.mu <= 1:
            raise ValueError("F and mu must lie in [0, 1]")

    def matrix(self) -> np.ndarray:
        F, mu = float(self.F), float(self.mu)
        rho = F * _projector(PSI_PLUS) + (1 - F) * _projector(PSI_MINUS)
        return mu * rho + (1 - mu) * np.eye(4) / 4

    def bell_weights(self) -> tuple:
        """Weights on (Psi+, Psi-, Phi+, Phi-)."""
        noise = (1 - self.mu) / 4
        return (self.mu * self.F + noise, self.mu * (1 - self.F) + noise, noise, noise)

    def coherence(self):
        """The factor 2F-1 that dephasing shrinks."""
        return 2 * self.F - 1


# ---------------------------------------------------------------------------
# family-level channels

def dephase(state: BellDiagonalState, alpha: float | None = None, lam=None) -> BellDiagonalState:
    """Memory dephasing on either qubit; the family is closed under it."""
    if (alpha is None) == (lam is None):
        raise ValueError("give exactly one of alpha or lam")
    if lam is not None:
        if not 0 <= lam < Fraction(1, 2):
            raise ValueError("lambda must lie in [0, 1/2)")
        shrink = 1 - 2 * lam
    else:
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        shrink = math.exp(-alpha)
    return BellDiagonalState(state.coherence() * shrink / 2 + Fraction(1, 2), state.mu)


def swap_family(F1, mu1, F2, mu2, mu) -> tuple:
    """Swap two family states with a depolarising Bell measurement."""
    Fd = (2 * F1 - 1) * (2 * F2 - 1) / 2 + Fraction(1, 2)
    return Fd, mu * mu1 * mu2


# ---------------------------------------------------------------------------
# matrix-level channels

def _check_density(rho: np.ndarray, dim: int) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (dim, dim):
        raise ValueError(f"expected a {dim}x{dim} matrix")
    return rho


def _single_qubit_op(op: np.ndarray, qubit: int, nqubits: int) -> np.ndarray:
    out = np.array([[1.0]])
    for k in range(nqubits):
        out = np.kron(out, op if k == qubit else I2)
    return out


def dephase_matrix(rho: np.ndarray, alpha: float | None = None, lam: float | None = None,
                   qubit: int = 0) -> np.ndarray:
    """(1-lam) rho + lam Z rho Z on one qubit (0-based index)."""
    if (alpha is None) == (lam is None):
        raise ValueError("give exactly one of alpha or lam")
    lam = lambda_from_alpha(alpha) if lam is None else lam
    if not 0 <= lam < 0.5:
        raise ValueError("lambda must lie in [0, 1/2)")
    nq = int(round(math.log2(len(rho))))
    z = _single_qubit_op(Z, qubit, nq)
    return (1 - lam) * rho + lam * z @ rho @ z


def depolarize2(rho: np.ndarray, mu: float) -> np.ndarray:
    if not 0 <= mu <= 1:
        raise ValueError("mu must lie in [0, 1]")
    rho = _check_density(rho, 4)
    return mu * rho + (1 - mu) * np.eye(4) / 4


# 1-based index sets of the 16x16 matrix selecting qubits 1,4 at fixed (q2, q3)
_BLOCK = {"00": [1, 2, 9, 10], "01": [3, 4, 11, 12], "10": [5, 6, 13, 14], "11": [7, 8, 15, 16]}


def _sub(rho: np.ndarray, rows: Sequence[int], cols: Sequence[int] | None = None) -> np.ndarray:
    r = [i - 1 for i in rows]
    c = r if cols is None else [i - 1 for i in cols]
    return rho[np.ix_(r, c)]


def project_psi_plus_23(rho1234: np.ndarray) -> np.ndarray:
    """Unnormalised <Psi+|_23 rho |Psi+>_23 from index submatrices."""
    a, b = _BLOCK["01"], _BLOCK["10"]
    return (_sub(rho1234, a) + _sub(rho1234, b) + _sub(rho1234, a, b) + _sub(rho1234, b, a)) / 2


def partial_trace_23(rho1234: np.ndarray) -> np.ndarray:
    return sum(_sub(rho1234, idx) for idx in _BLOCK.values())


def swap_full(rho12: np.ndarray, rho34: np.ndarray, mu: float) -> np.ndarray:
    """Bell measurement of qubits 2,3 with outcome Psi+, after depolarising noise mu."""
    rho = np.kron(_check_density(rho12, 4), _check_density(rho34, 4))
    out = mu * project_psi_plus_23(rho) + (1 - mu) / 4 * partial_trace_23(rho)
    norm = np.trace(out).real
    if norm < 1e-14:
        raise ZeroDivisionError("outcome has vanishing probability")
    return out / norm


def family_from_matrix(rho: np.ndarray) -> BellDiagonalState:
    """Read (F, mu) back from a matrix of the family."""
    rho = np.asarray(rho)
    mu = 1 - 4 * rho[0, 0].real
    coh = 2 * rho[1, 2].real
    F = 0.5 if mu == 0 else (coh / mu + 1) / 2
    return BellDiagonalState(min(max(F, 0.0), 1.0), min(max(mu, 0.0), 1.0))


def is_density_matrix(rho: np.ndarray, tol: float = 1e-10) -> bool:
    rho = np.asarray(rho)
    herm = np.allclose(rho, rho.conj().T, atol=1e-12)
    return bool(herm and abs(np.trace(rho) - 1) < 1e-12 and np.linalg.eigvalsh(rho).min() >= -tol)


# ---------------------------------------------------------------------------
# repeater chain

@dataclass(frozen=True)
class FinalStateParams:
    n: int
    F0: float = 1.0
    mu0: float = 1.0
    mu: float = 1.0
    exp_dephasing: float = 1.0  # E[exp(-alpha D)] or a single exp(-alpha d)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        for name in ("F0", "mu0", "mu", "exp_dephasing"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")

    @property
    def mu_n(self):
        return self.mu ** (self.n - 1) * self.mu0**self.n


def final_state(params: FinalStateParams) -> BellDiagonalState:
    F = (2 * params.F0 - 1) ** params.n * params.exp_dephasing / 2 + Fraction(1, 2)
    return BellDiagonalState(F, params.mu_n)


def qbers(params: FinalStateParams) -> tuple[float, float]:
    """(e_z, e_x): bit-flip error rates in the Z and X bases."""
    mu_n = params.mu_n
    e_z = (1 - mu_n) / 2
    e_x = (1 - mu_n * (2 * params.F0 - 1) ** params.n * params.exp_dephasing) / 2
    return e_z, e_x


def chain_by_matrices(attempts: Sequence[int], alpha: float, F0: float = 1.0,
                      mu0: float = 1.0, mu: float = 1.0) -> tuple[np.ndarray, int]:
    """Swap-asap chain evolved with 4x4 matrices.

    Each link waits (dephasing alpha per step) until its swap partner is
    ready.  Returns the final matrix and the accumulated storage steps.
    """
    start = BellDiagonalState(F0, mu0).matrix()
    links = [[start.astype(complex), int(n)] for n in attempts]
    waited = 0
    while len(links) > 1:
        ready = [max(links[i][1], links[i + 1][1]) for i in range(len(links) - 1)]
        i = ready.index(min(ready))
        now = ready[i]
        (ra, ta), (rb, tb) = links[i], links[i + 1]
        if now > ta:
            ra = dephase_matrix(ra, alpha=alpha * (now - ta), qubit=1)
        if now > tb:
            rb = dephase_matrix(rb, alpha=alpha * (now - tb), qubit=0)
        waited += 2 * now - ta - tb
        links[i : i + 2] = [[swap_full(ra, rb, mu), now]]
    return links[0][0], waited
