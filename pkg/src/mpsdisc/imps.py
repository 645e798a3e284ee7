"""Translationally invariant left-canonical iMPS for the infinite TFIM chain.

Provides transfer operators and their fixed points, the thermodynamic-limit
energy density of H = sum sz sz - h sum sx, the finite-burn-in boundary cost,
and a Riemannian optimizer producing (A, V) pairs ready for circuit
embedding. The half-infinite bond density matrix is the eigenvalue-1 right
eigenmatrix of the identity transfer operator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DegenerateTransferError
from .manifolds import MinimizeConfig, minimize, random_sphere, random_stiefel
from .paulis import ID2, SX, SZ, rng_stream

GAP_TOL = 1e-8
D_PHYS = 2


@dataclass
class IMPSModel:
    """Left-canonical tensor A (chi, 2, chi) plus unit-norm boundary vector V."""

    A: np.ndarray
    V: np.ndarray
    chi: int
    h_source: float
    nb_prime: int
    e0: Optional[float] = None
    stalled: bool = False

    def check(self) -> None:
        chi = self.chi
        if self.A.shape != (chi, D_PHYS, chi):
            raise ValueError(f"A has shape {self.A.shape}, expected {(chi, D_PHYS, chi)}")
        gram = np.einsum("aib,aic->bc", self.A, self.A)
        if np.abs(gram - np.eye(chi)).max() > 1e-10:
            raise ValueError("A is not left-canonical")
        if abs(np.linalg.norm(self.V) - 1.0) > 1e-12:
            raise ValueError("V is not unit norm")


def transfer_matrix(A: np.ndarray, O: np.ndarray) -> np.ndarray:
    """Matrix form of the generalized transfer operator, (chi^2, chi^2).

    [T_O]_{(a a'),(b b')} = sum_{i i'} A^i_{ab} <i|O|i'> A^{i'}_{a'b'}.
    """
    chi = A.shape[0]
    t = np.einsum("aib,ij,cjd->acbd", A, O, A, optimize=True)
    return t.reshape(chi * chi, chi * chi)


def channel_apply(A: np.ndarray, X: np.ndarray) -> np.ndarray:
    """One burn-in step: the sequential-generation channel sum_i A^i X A^i^T."""
    return np.einsum("aib,bc,dic->ad", A, X, A, optimize=True)


def left_transfer(A: np.ndarray, O: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Left action sum_{i i'} <i|O|i'> A^i^T E A^{i'}."""
    return np.einsum("aib,ij,ac,cjd->bd", A, O, E, A, optimize=True)


def _normalize_density(rho: np.ndarray) -> np.ndarray:
    rho = (rho + rho.T) / 2.0
    tr = np.trace(rho)
    if tr < 0:
        rho, tr = -rho, -tr
    if abs(tr) < 1e-300:
        raise RuntimeError("fixed-point candidate has vanishing trace")
    return rho / tr


def _eig_fixed_point(A: np.ndarray):
    """Strict fixed point via dense eigendecomposition; returns (rho, gap)."""
    chi = A.shape[0]
    T = transfer_matrix(A, ID2)
    vals, vecs = np.linalg.eig(T)
    idx = int(np.argmin(np.abs(vals - 1.0)))
    others = np.delete(vals, idx)
    gap = float(np.abs(others - 1.0).min()) if others.size else np.inf
    v = vecs[:, idx]
    if np.abs(v.imag).max() > 1e-9 * max(1.0, np.abs(v.real).max()):
        # complex pair pinned near 1: treat as degenerate
        gap = min(gap, float(abs(vals[idx].imag)))
    rho = _normalize_density(v.real.reshape(chi, chi))
    return rho, gap


def fixed_point_density(A: np.ndarray, gap_tol: float = GAP_TOL) -> np.ndarray:
    """Half-infinite bond density matrix: symmetrized, trace 1, PSD.

    Raises DegenerateTransferError when another transfer eigenvalue sits
    within ``gap_tol`` of 1 in the complex plane (e.g. classical GHZ-like
    tensors with two +1 eigenmatrices). AFM-ordered tensors, whose staggered
    mode sits near -1, are fine.
    """
    rho, gap = _eig_fixed_point(A)
    if gap < gap_tol:
        raise DegenerateTransferError(gap)
    evals = np.linalg.eigvalsh(rho)
    if evals.min() < -1e-10:
        raise RuntimeError(f"fixed point not PSD (min eigenvalue {evals.min():.3e})")
    return rho


def energy_density(A: np.ndarray, h: float) -> float:
    """TFIM energy per site of a left-canonical iMPS.

    e0 = Tr[rho (E_z - h E_x)] with E_z the twice-applied sigma-z left
    transfer term and E_x the single sigma-x term; rho is the strict
    half-infinite fixed point (degeneracy propagates as an error).
    """
    rho = fixed_point_density(A)
    chi = A.shape[0]
    ez = left_transfer(A, SZ, np.eye(chi))
    ez = left_transfer(A, SZ, ez)
    ex = left_transfer(A, SX, np.eye(chi))
    return float(np.trace(rho @ (ez - h * ex)))


def burn_in_cost(A: np.ndarray, V: np.ndarray, nb_prime: int) -> float:
    """Frobenius distance between the nb'-step burn-in state and the fixed point."""
    if nb_prime < 1:
        raise ValueError("nb_prime must be >= 1")
    rho = fixed_point_density(A)
    U = np.outer(V, V)
    for _ in range(nb_prime):
        U = channel_apply(A, U)
    return float(np.linalg.norm(U - rho))


class _FixedPointSolver:
    """Warm-started fixed-point solver used inside the optimizer loops.

    Shifted inverse iteration on (T - (1+s) I) from the previous solution;
    falls back to a dense eigensolve and, if that is degenerate, to the
    channel-limit average map (X <- (X + T X)/2), which also defines the
    physically sensible mixture for symmetry-broken tensors.
    """

    def __init__(self, chi: int):
        self.chi = chi
        self.warm = np.eye(chi).reshape(-1) / chi
        self.degenerate_hits = 0

    def solve(self, A: np.ndarray) -> np.ndarray:
        chi = self.chi
        T = transfer_matrix(A, ID2)
        x = self.warm.copy()
        for shift in (1e-9, 1e-7):
            M = T - (1.0 + shift) * np.eye(chi * chi)
            try:
                for _ in range(6):
                    x = np.linalg.solve(M, x)
                    x /= np.linalg.norm(x)
                    if np.linalg.norm(T @ x - x) < 1e-12 * np.sqrt(chi):
                        self.warm = x
                        return _normalize_density(x.reshape(chi, chi))
            except np.linalg.LinAlgError:
                pass
            x = self.warm.copy()
        rho, gap = _eig_fixed_point(A)
        if gap >= GAP_TOL:
            self.warm = rho.reshape(-1) / np.linalg.norm(rho)
            return rho
        # degenerate: average map keeps every eigenvalue-1 component and damps the rest
        self.degenerate_hits += 1
        X = self.warm.reshape(chi, chi)
        X = _normalize_density(X @ X.T + 1e-3 * np.eye(chi))
        for _ in range(500):
            Xn = _normalize_density(0.5 * (X + channel_apply(A, X)))
            if np.linalg.norm(Xn - X) < 1e-13:
                break
            X = Xn
        self.warm = X.reshape(-1) / np.linalg.norm(X)
        return X


def _energy_from(A: np.ndarray, h: float, rho: np.ndarray) -> float:
    chi = A.shape[0]
    ez = left_transfer(A, SZ, np.eye(chi))
    ez = left_transfer(A, SZ, ez)
    ex = left_transfer(A, SX, np.eye(chi))
    return float(np.trace(rho @ (ez - h * ex)))


def optimize_imps(
    h: float,
    chi: int,
    nb_prime: int,
    seed: int = 0,
    restarts: int = 10,
    stage_iters: int = 150,
    polish_iters: int = 2500,
    grad_tol: float = 1e-6,
    v_restarts: int = 5,
) -> IMPSModel:
    """Variational iMPS ground state plus burn-in-optimized boundary vector.

    Minimizes the energy density over St(chi*d, chi) from QR-orthonormalized
    Gaussian starts (all restarts get a short budget, the best is polished to
    ``grad_tol``), then freezes A and minimizes the burn-in cost over the
    boundary sphere. A stall (relative decrease < 1e-12 for 50 steps before
    tolerance) is reported via the flag on the returned model.
    """
    if chi < 1 or (chi & (chi - 1)) != 0:
        raise ValueError("chi must be a power of 2")
    solver = _FixedPointSolver(chi)

    def cost(a_mat: np.ndarray) -> float:
        A = a_mat.reshape(chi, D_PHYS, chi)
        rho = solver.solve(A)
        return _energy_from(A, h, rho)

    stage_cfg = MinimizeConfig(step=0.2, max_iters=stage_iters, grad_tol=grad_tol,
                               fd_rel_step=1e-6, record_trace=False)
    candidates = []
    for r in range(restarts):
        solver.warm = np.eye(chi).reshape(-1) / chi
        x0 = random_stiefel(chi * D_PHYS, chi, rng_stream(seed, 0x1A, r))
        res = minimize(cost, [x0], stage_cfg)
        candidates.append((res.cost, r, res.points[0]))
    candidates.sort(key=lambda c: (c[0], c[1]))
    best = candidates[0][2]

    polish_cfg = MinimizeConfig(step=0.2, max_iters=polish_iters, grad_tol=grad_tol,
                                fd_rel_step=1e-6, record_trace=False)
    solver.warm = np.eye(chi).reshape(-1) / chi
    res = minimize(cost, [best], polish_cfg)
    A = res.points[0].value.reshape(chi, D_PHYS, chi)
    stalled = res.stalled

    solver.warm = np.eye(chi).reshape(-1) / chi
    rho_ref = solver.solve(A)

    def vcost(v: np.ndarray) -> float:
        U = np.outer(v, v)
        for _ in range(nb_prime):
            U = channel_apply(A, U)
        return float(np.linalg.norm(U - rho_ref))

    vcfg = MinimizeConfig(step=0.5, max_iters=800, grad_tol=1e-10, record_trace=False)
    vbest = None
    for r in range(v_restarts):
        v0 = random_sphere(chi, rng_stream(seed, 0x1B, r))
        vres = minimize(vcost, [v0], vcfg)
        if vbest is None or vres.cost < vbest.cost:
            vbest = vres
    V = vbest.points[0].value

    try:
        e0 = energy_density(A, h)
    except DegenerateTransferError:
        e0 = _energy_from(A, h, rho_ref)
    return IMPSModel(A=A, V=V, chi=chi, h_source=h, nb_prime=nb_prime,
                     e0=float(e0), stalled=stalled)


def save_imps(model: IMPSModel, path: str | Path) -> None:
    payload = {
        "chi": model.chi,
        "h": model.h_source,
        "A": {"dims": list(model.A.shape), "data": model.A.reshape(-1).tolist()},
        "V": model.V.tolist(),
        "nb_prime": model.nb_prime,
        "e0": model.e0,
        "stalled": model.stalled,
    }
    Path(path).write_text(json.dumps(payload))


def load_imps(path: str | Path) -> IMPSModel:
    payload = json.loads(Path(path).read_text())
    A = np.array(payload["A"]["data"], dtype=float).reshape(payload["A"]["dims"])
    model = IMPSModel(
        A=A,
        V=np.array(payload["V"], dtype=float),
        chi=int(payload["chi"]),
        h_source=float(payload["h"]),
        nb_prime=int(payload["nb_prime"]),
        e0=payload.get("e0"),
        stalled=bool(payload.get("stalled", False)),
    )
    model.check()
    return model
