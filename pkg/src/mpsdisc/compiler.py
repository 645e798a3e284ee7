"""Isometric tensors -> CNOT+Ry circuits.

Embedding conventions (bond register first, physical qubit last):
  R: column 0 of a chi x chi unitary.
  G: the chi full columns at physical input |0>, i.e. U[a*2+i, b*2] = G[a,i,b].
  D: defines complete rows of U_D (physical output 0), so the compiler
     targets U_D^dagger, whose defined columns are exactly the Stiefel
     matricization of D, and returns the inverted circuit.
  C: chi partially-defined columns (physical input |0>): only the class rows
     (the least significant log2 N_C bits of the output, register all-zero
     otherwise) are constrained, U[l, a*2] = C[a, l].

The greedy synthesis starts from one Ry per qubit and grows circuits one
CNOT (plus fresh Ry on the touched qubits) at a time, keeping the best
``beam`` candidates per depth, until the squared Frobenius distance over the
defined elements (minimized over a global sign) reaches the tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.optimize

from .discriminator import DiscriminatorTensors, apply_bond_gauge
from .errors import CompileBudgetError
from .manifolds import MinimizeConfig, minimize, random_stiefel, stiefel_point
from .paulis import rng_stream
from .circuits import Gate, ParamCircuit, columns_and_gradient, inverse_circuit

STIEFEL_CHECK_TOL = 1e-10


@dataclass
class IsometryTarget:
    """Constrained block of a unitary: values at (row_mask x defined_cols)."""

    n_qubits: int
    target: np.ndarray  # (n_rows, k)
    defined_cols: List[int]
    row_mask: Optional[List[int]] = None  # None: all rows constrained
    invert: bool = False  # compile the adjoint, return the inverted circuit
    role: str = ""

    def check(self) -> None:
        k = len(self.defined_cols)
        if self.target.shape[1] != k:
            raise ValueError("one target column per defined column required")
        if self.row_mask is None:
            gram = self.target.T @ self.target
            if np.abs(gram - np.eye(k)).max() > STIEFEL_CHECK_TOL:
                raise ValueError("full-column target must have orthonormal columns")
        else:
            frame = self.target @ self.target.T
            if np.abs(frame - np.eye(self.target.shape[0])).max() > STIEFEL_CHECK_TOL:
                raise ValueError("row-restricted target must form a tight frame")


def _qubits_for(dim: int) -> int:
    n = int(round(np.log2(dim)))
    if 2 ** n != dim:
        raise ValueError(f"dimension {dim} is not a power of 2")
    return n


def embed_isometry(tensor: np.ndarray, role: str) -> IsometryTarget:
    """Constrained-column specification of the unitary embedding for a role."""
    role = role.upper()
    if role == "R":
        r = np.asarray(tensor, dtype=float).reshape(-1)
        if abs(np.linalg.norm(r) - 1.0) > STIEFEL_CHECK_TOL:
            raise ValueError("R must be unit norm")
        t = IsometryTarget(_qubits_for(r.size), r.reshape(-1, 1), [0], role="R")
    elif role == "G":
        g = np.asarray(tensor, dtype=float)
        chi = g.shape[0]
        mat = g.reshape(chi * 2, chi)
        t = IsometryTarget(_qubits_for(chi * 2), mat, [2 * b for b in range(chi)], role="G")
    elif role == "D":
        d = np.asarray(tensor, dtype=float)
        chi = d.shape[0]
        mat = d.transpose(2, 1, 0).reshape(chi * 2, chi)
        t = IsometryTarget(_qubits_for(chi * 2), mat, [2 * a for a in range(chi)],
                           invert=True, role="D")
    elif role == "C":
        c = np.asarray(tensor, dtype=float)
        chi, nc = c.shape
        t = IsometryTarget(_qubits_for(chi * 2), c.T.copy(), [2 * a for a in range(chi)],
                           row_mask=list(range(nc)), role="C")
    else:
        raise ValueError(f"unknown role {role!r}")
    t.check()
    return t


def complete_isometry(target: IsometryTarget) -> np.ndarray:
    """A dense orthogonal matrix satisfying the constrained block exactly.

    Used for exact (non-compiled) unitary embeddings, e.g. noiseless
    simulation of iMPS test-state generators.
    """
    dim = 2 ** target.n_qubits
    cols = list(target.defined_cols)
    k = len(cols)
    if target.row_mask is None:
        block = target.target.copy()
    else:
        # fill the unconstrained rows so the columns become orthonormal:
        # the missing Gram is I_k - T^T T, realized by sqrt-factor rows
        rows = list(target.row_mask)
        free = [r for r in range(dim) if r not in set(rows)]
        if len(free) < k:
            raise ValueError("not enough free rows to complete the isometry")
        gram = np.eye(k) - target.target.T @ target.target
        vals, vecs = np.linalg.eigh(gram)
        W = (vecs * np.sqrt(np.clip(vals, 0.0, None))).T
        block = np.zeros((dim, k))
        block[rows] = target.target
        block[free[:k]] = W
    # orthonormal complement for the remaining columns
    u, _, _ = np.linalg.svd(block, full_matrices=True)
    U = np.zeros((dim, dim))
    U[:, cols] = block
    rest = [c for c in range(dim) if c not in set(cols)]
    U[:, rest] = u[:, k:]
    err = np.abs(U.T @ U - np.eye(dim)).max()
    if err > 1e-9:
        raise RuntimeError(f"isometry completion failed (orthogonality error {err:.2e})")
    if target.invert:
        U = U.T
    return U


def hamming_delta(chi: int) -> np.ndarray:
    """Pairwise squared differences of binary bond labels (Hamming distance)."""
    idx = np.arange(chi)
    delta = np.zeros((chi, chi))
    for a in range(chi):
        x = idx ^ a
        delta[a] = [bin(int(v)).count("1") for v in x]
    return delta


def gauge_cost(W: np.ndarray, G: np.ndarray, D: np.ndarray, delta: np.ndarray) -> float:
    gt = np.einsum("ax,xiy,by->aib", W, G, W, optimize=True)
    dt = np.einsum("ax,xiy,by->aib", W, D, W, optimize=True)
    weight = (gt ** 2).sum(axis=1) + (dt ** 2).sum(axis=1)
    return float((delta * weight).sum())


def diagonal_gauge(
    model: DiscriminatorTensors,
    seed: int = 0,
    restarts: int = 4,
    max_iters: int = 400,
) -> Tuple[DiscriminatorTensors, np.ndarray]:
    """Optimize an orthogonal bond rotation penalizing off-diagonal weight.

    Minimizes sum_{ab} Delta_ab [sum_i G~^2 + D~^2] over W in St(chi, chi),
    starting from the identity plus random restarts, then applies the best W
    to all four tensors. The classification cost is unchanged.
    """
    chi = model.chi
    delta = hamming_delta(chi)

    def cost(w):
        return gauge_cost(w, model.G, model.D, delta)

    cfg = MinimizeConfig(step=0.2, max_iters=max_iters, grad_tol=1e-8, record_trace=False)
    starts = [stiefel_point(np.eye(chi))]
    for r in range(restarts - 1):
        starts.append(random_stiefel(chi, chi, rng_stream(seed, 0x6A, r)))
    best = None
    for x0 in starts:
        res = minimize(cost, [x0], cfg)
        if best is None or res.cost < best.cost:
            best = res
    W = best.points[0].value
    return apply_bond_gauge(model, W), W


# --- greedy beam-search synthesis ---


def _distance_fn(target: IsometryTarget):
    T = target.target
    t2 = float(np.sum(T * T))
    rows = None if target.row_mask is None else np.asarray(target.row_mask, dtype=int)

    def fn(block):
        sub = block if rows is None else block[rows]
        ip = float(np.sum(sub * T))
        sign = 1.0 if ip >= 0 else -1.0
        val = float(np.sum(sub * sub)) + t2 - 2.0 * abs(ip)
        cot_sub = 2.0 * (sub - sign * T)
        if rows is None:
            return val, cot_sub
        cot = np.zeros_like(block)
        cot[rows] = cot_sub
        return val, cot

    return fn


def _optimize_angles(gates, n_qubits, n_params, target, theta0, maxiter):
    circ = ParamCircuit(n_qubits, gates, np.zeros(n_params))
    dist = _distance_fn(target)
    cols = target.defined_cols

    def fun(theta):
        val, grad, _ = columns_and_gradient(circ, theta, cols, dist)
        return val, grad

    res = scipy.optimize.minimize(
        fun, theta0, jac=True, method="L-BFGS-B",
        options={"maxiter": maxiter, "ftol": 1e-16, "gtol": 1e-12},
    )
    return float(res.fun), res.x


@dataclass
class CompileOutcome:
    circuit: ParamCircuit
    distance: float
    iterations: int


def greedy_compile(
    target: IsometryTarget,
    tol: float = 4e-4,
    beam: int = 5,
    gate_budget: int = 100,
    topology: Optional[Sequence[Tuple[int, int]]] = None,
    seed: int = 0,
    restarts: int = 3,
    inner_maxiter: int = 200,
) -> CompileOutcome:
    """Beam search over CNOT placements with full angle re-optimization.

    Each kept candidate is extended by one CNOT over the allowed ordered
    pairs plus fresh Ry on the two touched qubits; angles are optimized per
    candidate (one warm start from the parent plus random restarts) and the
    best ``beam`` survive. Stops at the first depth reaching ``tol``
    (squared two-norm over defined elements, global sign factored out) and
    raises CompileBudgetError carrying the best attempt if the CNOT budget
    runs out.
    """
    if tol <= 0 or beam < 1:
        raise ValueError("tol must be positive and beam >= 1")
    n = target.n_qubits
    pairs = list(topology) if topology is not None else [
        (c, t) for c in range(n) for t in range(n) if c != t
    ]
    base_gates = [Gate("ry", q, slot=q) for q in range(n)]

    def optimize(gates, n_params, theta_warm, key):
        best = None
        for r in range(restarts):
            if r == 0 and theta_warm is not None:
                theta0 = theta_warm
            else:
                theta0 = rng_stream(*key, r).uniform(-np.pi, np.pi, n_params)
            val, theta = _optimize_angles(gates, n, n_params, target, theta0, inner_maxiter)
            if best is None or val < best[0]:
                best = (val, theta)
            if best[0] <= tol:
                break
        return best

    val, theta = optimize(base_gates, n, np.zeros(n), (seed, 0, 0))
    beam_list = [(val, base_gates, theta)]
    best_seen = (val, base_gates, theta)
    iteration = 0

    def finish(entry, iters):
        gates, theta = entry[1], entry[2]
        circ = ParamCircuit(n, list(gates), np.asarray(theta, dtype=float))
        circ.check()
        if target.invert:
            circ = inverse_circuit(circ)
        return CompileOutcome(circuit=circ, distance=entry[0], iterations=iters)

    if val <= tol:
        return finish(best_seen, 0)

    while True:
        iteration += 1
        cnots = iteration  # every candidate at this depth has `iteration` CNOTs
        if cnots > gate_budget:
            out = finish(best_seen, iteration - 1)
            raise CompileBudgetError(out.distance, out.circuit)
        seen = set()
        extensions = []
        for ci, (pval, gates, theta) in enumerate(beam_list):
            for pi, (c, t) in enumerate(pairs):
                key = tuple((g.kind, g.q0, g.q1) for g in gates) + (("cnot", c, t),)
                if key in seen:
                    continue
                seen.add(key)
                np_old = len(theta)
                new_gates = gates + [
                    Gate("cnot", c, t),
                    Gate("ry", c, slot=np_old),
                    Gate("ry", t, slot=np_old + 1),
                ]
                warm = np.concatenate([theta, [0.0, 0.0]])
                extensions.append((new_gates, warm, (seed, iteration, ci * len(pairs) + pi)))

        results = []
        for order, (gates, warm, key) in enumerate(extensions):
            val, theta = optimize(gates, len(warm), warm, key)
            results.append((val, order, gates, theta))
        results.sort(key=lambda r: (r[0], r[1]))
        beam_list = [(v, g, th) for v, _, g, th in results[:beam]]
        if beam_list[0][0] < best_seen[0]:
            best_seen = beam_list[0]
        if beam_list[0][0] <= tol:
            return finish(beam_list[0], iteration)
