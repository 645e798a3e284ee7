"""Two-site variational ground-state search for a finite MPO Hamiltonian."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np
import scipy.sparse.linalg as spla

from .mps import MPO, FiniteMPS, left_canonicalize, random_mps
from .paulis import rng_stream

DENSE_EIG_CUTOFF = 1024  # dense eigh below, Lanczos above


@dataclass
class GroundStateResult:
    mps: FiniteMPS
    energy: float
    converged: bool
    sweeps: int
    energy_trace: List[float]
    max_discarded_weight: float


def _left_env_step(env, bra, w, ket):
    return np.einsum("awb,aic,wijv,bjd->cvd", env, bra, w, ket, optimize=True)


def _right_env_step(env, bra, w, ket):
    return np.einsum("cvd,aic,wijv,bjd->awb", env, bra, w, ket, optimize=True)


def _effective_matvec(le, w1, w2, re, v):
    # v has shape (chi_l, d, d, chi_r); environments are (bra, w, ket)
    t = np.einsum("awb,bjkc->awjkc", le, v, optimize=True)
    t = np.einsum("awjkc,wijv->aivkc", t, w1, optimize=True)
    t = np.einsum("aivkc,vklu->ailuc", t, w2, optimize=True)
    return np.einsum("ailuc,duc->aild", t, re, optimize=True)


def _effective_dense(le, w1, w2, re):
    t = np.einsum("awb,wijv->abijv", le, w1, optimize=True)
    t = np.einsum("abijv,vklu->abijklu", t, w2, optimize=True)
    t = np.einsum("abijklu,duc->aikdbjlc", t, re, optimize=True)
    n = t.shape[0] * t.shape[1] * t.shape[2] * t.shape[3]
    return t.reshape(n, n)


def _solve_local(le, w1, w2, re, v0):
    dim = v0.size
    if dim <= DENSE_EIG_CUTOFF:
        hmat = _effective_dense(le, w1, w2, re)
        hmat = (hmat + hmat.T) / 2.0
        vals, vecs = np.linalg.eigh(hmat)
        return vals[0], vecs[:, 0].reshape(v0.shape)
    shape = v0.shape

    def mv(x):
        return _effective_matvec(le, w1, w2, re, x.reshape(shape)).reshape(-1)

    op = spla.LinearOperator((dim, dim), matvec=mv, dtype=float)
    vals, vecs = spla.eigsh(op, k=1, which="SA", v0=v0.reshape(-1), tol=1e-12)
    return vals[0], vecs[:, 0].reshape(shape)


def _truncate(theta, eps, chi_max):
    chi_l, d1, d2, chi_r = theta.shape
    u, s, vt = np.linalg.svd(theta.reshape(chi_l * d1, d2 * chi_r), full_matrices=False)
    total = float(np.sum(s ** 2))
    keep = len(s)
    discarded = 0.0
    # drop the smallest tail whose squared weight stays within eps of the total
    while keep > 1 and discarded + s[keep - 1] ** 2 <= eps * total:
        discarded += s[keep - 1] ** 2
        keep -= 1
    keep = min(keep, chi_max)
    discarded = float(np.sum(s[keep:] ** 2))
    u = u[:, :keep]
    s = s[:keep]
    vt = vt[:keep]
    norm = np.linalg.norm(s)
    return (
        u.reshape(chi_l, d1, keep),
        (s / norm),
        vt.reshape(keep, d2, chi_r),
        discarded / total,
    )


def ground_state_search(
    mpo: MPO,
    chi_max: int = 40,
    eps: float = 1e-6,
    max_sweeps: int = 20,
    e_tol: float = 1e-10,
    seed: int = 0,
) -> GroundStateResult:
    """Two-site sweeping ground-state search.

    Sweeps left-to-right and back, solving the effective two-site problem at
    every bond and truncating with discarded weight <= eps per bond (capped
    at chi_max). Stops when the per-sweep energy change drops below e_tol or
    max_sweeps is reached; non-convergence is reported via the flag, not an
    error. The returned state is left-canonical and normalized.
    """
    F = mpo.length
    if F < 2:
        raise ValueError("need at least two sites")
    mps = random_mps(F, min(2, chi_max), rng_stream(seed, 0xD3))
    tensors = [t.copy() for t in mps.tensors]

    lenv = [None] * (F + 1)
    renv = [None] * (F + 1)
    lenv[0] = np.ones((1, 1, 1))
    renv[F] = np.ones((1, 1, 1))
    for k in range(F - 1, 1, -1):
        renv[k] = _right_env_step(renv[k + 1], tensors[k], mpo.tensors[k], tensors[k])

    energy = np.inf
    trace = []
    max_disc = 0.0
    converged = False
    sweeps_done = 0

    for sweep in range(max_sweeps):
        # left to right
        for k in range(F - 1):
            theta = np.einsum("aib,bjc->aijc", tensors[k], tensors[k + 1])
            energy, theta = _solve_local(lenv[k], mpo.tensors[k], mpo.tensors[k + 1], renv[k + 2], theta)
            a, s, b, disc = _truncate(theta, eps, chi_max)
            max_disc = max(max_disc, disc)
            tensors[k] = a
            tensors[k + 1] = s[:, None, None] * b
            lenv[k + 1] = _left_env_step(lenv[k], tensors[k], mpo.tensors[k], tensors[k])
        # right to left
        for k in range(F - 2, -1, -1):
            theta = np.einsum("aib,bjc->aijc", tensors[k], tensors[k + 1])
            energy, theta = _solve_local(lenv[k], mpo.tensors[k], mpo.tensors[k + 1], renv[k + 2], theta)
            a, s, b, disc = _truncate(theta, eps, chi_max)
            max_disc = max(max_disc, disc)
            tensors[k + 1] = b
            tensors[k] = a * s[None, None, :]
            renv[k + 1] = _right_env_step(renv[k + 2], tensors[k + 1], mpo.tensors[k + 1], tensors[k + 1])
        trace.append(float(energy))
        sweeps_done = sweep + 1
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < e_tol:
            converged = True
            break

    state = left_canonicalize(FiniteMPS(tensors, orthogonality_center=0), normalize=True)
    return GroundStateResult(
        mps=state,
        energy=float(energy),
        converged=converged,
        sweeps=sweeps_done,
        energy_trace=trace,
        max_discarded_weight=max_disc,
    )
