"""Finite-chain MPS and MPO machinery for the transverse-field Ising chain.

Site tensors are (chi_left, d, chi_right) with d = 2 and trivial boundary
bonds. MPO tensors are (w_left, d, d, w_right); the bare Ising chain has the
usual bond-dimension-3 lower-triangular form, and the global spin-flip bias
adds one dedicated bond channel carrying a sigma-x string across the chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Union

import numpy as np

from .paulis import ID2, SX, SZ

LEFT_CANONICAL_ALL = "left-canonical-all"
CANONICAL_TOL = 1e-10


@dataclass
class FiniteMPS:
    """Open-boundary MPS with canonical-form bookkeeping.

    ``orthogonality_center`` is either a site index (sites strictly to its
    left are left-canonical) or ``LEFT_CANONICAL_ALL`` when every site
    satisfies the left-canonical constraint.
    """

    tensors: List[np.ndarray]
    orthogonality_center: Union[int, str] = LEFT_CANONICAL_ALL

    @property
    def length(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> List[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    def check(self, chi_max: int | None = None) -> None:
        F = self.length
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise ValueError("boundary bond dimensions must be 1")
        for k, t in enumerate(self.tensors):
            if t.ndim != 3 or t.shape[1] != 2:
                raise ValueError(f"site {k}: expected (chi, 2, chi) tensor, got {t.shape}")
            if k + 1 < F and t.shape[2] != self.tensors[k + 1].shape[0]:
                raise ValueError(f"bond mismatch between sites {k} and {k + 1}")
            if chi_max is not None and max(t.shape[0], t.shape[2]) > chi_max:
                raise ValueError(f"site {k}: bond dimension exceeds cap {chi_max}")
        upto = F if self.orthogonality_center == LEFT_CANONICAL_ALL else self.orthogonality_center
        for k in range(upto):
            m = self.tensors[k].reshape(-1, self.tensors[k].shape[2])
            err = np.abs(m.T @ m - np.eye(m.shape[1])).max()
            if err > CANONICAL_TOL:
                raise ValueError(f"site {k} violates left-canonical constraint ({err:.3e})")

    def copy(self) -> "FiniteMPS":
        return FiniteMPS([t.copy() for t in self.tensors], self.orthogonality_center)


@dataclass
class MPO:
    """Open-boundary MPO; tensors are (w_left, d_out, d_in, w_right)."""

    tensors: List[np.ndarray]

    @property
    def length(self) -> int:
        return len(self.tensors)


@dataclass
class ShotRecord:
    """One single-shot measurement: basis tag, outcome string, class label."""

    basis: str  # "x" | "z"
    outcomes: np.ndarray  # length-L vector of outcome indices in {0, 1}
    label: int | None = None
    h_source: float | None = None

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes, dtype=int)


def product_mps(site_vectors: np.ndarray) -> FiniteMPS:
    """Bond-dimension-1 MPS from per-site 2-vectors, shape (F, 2)."""
    vecs = np.asarray(site_vectors, dtype=float)
    tensors = []
    for v in vecs:
        n = np.linalg.norm(v)
        tensors.append((v / n).reshape(1, 2, 1))
    return FiniteMPS(tensors, LEFT_CANONICAL_ALL)


def ghz_mps(F: int) -> FiniteMPS:
    """(|00...0> + |11...1>)/sqrt(2) as a chi=2 left-canonical MPS."""
    bulk = np.zeros((2, 2, 2))
    bulk[0, 0, 0] = 1.0
    bulk[1, 1, 1] = 1.0
    first = np.zeros((1, 2, 2))
    first[0, 0, 0] = 1.0
    first[0, 1, 1] = 1.0
    last = np.zeros((2, 2, 1))
    last[0, 0, 0] = 1.0 / np.sqrt(2.0)
    last[1, 1, 0] = 1.0 / np.sqrt(2.0)
    tensors = [first] + [bulk.copy() for _ in range(F - 2)] + [last]
    return FiniteMPS(tensors, LEFT_CANONICAL_ALL)


def random_mps(F: int, chi: int, rng: np.random.Generator) -> FiniteMPS:
    """Random normalized left-canonical MPS with bond dimensions <= chi."""
    dims = [1]
    for k in range(1, F):
        dims.append(min(chi, 2 ** k, 2 ** (F - k)))
    dims.append(1)
    tensors = [rng.standard_normal((dims[k], 2, dims[k + 1])) for k in range(F)]
    mps = FiniteMPS(tensors, orthogonality_center=0)
    return left_canonicalize(mps, normalize=True)


def left_canonicalize(mps: FiniteMPS, normalize: bool = False) -> FiniteMPS:
    """QR sweep bringing every site into left-canonical form.

    Preserves the dense state vector exactly (the final 1x1 R factor, i.e.
    the signed norm, is absorbed into the last tensor); with ``normalize``
    the state is scaled to unit norm, keeping the overall sign.
    """
    tensors = [t.copy() for t in mps.tensors]
    carry = np.eye(tensors[0].shape[0])
    for k in range(len(tensors)):
        t = np.tensordot(carry, tensors[k], axes=(1, 0))
        chi_l, d, chi_r = t.shape
        q, r = np.linalg.qr(t.reshape(chi_l * d, chi_r))
        s = np.sign(np.sign(np.diag(r)) + 0.5)
        q = q * s
        r = r * s[:, None]
        tensors[k] = q.reshape(chi_l, d, q.shape[1])
        carry = r
    # carry is 1x1: the signed norm of the state
    scale = carry[0, 0]
    if normalize:
        scale = np.sign(scale) if scale != 0 else 1.0
    tensors[-1] = tensors[-1] * scale
    return FiniteMPS(tensors, LEFT_CANONICAL_ALL)


def dense_state(mps: FiniteMPS, max_sites: int = 16) -> np.ndarray:
    """Contract to a dense state vector; site 0 is the most significant bit."""
    F = mps.length
    if F > max_sites:
        raise ValueError(f"refusing to densify {F} sites")
    acc = mps.tensors[0].reshape(2, -1)  # (phys..., chi_r)
    for k in range(1, F):
        acc = np.tensordot(acc, mps.tensors[k], axes=(acc.ndim - 1, 0))
    return acc.reshape(-1)


def right_environments(mps: FiniteMPS) -> List[np.ndarray]:
    """env[k] = traced environment of all sites >= k; env[F] is the scalar 1."""
    F = mps.length
    envs = [None] * (F + 1)
    envs[F] = np.eye(mps.tensors[-1].shape[2])
    for k in range(F - 1, -1, -1):
        t = mps.tensors[k]
        envs[k] = np.einsum("ajb,bc,djc->ad", t, envs[k + 1], t, optimize=True)
    return envs


def single_site_rdm(mps: FiniteMPS, site: int) -> np.ndarray:
    """2x2 reduced density matrix of one site.

    Requires the MPS to be left-canonical up to ``site`` so the left block
    traces to the identity; the right block is traced explicitly.
    """
    if not 0 <= site < mps.length:
        raise ValueError(f"site {site} out of range for {mps.length} sites")
    env = np.eye(mps.tensors[-1].shape[2])
    for k in range(mps.length - 1, site, -1):
        t = mps.tensors[k]
        env = np.einsum("ajb,bc,djc->ad", t, env, t, optimize=True)
    t = mps.tensors[site]
    rho = np.einsum("ajb,bc,akc->jk", t, env, t, optimize=True)
    rho = (rho + rho.T) / 2.0
    return rho


def expectation_mpo(mps: FiniteMPS, mpo: MPO) -> float:
    """<psi|H|psi> for a normalized MPS (no canonical form assumed)."""
    env = np.ones((1, 1, 1))  # (bra bond, mpo bond, ket bond)
    for t, w in zip(mps.tensors, mpo.tensors):
        env = np.einsum("awb,aic,wijv,bjd->cvd", env, t, w, t, optimize=True)
    return float(env[0, 0, 0])


def expectation_product_op(mps: FiniteMPS, op: np.ndarray) -> float:
    """Expectation of a uniform single-site operator product over all sites."""
    env = np.ones((1, 1))
    for t in mps.tensors:
        env = np.einsum("ab,aic,ij,bjd->cd", env, t, op, t, optimize=True)
    return float(env[0, 0])


def build_tfim_mpo(F: int, h: float, h_z2: float = 0.0) -> MPO:
    """MPO for H = sum sigma^z_i sigma^z_{i+1} - h sum sigma^x_i - h_z2 prod sigma^x_i.

    Bulk bond dimension is 3 (lower triangular in bond space); a positive
    ``h_z2`` adds one extra channel that carries the global sigma-x string,
    biasing the search into the spin-flip-symmetric sector.
    """
    if F < 2:
        raise ValueError("need at least two sites")
    if h < 0 or h_z2 < 0:
        raise ValueError("field strengths must be nonnegative")
    w = 3 if h_z2 == 0 else 4
    W = np.zeros((w, 2, 2, w))
    W[0, :, :, 0] = ID2
    W[1, :, :, 0] = SZ
    W[2, :, :, 0] = -h * SX
    W[2, :, :, 1] = SZ
    W[2, :, :, 2] = ID2
    if h_z2 > 0:
        W[3, :, :, 3] = SX
    vl = np.zeros(w)
    vl[2] = 1.0
    vr = np.zeros(w)
    vr[0] = 1.0
    if h_z2 > 0:
        vl[3] = -h_z2
        vr[3] = 1.0
    first = np.einsum("a,aijb->ijb", vl, W)[None, :, :, :]
    last = np.einsum("aijb,b->aij", W, vr)[:, :, :, None]
    tensors = [first] + [W.copy() for _ in range(F - 2)] + [last]
    return MPO(tensors)


def mpo_to_dense(mpo: MPO, max_sites: int = 10) -> np.ndarray:
    """Contract an MPO to its dense matrix (for small chains)."""
    F = mpo.length
    if F > max_sites:
        raise ValueError(f"refusing to densify {F} sites")
    acc = mpo.tensors[0][0]  # (d, d, w)
    dim = 2
    for k in range(1, F):
        acc = np.tensordot(acc, mpo.tensors[k], axes=(2, 0))  # (D, D, d, d, w)
        dim *= 2
        acc = np.transpose(acc, (0, 2, 1, 3, 4)).reshape(dim, dim, -1)
    return acc[:, :, 0] if acc.ndim == 3 else acc
