"""Single-shot classical-product-state sampling from a finite MPS.

A contiguous window of L sites is measured in a per-site Hermitian basis;
all other sites are traced out. The sweep runs from the right end of the
window to its left end: form the single-site reduced density matrix, draw a
projector index from Tr[P rho], project, and absorb the projected tensor
into the running right environment. Preparing the window environment costs
O(F chi^3) once; each shot is O(chi^2 L).
"""

from __future__ import annotations

from typing import List, Sequence, Union

import numpy as np

from .mps import FiniteMPS, ShotRecord
from .paulis import BASIS_OPERATORS, basis_eigenvectors, rng_stream

NEGATIVE_PROB_TOL = -1e-12


def _resolve_ops(ops: Union[str, Sequence], length: int) -> List[np.ndarray]:
    if isinstance(ops, str):
        return [BASIS_OPERATORS[ops]] * length
    resolved = []
    for o in ops:
        resolved.append(BASIS_OPERATORS[o] if isinstance(o, str) else np.asarray(o, dtype=float))
    if len(resolved) != length:
        raise ValueError("one basis operator per window site required")
    return resolved


class PreparedWindow:
    """Shared, immutable snapshot for repeated sampling of one window.

    Holds the window tensors of a left-canonical MPS, the traced right
    environment of the window, and the per-site measurement eigenbases.
    Safe to share read-only across threads; pass per-shot generators.
    """

    def __init__(self, mps: FiniteMPS, start: int, ops: Union[str, Sequence], length: int):
        if not 0 <= start <= mps.length - length:
            raise ValueError("window does not fit on the chain")
        mps.check()
        self.length = length
        self.tensors = [mps.tensors[start + k] for k in range(length)]
        self.bases = [basis_eigenvectors(op) for op in _resolve_ops(ops, length)]
        env = np.eye(mps.tensors[-1].shape[2])
        for k in range(mps.length - 1, start + length - 1, -1):
            t = mps.tensors[k]
            env = np.einsum("ajb,bc,djc->ad", t, env, t, optimize=True)
        self.right_env = env

    def _site_distribution(self, k: int, env: np.ndarray) -> np.ndarray:
        t = self.tensors[k]
        rho = np.einsum("ajb,bc,akc->jk", t, env, t, optimize=True)
        basis = self.bases[k]
        p = np.einsum("jm,jk,km->m", basis, rho, basis, optimize=True)
        if p.min() < NEGATIVE_PROB_TOL:
            raise RuntimeError(f"negative outcome probability {p.min():.3e}")
        p = np.clip(p, 0.0, None)
        return p / p.sum()

    def _project(self, k: int, mu: int, env: np.ndarray) -> np.ndarray:
        vec = self.bases[k][:, mu]
        n = np.einsum("ajb,j->ab", self.tensors[k], vec, optimize=True)
        return n @ env @ n.T

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Draw one outcome string, distributed as the window marginal."""
        outcomes = np.empty(self.length, dtype=int)
        env = self.right_env
        for k in range(self.length - 1, -1, -1):
            p = self._site_distribution(k, env)
            mu = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
            mu = min(mu, len(p) - 1)
            outcomes[k] = mu
            env = self._project(k, mu, env)
            tr = np.trace(env)
            if tr <= 0:
                raise RuntimeError("sampled into a zero-probability branch")
            env = env / tr
        return outcomes

    def string_probability(self, outcomes: Sequence[int]) -> float:
        """Exact probability of one outcome string under the window marginal."""
        prob = 1.0
        env = self.right_env
        for k in range(self.length - 1, -1, -1):
            p = self._site_distribution(k, env)
            prob *= float(p[outcomes[k]])
            if prob == 0.0:
                return 0.0
            env = self._project(k, outcomes[k], env)
            env = env / np.trace(env)
        return prob

    def distribution(self) -> np.ndarray:
        """All 2^L string probabilities (small windows only), string-major."""
        if self.length > 12:
            raise ValueError("window too large to enumerate")
        out = np.empty(2 ** self.length)
        for s in range(out.size):
            bits = [(s >> (self.length - 1 - k)) & 1 for k in range(self.length)]
            out[s] = self.string_probability(bits)
        return out


def sample_cps(
    mps: FiniteMPS,
    basis: Union[str, Sequence],
    rng_seed: int,
    window_start: int = 0,
    window_length: int | None = None,
    label: int | None = None,
    h_source: float | None = None,
) -> ShotRecord:
    """One single-shot measurement of a contiguous window in a fixed basis.

    Reproducible bit-exactly for a fixed seed. For repeated shots from the
    same state prefer constructing a PreparedWindow once and passing
    per-shot generators from rng_stream(seed, shot_index).
    """
    length = mps.length if window_length is None else window_length
    win = PreparedWindow(mps, window_start, basis, length)
    outcomes = win.sample(rng_stream(rng_seed))
    tag = basis if isinstance(basis, str) else "custom"
    return ShotRecord(basis=tag, outcomes=outcomes, label=label, h_source=h_source)
