"""Pauli matrices, measurement bases, and seeded RNG helpers.

Everything in this package is real-valued: the Hamiltonians and the
CNOT+Ry gate set never leave the real orthogonal group, so sigma_y is
deliberately absent.
"""

from __future__ import annotations

import numpy as np

SX = np.array([[0.0, 1.0], [1.0, 0.0]])
SZ = np.array([[1.0, 0.0], [0.0, -1.0]])
ID2 = np.eye(2)

# Eigenvectors by outcome index: index 0 is the +1 eigenvector.
BASIS_VECTORS = {
    "z": np.array([[1.0, 0.0], [0.0, 1.0]]),  # |up>, |down>
    "x": np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0),  # |+>, |->
}

BASIS_OPERATORS = {"z": SZ, "x": SX}


def rng_stream(*key) -> np.random.Generator:
    """Counter-based generator for a reproducible, collision-free stream.

    Streams are derived from an integer key tuple (e.g. (seed, shot_index))
    so independent shots/restarts can be drawn in any order or in parallel.
    """
    return np.random.Generator(np.random.Philox(key=np.random.SeedSequence(key).generate_state(2, np.uint64)))


def basis_eigenvectors(op: np.ndarray) -> np.ndarray:
    """Columns of the measurement basis for a 2x2 Hermitian, +1-like first.

    Eigenvalues are sorted in descending order so outcome index 0 always
    refers to the larger eigenvalue.
    """
    vals, vecs = np.linalg.eigh(op)
    order = np.argsort(vals)[::-1]
    vecs = vecs[:, order]
    # fix signs for determinism: make the largest-magnitude entry positive
    for k in range(vecs.shape[1]):
        j = int(np.argmax(np.abs(vecs[:, k])))
        if vecs[j, k] < 0:
            vecs[:, k] = -vecs[:, k]
    return vecs


def outcome_amplitudes(basis: str, outcomes: np.ndarray) -> np.ndarray:
    """Map an outcome string to per-site 2-vector amplitudes, shape (L, 2)."""
    vecs = BASIS_VECTORS[basis]
    return vecs[:, np.asarray(outcomes, dtype=int)].T.copy()
