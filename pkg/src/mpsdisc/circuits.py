"""Parameterized CNOT+Ry circuits over a named qubit register.

Gates are applied in list order; qubit 0 is the most significant bit of the
basis index, so a (bond, physical) register with the physical qubit last has
basis index = bond_index * 2 + phys. Everything is real: Ry(theta) =
[[cos t/2, -sin t/2], [sin t/2, cos t/2]] and CNOT are real orthogonal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class Gate:
    kind: str  # "ry" | "cnot"
    q0: int  # ry qubit, or cnot control
    q1: int = -1  # cnot target
    slot: int = -1  # ry parameter slot


@dataclass
class ParamCircuit:
    n_qubits: int
    gates: List[Gate]
    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)

    def check(self) -> None:
        slots = []
        for g in self.gates:
            if g.kind == "ry":
                if not 0 <= g.q0 < self.n_qubits:
                    raise ValueError(f"ry qubit {g.q0} out of range")
                slots.append(g.slot)
            elif g.kind == "cnot":
                if not (0 <= g.q0 < self.n_qubits and 0 <= g.q1 < self.n_qubits):
                    raise ValueError("cnot qubit out of range")
                if g.q0 == g.q1:
                    raise ValueError("cnot control equals target")
            else:
                raise ValueError(f"unknown gate kind {g.kind!r}")
        if sorted(slots) != list(range(len(self.params))):
            raise ValueError("parameter slots must reference each angle exactly once")

    @property
    def cnot_count(self) -> int:
        return sum(1 for g in self.gates if g.kind == "cnot")

    def copy(self) -> "ParamCircuit":
        return ParamCircuit(self.n_qubits, list(self.gates), self.params.copy())


# --- cached index tables for fast in-place gate action on stacked columns ---

_BIT_CACHE: dict = {}
_PERM_CACHE: dict = {}


def _bit_rows(n: int, q: int):
    key = (n, q)
    if key not in _BIT_CACHE:
        mask = 1 << (n - 1 - q)
        rows = np.arange(2 ** n)
        i0 = rows[(rows & mask) == 0]
        _BIT_CACHE[key] = (i0, i0 | mask)
    return _BIT_CACHE[key]


def _cnot_perm(n: int, c: int, t: int):
    key = (n, c, t)
    if key not in _PERM_CACHE:
        cmask = 1 << (n - 1 - c)
        tmask = 1 << (n - 1 - t)
        rows = np.arange(2 ** n)
        perm = np.where((rows & cmask) != 0, rows ^ tmask, rows)
        _PERM_CACHE[key] = perm
    return _PERM_CACHE[key]


def ry_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return np.array([[c, -s], [s, c]])


def _apply_gate(B: np.ndarray, g: Gate, theta: float, n: int, transpose=False, deriv=False):
    """Return gate @ B (or gate^T @ B, or d(gate)/dtheta @ B for ry)."""
    if g.kind == "cnot":
        if deriv:
            raise ValueError("cnot carries no parameter")
        return B[_cnot_perm(n, g.q0, g.q1)]
    i0, i1 = _bit_rows(n, g.q0)
    if deriv:
        c, s = 0.5 * np.cos(theta / 2.0), 0.5 * np.sin(theta / 2.0)
        out = np.empty_like(B)
        out[i0] = -s * B[i0] - c * B[i1]
        out[i1] = c * B[i0] - s * B[i1]
        return out
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    if transpose:
        s = -s
    out = np.empty_like(B)
    out[i0] = c * B[i0] - s * B[i1]
    out[i1] = s * B[i0] + c * B[i1]
    return out


def apply_circuit(circ: ParamCircuit, B: np.ndarray, params: Optional[np.ndarray] = None) -> np.ndarray:
    """Apply the circuit to stacked column vectors B of shape (2^n, k)."""
    theta = circ.params if params is None else np.asarray(params, dtype=float)
    out = B
    for g in circ.gates:
        out = _apply_gate(out, g, theta[g.slot] if g.kind == "ry" else 0.0, circ.n_qubits)
    return out


def circuit_unitary(circ: ParamCircuit, params: Optional[np.ndarray] = None) -> np.ndarray:
    """Dense 2^n x 2^n real orthogonal matrix of the whole circuit."""
    return apply_circuit(circ, np.eye(2 ** circ.n_qubits), params)


def circuit_columns(circ: ParamCircuit, cols: Sequence[int], params=None) -> np.ndarray:
    """U[:, cols] without building the full unitary."""
    dim = 2 ** circ.n_qubits
    B = np.zeros((dim, len(cols)))
    B[np.asarray(cols, dtype=int), np.arange(len(cols))] = 1.0
    return apply_circuit(circ, B, params)


def columns_and_gradient(
    circ: ParamCircuit,
    theta: np.ndarray,
    cols: Sequence[int],
    cotangent_fn,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Reverse-mode gradient of a scalar of U[:, cols] w.r.t. the angles.

    ``cotangent_fn(block)`` must return (value, dvalue/dblock). Returns
    (value, grad over slots, block).
    """
    n = circ.n_qubits
    dim = 2 ** n
    B = np.zeros((dim, len(cols)))
    B[np.asarray(cols, dtype=int), np.arange(len(cols))] = 1.0
    states = [B]
    for g in circ.gates:
        B = _apply_gate(B, g, theta[g.slot] if g.kind == "ry" else 0.0, n)
        states.append(B)
    value, cot = cotangent_fn(states[-1])
    grad = np.zeros_like(theta)
    for j in range(len(circ.gates) - 1, -1, -1):
        g = circ.gates[j]
        if g.kind == "ry":
            dB = _apply_gate(states[j], g, theta[g.slot], n, deriv=True)
            grad[g.slot] = float(np.sum(cot * dB))
        cot = _apply_gate(cot, g, theta[g.slot] if g.kind == "ry" else 0.0, n, transpose=True)
    return value, grad, states[-1]


def inverse_circuit(circ: ParamCircuit) -> ParamCircuit:
    """Reverse the gate order and negate the Ry angles (same CNOT count)."""
    inv = ParamCircuit(circ.n_qubits, list(reversed(circ.gates)), -circ.params)
    return inv


def circuit_to_dict(circ: ParamCircuit, role: Optional[str] = None, tol_achieved=None) -> dict:
    gates = []
    for g in circ.gates:
        if g.kind == "ry":
            gates.append({"ry": {"q": g.q0, "slot": g.slot}})
        else:
            gates.append({"cnot": {"c": g.q0, "t": g.q1}})
    out = {"n_qubits": circ.n_qubits, "gates": gates, "params": circ.params.tolist()}
    if role is not None:
        out["role"] = role
    if tol_achieved is not None:
        out["tol_achieved"] = tol_achieved
    return out


def circuit_from_dict(payload: dict) -> ParamCircuit:
    gates = []
    for g in payload["gates"]:
        if "ry" in g:
            gates.append(Gate("ry", g["ry"]["q"], slot=g["ry"]["slot"]))
        else:
            gates.append(Gate("cnot", g["cnot"]["c"], g["cnot"]["t"]))
    circ = ParamCircuit(payload["n_qubits"], gates, np.array(payload["params"], dtype=float))
    circ.check()
    return circ


def save_circuit(circ: ParamCircuit, path: str | Path, role=None, tol_achieved=None) -> None:
    Path(path).write_text(json.dumps(circuit_to_dict(circ, role, tol_achieved)))


def load_circuit(path: str | Path) -> ParamCircuit:
    return circuit_from_dict(json.loads(Path(path).read_text()))
