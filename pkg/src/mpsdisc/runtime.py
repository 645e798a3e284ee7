"""Exact CPTP simulation of the compiled discriminator circuits.

Channels are realized on dense bond density matrices via the Kraus blocks of
the circuit unitaries: the generation step traces and resets the physical
qubit after U_G, the conditioning step feeds a data qubit into U_D and
traces the physical output, and the readout applies U_C to (bond x |0>) and
marginalizes everything but the class register (the least significant
log2 N_C bits). Entangled inference couples a second bond register holding
an iMPS test-state generator through the shared physical qubit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import scipy.optimize

from .circuits import ParamCircuit, circuit_columns, circuit_unitary, columns_and_gradient, circuit_to_dict, circuit_from_dict
from .discriminator import ClassDistribution, DiscriminatorTensors, confusion_matrix, f1_scores
from .errors import ChannelIntegrityError, ResourceLimitError
from .imps import IMPSModel, channel_apply
from .compiler import complete_isometry, embed_isometry
from .paulis import rng_stream

TRACE_TOL = 1e-8
PSD_TOL = -1e-10
QUBIT_CAP = 14


def check_density(rho: np.ndarray, context: str = "") -> None:
    tr = float(np.trace(rho))
    if abs(tr - 1.0) > TRACE_TOL:
        raise ChannelIntegrityError(f"{context}: trace deviates from 1 by {abs(tr - 1.0):.3e}")
    evals = np.linalg.eigvalsh((rho + rho.T) / 2.0)
    if evals.min() < PSD_TOL:
        raise ChannelIntegrityError(f"{context}: negative eigenvalue {evals.min():.3e}")


@dataclass
class CompiledModel:
    """Compiled circuits plus per-circuit parameter slices.

    The conditioning circuit is shared in shape across sites but carries L
    independent parameter slices theta_D[i]; at the postselected warm start
    all slices equal the compiled angles.
    """

    circ_R: ParamCircuit
    circ_G: ParamCircuit
    circ_D: ParamCircuit
    circ_C: ParamCircuit
    theta_D: np.ndarray  # (L, n_params_D)
    chi: int
    L: int
    nb: int
    nc: int = 2
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta_D = np.atleast_2d(np.asarray(self.theta_D, dtype=float))
        if self.theta_D.shape != (self.L, len(self.circ_D.params)):
            raise ValueError("theta_D must hold one slice per site")

    # --- flat parameter vector <-> slices ---

    def theta_vector(self) -> np.ndarray:
        return np.concatenate([
            self.circ_R.params, self.circ_G.params,
            self.theta_D.reshape(-1), self.circ_C.params,
        ])

    def with_theta(self, theta: np.ndarray) -> "CompiledModel":
        nR, nG = len(self.circ_R.params), len(self.circ_G.params)
        nD = self.theta_D.size
        out = CompiledModel(
            circ_R=ParamCircuit(self.circ_R.n_qubits, self.circ_R.gates, theta[:nR]),
            circ_G=ParamCircuit(self.circ_G.n_qubits, self.circ_G.gates, theta[nR:nR + nG]),
            circ_D=self.circ_D.copy(),
            circ_C=ParamCircuit(self.circ_C.n_qubits, self.circ_C.gates, theta[nR + nG + nD:]),
            theta_D=theta[nR + nG:nR + nG + nD].reshape(self.theta_D.shape),
            chi=self.chi, L=self.L, nb=self.nb, nc=self.nc, metrics=dict(self.metrics),
        )
        return out


def warm_start_model(circ_R, circ_G, circ_D, circ_C, chi, L, nb, nc=2) -> CompiledModel:
    """Postselected-optimum warm start: every D slice copies the compiled angles."""
    theta_D = np.repeat(circ_D.params[None, :], L, axis=0)
    return CompiledModel(circ_R, circ_G, circ_D, circ_C, theta_D, chi, L, nb, nc)


# --- Kraus blocks from circuits ---


def _r_vector(circ_R, theta=None) -> np.ndarray:
    return circuit_columns(circ_R, [0], params=theta)[:, 0]


def _g_blocks(circ_G, chi, theta=None) -> np.ndarray:
    cols = [2 * b for b in range(chi)]
    block = circuit_columns(circ_G, cols, params=theta)  # (2 chi, chi)
    return np.stack([block[i::2, :] for i in range(2)])  # (d, chi, chi)


def _d_blocks(circ_D, chi, theta) -> np.ndarray:
    U = circuit_unitary(circ_D, params=theta)
    return np.stack([
        np.stack([U[p::2, i::2] for i in range(2)]) for p in range(2)
    ])  # (p, i, chi, chi)


def _c_blocks(circ_C, chi, nc, theta=None) -> np.ndarray:
    cols = [2 * a for a in range(chi)]
    block = circuit_columns(circ_C, cols, params=theta)  # (2 chi, chi)
    return np.stack([block[l::nc, :] for l in range(nc)])  # (nc, 2 chi / nc, chi)


def extract_tensors(model: CompiledModel) -> DiscriminatorTensors:
    """Postselected tensor blocks of the compiled circuits (approximate isometries)."""
    chi = model.chi
    r = _r_vector(model.circ_R)
    gb = _g_blocks(model.circ_G, chi)  # (i, a, b)
    U = circuit_unitary(model.circ_D, params=model.theta_D[0])
    dten = np.stack([U[0::2, i::2] for i in range(2)], axis=1)  # (a, i, b)
    cb = circuit_columns(model.circ_C, [2 * a for a in range(chi)])
    C = cb[: model.nc, :].T.copy()  # C[a, l] = U_C[l, 2a]
    return DiscriminatorTensors(
        R=r, G=gb.transpose(1, 0, 2).copy(), D=dten, C=C,
        chi=chi, L=model.L, nb=model.nb, nc=model.nc,
    )


# --- channel evaluation ---


def _burned_bond_state(model: CompiledModel) -> np.ndarray:
    r = _r_vector(model.circ_R)
    rho = np.outer(r, r)
    gb = _g_blocks(model.circ_G, model.chi)
    for _ in range(model.nb):
        rho = np.einsum("iab,bc,idc->ad", gb, rho, gb, optimize=True)
        tr = float(np.trace(rho))
        if abs(tr - 1.0) > TRACE_TOL:
            raise ChannelIntegrityError(f"burn-in trace deviation {abs(tr - 1.0):.3e}")
    return rho


def _forward_channel(model: CompiledModel, X: np.ndarray, collect=False):
    """Batched class distributions; optionally keeps intermediates for backprop."""
    M, L, _ = X.shape
    chi = model.chi
    rho0 = _burned_bond_state(model)
    Vm = np.repeat(rho0[None, :, :], M, axis=0)
    vstack = [Vm] if collect else None
    kstack = [] if collect else None
    for t in range(1, L + 1):
        site = L - t
        dblk = _d_blocks(model.circ_D, chi, model.theta_D[site])
        K = np.einsum("mi,piab->mpab", X[:, site, :], dblk, optimize=True)
        T = np.matmul(K, Vm[:, None, :, :])
        Vm = np.matmul(T, K.transpose(0, 1, 3, 2)).sum(axis=1)
        traces = np.trace(Vm, axis1=1, axis2=2)
        worst = float(np.abs(traces - 1.0).max())
        if worst > TRACE_TOL:
            raise ChannelIntegrityError(f"conditioning trace deviation {worst:.3e}")
        if collect:
            kstack.append(K)
            vstack.append(Vm)
    cb = _c_blocks(model.circ_C, chi, model.nc)
    rho_diag = np.einsum("lga,mab,lgb->ml", cb, Vm, cb, optimize=True)
    worst = float(np.abs(rho_diag.sum(axis=1) - 1.0).max())
    if worst > TRACE_TOL:
        raise ChannelIntegrityError(f"readout trace deviation {worst:.3e}")
    if collect:
        return rho_diag, rho0, vstack, kstack, cb
    return rho_diag


def class_distributions(model: CompiledModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    return _forward_channel(model, X)


def infer_product(model: CompiledModel, x) -> ClassDistribution:
    """Deterministic class distribution for one product sample (L, 2)."""
    rho = class_distributions(model, x)[0]
    return ClassDistribution(diag=rho / rho.sum(), normalized=True)


def single_shot_success(model: CompiledModel, X, labels) -> np.ndarray:
    """P_SS per sample: probability the single-shot call is the true label."""
    rho = class_distributions(model, X)
    y = np.asarray(labels, dtype=int)
    return rho[np.arange(len(y)), y]


def _margins(rho_diag: np.ndarray, y: np.ndarray, lam: float):
    masked = rho_diag.copy()
    masked[np.arange(len(y)), y] = -np.inf
    lbar = np.argmax(masked, axis=1)
    margin = rho_diag[np.arange(len(y)), lbar] - rho_diag[np.arange(len(y)), y] + lam
    return lbar, margin


def cost_no_postselection(model: CompiledModel, X, labels, lam: float = 0.9, eta: float = 2.0) -> float:
    """Regularized hinge cost of the trace-instead-of-postselect circuits.

    Per sample: max(rho_{wrong} - rho_{true} + lambda, 0)^eta with the wrong
    class taken at its highest-probability value; CPTP guarantees the class
    weights sum to 1.
    """
    if not (0.0 < lam <= 1.0) or eta <= 0:
        raise ValueError("need 0 < lambda <= 1 and eta > 0")
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    y = np.asarray(labels, dtype=int)
    rho = _forward_channel(model, X)
    _, margin = _margins(rho, y, lam)
    return float(np.mean(np.maximum(margin, 0.0) ** eta))


def _cost_and_theta_grad(model: CompiledModel, X, y, lam, eta):
    """Reverse mode through the channels, then per-circuit angle gradients."""
    M, L, _ = X.shape
    chi = model.chi
    rho, rho0, vstack, kstack, cb = _forward_channel(model, X, collect=True)
    lbar, margin = _margins(rho, y, lam)
    active = margin > 0
    base = np.where(active, np.maximum(margin, 0.0) ** (eta - 1.0), 0.0) * eta / M
    cost = float(np.mean(np.maximum(margin, 0.0) ** eta))

    w = np.zeros_like(rho)
    idx = np.arange(M)
    w[idx, lbar] += base
    w[idx, y] -= base

    # readout backward
    VL = vstack[-1]
    sym = VL + VL.transpose(0, 2, 1)
    dCb = np.einsum("ml,mab,lgb->lga", w, sym, cb, optimize=True)
    gbar = np.einsum("ml,lga,lgb->mab", w, cb, cb, optimize=True)

    dD_sites = []
    for t in range(L, 0, -1):
        site = L - t
        K = kstack[t - 1]
        Vprev = vstack[t - 1]
        GK = np.matmul(gbar[:, None, :, :], K)
        dK = np.matmul(GK, Vprev.transpose(0, 2, 1)[:, None, :, :])
        dK += np.matmul(np.matmul(gbar.transpose(0, 2, 1)[:, None, :, :], K), Vprev[:, None, :, :])
        dDblk = np.einsum("mi,mpab->piab", X[:, site, :], dK, optimize=True)
        dD_sites.append((site, dDblk))
        gbar = np.einsum("mpba,mbc,mpcd->mad", K, gbar, K, optimize=True)

    gsum = gbar.sum(axis=0)
    gb = _g_blocks(model.circ_G, chi)
    dGb = np.zeros_like(gb)
    rho_k = [np.outer(_r_vector(model.circ_R), _r_vector(model.circ_R))]
    for _ in range(model.nb):
        rho_k.append(np.einsum("iab,bc,idc->ad", gb, rho_k[-1], gb, optimize=True))
    for k in range(model.nb, 0, -1):
        Vprev = rho_k[k - 1]
        dGb += np.einsum("ab,ibc,dc->iad", gsum, gb, Vprev, optimize=True)
        dGb += np.einsum("ba,ibc,cd->iad", gsum, gb, Vprev, optimize=True)
        gsum = np.einsum("iba,bc,icd->ad", gb, gsum, gb, optimize=True)
    r = _r_vector(model.circ_R)
    dr = (gsum + gsum.T) @ r

    # scatter block cotangents into circuit-column cotangents and chain to angles
    def block_grad(circ, theta, cols, cot_block):
        def cot_fn(_block):
            return 0.0, cot_block
        _, grad, _ = columns_and_gradient(circ, theta, cols, cot_fn)
        return grad

    grad_R = block_grad(model.circ_R, model.circ_R.params, [0], dr.reshape(-1, 1))

    colsG = [2 * b for b in range(chi)]
    cotG = np.zeros((2 * chi, chi))
    for i in range(2):
        cotG[i::2, :] = dGb[i]
    grad_G = block_grad(model.circ_G, model.circ_G.params, colsG, cotG)

    grad_D = np.zeros_like(model.theta_D)
    dim = 2 * chi
    all_cols = list(range(dim))
    for site, dDblk in dD_sites:
        cotD = np.zeros((dim, dim))
        for p in range(2):
            for i in range(2):
                cotD[p::2, i::2] = dDblk[p, i]
        grad_D[site] = block_grad(model.circ_D, model.theta_D[site], all_cols, cotD)

    colsC = [2 * a for a in range(chi)]
    cotC = np.zeros((2 * chi, chi))
    for l in range(model.nc):
        cotC[l::model.nc, :] = dCb[l]
    grad_C = block_grad(model.circ_C, model.circ_C.params, colsC, cotC)

    grad = np.concatenate([grad_R, grad_G, grad_D.reshape(-1), grad_C])
    return cost, grad


def cost_and_gradient(model: CompiledModel, X, labels, lam=0.9, eta=2.0):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    y = np.asarray(labels, dtype=int)
    return _cost_and_theta_grad(model, X, y, lam, eta)


def evaluate_f1(model: CompiledModel, X, labels) -> float:
    rho = class_distributions(model, X)
    preds = np.argmax(rho, axis=1)
    _, fbar = f1_scores(confusion_matrix(np.asarray(labels, dtype=int), preds, model.nc))
    return fbar


def finetune_parameters(
    model: CompiledModel,
    X,
    labels,
    lam: float = 0.9,
    eta: float = 2.0,
    epochs: int = 30,
    inner_iters: int = 20,
) -> CompiledModel:
    """Quasi-Newton fine-tuning of all circuit angles without postselection.

    Runs ``epochs`` warm-started limited-memory BFGS rounds (bounded inner
    iteration count each) on the regularized cost; accepted parameters never
    increase the cost between epoch starts. Records before/after training F1
    in the returned model's metrics.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(labels, dtype=int)
    f1_before = evaluate_f1(model, X, y)

    theta = model.theta_vector()

    def fun(t):
        return _cost_and_theta_grad(model.with_theta(t), X, y, lam, eta)

    best_theta = theta.copy()
    best_cost = cost_no_postselection(model, X, y, lam, eta)
    history = [best_cost]
    maxls = 20
    failures = 0
    for _ in range(epochs):
        res = scipy.optimize.minimize(
            fun, best_theta, jac=True, method="L-BFGS-B",
            options={"maxiter": inner_iters, "ftol": 1e-18, "gtol": 1e-14, "maxls": maxls},
        )
        if np.isfinite(res.fun) and res.fun <= best_cost + 1e-15:
            best_cost = float(min(res.fun, best_cost))
            best_theta = res.x.copy()
        else:
            failures += 1
            if failures > 3:
                break
            maxls *= 2  # line-search failure: retry from the best point
        history.append(best_cost)

    out = model.with_theta(best_theta)
    out.metrics = dict(model.metrics)
    out.metrics.update({
        "finetune_cost": best_cost,
        "finetune_history": history,
        "f1_before": f1_before,
        "f1_after": evaluate_f1(out, X, y),
        "lambda": lam,
        "eta": eta,
        "epochs": epochs,
    })
    return out


# --- entangled inference ---


@dataclass
class TestStateUnitaries:
    """Dense unitaries generating an iMPS test state on its own bond register."""

    U_R: np.ndarray  # (chi_i, chi_i)
    U_G: np.ndarray  # (2 chi_i, 2 chi_i)
    chi_i: int


def test_state_from_imps(model: IMPSModel) -> TestStateUnitaries:
    """Exact unitary completions of the iMPS tensors (noiseless substitute)."""
    ur = complete_isometry(embed_isometry(model.V, "R")) if model.chi > 1 else np.ones((1, 1))
    ug = complete_isometry(embed_isometry(model.A, "G"))
    return TestStateUnitaries(U_R=ur, U_G=ug, chi_i=model.chi)


def test_state_from_circuits(circ_R: ParamCircuit, circ_G: ParamCircuit) -> TestStateUnitaries:
    ur = circuit_unitary(circ_R)
    ug = circuit_unitary(circ_G)
    return TestStateUnitaries(U_R=ur, U_G=ug, chi_i=ur.shape[0])


def infer_entangled(
    model: CompiledModel,
    test: TestStateUnitaries,
    nb: Optional[int] = None,
    nb_prime: Optional[int] = None,
    qubit_cap: int = QUBIT_CAP,
) -> ClassDistribution:
    """Classify an entangled iMPS input.

    Both bond registers are burned in independently (nb for the
    discriminator, nb_prime for the test generator); then for each of the L
    rounds the test generator emits one physical qubit, the conditioning
    unitary consumes it, and the qubit is reset. The test bond register is
    discarded before readout.
    """
    nb = model.nb if nb is None else nb
    nb_prime = model.nb if nb_prime is None else nb_prime
    chi, chi_i = model.chi, test.chi_i
    n_qubits = int(np.log2(chi)) + int(np.log2(chi_i)) + 1
    if n_qubits > qubit_cap:
        raise ResourceLimitError(f"joint register needs {n_qubits} qubits (cap {qubit_cap})")

    # test-state generation isometry W[t, p, a]: bond a -> (bond t, phys p)
    W = test.U_G[:, [2 * b for b in range(chi_i)]].reshape(chi_i, 2, chi_i)

    r_test = test.U_R[:, 0]
    rho_test = np.outer(r_test, r_test)
    for _ in range(nb_prime):
        rho_test = channel_apply(W, rho_test)  # W is the (chi, d, chi) tensor layout
    rho_disc = _burned_bond_state(model)

    sigma = np.einsum("ab,cd->acbd", rho_test, rho_disc, optimize=True)  # (t, b, t', b')
    for t in range(1, model.L + 1):
        site = model.L - t
        dblk = _d_blocks(model.circ_D, chi, model.theta_D[site])  # (p_out, p_in, b_out, b_in)
        # emit a test qubit, condition the discriminator bond, trace the qubit
        sigma = np.einsum(
            "tpa,abcd,sqc,xpeb,xqfd->tesf",
            W, sigma, W, dblk, dblk, optimize=True,
        )
        tr = float(np.einsum("tete->", sigma))
        if abs(tr - 1.0) > TRACE_TOL:
            raise ChannelIntegrityError(f"entangled round trace deviation {abs(tr - 1.0):.3e}")
    rho_bond = np.einsum("tetf->ef", sigma)
    cb = _c_blocks(model.circ_C, chi, model.nc)
    diag = np.einsum("lga,ab,lgb->l", cb, rho_bond, cb, optimize=True)
    s = diag.sum()
    if abs(s - 1.0) > TRACE_TOL:
        raise ChannelIntegrityError(f"entangled readout trace deviation {abs(s - 1.0):.3e}")
    return ClassDistribution(diag=diag / s, normalized=True)


def sample_label(dist: ClassDistribution, n_shots: int, seed: int) -> np.ndarray:
    """I.i.d. categorical draws from a normalized class distribution."""
    p = np.asarray(dist.diag, dtype=float)
    if abs(p.sum() - 1.0) > 1e-8 or (p < -1e-12).any():
        raise ValueError("distribution must be normalized")
    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    rng = rng_stream(seed, 0x5A)
    return rng.choice(len(p), size=n_shots, p=p)


# --- persistence ---


def save_compiled_model(model: CompiledModel, path: str | Path) -> None:
    payload = {
        "chi": model.chi, "L": model.L, "nb": model.nb, "nc": model.nc,
        "circuits": {
            "R": circuit_to_dict(model.circ_R, role="R"),
            "G": circuit_to_dict(model.circ_G, role="G"),
            "D": circuit_to_dict(model.circ_D, role="D"),
            "C": circuit_to_dict(model.circ_C, role="C"),
        },
        "theta_D": model.theta_D.tolist(),
        "metrics": model.metrics,
    }
    Path(path).write_text(json.dumps(payload))


def load_compiled_model(path: str | Path) -> CompiledModel:
    payload = json.loads(Path(path).read_text())
    circs = {k: circuit_from_dict(v) for k, v in payload["circuits"].items()}
    return CompiledModel(
        circ_R=circs["R"], circ_G=circs["G"], circ_D=circs["D"], circ_C=circs["C"],
        theta_D=np.array(payload["theta_D"], dtype=float),
        chi=int(payload["chi"]), L=int(payload["L"]), nb=int(payload["nb"]),
        nc=int(payload["nc"]), metrics=payload.get("metrics", {}),
    )
