"""Tensor-level phase discriminator: cost, training, prediction, metrics.

The model holds four trainable objects: a boundary vector R on the sphere,
generation and conditioning tensors G, D whose matricizations live on
St(chi*d, chi), and a readout isometry C on St(chi, N_C). Inference burns in
a bond density matrix with N_b applications of G, conditions it on the
product sample one site at a time (sites L-1 down to 0), and reads out class
weights through C; the per-sample cost is trace-normalized so that a perfect
call scores -1 and an uninformative readout scores 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import DegenerateReadoutError
from .manifolds import (
    ManifoldPoint,
    MinimizeConfig,
    minimize,
    random_sphere,
    random_stiefel,
    sphere_point,
    stiefel_point,
)
from .paulis import rng_stream

D_PHYS = 2
READOUT_FLOOR = 1e-14


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class DiscriminatorTensors:
    """Trainable tensors in action form plus hyperparameters.

    G[a, i, b] generates physical index i while mapping bond b -> a;
    D[a, i, b] conditions bond b -> a on physical input i (it is the
    postselected block of the conditioning unitary); C[a, l] maps bond
    amplitudes to class l.
    """

    R: np.ndarray
    G: np.ndarray
    D: np.ndarray
    C: np.ndarray
    chi: int
    L: int
    nb: int
    nc: int = 2
    metrics: dict = field(default_factory=dict)

    def check(self) -> None:
        chi, nc = self.chi, self.nc
        if not (_is_pow2(chi) and _is_pow2(nc)):
            raise ValueError("chi and N_C must be powers of 2")
        if abs(np.linalg.norm(self.R) - 1.0) > 1e-10:
            raise ValueError("R is not unit norm")
        gram_g = np.einsum("aib,aic->bc", self.G, self.G)
        if np.abs(gram_g - np.eye(chi)).max() > 1e-10:
            raise ValueError("G matricization is not an isometry")
        gram_d = np.einsum("aib,cib->ac", self.D, self.D)
        if np.abs(gram_d - np.eye(chi)).max() > 1e-10:
            raise ValueError("D matricization is not an isometry")
        gram_c = self.C.T @ self.C
        if np.abs(gram_c - np.eye(nc)).max() > 1e-10:
            raise ValueError("C is not an isometry")

    # --- Stiefel matricizations used by the optimizer and the compiler ---

    def g_stiefel(self) -> np.ndarray:
        return self.G.reshape(self.chi * D_PHYS, self.chi)

    def d_stiefel(self) -> np.ndarray:
        # rows are (input bond, physical input); columns the output bond
        return self.D.transpose(2, 1, 0).reshape(self.chi * D_PHYS, self.chi)

    @staticmethod
    def from_stiefel(r, g_st, d_st, c_st, L, nb) -> "DiscriminatorTensors":
        chi = g_st.shape[1]
        return DiscriminatorTensors(
            R=r.copy(),
            G=g_st.reshape(chi, D_PHYS, chi),
            D=d_st.reshape(chi, D_PHYS, chi).transpose(2, 1, 0).copy(),
            C=c_st.copy(),
            chi=chi,
            L=L,
            nb=nb,
            nc=c_st.shape[1],
        )


@dataclass
class ClassDistribution:
    diag: np.ndarray
    normalized: bool = True

    @property
    def label(self) -> int:
        return int(np.argmax(self.diag))  # argmax breaks ties toward the lower index


def apply_bond_gauge(model: DiscriminatorTensors, W: np.ndarray) -> DiscriminatorTensors:
    """Rotate all bond indices by an orthogonal W; the cost is invariant."""
    out = DiscriminatorTensors(
        R=W @ model.R,
        G=np.einsum("ax,xiy,by->aib", W, model.G, W, optimize=True),
        D=np.einsum("ax,xiy,by->aib", W, model.D, W, optimize=True),
        C=W @ model.C,
        chi=model.chi,
        L=model.L,
        nb=model.nb,
        nc=model.nc,
        metrics=dict(model.metrics),
    )
    return out


def _forward(R, G, D, C, nb, X):
    """Class weights for a batch; returns (rho_diag, saved intermediates)."""
    M, L, _ = X.shape
    V = np.outer(R, R)
    burn = [V]
    for _ in range(nb):
        V = np.einsum("aib,bc,dic->ad", G, V, G, optimize=True)
        burn.append(V)
    Vm = np.repeat(V[None, :, :], M, axis=0)
    vstack = [Vm]
    kstack = []
    for t in range(1, L + 1):
        site = L - t
        K = np.einsum("mi,aib->mab", X[:, site, :], D, optimize=True)
        Vm = np.einsum("mab,mbc,mdc->mad", K, vstack[-1], K, optimize=True)
        kstack.append(K)
        vstack.append(Vm)
    rho = np.einsum("al,mab,bl->ml", C, Vm, C, optimize=True)
    return rho, burn, vstack, kstack


def _batch(X, labels=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None, :, :]
    if labels is None:
        return X, None
    y = np.asarray(labels, dtype=int).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise ValueError("one label per sample required")
    return X, y


def class_weights(model: DiscriminatorTensors, X) -> np.ndarray:
    """Unnormalized readout diagonal rho_ll for a batch, shape (M, N_C)."""
    X, _ = _batch(X)
    rho, *_ = _forward(model.R, model.G, model.D, model.C, model.nb, X)
    return rho


def classification_cost(model: DiscriminatorTensors, X, labels) -> float:
    """Mean trace-normalized misclassification cost over the batch.

    Per sample: (sum_l rho_ll - 2 rho_{yy}) / sum_l rho_ll, in [-1, 1] for
    two classes.
    """
    X, y = _batch(X, labels)
    rho, *_ = _forward(model.R, model.G, model.D, model.C, model.nb, X)
    S = rho.sum(axis=1)
    bad = np.nonzero(S < READOUT_FLOOR)[0]
    if bad.size:
        raise DegenerateReadoutError(int(bad[0]), float(S[bad[0]]))
    picked = rho[np.arange(len(y)), y]
    return float(np.mean((S - 2.0 * picked) / S))


def cost_and_gradients(R, G, D, C, nb, X, y):
    """Cost plus ambient gradients w.r.t. (R, G, D, C); reverse mode."""
    M, L, _ = X.shape
    rho, burn, vstack, kstack = _forward(R, G, D, C, nb, X)
    S = rho.sum(axis=1)
    bad = np.nonzero(S < READOUT_FLOOR)[0]
    if bad.size:
        raise DegenerateReadoutError(int(bad[0]), float(S[bad[0]]))
    picked = rho[np.arange(M), y]
    cost = float(np.mean((S - 2.0 * picked) / S))

    w = np.zeros_like(rho)
    w += (2.0 * picked / S ** 2)[:, None]
    w[np.arange(M), y] -= 2.0 / S
    w /= M

    VL = vstack[-1]
    sym = VL + VL.transpose(0, 2, 1)
    dC = np.einsum("ml,mab,bl->al", w, sym, C, optimize=True)
    gbar = np.einsum("ml,al,bl->mab", w, C, C, optimize=True)

    dD = np.zeros_like(D)
    for t in range(L, 0, -1):
        site = L - t
        K = kstack[t - 1]
        Vprev = vstack[t - 1]
        dK = np.einsum("mab,mbc,mdc->mad", gbar, K, Vprev, optimize=True)
        dK += np.einsum("mba,mbc,mcd->mad", gbar, K, Vprev, optimize=True)
        dD += np.einsum("mi,mab->aib", X[:, site, :], dK, optimize=True)
        gbar = np.einsum("mba,mbc,mcd->mad", K, gbar, K, optimize=True)

    gsum = gbar.sum(axis=0)
    dG = np.zeros_like(G)
    for k in range(nb, 0, -1):
        Vprev = burn[k - 1]
        dG += np.einsum("ab,bic,dc->aid", gsum, G, Vprev, optimize=True)
        dG += np.einsum("ba,bic,cd->aid", gsum, G, Vprev, optimize=True)
        gsum = np.einsum("bia,bc,cid->ad", G, gsum, G, optimize=True)
    dR = (gsum + gsum.T) @ R
    return cost, dR, dG, dD, dC


def predict_product(model: DiscriminatorTensors, x) -> ClassDistribution:
    """Normalized class distribution for one product sample (L, 2)."""
    rho = class_weights(model, x)[0]
    s = rho.sum()
    if s < READOUT_FLOOR:
        raise DegenerateReadoutError(0, float(s))
    return ClassDistribution(diag=rho / s, normalized=True)


def predict_batch(model: DiscriminatorTensors, X) -> np.ndarray:
    rho = class_weights(model, X)
    S = rho.sum(axis=1)
    bad = np.nonzero(S < READOUT_FLOOR)[0]
    if bad.size:
        raise DegenerateReadoutError(int(bad[0]), float(S[bad[0]]))
    return np.argmax(rho, axis=1)


def confusion_matrix(truth: np.ndarray, predicted: np.ndarray, nc: int = 2) -> np.ndarray:
    """C[i, j] counts samples of truth class i predicted as class j."""
    cm = np.zeros((nc, nc), dtype=int)
    for t, p in zip(truth, predicted):
        cm[int(t), int(p)] += 1
    return cm


def f1_scores(confusion: np.ndarray) -> Tuple[np.ndarray, float]:
    """Per-class F1 (precision/recall harmonic mean) and unweighted average.

    A class with zero precision+recall gets F1 = 0.
    """
    cm = np.asarray(confusion, dtype=float)
    if (cm < 0).any() or not np.allclose(cm, np.round(cm)):
        raise ValueError("confusion matrix must hold nonnegative counts")
    nc = cm.shape[0]
    f1 = np.zeros(nc)
    for i in range(nc):
        col = cm[:, i].sum()
        row = cm[i, :].sum()
        p = cm[i, i] / col if col > 0 else 0.0
        r = cm[i, i] / row if row > 0 else 0.0
        f1[i] = 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0
    return f1, float(f1.mean())


@dataclass
class TrainSchedule:
    restarts: int = 5
    joint_iters: int = 400
    cyclic_rounds: int = 2
    cyclic_iters: int = 150
    step: float = 0.5
    momentum: float = 0.0
    grad_tol: float = 1e-7
    grad_mode: str = "analytic"  # analytic is the fast default; fd cross-checked in tests


def _points_from(model: DiscriminatorTensors):
    return [
        sphere_point(model.R),
        stiefel_point(model.g_stiefel()),
        stiefel_point(model.d_stiefel()),
        stiefel_point(model.C),
    ]


def _model_from_points(points, L, nb) -> DiscriminatorTensors:
    return DiscriminatorTensors.from_stiefel(
        points[0].value, points[1].value, points[2].value, points[3].value, L, nb
    )


def train_discriminator(
    X,
    labels,
    chi: int,
    nb: int,
    seed: int = 0,
    schedule: TrainSchedule = TrainSchedule(),
    nc: int = 2,
) -> DiscriminatorTensors:
    """Joint-then-cyclic Riemannian training on the classification cost.

    Gaussian-QR initialization with ``schedule.restarts`` independent starts;
    each runs one joint round over all four tensors followed by rounds where
    a single tensor is optimized with the others frozen. The best final cost
    wins. Training F1 and the final cost land in ``model.metrics``.
    """
    X, y = _batch(X, labels)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("training set must contain both classes")
    M, L, _ = X.shape

    def cost_fn(r, g_st, d_st, c_st):
        D = d_st.reshape(chi, D_PHYS, chi).transpose(2, 1, 0)
        G = g_st.reshape(chi, D_PHYS, chi)
        rho, *_ = _forward(r, G, D, c_st, nb, X)
        S = rho.sum(axis=1)
        if (S < READOUT_FLOOR).any():
            return np.inf  # line search backs off degenerate regions
        picked = rho[np.arange(M), y]
        return float(np.mean((S - 2.0 * picked) / S))

    def grad_fn(r, g_st, d_st, c_st):
        D = d_st.reshape(chi, D_PHYS, chi).transpose(2, 1, 0)
        G = g_st.reshape(chi, D_PHYS, chi)
        _, dR, dG, dD, dC = cost_and_gradients(r, G, D, c_st, nb, X, y)
        return (
            dR,
            dG.reshape(chi * D_PHYS, chi),
            dD.transpose(2, 1, 0).reshape(chi * D_PHYS, chi),
            dC,
        )

    use_grad = grad_fn if schedule.grad_mode == "analytic" else None
    joint_cfg = MinimizeConfig(
        step=schedule.step, momentum=schedule.momentum, max_iters=schedule.joint_iters,
        grad_tol=schedule.grad_tol, grad_mode=schedule.grad_mode, record_trace=False,
    )
    cyc_cfg = MinimizeConfig(
        step=schedule.step, momentum=schedule.momentum, max_iters=schedule.cyclic_iters,
        grad_tol=schedule.grad_tol, grad_mode=schedule.grad_mode, record_trace=False,
    )

    best = None
    for restart in range(schedule.restarts):
        rng = rng_stream(seed, 0x7D, restart)
        points = [
            random_sphere(chi, rng),
            random_stiefel(chi * D_PHYS, chi, rng),
            random_stiefel(chi * D_PHYS, chi, rng),
            random_stiefel(chi, nc, rng),
        ]
        res = minimize(cost_fn, points, joint_cfg, grad=use_grad)
        points = res.points
        stalled = res.stalled
        for _ in range(schedule.cyclic_rounds):
            for hold in range(4):
                frozen = [i for i in range(4) if i != hold]
                res = minimize(cost_fn, points, cyc_cfg, grad=use_grad, frozen=frozen)
                points = res.points
                stalled = stalled or res.stalled
        final = cost_fn(*[p.value for p in points])
        if best is None or final < best[0]:
            best = (final, points, stalled)

    final_cost, points, stalled = best
    model = _model_from_points(points, L, nb)
    preds = predict_batch(model, X)
    _, fbar = f1_scores(confusion_matrix(y, preds, nc))
    model.metrics = {
        "train_cost": final_cost,
        "train_f1": fbar,
        "stalled": bool(stalled),
        "restarts": schedule.restarts,
        "seed": seed,
    }
    model.check()
    return model


def save_model(model: DiscriminatorTensors, path: str | Path) -> None:
    def pack(a):
        return {"dims": list(a.shape), "data": a.reshape(-1).tolist()}

    payload = {
        "chi": model.chi,
        "nb": model.nb,
        "L": model.L,
        "nc": model.nc,
        "R": model.R.tolist(),
        "G": pack(model.G),
        "D": pack(model.D),
        "C": pack(model.C),
        "metrics": model.metrics,
    }
    Path(path).write_text(json.dumps(payload))


def load_model(path: str | Path) -> DiscriminatorTensors:
    payload = json.loads(Path(path).read_text())

    def unpack(obj):
        return np.array(obj["data"], dtype=float).reshape(obj["dims"])

    model = DiscriminatorTensors(
        R=np.array(payload["R"], dtype=float),
        G=unpack(payload["G"]),
        D=unpack(payload["D"]),
        C=unpack(payload["C"]),
        chi=int(payload["chi"]),
        L=int(payload["L"]),
        nb=int(payload["nb"]),
        nc=int(payload["nc"]),
        metrics=payload.get("metrics", {}),
    )
    model.check()
    return model
