"""First-order Riemannian optimization on spheres and real Stiefel manifolds.

This is the optimization engine behind the iMPS ground-state search and the
discriminator training: tangent projection, QR retraction, projection-based
vector transport, and projected gradient descent with Armijo backtracking and
optional momentum. Gradients are central finite differences by default; an
analytic ambient gradient can be supplied instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import RetractionError

SPHERE_TOL = 1e-12
STIEFEL_TOL = 1e-10


@dataclass
class ManifoldPoint:
    """A point on S^n (unit vector) or St(n, p) (orthonormal columns)."""

    kind: str  # "sphere" | "stiefel"
    value: np.ndarray

    def check(self) -> None:
        if self.kind == "sphere":
            err = abs(np.linalg.norm(self.value) - 1.0)
            if err > SPHERE_TOL:
                raise ValueError(f"sphere point norm error {err:.3e}")
        elif self.kind == "stiefel":
            x = self.value
            err = np.abs(x.T @ x - np.eye(x.shape[1])).max()
            if err > STIEFEL_TOL:
                raise ValueError(f"stiefel orthonormality error {err:.3e}")
        else:
            raise ValueError(f"unknown manifold kind {self.kind!r}")

    def copy(self) -> "ManifoldPoint":
        return ManifoldPoint(self.kind, self.value.copy())


def sphere_point(x: np.ndarray) -> ManifoldPoint:
    p = ManifoldPoint("sphere", np.asarray(x, dtype=float))
    p.check()
    return p


def stiefel_point(x: np.ndarray) -> ManifoldPoint:
    p = ManifoldPoint("stiefel", np.asarray(x, dtype=float))
    p.check()
    return p


def random_sphere(n: int, rng: np.random.Generator) -> ManifoldPoint:
    v = rng.standard_normal(n)
    return ManifoldPoint("sphere", v / np.linalg.norm(v))


def random_stiefel(n: int, p: int, rng: np.random.Generator) -> ManifoldPoint:
    q, r = np.linalg.qr(rng.standard_normal((n, p)))
    q = q * np.sign(np.sign(np.diag(r)) + 0.5)  # fix QR sign ambiguity
    return ManifoldPoint("stiefel", q)


def tangent_project(x: ManifoldPoint, g: np.ndarray) -> np.ndarray:
    """Project an ambient gradient onto the tangent space at x.

    Sphere: g - (x.g) x. Stiefel (canonical metric): g - X sym(X^T g).
    """
    if g.shape != x.value.shape:
        raise ValueError(f"shape mismatch: point {x.value.shape}, gradient {g.shape}")
    if x.kind == "sphere":
        return g - np.dot(x.value, g) * x.value
    xtg = x.value.T @ g
    return g - x.value @ ((xtg + xtg.T) / 2.0)


def retract(x: ManifoldPoint, xi: np.ndarray) -> ManifoldPoint:
    """First-order retraction: normalized step (sphere) or QR (Stiefel)."""
    if x.kind == "sphere":
        v = x.value + xi
        n = np.linalg.norm(v)
        if n < 1e-300:
            raise RetractionError("zero vector after sphere step")
        return ManifoldPoint("sphere", v / n)
    q, r = np.linalg.qr(x.value + xi)
    d = np.diag(r)
    if np.abs(d).min() < 1e-14:
        raise RetractionError("rank-deficient Stiefel retraction target")
    s = np.sign(d)
    return ManifoldPoint("stiefel", q * s)


def transport(x_new: ManifoldPoint, xi: np.ndarray) -> np.ndarray:
    """Vector transport by projection into the new tangent space."""
    return tangent_project(x_new, xi)


@dataclass
class MinimizeConfig:
    step: float = 0.5
    momentum: float = 0.0
    max_iters: int = 500
    grad_tol: float = 1e-6
    grad_mode: str = "fd"  # "fd" (central differences) | "analytic"
    fd_rel_step: float = 1e-6
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 30
    stall_rel: float = 1e-12
    stall_iters: int = 50
    check_manifold: bool = False
    record_trace: bool = True


@dataclass
class MinimizeResult:
    points: list
    cost: float
    trace: list = field(default_factory=list)
    grad_norm: float = np.inf
    iterations: int = 0
    converged: bool = False
    stalled: bool = False


def _fd_gradients(cost, values, active, rel_step):
    grads = [None] * len(values)
    base = [v.copy() for v in values]
    for i in active:
        g = np.zeros_like(base[i])
        flat = base[i].reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            h = rel_step * max(1.0, abs(flat[j]))
            orig = flat[j]
            flat[j] = orig + h
            fp = cost(*base)
            flat[j] = orig - h
            fm = cost(*base)
            flat[j] = orig
            gflat[j] = (fp - fm) / (2.0 * h)
        grads[i] = g
    return grads


def minimize(
    cost: Callable[..., float],
    x0: Sequence[ManifoldPoint],
    config: MinimizeConfig = MinimizeConfig(),
    grad: Optional[Callable[..., Sequence[np.ndarray]]] = None,
    frozen: Sequence[int] = (),
) -> MinimizeResult:
    """Projected gradient descent with momentum over a tuple of manifold points.

    ``cost`` receives the raw ndarray values of all points (frozen ones
    included). Only non-frozen points are updated; pass ``frozen`` to realize
    the single-tensor optimization rounds. Deterministic given (x0, config).
    """
    points = [p.copy() for p in x0]
    active = [i for i in range(len(points)) if i not in set(frozen)]
    if not active:
        raise ValueError("all points frozen")
    if config.grad_mode == "analytic" and grad is None:
        raise ValueError("analytic mode requires a gradient callable")

    f = float(cost(*[p.value for p in points]))
    if not np.isfinite(f):
        raise ValueError("cost not finite at the initial point")
    result = MinimizeResult(points=points, cost=f)
    if config.record_trace:
        result.trace.append(f)

    velocity = [np.zeros_like(points[i].value) for i in range(len(points))]
    t_prev = config.step
    stall_count = 0

    for it in range(config.max_iters):
        values = [p.value for p in points]
        if config.grad_mode == "analytic":
            ambient = list(grad(*values))
        else:
            ambient = _fd_gradients(cost, values, active, config.fd_rel_step)
        rgrad = {i: tangent_project(points[i], ambient[i]) for i in active}
        gnorm = float(np.sqrt(sum(np.sum(rgrad[i] ** 2) for i in active)))
        result.grad_norm = gnorm
        result.iterations = it
        if gnorm < config.grad_tol:
            result.converged = True
            break

        # search direction: momentum-transported previous step minus gradient
        direction = {}
        dg = 0.0
        for i in active:
            d = -rgrad[i]
            if config.momentum:
                d = d + config.momentum * transport(points[i], velocity[i])
            direction[i] = d
            dg += float(np.sum(rgrad[i] * d))
        if dg >= 0.0:  # momentum turned uphill; fall back to steepest descent
            direction = {i: -rgrad[i] for i in active}
            dg = -gnorm * gnorm

        t = min(config.step, 2.0 * t_prev) if t_prev > 0 else config.step
        accepted = False
        for _ in range(config.max_backtracks + 1):
            trial = [p for p in points]
            ok = True
            for i in active:
                try:
                    trial[i] = retract(points[i], t * direction[i])
                except RetractionError:
                    ok = False
                    break
            if ok:
                f_try = float(cost(*[p.value for p in trial]))
                if np.isfinite(f_try) and f_try <= f + config.armijo_c * t * dg:
                    accepted = True
                    break
            t *= config.backtrack
        if not accepted:
            result.stalled = True
            break

        if config.check_manifold:
            for i in active:
                trial[i].check()
        for i in active:
            velocity[i] = t * direction[i]
        rel = (f - f_try) / max(abs(f), 1e-300)
        stall_count = stall_count + 1 if rel < config.stall_rel else 0
        points = trial
        f = f_try
        t_prev = t
        result.points = points
        result.cost = f
        if config.record_trace:
            result.trace.append(f)
        if stall_count >= config.stall_iters:
            result.stalled = True
            break

    result.points = points
    result.cost = f
    return result
