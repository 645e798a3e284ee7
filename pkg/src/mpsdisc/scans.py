"""Phase scans across the transverse field and the transition-point fit."""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .dataset import records_to_arrays, sample_ground_state_shots
from .imps import IMPSModel
from .runtime import CompiledModel, infer_entangled, sample_label, test_state_from_imps
from .stats import ShotTally, wilson_interval

WILSON_Z = 1.645  # 90% confidence
PM_CLASS = 1

CSV_COLUMNS = ["h", "mode", "shots", "fraction_pm", "wilson_half_width", "chi", "chi_i"]


@dataclass
class ScanPoint:
    h: float
    n_shots: int
    fraction_pm: float
    wilson_half_width: float
    mode: str  # "product" | "entangled"
    chi: int = 0
    chi_i: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction_pm <= 1.0:
            raise ValueError("fraction_pm must lie in [0, 1]")


def _wilson_half(n_pm: int, n: int) -> float:
    _, half = wilson_interval(ShotTally(n0=n_pm, n1=n - n_pm), WILSON_Z)
    return half


def product_scan(
    predict: Callable[[np.ndarray], np.ndarray],
    h_grid: Sequence[float],
    shots_per_basis: int = 500,
    F: int = 32,
    L: int = 6,
    chi_max: int = 40,
    eps: float = 1e-6,
    h_z2: float = 10.0,
    seed: int = 0,
    chi: int = 0,
) -> List[ScanPoint]:
    """Fraction of fresh single shots classified PM at each field value.

    ``predict`` maps amplitude arrays (M, L, 2) to label arrays. Half of the
    shots per grid point are z-basis, half x-basis, as in training.
    """
    points = []
    for hi, h in enumerate(h_grid):
        records = []
        for basis in ("z", "x"):
            recs, _ = sample_ground_state_shots(
                h, shots_per_basis, basis, F=F, L=L, chi_max=chi_max,
                eps=eps, h_z2=h_z2, seed=seed + 7919 * hi, label=0,
            )
            records.extend(recs)
        X, _ = records_to_arrays(records)
        labels = np.asarray(predict(X), dtype=int)
        n = len(labels)
        n_pm = int(np.sum(labels == PM_CLASS))
        points.append(ScanPoint(
            h=float(h), n_shots=n, fraction_pm=n_pm / n,
            wilson_half_width=_wilson_half(n_pm, n), mode="product", chi=chi,
        ))
    return points


def entangled_scan(
    model: CompiledModel,
    imps_models: Dict[float, IMPSModel],
    shots: int = 100,
    seed: int = 0,
    nb: Optional[int] = None,
    nb_prime: Optional[int] = None,
) -> List[ScanPoint]:
    """Single-circuit PM probability against entangled iMPS inputs.

    Each grid point simulates the joint channel exactly, then draws ``shots``
    labels for the finite-shot fraction and its Wilson half width. Missing
    iMPS entries are skipped with a warning entry in the returned list order.
    """
    points = []
    for hi, h in enumerate(sorted(imps_models)):
        test = test_state_from_imps(imps_models[h])
        dist = infer_entangled(model, test, nb=nb, nb_prime=nb_prime)
        labels = sample_label(dist, shots, seed + 104729 * hi)
        n_pm = int(np.sum(labels == PM_CLASS))
        points.append(ScanPoint(
            h=float(h), n_shots=shots, fraction_pm=n_pm / shots,
            wilson_half_width=_wilson_half(n_pm, shots), mode="entangled",
            chi=model.chi, chi_i=test.chi_i,
        ))
    return points


def exact_pm_probability(model: CompiledModel, imps_model: IMPSModel,
                         nb=None, nb_prime=None) -> float:
    dist = infer_entangled(model, test_state_from_imps(imps_model), nb=nb, nb_prime=nb_prime)
    return float(dist.diag[PM_CLASS])


def write_scan_csv(points: Sequence[ScanPoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for p in points:
            row = asdict(p)
            row["shots"] = row.pop("n_shots")
            writer.writerow({k: row[k] for k in CSV_COLUMNS})


def read_scan_csv(path: str | Path) -> List[ScanPoint]:
    points = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            points.append(ScanPoint(
                h=float(row["h"]), n_shots=int(row["shots"]),
                fraction_pm=float(row["fraction_pm"]),
                wilson_half_width=float(row["wilson_half_width"]),
                mode=row["mode"], chi=int(row["chi"]), chi_i=int(row["chi_i"]),
            ))
    return points


@dataclass
class RegressionResult:
    slope: float
    intercept: float
    h_star: float
    mae: float
    r_squared: float
    points_used: int


def fit_transition(points: Sequence[ScanPoint], window: int = 6) -> RegressionResult:
    """Weighted linear fit of fraction_pm on h near the 50% crossing.

    Selects the ``window`` points whose fraction is closest to 1/2, performs
    least squares weighted by the inverse squared Wilson half widths, and
    solves the fitted line for fraction 1/2. Scaling all weights uniformly
    leaves the fit unchanged.
    """
    if len(points) < 3:
        raise ValueError("need at least three scan points")
    ranked = sorted(points, key=lambda p: (abs(p.fraction_pm - 0.5), p.h))
    sel = sorted(ranked[: max(window, 3)], key=lambda p: p.h)
    h = np.array([p.h for p in sel])
    f = np.array([p.fraction_pm for p in sel])
    hw = np.array([max(p.wilson_half_width, 1e-9) for p in sel])
    if np.ptp(h) < 1e-12:
        raise ValueError("degenerate fit: all selected h values are equal")
    w = 1.0 / hw ** 2
    A = np.stack([h, np.ones_like(h)], axis=1)
    Aw = A * w[:, None]
    coeffs = np.linalg.solve(A.T @ Aw, Aw.T @ f)
    slope, intercept = float(coeffs[0]), float(coeffs[1])
    if abs(slope) < 1e-12:
        raise ValueError("degenerate fit: zero slope")
    pred = A @ coeffs
    resid = f - pred
    mae = float(np.mean(np.abs(resid)))
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((f - f.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RegressionResult(
        slope=slope, intercept=intercept, h_star=(0.5 - intercept) / slope,
        mae=mae, r_squared=r2, points_used=len(sel),
    )
