"""Training-data generation: ground states -> single-shot windows -> files.

One JSON file per (field value, basis) holding the outcome strings, plus a
split manifest realizing a deterministic shuffled 80/20 train/test split.
Everything is reproducible byte-for-byte from the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .dmrg import ground_state_search
from .mps import ShotRecord, build_tfim_mpo
from .paulis import outcome_amplitudes, rng_stream
from .sampling import PreparedWindow

BASES = ("z", "x")


def records_to_arrays(records: Sequence[ShotRecord]) -> Tuple[np.ndarray, np.ndarray]:
    """Stack shot records into amplitude arrays (M, L, 2) and labels (M,)."""
    X = np.stack([outcome_amplitudes(r.basis, r.outcomes) for r in records])
    y = np.array([r.label for r in records], dtype=int)
    return X, y


def flatten_features(X: np.ndarray) -> np.ndarray:
    """(M, L, 2) amplitudes -> (M, 2L) classical vectors for the baseline."""
    return X.reshape(X.shape[0], -1)


def sample_ground_state_shots(
    h: float,
    n_shots: int,
    basis: str,
    F: int = 32,
    L: int = 6,
    chi_max: int = 40,
    eps: float = 1e-6,
    h_z2: float = 0.0,
    seed: int = 0,
    label: int | None = None,
) -> Tuple[List[ShotRecord], dict]:
    """Shots from the centered L-site window of the chain ground state."""
    result = ground_state_search(build_tfim_mpo(F, h, h_z2), chi_max=chi_max, eps=eps, seed=seed)
    start = (F - L) // 2
    window = PreparedWindow(result.mps, start, basis, L)
    records = []
    for shot in range(n_shots):
        outcomes = window.sample(rng_stream(seed, hash_basis(basis), shot))
        records.append(ShotRecord(basis=basis, outcomes=outcomes, label=label, h_source=h))
    info = {
        "energy": result.energy,
        "converged": result.converged,
        "sweeps": result.sweeps,
        "max_bond": max(result.mps.bond_dims, default=1),
    }
    return records, info


def hash_basis(basis: str) -> int:
    return {"z": 0x30, "x": 0x31}[basis]


def shots_filename(h: float, basis: str) -> str:
    return f"shots_h{h:g}_{basis}.json"


def write_shot_file(path: Path, records: List[ShotRecord], h: float, basis: str,
                    L: int, seed: int, label: int) -> None:
    payload = {
        "L": L,
        "h": h,
        "basis": basis,
        "seed": seed,
        "shots": [r.outcomes.tolist() for r in records],
        "label": label,
    }
    path.write_text(json.dumps(payload))


def read_shot_file(path: Path) -> List[ShotRecord]:
    payload = json.loads(Path(path).read_text())
    return [
        ShotRecord(basis=payload["basis"], outcomes=np.array(s, dtype=int),
                   label=payload["label"], h_source=payload["h"])
        for s in payload["shots"]
    ]


@dataclass
class DatasetSplit:
    train: List[ShotRecord]
    test: List[ShotRecord]

    def arrays(self):
        Xtr, ytr = records_to_arrays(self.train)
        Xte, yte = records_to_arrays(self.test)
        return Xtr, ytr, Xte, yte


def gen_dataset(
    out_dir: str | Path,
    h_values: Sequence[float] = (0.1, 10.0),
    labels: Sequence[int] = (0, 1),
    shots_per_basis: int = 1000,
    F: int = 32,
    L: int = 6,
    chi_max: int = 40,
    eps: float = 1e-6,
    h_z2: float = 10.0,
    seed: int = 0,
    train_fraction: float = 0.8,
) -> dict:
    """Generate labeled shot files for each (h, basis) plus a split manifest.

    Half the shots per h are taken in the uniform z basis and half in the
    uniform x basis. The split shuffles all shots with a seeded permutation;
    train and test are disjoint and exhaustive. A DMRG convergence failure
    only warns (flag in the manifest), it does not abort.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    dmrg_info: Dict[str, dict] = {}
    order = []
    for hi, (h, label) in enumerate(zip(h_values, labels)):
        for basis in BASES:
            records, info = sample_ground_state_shots(
                h, shots_per_basis, basis, F=F, L=L, chi_max=chi_max,
                eps=eps, h_z2=h_z2, seed=seed + 1000 * hi, label=label,
            )
            name = shots_filename(h, basis)
            write_shot_file(out / name, records, h, basis, L, seed + 1000 * hi, label)
            files.append(name)
            dmrg_info[name] = info
            order.extend((name, k) for k in range(len(records)))

    perm = rng_stream(seed, 0x57).permutation(len(order))
    n_train = int(round(train_fraction * len(order)))
    train_idx = sorted(int(i) for i in perm[:n_train])
    test_idx = sorted(int(i) for i in perm[n_train:])
    manifest = {
        "seed": seed,
        "L": L,
        "F": F,
        "chi_max": chi_max,
        "eps": eps,
        "h_z2": h_z2,
        "h_values": list(h_values),
        "labels": list(labels),
        "files": files,
        "shots_per_basis": shots_per_basis,
        "train": [[order[i][0], order[i][1]] for i in train_idx],
        "test": [[order[i][0], order[i][1]] for i in test_idx],
        "dmrg": dmrg_info,
    }
    (out / "split_manifest.json").write_text(json.dumps(manifest))
    return manifest


def load_dataset(out_dir: str | Path) -> DatasetSplit:
    out = Path(out_dir)
    manifest = json.loads((out / "split_manifest.json").read_text())
    cache = {name: read_shot_file(out / name) for name in manifest["files"]}
    train = [cache[name][k] for name, k in manifest["train"]]
    test = [cache[name][k] for name, k in manifest["test"]]
    return DatasetSplit(train=train, test=test)
