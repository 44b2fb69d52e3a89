"""Sparse sensor placement from pressure snapshots: SVD modes plus QR column pivoting."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dg.reference import ConfigurationError


class DegenerateSelectionError(ValueError):
    pass


class ConditioningError(ValueError):
    pass


class SnapshotParseError(ValueError):
    pass


@dataclass(frozen=True)
class SnapshotMatrix:
    X: np.ndarray  # (n_locations, n_snapshots)
    coords: np.ndarray | None = None  # (n_locations, 2)
    times: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ConfigurationError("snapshot matrix must be 2-D and non-empty")
        if not np.all(np.isfinite(X)):
            raise ConfigurationError("snapshot matrix has non-finite entries")
        object.__setattr__(self, "X", X)

    def window(self, t0: float, t1: float) -> "SnapshotMatrix":
        if self.times is None:
            raise ConfigurationError("snapshots carry no time stamps")
        m = (self.times >= t0) & (self.times <= t1)
        return SnapshotMatrix(self.X[:, m], self.coords, self.times[m])


@dataclass(frozen=True)
class SensorSelection:
    r: int
    indices: np.ndarray
    modes: np.ndarray
    reconstruction_rms: float = float("nan")


def svd_modes(X, r: int, center: bool = False):
    """First r left singular vectors of X (columns are snapshots)."""
    X = np.asarray(X, dtype=float)
    if not 1 <= r <= min(X.shape):
        raise ConfigurationError(f"mode count {r} outside [1, {min(X.shape)}]")
    if center:
        X = X - X.mean(axis=1, keepdims=True)
    U, _, _ = np.linalg.svd(X, full_matrices=False)
    return U[:, :r]


def qr_pivot_select(Psi, rank_tol: float = 1e-10):
    """Pivoted QR of Psi^T; the first r pivots are the sensor rows."""
    Psi = np.asarray(Psi, dtype=float)
    n, r = Psi.shape
    if r > n:
        raise DegenerateSelectionError(f"{r} modes but only {n} locations")
    # LAPACK picks the first maximal column on ties, so lowest index wins
    _, R, piv = scipy.linalg.qr(Psi.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))[:r]
    scale = diag[0] if len(diag) and diag[0] > 0 else 1.0
    deficient = int(np.sum(diag <= rank_tol * scale))
    if deficient:
        raise DegenerateSelectionError(
            f"mode matrix is rank deficient by {deficient} (pivot magnitudes {diag.tolist()})")
    return piv[:r].copy()


def reconstruction_error(X, indices, Psi, cond_limit: float = 1e12) -> float:
    """Relative Frobenius error after fitting mode coefficients from the selected rows."""
    X = np.asarray(X, dtype=float)
    A = np.asarray(Psi)[np.asarray(indices)]
    c = np.linalg.cond(A)
    if not np.isfinite(c) or c > cond_limit:
        raise ConditioningError(f"selected-row system is singular (condition number {c:.3e})")
    coef, *_ = np.linalg.lstsq(A, X[np.asarray(indices)], rcond=None)
    Xh = Psi @ coef
    nx = np.linalg.norm(X)
    return float(np.linalg.norm(X - Xh) / nx) if nx > 0 else 0.0


def select_sensors(snap: SnapshotMatrix, r: int, center: bool = False) -> SensorSelection:
    Psi = svd_modes(snap.X, r, center)
    idx = qr_pivot_select(Psi)
    X = snap.X - snap.X.mean(axis=1, keepdims=True) if center else snap.X
    return SensorSelection(r, idx, Psi, reconstruction_error(X, idx, Psi))


def greedy_volume_select(Psi):
    """Brute-force oracle: greedily add the row maximising the selected-row volume."""
    Psi = np.asarray(Psi, dtype=float)
    n, r = Psi.shape
    chosen = []
    for k in range(r):
        best, best_v = None, -1.0
        for i in range(n):
            if i in chosen:
                continue
            A = Psi[chosen + [i]]
            v = np.sqrt(max(np.linalg.det(A @ A.T), 0.0))
            if v > best_v * (1 + 1e-12):
                best, best_v = i, v
        chosen.append(best)
    return np.array(chosen)


# I/O ----------------------------------------------------------------------------------

def read_snapshot_csv(path, coords_path=None) -> SnapshotMatrix:
    """Rows are locations; an optional header row holds time stamps."""
    rows, times = [], None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                if lineno == 1 and times is None and not rows:
                    try:
                        times = np.array([float(c) for c in row[1:]]) if row[0].strip().lower() in (
                            "t", "time", "location", "loc") else None
                    except ValueError:
                        raise SnapshotParseError(f"{path}:{lineno}: malformed header") from None
                    if times is None:
                        raise SnapshotParseError(f"{path}:{lineno}: non-numeric entry") from None
                    continue
                raise SnapshotParseError(f"{path}:{lineno}: non-numeric entry") from None
            if times is not None:
                vals = vals[1:]
            if rows and len(vals) != len(rows[0]):
                raise SnapshotParseError(f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise SnapshotParseError(f"{path}: no data rows")
    coords = read_coords_csv(coords_path) if coords_path else None
    if coords is not None and len(coords) != len(rows):
        raise SnapshotParseError(f"{coords_path}: {len(coords)} coordinates for {len(rows)} locations")
    try:
        return SnapshotMatrix(np.array(rows), coords, times)
    except ConfigurationError as err:
        raise SnapshotParseError(f"{path}: {err}") from None


def read_coords_csv(path):
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                out.append([float(row[0]), float(row[1])])
            except (ValueError, IndexError):
                if lineno == 1:
                    continue  # header
                raise SnapshotParseError(f"{path}:{lineno}: malformed coordinate row") from None
    return np.array(out)


def write_snapshot_csv(path, snap: SnapshotMatrix):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if snap.times is not None:
            w.writerow(["location"] + [repr(float(t)) for t in snap.times])
        for i, row in enumerate(snap.X):
            w.writerow(([i] if snap.times is not None else []) + [repr(float(v)) for v in row])


def selection_json(sel: SensorSelection, coords=None) -> str:
    doc = {"r": int(sel.r), "indices": [int(i) for i in sel.indices],
           "reconstruction_error": float(sel.reconstruction_rms)}
    if coords is not None:
        doc["coordinates"] = [[float(a) for a in coords[i]] for i in sel.indices]
    return json.dumps(doc, indent=2)
