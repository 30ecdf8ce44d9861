"""DMD with control: truncated-SVD regression, projected reduced model, prediction."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (IllConditionedEigenbasisError, InvalidArgumentError,
                     NumericalFailureError, RankDeficientError)
from .snapshots import InputSequence, SnapshotSet, read_matrix_csv, write_matrix_csv

#: Relative factor of the rank tolerance ``max(rows, cols) * sigma_1 * RANK_RTOL``.
RANK_RTOL = 1e-12


def _frozen(a, dtype=float):
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TruncatedSvdFactors:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    order: int

    def __post_init__(self):
        for name in ("U", "S", "V"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    def projector(self) -> np.ndarray:
        return self.U @ self.U.T

    def approximation(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


@dataclass(frozen=True)
class DmdcModel:
    """Reduced operators of order ``r`` together with the basis ``U_r``.

    ``svd_omega`` keeps the first truncation (its left factor is split at row
    ``n`` into the state and input blocks); it is ``None`` for models loaded
    from disk.
    """

    A_tilde: np.ndarray
    B_tilde: np.ndarray
    U_r: np.ndarray
    s: int
    r: int
    m: int
    W: np.ndarray
    Lambda: np.ndarray
    svd_omega: Optional[TruncatedSvdFactors] = None

    def __post_init__(self):
        for name in ("A_tilde", "B_tilde", "U_r"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "W", _frozen(self.W, complex))
        object.__setattr__(self, "Lambda", _frozen(self.Lambda, complex))

    @property
    def n(self) -> int:
        return self.U_r.shape[0]

    @property
    def q(self) -> int:
        return self.B_tilde.shape[1]

    def reduce(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise InvalidArgumentError(f"state has dimension {x.shape[0]}, model expects {self.n}")
        return self.U_r.T @ x


@dataclass(frozen=True)
class ReducedTrajectory:
    states: np.ndarray
    start_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen(self.states))

    @property
    def K(self) -> int:
        return self.states.shape[1] - 1


def rank_tolerance(M: np.ndarray, sigma_max: float, rtol: float = RANK_RTOL) -> float:
    return max(M.shape) * sigma_max * rtol


def truncated_svd(M, order: int, rank_rtol: float = RANK_RTOL) -> TruncatedSvdFactors:
    """Rank-``order`` SVD of ``M`` with a deterministic sign convention.

    Each left singular vector is flipped so that its largest-magnitude entry is
    non-negative. Raises :class:`RankDeficientError` when the smallest retained
    singular value is below the rank tolerance.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InvalidArgumentError(f"expected a matrix, got shape {M.shape}")
    if not 1 <= order <= min(M.shape):
        raise InvalidArgumentError(f"order must lie in [1, {min(M.shape)}], got {order}")
    if not np.all(np.isfinite(M)):
        raise NumericalFailureError("matrix has non-finite entries")
    try:
        U, S, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"SVD did not converge: {exc}") from exc
    tol = rank_tolerance(M, S[0], rank_rtol)
    if not (S[order - 1] > 0 and S[order - 1] >= tol):
        admissible = int(np.sum((S >= tol) & (S > 0)))
        raise RankDeficientError(
            f"singular value {order} is {S[order - 1]:.3e}, below the rank tolerance {tol:.3e}; "
            f"largest admissible order is {admissible}", max_order=admissible)
    U = U[:, :order]
    V = Vt[:order].T
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[pivot, np.arange(order)] < 0, -1.0, 1.0)
    return TruncatedSvdFactors(U * signs, S[:order], V * signs, order)


def suggest_order(M, energy: float = 0.9999) -> int:
    """Smallest order whose squared singular values hold ``energy`` of the total."""
    if not 0 < energy <= 1:
        raise InvalidArgumentError(f"energy must lie in (0, 1], got {energy}")
    S = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    cum = np.cumsum(S ** 2)
    if cum[-1] == 0:
        raise RankDeficientError("matrix is identically zero", max_order=0)
    return int(np.searchsorted(cum / cum[-1], energy - 1e-15) + 1)


def _check_orders(data: SnapshotSet, s: int, r: int) -> None:
    limit = min(data.n + data.q, data.m - 1)
    if not (1 <= r <= s <= limit):
        raise InvalidArgumentError(f"orders must satisfy 1 <= r <= s <= {limit}, got s={s}, r={r}")
    if r > data.n:
        raise InvalidArgumentError(f"r={r} exceeds the state dimension {data.n}")


def estimate_full_order(data: SnapshotSet, s: int, rank_rtol: float = RANK_RTOL,
                        svd_omega: Optional[TruncatedSvdFactors] = None):
    """Full-order estimates ``(A_hat, B_hat)`` from the rank-``s`` pseudoinverse of Omega.

    Costs O(n^2) memory; meant for diagnostics and bound constants.
    """
    if not 1 <= s <= min(data.n + data.q, data.m - 1):
        raise InvalidArgumentError(f"s must lie in [1, {min(data.n + data.q, data.m - 1)}], got {s}")
    f = svd_omega if svd_omega is not None else truncated_svd(data.omega, s, rank_rtol)
    T = (data.Y @ f.V) / f.S
    n = data.n
    return T @ f.U[:n].T, T @ f.U[n:].T


def fit_dmdc(data: SnapshotSet, s: int, r: int, rank_rtol: float = RANK_RTOL) -> DmdcModel:
    """Fit the reduced model; never forms an ``n x n`` matrix."""
    _check_orders(data, s, r)
    f = truncated_svd(data.omega, s, rank_rtol)
    basis = truncated_svd(data.Y, r, rank_rtol).U
    n = data.n
    T = (data.Y @ f.V) / f.S                  # n x s
    left = basis.T @ T                        # r x s
    A_tilde = left @ (f.U[:n].T @ basis)
    B_tilde = left @ f.U[n:].T
    if not (np.all(np.isfinite(A_tilde)) and np.all(np.isfinite(B_tilde))):
        raise NumericalFailureError("reduced operators are not finite")
    Lambda, W = np.linalg.eig(A_tilde)
    return DmdcModel(A_tilde, B_tilde, basis, s, r, data.m, W, Lambda, f)


def predict(model: DmdcModel, x_start, inputs: InputSequence, K: int, start_index: int = 0) -> ReducedTrajectory:
    """Iterate the reduced model ``K`` steps from ``U_r^T x_start``."""
    if K < 0:
        raise InvalidArgumentError(f"K must be non-negative, got {K}")
    if inputs.q != model.q:
        raise InvalidArgumentError(f"inputs have {inputs.q} channels, model expects {model.q}")
    if K > 0 and inputs.N < K:
        raise InvalidArgumentError(f"inputs cover {inputs.N} steps, need {K}")
    x = np.asarray(x_start, dtype=float).ravel()
    states = np.empty((model.r, K + 1))
    states[:, 0] = model.reduce(x)
    u = inputs.values
    for k in range(K):
        nxt = model.A_tilde @ states[:, k] + model.B_tilde @ u[:, k]
        if not np.all(np.isfinite(nxt)):
            raise NumericalFailureError(f"reduced state became non-finite at step {k + 1}", step=start_index + k + 1)
        states[:, k + 1] = nxt
    return ReducedTrajectory(states, start_index)


def reconstruct(model: DmdcModel, traj: ReducedTrajectory) -> np.ndarray:
    if traj.states.shape[0] != model.r:
        raise InvalidArgumentError(f"trajectory has {traj.states.shape[0]} rows, model order is {model.r}")
    return model.U_r @ traj.states


def dmd_modes(model: DmdcModel, cond_limit: float = 1e12):
    """Eigenvalues and projected modes ``Phi = U_r W``."""
    cond = np.linalg.cond(model.W)
    if not np.isfinite(cond) or cond > cond_limit:
        raise IllConditionedEigenbasisError(
            f"eigenvector matrix condition number {cond:.3e} exceeds {cond_limit:.1e}; "
            "reduced operator is (nearly) defective")
    return model.Lambda.copy(), model.U_r @ model.W


def save_model(model: DmdcModel, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(d / "A_tilde.csv", model.A_tilde)
    write_matrix_csv(d / "B_tilde.csv", model.B_tilde)
    write_matrix_csv(d / "U_r.csv", model.U_r)
    write_matrix_csv(d / "lambda_re.csv", model.Lambda.real)
    write_matrix_csv(d / "lambda_im.csv", model.Lambda.imag)
    write_matrix_csv(d / "meta.csv", [model.n, model.q, model.s, model.r, model.m])
    return d


def load_model(directory) -> DmdcModel:
    d = Path(directory)
    A_tilde = read_matrix_csv(d / "A_tilde.csv")
    B_tilde = read_matrix_csv(d / "B_tilde.csv")
    U_r = read_matrix_csv(d / "U_r.csv")
    n, q, s, r, m = (int(v) for v in read_matrix_csv(d / "meta.csv").ravel())
    if U_r.shape != (n, r) or A_tilde.shape != (r, r) or B_tilde.shape != (r, q):
        raise InvalidArgumentError(f"model files in {d} disagree with meta.csv")
    Lambda, W = np.linalg.eig(A_tilde)
    return DmdcModel(A_tilde, B_tilde, U_r, s, r, m, W, Lambda)
