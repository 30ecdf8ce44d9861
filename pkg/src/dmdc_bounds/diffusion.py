"""2D heat equation on a rectangle: backward Euler in time, 5-point stencil in space.

Dirichlet values are held on the outer edges. Heat sources sit on the four
edges of a centred inner observation window, and the inner-window state is
the state of the truth model.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bounds import TruthModel
from .errors import InvalidArgumentError, NumericalFailureError, RankDeficientError
from .snapshots import InputSequence, SnapshotSet, collect_bursts, collect_snapshots, generate_prbs, write_matrix_csv


@dataclass(frozen=True)
class DiffusionConfig:
    L_a: float = 20 * 40.0 / 70.0
    L_b: float = 20 * 40.0 / 70.0
    N_a: int = 21
    N_b: int = 21
    alpha: float = 0.45
    dt: float = 1.0
    inner_shape: tuple = (15, 15)
    actuator_span: int = 5
    num_sources: int = 4
    xi_a: float = 0.0
    xi_b: float = 0.0
    initial_value: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "inner_shape", tuple(int(v) for v in self.inner_shape))
        if self.N_a < 3 or self.N_b < 3:
            raise InvalidArgumentError("grids need at least 3 points per axis")
        if not (self.L_a > 0 and self.L_b > 0 and self.alpha > 0 and self.dt > 0):
            raise InvalidArgumentError("lengths, alpha and dt must be positive")
        ia, ib = self.inner_shape
        if ia < 1 or ib < 1 or ia > self.N_a - 2 or ib > self.N_b - 2:
            raise InvalidArgumentError(
                f"inner window {self.inner_shape} must be non-empty and fit inside the "
                f"{self.N_a - 2}x{self.N_b - 2} interior")
        if not 1 <= self.num_sources <= 4:
            raise InvalidArgumentError("num_sources must be between 1 and 4")
        if not 1 <= self.actuator_span <= min(ia, ib):
            raise InvalidArgumentError(
                f"actuator_span {self.actuator_span} must lie in [1, {min(ia, ib)}] (inner edge length)")

    @classmethod
    def desk(cls) -> "DiffusionConfig":
        return cls()

    @classmethod
    def paper(cls) -> "DiffusionConfig":
        return cls(L_a=40.0, L_b=40.0, N_a=71, N_b=71, inner_shape=(50, 50), actuator_span=21)

    @property
    def spacing(self):
        return self.L_a / (self.N_a - 1), self.L_b / (self.N_b - 1)

    @property
    def inner_offset(self):
        ia, ib = self.inner_shape
        return (self.N_a - ia) // 2, (self.N_b - ib) // 2

    @property
    def n(self) -> int:
        return self.inner_shape[0] * self.inner_shape[1]

    @property
    def q(self) -> int:
        return self.num_sources * self.actuator_span

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inner_shape"] = list(self.inner_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiffusionConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown diffusion config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path) -> DiffusionConfig:
    with open(path) as fh:
        return DiffusionConfig.from_dict(json.load(fh))


def save_config(config: DiffusionConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class FieldState:
    """Temperature on the full grid, stored row-major (axis 0 along ``a``)."""

    values: np.ndarray
    shape: tuple

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size != self.shape[0] * self.shape[1]:
            raise InvalidArgumentError(f"{v.size} values do not fill a {self.shape} grid")
        if not np.all(np.isfinite(v)):
            raise NumericalFailureError("field has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "shape", tuple(self.shape))

    @property
    def grid(self) -> np.ndarray:
        return self.values.reshape(self.shape)


@dataclass(frozen=True, eq=False)
class DiffusionSystem:
    config: DiffusionConfig
    laplacian: sp.csr_matrix          # interior nodes only
    implicit_operator: sp.csc_matrix  # I - alpha dt L
    implicit_factor: object = field(repr=False)
    actuator_map: sp.csr_matrix = field(repr=False)  # full grid x q, 0/1 columns
    interior_index: np.ndarray = field(repr=False)
    inner_index: np.ndarray = field(repr=False)
    boundary_field: np.ndarray = field(repr=False)
    boundary_rhs: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return self.config.N_a, self.config.N_b

    @property
    def n(self) -> int:
        return self.inner_index.size

    @property
    def q(self) -> int:
        return self.actuator_map.shape[1]

    def initial_state(self) -> FieldState:
        v = self.boundary_field.copy()
        v[self.interior_index] = self.config.initial_value
        return FieldState(v, self.shape)

    def field_from_inner(self, x_inner) -> FieldState:
        """Full field with ``x_inner`` on the window, zero elsewhere inside, Dirichlet values outside."""
        v = self.boundary_field.copy()
        v[self.interior_index] = 0.0
        v[self.inner_index] = np.asarray(x_inner, dtype=float).ravel()
        return FieldState(v, self.shape)


def _second_difference(N: int, h: float) -> sp.csr_matrix:
    return sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(N, N), format="csr") / h ** 2


def build_system(config: DiffusionConfig) -> DiffusionSystem:
    Na, Nb = config.N_a, config.N_b
    ha, hb = config.spacing
    ia_n, ib_n = Na - 2, Nb - 2
    lap = (sp.kron(_second_difference(ia_n, ha), sp.identity(ib_n))
           + sp.kron(sp.identity(ia_n), _second_difference(ib_n, hb))).tocsr()
    op = (sp.identity(ia_n * ib_n) - config.alpha * config.dt * lap).tocsc()
    try:
        factor = spla.splu(op)
    except RuntimeError as exc:
        raise NumericalFailureError(f"implicit operator factorization failed: {exc}") from exc

    grid_index = np.arange(Na * Nb).reshape(Na, Nb)
    interior_index = grid_index[1:-1, 1:-1].ravel()
    oa, ob = config.inner_offset
    ia, ib = config.inner_shape
    inner_index = grid_index[oa:oa + ia, ob:ob + ib].ravel()

    span = config.actuator_span
    ca, cb = (ia - span) // 2, (ib - span) // 2
    edges = [
        [(oa, ob + cb + j) for j in range(span)],                 # a-min edge of the window
        [(oa + ca + i, ob + ib - 1) for i in range(span)],        # b-max edge
        [(oa + ia - 1, ob + cb + j) for j in range(span)],        # a-max edge
        [(oa + ca + i, ob) for i in range(span)],                 # b-min edge
    ][:config.num_sources]
    points = [grid_index[p] for edge in edges for p in edge]
    actuator_map = sp.csr_matrix((np.ones(len(points)), (points, np.arange(len(points)))),
                                 shape=(Na * Nb, len(points)))

    bgrid = np.zeros((Na, Nb))
    bgrid[[0, -1], :] = config.xi_a
    bgrid[1:-1, [0, -1]] = config.xi_b
    # contribution of the Dirichlet neighbours to each interior node
    nb = np.zeros((ia_n, ib_n))
    nb[0, :] += bgrid[0, 1:-1] / ha ** 2
    nb[-1, :] += bgrid[-1, 1:-1] / ha ** 2
    nb[:, 0] += bgrid[1:-1, 0] / hb ** 2
    nb[:, -1] += bgrid[1:-1, -1] / hb ** 2
    boundary_rhs = config.alpha * config.dt * nb.ravel()

    bfield = bgrid.ravel()
    for a in (interior_index, inner_index, bfield, boundary_rhs):
        a.setflags(write=False)
    return DiffusionSystem(config, lap, op, factor, actuator_map, interior_index, inner_index,
                           bfield, boundary_rhs)


def step(system: DiffusionSystem, state: FieldState, u, check_residual: bool = True) -> FieldState:
    """One backward Euler step: ``(I - alpha dt L) x' = x + dt F u + boundary terms``."""
    u = np.asarray(u, dtype=float).ravel()
    if u.size != system.q:
        raise InvalidArgumentError(f"input has {u.size} entries, system has {system.q} actuators")
    if state.shape != system.shape:
        raise InvalidArgumentError(f"field shape {state.shape} does not match grid {system.shape}")
    dt = system.config.dt
    source = system.actuator_map @ u
    rhs = state.values[system.interior_index] + dt * source[system.interior_index] + system.boundary_rhs
    x = system.implicit_factor.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise NumericalFailureError("implicit solve produced non-finite values")
    if check_residual:
        res = np.linalg.norm(system.implicit_operator @ x - rhs)
        if res > 1e-10 * max(np.linalg.norm(rhs), np.finfo(float).tiny):
            raise NumericalFailureError(f"implicit solve residual {res:.3e} too large")
    out = system.boundary_field.copy()
    out[system.interior_index] = x
    return FieldState(out, system.shape)


def simulate(system: DiffusionSystem, state: FieldState, inputs: InputSequence, K: Optional[int] = None):
    """Full-grid trajectory; returns a ``(K+1) x N_a*N_b`` array of field values."""
    K = inputs.N if K is None else K
    out = np.empty((K + 1, state.values.size))
    out[0] = state.values
    for k in range(K):
        state = step(system, state, inputs.values[:, k])
        out[k + 1] = state.values
    return out


def inner_oracle(system: DiffusionSystem):
    """State map on the inner window with the rest of the interior clamped to zero each step.

    With zero Dirichlet data this is exactly ``x -> A x + B u`` for the
    matrices returned by :func:`extract_truth`.
    """
    def oracle(x, u):
        return step(system, system.field_from_inner(x), u, check_residual=False).values[system.inner_index]
    return oracle


def _interior_selection(system: DiffusionSystem) -> np.ndarray:
    pos = np.searchsorted(system.interior_index, system.inner_index)
    S = np.zeros((system.interior_index.size, system.n))
    S[pos, np.arange(system.n)] = 1.0
    return S


def extract_truth(system: DiffusionSystem) -> TruthModel:
    """Linear part of the closed inner-window step, via the cached factorization."""
    S = _interior_selection(system)
    rows = np.searchsorted(system.interior_index, system.inner_index)
    A = system.implicit_factor.solve(S)[rows]
    F = system.actuator_map[system.interior_index].toarray()
    B = system.config.dt * system.implicit_factor.solve(F)[rows]
    return TruthModel(A, B)


def identify_truth(data: SnapshotSet, rank_rtol: float = 1e-12) -> TruthModel:
    """Full-rank least squares ``[A B] = Y Omega^+``."""
    n, q = data.n, data.q
    if data.m - 1 < n + q:
        raise RankDeficientError(
            f"{data.m - 1} snapshot columns cannot determine {n + q} unknowns per row",
            max_order=data.m - 1)
    omega = data.omega
    U, S, Vt = np.linalg.svd(omega, full_matrices=False)
    tol = max(omega.shape) * S[0] * rank_rtol
    rank = int(np.sum(S > tol))
    if rank < n + q:
        raise RankDeficientError(
            f"Omega has numerical rank {rank} < n + q = {n + q} "
            f"(condition number {S[0] / max(S[-1], np.finfo(float).tiny):.2e}); input is not persistently exciting",
            max_order=rank)
    theta = ((data.Y @ Vt.T) / S) @ U.T
    return TruthModel(theta[:, :n], theta[:, n:])


def identification_data(system: DiffusionSystem, n_columns: int, amplitude: float = 1.0, hold: int = 1,
                        seed: int = 0, burst_len: Optional[int] = 2) -> SnapshotSet:
    """PRBS-driven snapshots of the closed inner map.

    With ``burst_len=None`` this is one trajectory from the zero state. Otherwise
    the columns come from bursts of ``burst_len`` steps, each started from a
    standard normal state drawn from the same seeded generator.
    """
    if n_columns < 1:
        raise InvalidArgumentError("n_columns must be >= 1")
    oracle = inner_oracle(system)
    inputs = generate_prbs(system.q, n_columns, amplitude, hold, seed, system.config.dt)
    if burst_len is None:
        return collect_snapshots(oracle, np.zeros(system.n), inputs, n_columns + 1)
    n_bursts = -(-n_columns // burst_len)
    rng = np.random.default_rng([seed, 1])
    x0s = rng.standard_normal((system.n, n_bursts))
    inputs = generate_prbs(system.q, n_bursts * burst_len, amplitude, hold, seed, system.config.dt)
    data = collect_bursts(oracle, x0s, inputs, burst_len)
    return SnapshotSet(data.X[:, :n_columns], data.Y[:, :n_columns], data.U[:, :n_columns])


def write_field_csv(path, state: FieldState) -> None:
    write_matrix_csv(path, state.grid)


def inner_grid(system: DiffusionSystem, x_inner) -> np.ndarray:
    return np.asarray(x_inner, dtype=float).reshape(system.config.inner_shape)


def save_truth(truth: TruthModel, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(d / "A.csv", truth.A)
    write_matrix_csv(d / "B.csv", truth.B)
    return d
