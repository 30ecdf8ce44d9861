"""Excitation signals, snapshot collection and the CSV matrix format."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import CsvParseError, InvalidArgumentError, NumericalFailureError

StepOracle = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class InputSequence:
    """Input samples, one column per time step (shape ``q x N``)."""

    values: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InvalidArgumentError(f"input values must be a non-empty q x N matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("input values must be finite")
        if not self.dt > 0:
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def q(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def window(self, start: int, length: int) -> "InputSequence":
        if start < 0 or start + length > self.N:
            raise InvalidArgumentError(
                f"window [{start}, {start + length}) outside input sequence of length {self.N}")
        return InputSequence(self.values[:, start:start + length], self.dt)


@dataclass(frozen=True)
class SnapshotSet:
    """Shifted state snapshots ``X``, ``Y`` and the inputs ``U`` that drove them.

    Column ``j`` of ``Y`` is the successor of column ``j`` of ``X`` under input
    column ``j`` of ``U``. ``m`` is the number of samples, i.e. one more than the
    number of columns.
    """

    X: np.ndarray
    Y: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        U = np.asarray(self.U, dtype=float)
        if X.ndim != 2 or X.shape != Y.shape:
            raise InvalidArgumentError(f"X and Y must be matrices of equal shape, got {X.shape} and {Y.shape}")
        if U.ndim != 2 or U.shape[1] != X.shape[1]:
            raise InvalidArgumentError(f"U must have {X.shape[1]} columns, got shape {U.shape}")
        if X.shape[1] < 1:
            raise InvalidArgumentError("a snapshot set needs at least one column")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "Y", _frozen(Y))
        object.__setattr__(self, "U", _frozen(U))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def q(self) -> int:
        return self.U.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1] + 1

    @property
    def omega(self) -> np.ndarray:
        """Stacked regressor ``[X; U]`` of shape ``(n + q) x (m - 1)``."""
        return np.vstack([self.X, self.U])


def generate_prbs(q: int, N: int, amplitude: float = 1.0, hold: int = 1, seed: int = 0,
                  dt: float = 1.0) -> InputSequence:
    """Random binary signal: one fair coin per channel and per block of ``hold`` steps."""
    if q < 1 or N < 1 or hold < 1:
        raise InvalidArgumentError(f"q, N and hold must be >= 1 (got q={q}, N={N}, hold={hold})")
    if not amplitude > 0:
        raise InvalidArgumentError(f"amplitude must be positive, got {amplitude}")
    rng = np.random.default_rng(seed)
    n_blocks = -(-N // hold)
    levels = rng.integers(0, 2, size=(q, n_blocks))
    signs = np.where(levels == 1, amplitude, -amplitude).astype(float)
    return InputSequence(np.repeat(signs, hold, axis=1)[:, :N], dt)


def generate_sinusoid(q: int, N: int, amplitude: float, freq_hz: float, dt: float = 1.0) -> InputSequence:
    """Identical sine on every channel, sampled at ``k * dt`` for ``k = 0..N-1``."""
    if q < 1 or N < 1:
        raise InvalidArgumentError(f"q and N must be >= 1 (got q={q}, N={N})")
    if not (amplitude > 0 and freq_hz > 0 and dt > 0):
        raise InvalidArgumentError("amplitude, freq_hz and dt must be positive")
    k = np.arange(N)
    row = amplitude * np.sin(2.0 * np.pi * freq_hz * k * dt)
    return InputSequence(np.tile(row, (q, 1)), dt)


def collect_snapshots(step_oracle: StepOracle, x0, inputs: InputSequence, m: int) -> SnapshotSet:
    """Run ``x_{k+1} = step_oracle(x_k, u_k)`` from ``x0`` and stack ``m`` samples."""
    if m < 2:
        raise InvalidArgumentError(f"need at least 2 samples, got m={m}")
    if inputs.N < m - 1:
        raise InvalidArgumentError(f"inputs cover {inputs.N} steps, need {m - 1}")
    x = np.asarray(x0, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise NumericalFailureError("initial state is not finite", step=0)
    states = np.empty((x.size, m))
    states[:, 0] = x
    for k in range(m - 1):
        x = np.asarray(step_oracle(x, inputs.values[:, k]), dtype=float).ravel()
        if x.size != states.shape[0]:
            raise InvalidArgumentError(
                f"oracle returned a state of dimension {x.size}, expected {states.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise NumericalFailureError(f"oracle produced a non-finite state at step {k + 1}", step=k + 1)
        states[:, k + 1] = x
    return SnapshotSet(states[:, :-1], states[:, 1:], inputs.values[:, :m - 1])


def collect_bursts(step_oracle: StepOracle, initial_states, inputs: InputSequence, burst_len: int) -> SnapshotSet:
    """Concatenate short trajectories, one per column of ``initial_states``.

    Each burst consumes the next ``burst_len`` input columns. The shift property
    holds inside every burst, not across burst boundaries.
    """
    x0s = np.asarray(initial_states, dtype=float)
    if x0s.ndim != 2 or x0s.shape[1] < 1:
        raise InvalidArgumentError("initial_states must be an n x b matrix with b >= 1")
    if burst_len < 1:
        raise InvalidArgumentError(f"burst_len must be >= 1, got {burst_len}")
    n_bursts = x0s.shape[1]
    if inputs.N < n_bursts * burst_len:
        raise InvalidArgumentError(f"inputs cover {inputs.N} steps, need {n_bursts * burst_len}")
    parts = []
    for b in range(n_bursts):
        window = inputs.window(b * burst_len, burst_len)
        parts.append(collect_snapshots(step_oracle, x0s[:, b], window, burst_len + 1))
    return SnapshotSet(np.hstack([p.X for p in parts]),
                       np.hstack([p.Y for p in parts]),
                       np.hstack([p.U for p in parts]))


def write_matrix_csv(path, matrix) -> None:
    """Write a matrix as headerless comma-separated rows with 17 significant digits."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a[None, :]
    elif a.ndim != 2:
        raise InvalidArgumentError(f"only 1-D or 2-D arrays can be written, got {a.ndim}-D")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"refusing to write non-finite entries to {path}")
    with open(path, "w", newline="") as fh:
        for row in a:
            fh.write(",".join("%.17g" % v for v in row))
            fh.write("\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    width = None
    with open(Path(path), newline="") as fh:
        for i, cells in enumerate(csv.reader(fh), start=1):
            if not cells or all(not c.strip() for c in cells):
                continue
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise CsvParseError(f"{path}: row {i} has {len(cells)} columns, expected {width}", row=i)
            values = []
            for j, cell in enumerate(cells, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise CsvParseError(f"{path}: row {i}, column {j}: not a number: {cell!r}",
                                        row=i, column=j) from None
            rows.append(values)
    if not rows:
        raise CsvParseError(f"{path}: no data rows")
    return np.array(rows, dtype=float)
