"""Prediction-error bound for DMDc models against a known linear truth model.

The bound on ``||e_k||`` for ``k > m`` is the four-term sum

    M rho^(k-m) ||e_m||
    + M (k-m) rho^(k-1-m) (M_sm + M_rm) ||x_m||
    + M (eps_s^B + eps_r^B) sum_{i=0}^{k-1-m} rho^(k-1-m-i) ||u_{i+m}||
    + M (M_sm + M_rm) sum_{i=0}^{k-2-m} (i+1) rho^i ||B u_{k-2-i}||

where ``rho`` is ``rho_bar`` and the ``M`` constants are envelope constants
(``||G^k|| <= M rho^k`` etc.) maximised over a finite horizon ``K_est``.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg

from .dmdc import DmdcModel, TruncatedSvdFactors
from .errors import AssumptionViolatedError, InvalidArgumentError, NumericalFailureError
from .snapshots import InputSequence


def spectral_norm(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(scipy.linalg.svdvals(M, check_finite=False)[0])


def spectral_radius(A) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"spectral radius needs a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidArgumentError("matrix has non-finite entries")
    try:
        return float(np.max(np.abs(np.linalg.eigvals(A))))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"eigenvalue solver failed: {exc}") from exc


@dataclass(frozen=True)
class TruthModel:
    """Full-order model ``x_{k+1} = A x_k + B u_k``; construction checks Schur stability."""

    A: np.ndarray
    B: np.ndarray
    rho: float = field(init=False, repr=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.ndim != 2 or A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise InvalidArgumentError(f"incompatible truth matrices: A {A.shape}, B {B.shape}")
        rho = spectral_radius(A)
        if rho >= 1:
            raise AssumptionViolatedError(f"truth model is not stable: spectral radius {rho:.6g} >= 1")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "rho", rho)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return np.hstack([self.A, self.B])

    def simulate(self, x0, inputs: InputSequence, K: int) -> np.ndarray:
        """States ``x_0..x_K`` as columns of an ``n x (K+1)`` matrix."""
        if inputs.q != self.q:
            raise InvalidArgumentError(f"inputs have {inputs.q} channels, truth expects {self.q}")
        if K > 0 and inputs.N < K:
            raise InvalidArgumentError(f"inputs cover {inputs.N} steps, need {K}")
        out = np.empty((self.n, K + 1))
        out[:, 0] = np.asarray(x0, dtype=float).ravel()
        for k in range(K):
            out[:, k + 1] = self.A @ out[:, k] + self.B @ inputs.values[:, k]
            if not np.all(np.isfinite(out[:, k + 1])):
                raise NumericalFailureError(f"truth state became non-finite at step {k + 1}", step=k + 1)
        return out


@dataclass(frozen=True)
class BoundConstants:
    rho: float
    rho_bar: float
    M: float
    M_sm: float
    M_rm: float
    eps_s: float
    eps_s_A: float
    eps_s_B: float
    eps_r_B: float
    c_rm: float
    K_est: int
    B_norm: float
    rho_A_tilde: float
    M_argmax: int
    u_bar: Optional[float] = None

    @property
    def model_exceeds_rho_bar(self) -> bool:
        """Reduced model decays slower than ``rho_bar``; ``M`` then grows with ``K_est``."""
        return self.rho_A_tilde >= self.rho_bar

    @property
    def horizon_limited(self) -> bool:
        """The envelope maximum for ``M`` sits at the end of the estimation horizon."""
        return self.M_argmax == self.K_est and self.K_est > 0

    def rows(self):
        out = [(f.name, getattr(self, f.name)) for f in fields(self)]
        out.append(("model_exceeds_rho_bar", int(self.model_exceeds_rho_bar)))
        out.append(("horizon_limited", int(self.horizon_limited)))
        return out


class ProjectionError(NamedTuple):
    eps_s: float
    eps_s_A: float
    eps_s_B: float


@dataclass(frozen=True)
class ErrorTrajectory:
    """Scalar sequence indexed ``k = m .. m + K``; ``terms`` holds the four bound terms when present."""

    values: np.ndarray
    m: int
    terms: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise NumericalFailureError("error trajectory must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.terms is not None:
            t = np.array(self.terms, dtype=float)
            t.setflags(write=False)
            object.__setattr__(self, "terms", t)

    @property
    def K(self) -> int:
        return self.values.size - 1

    @property
    def k(self) -> np.ndarray:
        return np.arange(self.m, self.m + self.values.size)


def theta_projection_error(truth: TruthModel, svd_omega: TruncatedSvdFactors,
                           A_hat=None, B_hat=None) -> ProjectionError:
    """``||Theta (I - U_s U_s^T)||`` plus the per-block estimation errors.

    With ``A_hat``/``B_hat`` given the block errors are ``||A - A_hat||`` and
    ``||B - B_hat||``; otherwise they are the blocks of the projection error,
    which coincide on noise-free data.
    """
    n, q = truth.n, truth.q
    if svd_omega.U.shape[0] != n + q:
        raise InvalidArgumentError(
            f"left singular vectors have {svd_omega.U.shape[0]} rows, expected n + q = {n + q}")
    theta = truth.theta
    residual = theta - (theta @ svd_omega.U) @ svd_omega.U.T
    eps_s = spectral_norm(residual)
    if A_hat is None or B_hat is None:
        return ProjectionError(eps_s, spectral_norm(residual[:, :n]), spectral_norm(residual[:, n:]))
    A_hat = np.asarray(A_hat)
    B_hat = np.asarray(B_hat)
    if A_hat.shape != truth.A.shape or B_hat.shape != truth.B.shape:
        raise InvalidArgumentError("estimates do not match the truth model's dimensions")
    return ProjectionError(eps_s, spectral_norm(truth.A - A_hat), spectral_norm(truth.B - B_hat))


def rho_bar_for(rho: float, rho_margin: float) -> float:
    if not 0 < rho_margin < 1:
        raise InvalidArgumentError(f"rho_margin must lie in (0, 1), got {rho_margin}")
    return rho + rho_margin * (1.0 - rho)


def envelope_norms(truth: TruthModel, model: DmdcModel, A_hat, K: int):
    """Norms of ``U_r A~^k U_r^T``, ``(A - A_hat) A^k`` and ``(A_hat - U_r A~ U_r^T) A^k`` for k = 0..K.

    Powers are formed by repeated multiplication.
    """
    A = truth.A
    A_hat = np.asarray(A_hat, dtype=float)
    galerkin = model.U_r @ model.A_tilde @ model.U_r.T
    g = np.empty(K + 1)
    sm = np.empty(K + 1)
    rm = np.empty(K + 1)
    P = np.eye(model.r)
    D_s = A - A_hat
    D_r = A_hat - galerkin
    for k in range(K + 1):
        # U_r has orthonormal columns, so ||U_r P U_r^T|| = ||P||
        g[k] = spectral_norm(P)
        sm[k] = spectral_norm(D_s)
        rm[k] = spectral_norm(D_r)
        if not (np.isfinite(g[k]) and np.isfinite(sm[k]) and np.isfinite(rm[k])):
            raise NumericalFailureError(f"matrix power norm became non-finite at k={k}", step=k)
        P = model.A_tilde @ P
        D_s = D_s @ A
        D_r = D_r @ A
    return g, sm, rm


def estimate_constants(truth: TruthModel, model: DmdcModel, A_hat, B_hat, K_est: int,
                       rho_margin: float = 0.5, u_bar: Optional[float] = None) -> BoundConstants:
    """Every scalar entering the bound, with envelopes maximised over ``0 <= k <= K_est``."""
    if K_est < 1:
        raise InvalidArgumentError(f"K_est must be >= 1, got {K_est}")
    if model.svd_omega is None:
        raise InvalidArgumentError("model carries no first-stage SVD (was it loaded from disk?)")
    if model.n != truth.n or model.q != truth.q:
        raise InvalidArgumentError("model and truth dimensions differ")
    rho = truth.rho
    if rho >= 1:
        raise AssumptionViolatedError(f"spectral radius {rho} >= 1")
    rho_bar = rho_bar_for(rho, rho_margin)
    A_hat = np.asarray(A_hat, dtype=float)
    B_hat = np.asarray(B_hat, dtype=float)

    g, sm, rm = envelope_norms(truth, model, A_hat, K_est)
    decay = rho_bar ** np.arange(K_est + 1)
    ratio_g = g / decay
    M_argmax = int(np.argmax(ratio_g))
    M = max(1.0, float(ratio_g[M_argmax]))

    proj = theta_projection_error(truth, model.svd_omega, A_hat, B_hat)
    U_r = model.U_r
    galerkin = U_r @ model.A_tilde @ U_r.T
    return BoundConstants(
        rho=rho,
        rho_bar=rho_bar,
        M=M,
        M_sm=float(np.max(sm / decay)),
        M_rm=float(np.max(rm / decay)),
        eps_s=proj.eps_s,
        eps_s_A=proj.eps_s_A,
        eps_s_B=proj.eps_s_B,
        eps_r_B=spectral_norm(B_hat - U_r @ (U_r.T @ B_hat)),
        c_rm=spectral_norm(A_hat - galerkin),
        K_est=int(K_est),
        B_norm=spectral_norm(truth.B),
        rho_A_tilde=spectral_radius(model.A_tilde),
        M_argmax=M_argmax if M > 1.0 else 0,
        u_bar=None if u_bar is None else float(u_bar),
    )


def bound_trajectory(consts: BoundConstants, e_m_norm: float, x_m_norm: float, inputs: InputSequence,
                     B_applied=None, m: int = 0, K: Optional[int] = None) -> ErrorTrajectory:
    """Evaluate the four-term bound for ``k = m .. m + K``.

    ``inputs`` column ``j`` is ``u_{m+j}``. ``B_applied[j]`` is ``||B u_{m+j}||``;
    when omitted it is replaced by ``||B|| ||u_{m+j}||``. Sums are evaluated
    term by term (no closed-form geometric series).
    """
    if K is None:
        K = inputs.N
    if K < 1:
        raise InvalidArgumentError(f"K must be >= 1, got {K}")
    if inputs.N < K:
        raise InvalidArgumentError(f"inputs cover {inputs.N} steps from k={m}, need {K}")
    u_norm = np.linalg.norm(inputs.values[:, :K], axis=0)
    if B_applied is None:
        bu = consts.B_norm * u_norm
    else:
        bu = np.asarray(B_applied, dtype=float).ravel()
        if bu.size < K:
            raise InvalidArgumentError(f"B_applied has {bu.size} entries, need {K}")
        bu = bu[:K]
    Mc, rb = consts.M, consts.rho_bar
    dm = consts.M_sm + consts.M_rm
    eb = consts.eps_s_B + consts.eps_r_B
    powers = rb ** np.arange(K + 1)
    weighted = np.arange(1, K + 2) * powers

    terms = np.zeros((K + 1, 4))
    for j in range(K + 1):                      # j = k - m
        terms[j, 0] = Mc * powers[j] * e_m_norm
        if j >= 1:
            terms[j, 1] = Mc * j * powers[j - 1] * dm * x_m_norm
            terms[j, 2] = Mc * eb * np.dot(powers[:j][::-1], u_norm[:j])
        if j >= 2:
            # sum_{i=0}^{j-2} (i+1) rho^i ||B u_{k-2-i}||, and k-2-i = m + (j-2-i)
            terms[j, 3] = Mc * dm * np.dot(weighted[:j - 1], bu[:j - 1][::-1])
    return ErrorTrajectory(terms.sum(axis=1), m, terms)


def asymptotic_bound(consts: BoundConstants, B_norm: Optional[float] = None) -> float:
    """Limit of the bound as ``k -> inf`` for inputs with ``||u_k|| <= u_bar``."""
    if consts.u_bar is None:
        raise InvalidArgumentError("u_bar is not set on these constants")
    if not consts.rho_bar < 1:
        raise InvalidArgumentError(f"rho_bar must be < 1, got {consts.rho_bar}")
    b = consts.B_norm if B_norm is None else B_norm
    gap = 1.0 - consts.rho_bar
    return (consts.M * consts.u_bar / gap * (consts.eps_s_B + consts.eps_r_B)
            + consts.M * b * consts.u_bar / gap ** 2 * (consts.M_sm + consts.M_rm))


def actual_error_trajectory(truth: TruthModel, model: DmdcModel, x_m, inputs: InputSequence, K: int,
                            m: int = 0) -> ErrorTrajectory:
    """``||x_k - U_r x~_k||`` with both models started from ``x_m`` at index ``m``."""
    if model.n != truth.n or model.q != truth.q or inputs.q != truth.q:
        raise InvalidArgumentError("truth, model and input dimensions disagree")
    if K > 0 and inputs.N < K:
        raise InvalidArgumentError(f"inputs cover {inputs.N} steps, need {K}")
    x = np.asarray(x_m, dtype=float).ravel()
    z = model.reduce(x)
    out = np.empty(K + 1)
    out[0] = np.linalg.norm(x - model.U_r @ z)
    for k in range(K):
        u = inputs.values[:, k]
        x = truth.A @ x + truth.B @ u
        z = model.A_tilde @ z + model.B_tilde @ u
        out[k + 1] = np.linalg.norm(x - model.U_r @ z)
        if not np.isfinite(out[k + 1]):
            raise NumericalFailureError(f"prediction became non-finite at k={m + k + 1}", step=m + k + 1)
    return ErrorTrajectory(out, m)


def write_certificate(path, bound: ErrorTrajectory, actual: ErrorTrajectory) -> None:
    """One row per k: ``k, bound, actual, term1..term4``."""
    if bound.values.size != actual.values.size or bound.m != actual.m:
        raise InvalidArgumentError("bound and actual trajectories cover different indices")
    terms = bound.terms if bound.terms is not None else np.full((bound.values.size, 4), np.nan)
    with open(path, "w", newline="") as fh:
        fh.write("k,bound,actual,term1,term2,term3,term4\n")
        for k, b, a, t in zip(bound.k, bound.values, actual.values, terms):
            fh.write("%d,%s\n" % (k, ",".join("%.17g" % v for v in (b, a, *t))))


def write_constants(path, consts: BoundConstants) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        for key, value in consts.rows():
            if value is None:
                w.writerow([key, ""])
            elif isinstance(value, float):
                w.writerow([key, "%.17g" % value])
            else:
                w.writerow([key, value])


def read_certificate(path) -> dict:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    names = ["k", "bound", "actual", "term1", "term2", "term3", "term4"]
    return {name: data[:, i] for i, name in enumerate(names)}


def constants_dict(consts: BoundConstants) -> dict:
    return asdict(consts)
