"""Second-order small-signal model ``H s^2 + D(s) s + L(s)`` and its realization.

The closed loop is ``det[I + G_sw(s) (K_sy(s) + s K_d(s))] = 0``.  Left
multiplying by ``T_J s^2 + T_D s`` gives

    H    = T_J + T_P K_d
    D(s) = T_D + T_P K_sy(s) + K_d(s)
    L(s) = K_sy(s)

The network only enters the GFM rows through the scalar filter ``alpha(s)``,
which the state-space realization carries as two extra states per GFM.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .converters import GFL, GFM, UnifiedParams
from .errors import EigenFailure, NetworkResonance, PartitionMismatch
from .network import OperatingPoint, ReducedNetwork


def alpha(s: complex, tau: float, omega0: float) -> complex:
    """1 / ((s/w0)^2 + 2 (tau/w0) s + tau^2 + 1)."""
    den = (s / omega0) ** 2 + 2.0 * (tau / omega0) * s + tau * tau + 1.0
    if abs(den) <= 1e-12 * (abs(s / omega0) ** 2 + tau * tau + 1.0):
        raise NetworkResonance(f"alpha(s) has a pole at s={s}")
    return 1.0 / den


def alpha_conj_part(omega: float, tau: float, omega0: float) -> float:
    """Im of alpha*(jw) = (alpha(jw) - alpha(-jw)) / 2."""
    a = alpha(1j * omega, tau, omega0)
    b = alpha(-1j * omega, tau, omega0)
    return float(((a - b) / 2).imag)


@dataclass
class CouplingMatrices:
    K_sy_gfl: np.ndarray
    K_sy_lm: np.ndarray
    K_sy_ml: np.ndarray
    K_sy_gfm: np.ndarray
    K_d_gfl: np.ndarray
    K_d_gfm: np.ndarray
    V_gfl_d: np.ndarray
    I_gfm_q: np.ndarray
    v_d: np.ndarray
    tau: float
    omega0: float

    @property
    def n(self) -> int:
        return self.K_sy_gfl.shape[0]

    @property
    def m(self) -> int:
        return self.K_sy_gfm.shape[0]

    def K_sy_net(self, s: complex) -> np.ndarray:
        a = alpha(s, self.tau, self.omega0) if self.m else 0.0
        return np.block(
            [
                [self.K_sy_gfl + self.V_gfl_d, self.K_sy_lm],
                [self.K_sy_ml, a * self.K_sy_gfm + self.I_gfm_q],
            ]
        ).astype(complex)

    def K_d_net(self, s: complex) -> np.ndarray:
        a = alpha(s, self.tau, self.omega0) if self.m else 0.0
        z = np.zeros((self.n, self.m))
        return np.block([[self.K_d_gfl, z], [z.T, a * self.K_d_gfm]]).astype(complex)


def build_coupling(rn: ReducedNetwork, op: OperatingPoint) -> CouplingMatrices:
    """Element-wise synchronizing and damping coefficients.

    GFL-side indices i, j run over GFL nodes, GFM-side over GFM nodes;
    ``theta_ij = theta_i - theta_j`` and ``phi_j`` is the power factor angle
    of GFL converter j.
    """
    n, m = rn.n, rn.m
    if len(op.V) != n + m:
        raise PartitionMismatch(f"operating point has {len(op.V)} converters, network {n + m}")
    tau, w0 = rn.tau, rn.omega0
    th = op.theta
    V, I, phi = op.V, op.I, op.phi
    thl, thm = th[:n], th[n:]
    Il, phil = I[:n], phi[:n]
    Vm = V[n:]

    X = rn.X
    ang = thl[:, None] - thl[None, :] - phil[None, :]
    K_sy_gfl = -Il[None, :] * X * (tau * np.cos(ang) + np.sin(ang))
    K_d_gfl = -Il[None, :] * X * np.cos(ang) / w0

    th_lm = thl[:, None] - thm[None, :]
    K_sy_lm = -Vm[None, :] * rn.b * np.cos(th_lm)

    ang_ml = thm[:, None] - thl[None, :] - phil[None, :]
    K_sy_ml = Vm[:, None] * Il[None, :] * rn.c * np.sin(ang_ml)

    Y = rn.Yeq
    th_mm = thm[:, None] - thm[None, :]
    VV = Vm[:, None] * Vm[None, :]
    K_sy_gfm = VV * Y * (tau * np.sin(th_mm) + np.cos(th_mm))
    K_d_gfm = VV * Y * np.sin(th_mm) / w0

    return CouplingMatrices(
        K_sy_gfl=K_sy_gfl,
        K_sy_lm=K_sy_lm,
        K_sy_ml=K_sy_ml,
        K_sy_gfm=K_sy_gfm,
        K_d_gfl=K_d_gfl,
        K_d_gfm=K_d_gfm,
        V_gfl_d=np.diag(op.v_d[:n]),
        I_gfm_q=np.diag(op.i_q[n:]),
        v_d=op.v_d.copy(),
        tau=tau,
        omega0=w0,
    )


@dataclass
class SmallSignalModel:
    """Block matrices of ``H s^2 + D(s) s + L(s)``.

    GFM blocks depending on ``s`` are stored as their static and
    alpha-scaled parts.  ``D_lm = diag(T_P) L2`` is the GFL-to-GFM damping
    block; with ``approximate=True`` it is dropped and ``H = T_J``.
    """

    n: int
    m: int
    tau: float
    omega0: float
    T_P: np.ndarray
    T_J: np.ndarray
    T_D: np.ndarray
    v_d: np.ndarray
    H_gfl: np.ndarray
    H_gfm: np.ndarray
    D_gfl: np.ndarray
    D_lm: np.ndarray
    T_D_gfm: np.ndarray
    K_d_gfl: np.ndarray
    K_d_gfm: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    L3: np.ndarray
    K_sy_gfm: np.ndarray
    I_gfm_q: np.ndarray
    V_gfl_d: np.ndarray
    approximate: bool = False
    coupling: CouplingMatrices | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.n + self.m

    @property
    def state_dim(self) -> int:
        return 2 * self.N + 2 * self.m

    def alpha(self, s: complex) -> complex:
        return alpha(s, self.tau, self.omega0)

    def D_gfm(self, s: complex) -> np.ndarray:
        return self.T_D_gfm + self.alpha(s) * self.K_d_gfm

    def L4(self, s: complex) -> np.ndarray:
        return self.alpha(s) * self.K_sy_gfm + self.I_gfm_q

    def H(self) -> np.ndarray:
        z = np.zeros((self.n, self.m))
        return np.block([[self.H_gfl, z], [z.T, self.H_gfm]])

    def D(self, s: complex) -> np.ndarray:
        a = self.alpha(s) if self.m else 0.0
        return np.block(
            [
                [self.D_gfl, self.D_lm],
                [np.zeros((self.m, self.n)), self.T_D_gfm + a * self.K_d_gfm],
            ]
        ).astype(complex)

    def L(self, s: complex) -> np.ndarray:
        a = self.alpha(s) if self.m else 0.0
        return np.block([[self.L1, self.L2], [self.L3, a * self.K_sy_gfm + self.I_gfm_q]]).astype(
            complex
        )

    def char_matrix(self, s: complex) -> np.ndarray:
        return self.H() * s * s + self.D(s) * s + self.L(s)

    def N_gfl(self, s: complex) -> np.ndarray:
        return self.H_gfl * s * s + self.D_gfl * s + self.L1

    def N_gfm(self, s: complex) -> np.ndarray:
        return self.H_gfm * s * s + self.D_gfm(s) * s + self.L4(s)

    def closed_loop_matrix(self, s: complex) -> np.ndarray:
        """``I + G_sw(s) (K_sy(s) + s K_d(s))`` assembled from the coupling data."""
        cm = self.coupling
        G = (self.T_P * s + 1.0) / (self.T_J * s * s + self.T_D * s)
        K = cm.K_sy_net(s) + s * cm.K_d_net(s)
        return np.eye(self.N) + G[:, None] * K

    def inertia_correction(self) -> float:
        """Relative size of the T_P K_d term that ``H ~ T_J`` discards."""
        if self.n == 0:
            return 0.0
        corr = np.diag(self.T_P[: self.n]) @ self.K_d_gfl
        return float(np.linalg.norm(corr, 2) / np.min(self.T_J[: self.n]))


def build_model(
    cm: CouplingMatrices, up: Sequence[UnifiedParams], *, approximate: bool = False
) -> SmallSignalModel:
    n, m = cm.n, cm.m
    if len(up) != n + m:
        raise PartitionMismatch(f"{len(up)} converters for an {n}+{m} network")
    kinds = [u.kind for u in up]
    if kinds != [GFL] * n + [GFM] * m:
        raise PartitionMismatch("converter kinds must be GFL block then GFM block")
    T_P = np.array([u.T_P for u in up], dtype=float)
    T_J = np.array([u.T_J for u in up], dtype=float)
    T_D = np.array([u.T_D for u in up], dtype=float)
    TPl = np.diag(T_P[:n])
    L1 = cm.K_sy_gfl + cm.V_gfl_d
    L2 = cm.K_sy_lm
    D_gfl = TPl @ L1 + cm.K_d_gfl
    if approximate:
        H_gfl = np.diag(T_J[:n])
        D_lm = np.zeros((n, m))
    else:
        H_gfl = np.diag(T_J[:n]) + TPl @ cm.K_d_gfl
        D_lm = TPl @ L2
    return SmallSignalModel(
        n=n,
        m=m,
        tau=cm.tau,
        omega0=cm.omega0,
        T_P=T_P,
        T_J=T_J,
        T_D=T_D,
        v_d=cm.v_d.copy(),
        H_gfl=H_gfl,
        H_gfm=np.diag(T_J[n:]),
        D_gfl=D_gfl,
        D_lm=D_lm,
        T_D_gfm=np.diag(T_D[n:]),
        K_d_gfl=cm.K_d_gfl,
        K_d_gfm=cm.K_d_gfm,
        L1=L1,
        L2=L2,
        L3=cm.K_sy_ml,
        K_sy_gfm=cm.K_sy_gfm,
        I_gfm_q=cm.I_gfm_q,
        V_gfl_d=cm.V_gfl_d,
        approximate=approximate,
        coupling=cm,
    )


# ---------------------------------------------------------------------------
# state space

PARTS = ("full", "gfl", "gfm")


def realize_state_space(model: SmallSignalModel, part: str = "full") -> np.ndarray:
    """Exact first-order realization.

    States are ``[theta, dtheta/dt, z1, z2]`` where ``theta`` lists the GFL
    block then the GFM block and ``(z1, z2)`` realize ``alpha(s)`` acting on
    ``K_sy_gfm theta_gfm + K_d_gfm dtheta_gfm`` in controllable canonical
    form (output ``w0^2 z1``).  ``part="gfl"`` or ``"gfm"`` drops the
    off-diagonal coupling and returns the subsystem alone.
    """
    if part not in PARTS:
        raise ValueError(f"part must be one of {PARTS}")
    n = model.n if part in ("full", "gfl") else 0
    m = model.m if part in ("full", "gfm") else 0
    N = n + m
    w0, tau = model.omega0, model.tau
    a0 = (tau * tau + 1.0) * w0 * w0
    a1 = 2.0 * tau * w0
    dim = 2 * N + 2 * m
    A = np.zeros((dim, dim))
    th = slice(0, N)
    om = slice(N, 2 * N)
    z1 = slice(2 * N, 2 * N + m)
    z2 = slice(2 * N + m, 2 * N + 2 * m)
    A[th, om] = np.eye(N)

    if n:
        Hi = np.linalg.inv(model.H_gfl)
        rows = slice(N, N + n)
        A[rows, 0:n] = -Hi @ model.L1
        A[rows, N : N + n] = -Hi @ model.D_gfl
        if m:
            A[rows, n:N] = -Hi @ model.L2
            A[rows, N + n : 2 * N] = -Hi @ model.D_lm
    if m:
        Hm = 1.0 / np.diag(model.H_gfm)
        rows = slice(N + n, 2 * N)
        A[rows, n:N] = -Hm[:, None] * model.I_gfm_q
        A[rows, N + n : 2 * N] = -Hm[:, None] * model.T_D_gfm
        A[rows, z1] = -Hm[:, None] * (w0 * w0 * np.eye(m))
        if n:
            A[rows, 0:n] = -Hm[:, None] * model.L3
        A[z1, z2] = np.eye(m)
        A[z2, z1] = -a0 * np.eye(m)
        A[z2, z2] = -a1 * np.eye(m)
        A[z2, n:N] = model.K_sy_gfm
        A[z2, N + n : 2 * N] = model.K_d_gfm
    return A


def state_groups(model: SmallSignalModel, part: str = "full") -> list[str]:
    n = model.n if part in ("full", "gfl") else 0
    m = model.m if part in ("full", "gfm") else 0
    return ["gfl"] * n + ["gfm"] * m + ["gfl"] * n + ["gfm"] * m + ["net"] * (2 * m)


def state_scale(model: SmallSignalModel, part: str = "full") -> np.ndarray:
    """Per-state weights that put the filter states on the angle scale."""
    N = (model.n if part in ("full", "gfl") else 0) + (model.m if part in ("full", "gfm") else 0)
    m = model.m if part in ("full", "gfm") else 0
    w0 = model.omega0
    return np.concatenate([np.ones(2 * N), np.full(m, w0 * w0), np.full(m, w0)])


def state_names(model: SmallSignalModel, part: str = "full") -> list[str]:
    n = model.n if part in ("full", "gfl") else 0
    m = model.m if part in ("full", "gfm") else 0
    idx = list(range(1, n + 1)) + list(range(model.n + 1, model.n + m + 1))
    return (
        [f"dtheta_{k}" for k in idx]
        + [f"domega_{k}" for k in idx]
        + [f"z1_{k}" for k in range(model.n + 1, model.n + m + 1)]
        + [f"z2_{k}" for k in range(model.n + 1, model.n + m + 1)]
    )


@dataclass
class ModeSet:
    eigenvalues: np.ndarray
    labels: list[str]

    @property
    def zeta(self) -> np.ndarray:
        lam = self.eigenvalues
        mag = np.abs(lam)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(mag > 0, -lam.real / mag, np.nan)

    @property
    def hz(self) -> np.ndarray:
        return self.eigenvalues.imag / (2 * np.pi)

    @property
    def max_real(self) -> float:
        return float(np.max(self.eigenvalues.real)) if len(self.eigenvalues) else -np.inf

    def __len__(self) -> int:
        return len(self.eigenvalues)

    def dominant(self) -> complex | None:
        """Largest real part among modes with positive frequency."""
        osc = self.eigenvalues[self.eigenvalues.imag > 0]
        if len(osc) == 0:
            return None
        return complex(osc[np.argmax(osc.real)])

    def rows(self) -> list[tuple]:
        return [
            (float(l.real), float(l.imag), float(z), float(h), lab)
            for l, z, h, lab in zip(self.eigenvalues, self.zeta, self.hz, self.labels)
        ]

    def select(self, mask: np.ndarray) -> "ModeSet":
        return ModeSet(self.eigenvalues[mask], [l for l, k in zip(self.labels, mask) if k])


def modes(
    A: np.ndarray, groups: Sequence[str] | None = None, scale: np.ndarray | None = None
) -> ModeSet:
    """Eigenvalues sorted by real part (descending), then |imag| ascending.

    With ``groups`` each mode is labeled by the state group holding most of
    its (``scale``-weighted) eigenvector energy.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return ModeSet(np.zeros(0, complex), [])
    try:
        lam, vec = scipy.linalg.eig(A)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenFailure(str(exc)) from exc
    if not np.all(np.isfinite(lam)):
        raise EigenFailure("non-finite eigenvalues")
    order = np.lexsort((-lam.imag, np.abs(lam.imag), -lam.real))
    lam, vec = lam[order], vec[:, order]
    if groups is None:
        labels = [f"mode{k + 1}" for k in range(len(lam))]
    else:
        groups = np.asarray(groups)
        names = list(dict.fromkeys(groups))
        labels = []
        for k in range(len(lam)):
            w = np.abs(vec[:, k] if scale is None else scale * vec[:, k]) ** 2
            share = {g: w[groups == g].sum() for g in names}
            labels.append(str(max(share, key=share.get)))
    return ModeSet(lam, labels)


def char_residual(model: SmallSignalModel, s: complex) -> float:
    """Relative smallest singular value of ``I + G_sw (K_sy + s K_d)`` at ``s``.

    Zero exactly at a root of the closed-loop characteristic equation.
    Near the origin, where ``G_sw`` has its pole, the polynomial form
    ``H s^2 + D s + L`` is used instead.
    """
    if abs(s) < 1e-9:
        M = model.char_matrix(s)
    else:
        M = model.closed_loop_matrix(s)
    sv = np.linalg.svd(M, compute_uv=False)
    return float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0


def match_spectra(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise distances after optimal one-to-one matching of two spectra."""
    from scipy.optimize import linear_sum_assignment

    a = np.asarray(a, complex)
    b = np.asarray(b, complex)
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return cost[r, c]
