"""GFM/GFL decoupling: timescale gap, coupling index and damping bound.

The off-diagonal blocks ``L2`` (GFL rows) and ``L3`` (GFM rows) of the
synchronizing matrix are treated as a perturbation of the block-diagonal
system ``diag(N_gfl, N_gfm)``.  The coupling index compares their size
with the spectral gap ``delta(w)`` between the two subsystems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import PartitionEmpty
from .smallsignal import (
    ModeSet,
    SmallSignalModel,
    match_spectra,
    modes,
    realize_state_space,
    state_groups,
    state_scale,
)

EPSILON = 0.05
GRID_POINTS = 200


def pll_bandwidths(model: SmallSignalModel) -> np.ndarray:
    """sqrt(k_I v_d) per GFL converter, from T_J = 1/k_I."""
    n = model.n
    return np.sqrt(model.v_d[:n] / model.T_J[:n])


def default_grid(model: SmallSignalModel, points: int = GRID_POINTS) -> np.ndarray:
    bw = pll_bandwidths(model)
    if len(bw) == 0:
        raise PartitionEmpty("no GFL converters")
    return np.geomspace(0.5 * bw.min(), 2.0 * bw.max(), points)


def offdiag_energy(model: SmallSignalModel) -> float:
    if model.n == 0 or model.m == 0:
        return 0.0
    return float(np.linalg.norm(model.L2, 2) * np.linalg.norm(model.L3, 2))


def delta(model: SmallSignalModel, omega: float) -> float:
    """Spectral gap between the GFM and GFL subsystems at frequency ``omega``.

    Inertia and damping enter as ``T_J w^2`` and ``T_D w`` (GFM) and
    ``w^2/k_I`` and ``k_P/k_I`` (GFL).  If the GFM distance does not exceed
    the GFL spread the gap is reported as zero.
    """
    n, m = model.n, model.m
    if n == 0 or m == 0:
        raise PartitionEmpty("delta needs both GFL and GFM converters")
    if not omega > 0:
        raise ValueError("omega must be positive")
    w2 = omega * omega
    lam4 = np.linalg.eigvals(model.L4(1j * omega))
    lam1 = np.linalg.eigvals(model.L1)
    tj_m = model.T_J[n:]
    tj_l = model.T_J[:n]
    gfm = np.min(np.abs(tj_m[:, None] * w2 - lam4[None, :]))
    gfl = np.max(np.abs(tj_l[:, None] * w2 - lam1[None, :]))
    first = gfm - gfl
    if first <= 0:
        return 0.0
    damp = np.min(np.abs(model.T_D[n:][:, None] - model.T_P[:n][None, :]))
    return float(np.sqrt(first * first + damp * damp * w2))


@dataclass
class DecouplingReport:
    coupling_index: float
    omega: np.ndarray
    delta_curve: np.ndarray
    offdiag_energy: float
    damping_lower_bound: float
    epsilon: float

    @property
    def delta_min(self) -> float:
        return float(self.delta_curve.min())

    @property
    def index_curve(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.delta_curve > 0, self.offdiag_energy / self.delta_curve, np.inf)

    @property
    def decoupled(self) -> bool:
        return bool(self.coupling_index <= self.epsilon)

    def verdict(self, epsilon: float | None = None) -> str:
        eps = self.epsilon if epsilon is None else epsilon
        return "decoupled" if self.coupling_index <= eps else "coupled"


def damping_lower_bound(model: SmallSignalModel, omega_min: float | None = None, epsilon: float = EPSILON) -> float:
    """Smallest GFM damping D (p.u.) that guarantees decoupling."""
    if omega_min is None:
        omega_min = float(pll_bandwidths(model).min())
    if not omega_min > 0:
        raise ValueError("omega_min must be positive")
    w0 = model.omega0
    tp = model.T_P[: model.n]
    return offdiag_energy(model) * w0 / (epsilon * omega_min**2) + float(np.max(tp, initial=0.0)) * w0


def coupling_index(model: SmallSignalModel, omega_grid=None, epsilon: float = EPSILON) -> DecouplingReport:
    grid = default_grid(model) if omega_grid is None else np.asarray(omega_grid, float)
    deltas = np.array([delta(model, w) for w in grid])
    energy = offdiag_energy(model)
    dmin = deltas.min()
    if dmin > 0:
        index = energy / dmin
    else:
        index = 0.0 if energy == 0 else np.inf
    return DecouplingReport(
        coupling_index=float(index),
        omega=grid,
        delta_curve=deltas,
        offdiag_energy=energy,
        damping_lower_bound=damping_lower_bound(model, epsilon=epsilon),
        epsilon=epsilon,
    )


@dataclass
class Subsystems:
    A_gfl: np.ndarray
    A_gfm: np.ndarray
    gfl: ModeSet
    gfm: ModeSet

    def union(self) -> np.ndarray:
        return np.concatenate([self.gfl.eigenvalues, self.gfm.eigenvalues])


def split_subsystems(model: SmallSignalModel) -> Subsystems:
    """Realizations of ``N_gfl(s)`` and ``N_gfm(s)`` with the coupling removed."""
    A1 = realize_state_space(model, "gfl")
    A2 = realize_state_space(model, "gfm")
    return Subsystems(
        A1,
        A2,
        modes(A1, state_groups(model, "gfl"), state_scale(model, "gfl")),
        modes(A2, state_groups(model, "gfm"), state_scale(model, "gfm")),
    )


def spectrum_deviation(model: SmallSignalModel, full: ModeSet | None = None) -> float:
    """Largest eigenvalue error between the split and the full model."""
    if full is None:
        full = modes(realize_state_space(model))
    sub = split_subsystems(model)
    return float(match_spectra(full.eigenvalues, sub.union()).max(initial=0.0))


# ---------------------------------------------------------------------------
# subspace perturbation


def block_gap(A1: np.ndarray, A2: np.ndarray) -> float:
    l1 = np.linalg.eigvals(A1)
    l2 = np.linalg.eigvals(A2)
    return float(np.min(np.abs(l1[:, None] - l2[None, :])))


def davis_kahan_bound(A1, A2, E1, E2) -> float:
    """kappa * ||E1|| ||E2|| / delta for A = diag(A1, A2), E = antidiag(E1, E2)."""
    A = scipy.linalg.block_diag(A1, A2)
    _, vec = np.linalg.eig(A)
    kappa = np.linalg.cond(vec)
    return float(kappa * np.linalg.norm(E1, 2) * np.linalg.norm(E2, 2) / block_gap(A1, A2))


def residual_bound(A1, A2, E1, E2) -> float:
    """Residual form ||E2|| / (delta - ||E||) for Hermitian blocks.

    Valid when ``delta > ||E||``: Weyl keeps the perturbed complementary
    eigenvalues within ``||E||`` of ``lambda(A2)``; returns ``inf`` otherwise.
    """
    E = np.block([[np.zeros((len(A1), len(A1))), E1], [E2, np.zeros((len(A2), len(A2)))]])
    gap = block_gap(A1, A2) - np.linalg.norm(E, 2)
    return float(np.linalg.norm(E2, 2) / gap) if gap > 0 else np.inf


def subspace_sin_theta(A1, A2, E1, E2) -> float:
    """Measured sine of the largest principal angle between the invariant
    subspace of ``diag(A1, A2)`` for ``lambda(A1)`` and its perturbed
    counterpart in ``A + E``."""
    k = len(A1)
    A = scipy.linalg.block_diag(A1, A2)
    E = np.block([[np.zeros((k, k)), E1], [E2, np.zeros((len(A2), len(A2)))]])
    lam, vec = np.linalg.eig(A + E)
    ref = np.concatenate([np.linalg.eigvals(A1), np.linalg.eigvals(A2)])
    r, c = scipy.optimize.linear_sum_assignment(np.abs(ref[:, None] - lam[None, :]))
    cols = c[r < k]
    W, _ = np.linalg.qr(vec[:, cols])
    V = np.eye(len(A))[:, :k]
    return float(np.sin(np.max(scipy.linalg.subspace_angles(V, W))))
