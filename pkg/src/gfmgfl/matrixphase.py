"""Numerical range, matrix phases and the small-phase check of the coupled system.

For a sectorial matrix ``A`` (origin outside its numerical range) the phases
are the half-angles of the eigenvalues of ``A (A^H)^-1``, taken on the branch
centred on the sector direction.  The coupled system is checked by folding
the GFM block into an equivalent network seen by the GFL converters and
comparing phases of the two feedback operators frequency by frequency.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .criteria import margin_gfm
from .decoupling import split_subsystems
from .errors import (
    BranchSelectionFailed,
    EigenFailure,
    NotSectorial,
    PreconditionGfmUnstable,
    SingularGfmBlock,
)
from .smallsignal import SmallSignalModel, modes, realize_state_space

log = logging.getLogger(__name__)

BOUNDARY_POINTS = 256
SECTOR_GRID = 720
SECTOR_TOL = 1e-9
BRANCH_TOL = 1e-9
AUGMENTATION = 0.1
PHASE_GRID_POINTS = 400


def _hermitian_parts(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``A = Ha + j Ka`` with both parts Hermitian."""
    Ah = A.conj().T
    return (A + Ah) / 2, (A - Ah) / 2j


def numerical_range_boundary(A: np.ndarray, k: int = BOUNDARY_POINTS) -> np.ndarray:
    """Points ``x^H A x`` on the boundary of W(A), one per support direction."""
    if k < 16:
        raise ValueError("k must be at least 16")
    A = np.asarray(A, dtype=complex)
    Ha, Ka = _hermitian_parts(A)
    pts = np.empty(k, dtype=complex)
    for i, psi in enumerate(np.linspace(0, 2 * np.pi, k, endpoint=False)):
        try:
            _, vec = np.linalg.eigh(np.cos(psi) * Ha + np.sin(psi) * Ka)
        except np.linalg.LinAlgError as exc:
            raise EigenFailure(str(exc)) from exc
        x = vec[:, -1]
        pts[i] = x.conj() @ A @ x
    return pts


def _support(Ha: np.ndarray, Ka: np.ndarray, psi) -> np.ndarray:
    """lambda_min of the Hermitian part of ``e^{-j psi} A`` for each psi."""
    psi = np.atleast_1d(psi)
    stack = np.cos(psi)[:, None, None] * Ha + np.sin(psi)[:, None, None] * Ka
    return np.linalg.eigvalsh(stack)[:, 0]


def sector(A: np.ndarray, grid: int = SECTOR_GRID, tol: float = SECTOR_TOL) -> tuple[bool, float, float]:
    """``(sectorial, center, distance)`` where ``distance`` is the best
    rotated-Hermitian-part minimum eigenvalue (the distance from the origin
    to W(A) when positive)."""
    A = np.asarray(A, dtype=complex)
    Ha, Ka = _hermitian_parts(A)
    psi = np.linspace(-np.pi, np.pi, grid, endpoint=False)
    f = _support(Ha, Ka, psi)
    k = int(np.argmax(f))
    center, best = float(psi[k]), float(f[k])
    step = psi[1] - psi[0]
    try:
        res = scipy.optimize.minimize_scalar(
            lambda t: -_support(Ha, Ka, t)[0],
            bracket=(center - step, center, center + step),
            method="golden",
        )
        if -res.fun > best:
            center, best = float(res.x), float(-res.fun)
    except ValueError:
        pass
    center = float(np.angle(np.exp(1j * center)))
    scale = np.linalg.norm(A, 2)
    return bool(best > tol * scale), center, best


def is_sectorial(A: np.ndarray, tol: float = SECTOR_TOL) -> tuple[bool, float]:
    sectorial, center, _ = sector(A, tol=tol)
    return sectorial, center


@dataclass
class PhaseBounds:
    phi_max: float
    phi_min: float
    center: float
    sectorial: bool
    distance: float
    phases: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def spread(self) -> float:
        return self.phi_max - self.phi_min


def _wrap(x):
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - x, 2 * np.pi)


def matrix_phases(A: np.ndarray, center: float | None = None, tol: float = SECTOR_TOL) -> PhaseBounds:
    """Matrix phases of a sectorial ``A``.

    ``center`` is a continuity hint: the sector direction is shifted by a
    multiple of 2 pi to lie nearest to it, so phases tracked over frequency
    do not jump.
    """
    A = np.asarray(A, dtype=complex)
    sectorial, gamma, dist = sector(A, tol=tol)
    if not sectorial:
        raise NotSectorial(f"origin lies in the numerical range (support {dist:.3e})")
    if center is not None:
        gamma += 2 * np.pi * np.round((center - gamma) / (2 * np.pi))
    try:
        mu = scipy.linalg.eigvals(A, A.conj().T)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenFailure(str(exc)) from exc
    rel = _wrap(np.angle(mu * np.exp(-2j * gamma)))
    if np.any(np.abs(rel) > np.pi - BRANCH_TOL):
        raise BranchSelectionFailed("a phase sits on the edge of the sector branch")
    phases = np.sort(gamma + rel / 2)
    return PhaseBounds(float(phases[-1]), float(phases[0]), gamma, True, dist, phases)


# ---------------------------------------------------------------------------
# small-phase check


def equivalent_network(model: SmallSignalModel, s: complex, augmentation: float = AUGMENTATION) -> np.ndarray:
    """Network seen by the GFL block with the GFM block folded in.

    ``L1 + s K_d_gfl - L2 N_gfm(s)^-1 L3 - a V_d``, paired with the GFL
    operator ``(T_P s + 1) / (T_J s^2 + a v_d (T_P s + 1))``.
    """
    n, m = model.n, model.m
    Heq = model.L1 + s * model.K_d_gfl - augmentation * model.V_gfl_d
    if m:
        Ng = model.N_gfm(s)
        try:
            lu = scipy.linalg.lu_factor(Ng, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SingularGfmBlock(str(exc)) from exc
        if np.min(np.abs(np.diag(lu[0]))) <= 1e-13 * max(1.0, np.abs(Ng).max()):
            raise SingularGfmBlock(f"N_gfm(s) is singular at s={s}")
        Heq = Heq - model.L2 @ scipy.linalg.lu_solve(lu, model.L3.astype(complex))
    return np.asarray(Heq, dtype=complex).reshape(n, n)


def gfl_phase(T_P: float, T_J: float, v_d: float, omega, augmentation: float = AUGMENTATION):
    """Phase of ``(T_P jw + 1) / (-T_J w^2 + a v_d T_P jw + a v_d)``.

    The denominator stays in the closed upper half-plane for ``w >= 0`` so
    the ``atan2`` branch is continuous.
    """
    w = np.asarray(omega, dtype=float)
    a = augmentation * v_d
    out = np.arctan(T_P * w) - np.arctan2(a * T_P * w, a - T_J * w * w)
    return float(out) if out.ndim == 0 else out


@dataclass
class PhaseProfile:
    omega: np.ndarray
    phi_net_max: np.ndarray
    phi_net_min: np.ndarray
    gfl_max: np.ndarray
    gfl_min: np.ndarray
    margin: np.ndarray
    sectorial: np.ndarray
    d_gfm: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def verdict(self) -> str:
        ok = self.sectorial
        if np.any(self.margin[ok] <= 0):
            return "violated"
        if not np.all(ok):
            return "inconclusive"
        return "stable"

    @property
    def passed(self) -> bool:
        return self.verdict == "stable"

    @property
    def min_margin(self) -> float:
        ok = self.sectorial
        return float(self.margin[ok].min()) if np.any(ok) else float("nan")

    @property
    def high_frequency_margin(self) -> float:
        """Margin at the top of the grid, reported as the w -> inf trend."""
        return float(self.margin[-1])

    def rows(self) -> list[tuple]:
        return list(
            zip(
                self.omega.tolist(),
                self.phi_net_max.tolist(),
                self.phi_net_min.tolist(),
                self.gfl_max.tolist(),
                self.gfl_min.tolist(),
                self.margin.tolist(),
            )
        )


def phase_grid(model: SmallSignalModel, points: int = PHASE_GRID_POINTS, extra=()) -> np.ndarray:
    base = np.geomspace(1e-2, 10 * model.omega0, points)
    w = np.concatenate([base, np.asarray(extra, float)])
    w = w[(w >= 1e-2) & (w <= 10 * model.omega0)]
    return np.unique(w)


def check_precondition(model: SmallSignalModel) -> float | None:
    """d_gfm of the GFM subsystem; raises if that subsystem is not stable."""
    if model.m == 0:
        return None
    sub = split_subsystems(model)
    d_gfm = margin_gfm(model, sub.gfm)[0]
    if not d_gfm > 0:
        raise PreconditionGfmUnstable(f"GFM margin d_gfm={d_gfm:.4g} is not positive")
    if sub.gfm.max_real >= 0:
        raise PreconditionGfmUnstable(f"GFM subsystem has a mode with real part {sub.gfm.max_real:.4g}")
    return d_gfm


def small_phase_check(
    model: SmallSignalModel,
    omega_grid=None,
    augmentation: float = AUGMENTATION,
    points: int = PHASE_GRID_POINTS,
    tol: float = SECTOR_TOL,
) -> PhaseProfile:
    """Frequency sweep of the small-phase condition between the GFL block
    and the equivalent network.

    The GFM subsystem must be stable first (``PreconditionGfmUnstable``
    otherwise).  The default grid adds the system's mode frequencies to a
    log grid so resonances are hit.
    """
    n = model.n
    if n == 0:
        raise ValueError("the small-phase check needs GFL converters")
    d_gfm = check_precondition(model)
    if omega_grid is None:
        full = modes(realize_state_space(model)).eigenvalues.imag
        gfm = split_subsystems(model).gfm.eigenvalues.imag if model.m else np.zeros(0)
        extra = np.concatenate([full, gfm])
        omega_grid = phase_grid(model, points, extra=extra[extra > 0])
    omega = np.sort(np.asarray(omega_grid, dtype=float))

    T_P, T_J, v_d = model.T_P[:n], model.T_J[:n], model.v_d[:n]
    k = len(omega)
    hi = np.full(k, np.nan)
    lo = np.full(k, np.nan)
    sect = np.zeros(k, dtype=bool)
    g_max = np.empty(k)
    g_min = np.empty(k)
    notes = []
    center = 0.0
    for i, w in enumerate(omega):
        g = gfl_phase(T_P, T_J, v_d, w, augmentation)
        g_max[i], g_min[i] = g.max(), g.min()
        try:
            pb = matrix_phases(equivalent_network(model, 1j * w, augmentation), center=center, tol=tol)
        except (NotSectorial, BranchSelectionFailed, SingularGfmBlock) as exc:
            log.debug("omega=%.4g: %s", w, exc)
            continue
        center = pb.center
        sect[i] = True
        hi[i] = np.pi - pb.phi_max
        lo[i] = -np.pi - pb.phi_min
    margin = np.minimum(hi - g_max, g_min - lo)
    if not np.all(sect):
        notes.append(f"equivalent network not sectorial at {int((~sect).sum())} of {k} frequencies")
    return PhaseProfile(omega, hi, lo, g_max, g_min, margin, sect, d_gfm, notes)
