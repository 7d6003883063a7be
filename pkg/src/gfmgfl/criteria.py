"""Decentralized stability margins for decoupled GFL and GFM subsystems.

Both margins read "converter damping minus network negative damping".
``d_gfl`` is in seconds (the ``k_P v_d / k_I`` scale); ``d_gfm`` is in the
p.u. damping scale of ``D``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .decoupling import split_subsystems
from .errors import InvalidNetwork
from .network import ReducedNetwork
from .smallsignal import ModeSet, SmallSignalModel, alpha_conj_part

log = logging.getLogger(__name__)

GRID_POINTS = 50
BAND_EXTENSION = 0.10
# synchronization modes sit well below the network resonance near omega0
SYNC_BAND = 0.5


def _sym(K: np.ndarray) -> tuple[np.ndarray, float]:
    S = 0.5 * (K + K.conj().T)
    return S, float(np.linalg.norm(K - S, 2)) if K.size else 0.0


def margin_gfl(model: SmallSignalModel) -> float:
    """min(k_P v_d / k_I) + lambda_min(K_d_gfl), K_d_gfl symmetrized."""
    n = model.n
    if n == 0:
        raise ValueError("no GFL converters")
    S, asym = _sym(model.K_d_gfl)
    if asym > 1e-12 * max(1.0, np.linalg.norm(model.K_d_gfl, 2)):
        log.info("K_d_gfl asymmetry norm %.3e removed before eigenvalue", asym)
    converter = np.min(model.T_P[:n] * model.v_d[:n])
    return float(converter + np.linalg.eigvalsh(S)[0])


def sync_band(gfm_modes: ModeSet, omega0: float) -> tuple[float, float] | None:
    w = gfm_modes.eigenvalues.imag
    w = w[(w > 0) & (w < SYNC_BAND * omega0)]
    if len(w) == 0:
        return None
    return float(w.min()), float(w.max())


def gfm_correction(model: SmallSignalModel, omega: float) -> float:
    """lambda_min of Im[alpha*(jw)] (K_sy_gfm / w + j K_d_gfm), Hermitian part."""
    X = model.K_sy_gfm / omega + 1j * model.K_d_gfm
    S, _ = _sym(alpha_conj_part(omega, model.tau, model.omega0) * X)
    return float(np.linalg.eigvalsh(S)[0])


def gfm_margin_curve(model: SmallSignalModel, omegas: np.ndarray) -> np.ndarray:
    n = model.n
    td = np.min(model.T_D[n:])
    return np.array([model.omega0 * (td + gfm_correction(model, w)) for w in omegas])


def margin_gfm(
    model: SmallSignalModel, gfm_modes: ModeSet | None = None, points: int = GRID_POINTS
) -> tuple[float, np.ndarray, np.ndarray, tuple[float, float] | None]:
    """Worst GFM margin over the oscillatory band of the GFM subsystem.

    Returns ``(d_gfm, omegas, curve, band)``; ``band`` is None when the
    subsystem has no oscillatory synchronization mode, in which case the
    margin is the smallest converter damping alone.
    """
    if model.m == 0:
        raise ValueError("no GFM converters")
    if gfm_modes is None:
        gfm_modes = split_subsystems(model).gfm
    band = sync_band(gfm_modes, model.omega0)
    if band is None:
        d = float(model.omega0 * np.min(model.T_D[model.n:]))
        return d, np.zeros(0), np.zeros(0), None
    lo, hi = band
    omegas = np.linspace((1 - BAND_EXTENSION) * lo, (1 + BAND_EXTENSION) * hi, points)
    curve = gfm_margin_curve(model, omegas)
    return float(curve.min()), omegas, curve, band


def gscr(rn: ReducedNetwork) -> float:
    """Generalized short-circuit ratio: lambda_min of the GFL block Y1."""
    Y1 = rn.Y1
    if Y1.size == 0:
        raise InvalidNetwork("no GFL block")
    if not np.allclose(Y1, Y1.T, atol=1e-12 * max(1.0, np.abs(Y1).max())):
        raise InvalidNetwork("Y1 is not symmetric")
    lam = float(np.linalg.eigvalsh(Y1)[0])
    if lam <= 0:
        raise InvalidNetwork(f"Y1 is not positive definite (lambda_min={lam:.3e})")
    return lam


@dataclass
class MarginReport:
    d_gfl: float | None
    d_gfm: float | None
    gscr: float | None
    omega_M_range: tuple[float, float] | None
    omegas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    d_gfm_curve: np.ndarray = field(default_factory=lambda: np.zeros(0))
    notes: list[str] = field(default_factory=list)

    @property
    def gfl_stable(self) -> bool | None:
        return None if self.d_gfl is None else self.d_gfl > 0

    @property
    def gfm_stable(self) -> bool | None:
        return None if self.d_gfm is None else self.d_gfm > 0

    def summary(self) -> dict:
        return {
            "d_gfl": self.d_gfl,
            "d_gfm": self.d_gfm,
            "gscr": self.gscr,
            "omega_M_range": list(self.omega_M_range) if self.omega_M_range else None,
            "gfl_verdict": None if self.d_gfl is None else ("stable" if self.gfl_stable else "unstable"),
            "gfm_verdict": None if self.d_gfm is None else ("stable" if self.gfm_stable else "unstable"),
            "notes": list(self.notes),
        }


def margins(model: SmallSignalModel, rn: ReducedNetwork | None = None, points: int = GRID_POINTS) -> MarginReport:
    notes = []
    d_gfl = margin_gfl(model) if model.n else None
    d_gfm, omegas, curve, band = (None, np.zeros(0), np.zeros(0), None)
    if model.m:
        d_gfm, omegas, curve, band = margin_gfm(model, points=points)
        if band is None:
            notes.append("GFM subsystem has no oscillatory synchronization mode; d_gfm = min D")
    g = None
    if rn is not None and rn.n:
        try:
            g = gscr(rn)
        except InvalidNetwork as exc:
            notes.append(f"gSCR unavailable: {exc}")
    return MarginReport(d_gfl, d_gfm, g, band, omegas, curve, notes)
