"""Converter synchronization controls and their unified transfer function.

Both controls are written as ``-G(s) * M`` with
``G(s) = (T_P s + 1) / (T_J s^2 + T_D s)``.  For a PLL the input is
``-v_q`` and ``(k_P s + k_I)/s^2`` gives ``T_P = k_P/k_I, T_J = 1/k_I``.
For a VSG the input is ``i_d`` (``P = v_d i_d``) and
``T_J = J/(v_d w0), T_D = D/(v_d w0)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .errors import DegenerateOperatingPoint, InputError, PoleAtOrigin

GFL = "GFL"
GFM = "GFM"


@dataclass(frozen=True)
class ConverterParams:
    kind: str
    node: Hashable = None
    kP: float | None = None
    kI: float | None = None
    J: float | None = None
    D: float | None = None

    def __post_init__(self):
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        if kind == GFL:
            if self.kP is None or self.kI is None or not (self.kP > 0 and self.kI > 0):
                raise InputError(f"GFL at {self.node!r} needs kP > 0 and kI > 0")
        elif kind == GFM:
            if self.J is None or self.D is None or not (self.J > 0 and self.D >= 0):
                raise InputError(f"GFM at {self.node!r} needs J > 0 and D >= 0")
        else:
            raise InputError(f"unknown converter kind {self.kind!r}")

    @property
    def is_gfl(self) -> bool:
        return self.kind == GFL

    def replace(self, **kw) -> "ConverterParams":
        d = dict(kind=self.kind, node=self.node, kP=self.kP, kI=self.kI, J=self.J, D=self.D)
        d.update(kw)
        return ConverterParams(**d)


@dataclass(frozen=True)
class UnifiedParams:
    T_P: float
    T_J: float
    T_D: float
    kind: str

    @property
    def input_tag(self) -> str:
        return "-v_q" if self.kind == GFL else "i_d"

    def G(self, s: complex) -> complex:
        if s == 0:
            raise PoleAtOrigin("G(s) has a pole at the origin")
        return (self.T_P * s + 1.0) / (self.T_J * s * s + self.T_D * s)


def unify(p: ConverterParams, v_d: float = 1.0, omega0: float = 2 * np.pi * 50) -> UnifiedParams:
    if p.is_gfl:
        return UnifiedParams(T_P=p.kP / p.kI, T_J=1.0 / p.kI, T_D=0.0, kind=GFL)
    if not v_d > 0:
        raise DegenerateOperatingPoint(f"GFM at {p.node!r} has v_d={v_d}")
    k = v_d * omega0
    return UnifiedParams(T_P=0.0, T_J=p.J / k, T_D=p.D / k, kind=GFM)


def unify_all(params: Sequence[ConverterParams], v_d: Sequence[float], omega0: float) -> list[UnifiedParams]:
    return [unify(p, v, omega0) for p, v in zip(params, v_d)]


def g_sw(params: Sequence[UnifiedParams], s: complex) -> np.ndarray:
    """Diagonal matrix of the unified synchronization transfer functions."""
    if s == 0:
        raise PoleAtOrigin("G_sw(s) has a pole at the origin")
    return np.diag([u.G(s) for u in params]).astype(complex)


def pll_bandwidth(p: ConverterParams, v_d: float = 1.0) -> float:
    """Undamped natural frequency sqrt(k_I v_d) of the PLL loop, rad/s."""
    return float(np.sqrt(p.kI * v_d))
