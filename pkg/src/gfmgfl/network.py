"""Network description, Kron reduction and the dynamic network operator.

Lines are modelled with a single global R/X ratio ``tau``: a line of
reactance ``x`` has the dynamic-phasor admittance ``(1/x) * gamma(s)``
where ``gamma(s)`` is the real 2x2 form of ``1 / (tau + s/omega0 + j)``.
The susceptance-like matrix ``Y_net`` therefore only needs ``1/x``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import (
    DegenerateOperatingPoint,
    DisconnectedNetwork,
    FloatingSubnetwork,
    InvalidLine,
    InvalidNetwork,
    NetworkResonance,
    NonUniformTau,
    PowerFlowDiverged,
)

OMEGA0_DEFAULT = 2 * math.pi * 50.0
TAU_TOLERANCE = 0.10
PF_TOL = 1e-8
PF_MAX_ITER = 50


@dataclass(frozen=True)
class Line:
    frm: Hashable
    to: Hashable
    x: float
    r: float = 0.0


@dataclass
class NetworkCase:
    """Grid topology plus the converter node partition.

    ``converter_nodes`` lists GFL nodes first, then GFM nodes; ``n_gfl``
    says where the split is.
    """

    buses: list
    lines: list[Line]
    converter_nodes: list
    n_gfl: int
    tau: float = 0.0
    omega0: float = OMEGA0_DEFAULT
    infinite_bus: Hashable | None = None
    infinite_voltage: complex = 1.0 + 0.0j
    tau_tolerance: float = TAU_TOLERANCE

    @property
    def n_gfm(self) -> int:
        return len(self.converter_nodes) - self.n_gfl

    def index(self) -> dict:
        return {b: k for k, b in enumerate(self.buses)}

    def check(self) -> None:
        idx = self.index()
        if len(idx) != len(self.buses):
            raise InvalidNetwork("duplicate bus ids")
        for ln in self.lines:
            if ln.frm not in idx or ln.to not in idx:
                raise InvalidLine(f"line {ln.frm}-{ln.to} references an unknown bus")
            if ln.frm == ln.to:
                raise InvalidLine(f"line {ln.frm}-{ln.to} is a self loop")
            if not ln.x > 0:
                raise InvalidLine(f"line {ln.frm}-{ln.to} has nonpositive x={ln.x}")
            if ln.r < 0:
                raise InvalidLine(f"line {ln.frm}-{ln.to} has negative r={ln.r}")
        for b in self.converter_nodes:
            if b not in idx:
                raise InvalidNetwork(f"converter node {b!r} is not a bus")
        if len(set(self.converter_nodes)) != len(self.converter_nodes):
            raise InvalidNetwork("two converters share a node")
        if not 0 <= self.n_gfl <= len(self.converter_nodes):
            raise InvalidNetwork("n_gfl out of range")
        if self.infinite_bus is not None:
            if self.infinite_bus not in idx:
                raise InvalidNetwork("infinite bus is not a bus")
            if self.infinite_bus in self.converter_nodes:
                raise InvalidNetwork("infinite bus cannot host a converter")
        if self.tau < 0:
            raise InvalidNetwork("tau must be nonnegative")
        if not self.omega0 > 0:
            raise InvalidNetwork("omega0 must be positive")
        _check_connected(len(self.buses), [(idx[l.frm], idx[l.to]) for l in self.lines])

    def tau_deviation(self) -> float:
        """Largest per-line departure of R/X from ``tau``.

        Relative to ``tau``, with a floor of 0.1 so that a lossless
        declaration (tau = 0) is judged on an absolute scale.
        """
        if not self.lines:
            return 0.0
        scale = max(self.tau, 0.1)
        return max(abs(l.r / l.x - self.tau) for l in self.lines) / scale


@dataclass
class ReducedNetwork:
    """Kron-reduced network seen from the converter nodes."""

    Y_net: np.ndarray
    n: int
    tau: float = 0.0
    omega0: float = OMEGA0_DEFAULT
    # coupling of each kept node to fixed-voltage (infinite) buses
    y_fixed: np.ndarray | None = None
    v_fixed: np.ndarray | None = None
    Y1: np.ndarray = field(init=False, repr=False)
    Y2: np.ndarray = field(init=False, repr=False)
    Y3: np.ndarray = field(init=False, repr=False)
    Y4: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Y = np.asarray(self.Y_net, dtype=float)
        self.Y_net = Y
        n = self.n
        self.Y1, self.Y2 = Y[:n, :n], Y[:n, n:]
        self.Y3, self.Y4 = Y[n:, :n], Y[n:, n:]
        if self.y_fixed is None:
            self.y_fixed = np.zeros((Y.shape[0], 0))
            self.v_fixed = np.zeros(0, dtype=complex)

    @property
    def m(self) -> int:
        return self.Y_net.shape[0] - self.n

    @property
    def X(self) -> np.ndarray:
        if self.n == 0:
            return np.zeros((0, 0))
        try:
            return np.linalg.inv(self.Y1)
        except np.linalg.LinAlgError as exc:
            raise InvalidNetwork("GFL block Y1 is singular") from exc

    @property
    def b(self) -> np.ndarray:
        return -self.X @ self.Y2

    @property
    def c(self) -> np.ndarray:
        return self.Y3 @ self.X

    @property
    def Yeq(self) -> np.ndarray:
        return self.Y4 - self.Y3 @ self.X @ self.Y2


def _check_connected(nb: int, edges: Sequence[tuple[int, int]]) -> None:
    if nb == 0:
        raise InvalidNetwork("no buses")
    adj: list[list[int]] = [[] for _ in range(nb)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        for j in adj[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    if len(seen) != nb:
        raise DisconnectedNetwork(f"{nb - len(seen)} of {nb} buses are unreachable")


def build_admittance(case: NetworkCase) -> np.ndarray:
    """Nodal susceptance matrix over all buses (positive diagonal)."""
    case.check()
    dev = case.tau_deviation()
    if dev > case.tau_tolerance:
        warnings.warn(
            f"per-line R/X departs from tau={case.tau} by {dev:.1%}; using declared tau",
            NonUniformTau,
            stacklevel=2,
        )
    idx = case.index()
    B = np.zeros((len(idx), len(idx)))
    for ln in case.lines:
        i, j = idx[ln.frm], idx[ln.to]
        y = 1.0 / ln.x
        B[i, i] += y
        B[j, j] += y
        B[i, j] -= y
        B[j, i] -= y
    return B


def kron_reduce(
    B: np.ndarray,
    keep: Sequence[int],
    n_gfl: int,
    fixed: Sequence[int] = (),
    *,
    tau: float = 0.0,
    omega0: float = OMEGA0_DEFAULT,
    v_fixed: Sequence[complex] | None = None,
) -> ReducedNetwork:
    """Eliminate every node that is neither kept nor held at fixed voltage.

    Fixed-voltage nodes are kept through the elimination and then dropped
    from the partition; their columns survive as ``y_fixed`` so that the
    steady state can still be evaluated.
    """
    B = np.asarray(B, dtype=float)
    keep = list(keep)
    fixed = list(fixed)
    bound = keep + fixed
    elim = [k for k in range(B.shape[0]) if k not in set(bound)]
    Bbb = B[np.ix_(bound, bound)]
    if elim:
        Bee = B[np.ix_(elim, elim)]
        Bbe = B[np.ix_(bound, elim)]
        try:
            red = Bbb - Bbe @ np.linalg.solve(Bee, Bbe.T)
        except np.linalg.LinAlgError as exc:
            raise FloatingSubnetwork("eliminated sub-block is singular") from exc
        if np.linalg.cond(Bee) > 1e12:
            raise FloatingSubnetwork("eliminated sub-block is numerically singular")
    else:
        red = Bbb
    red = 0.5 * (red + red.T)
    k = len(keep)
    vf = np.ones(len(fixed), dtype=complex) if v_fixed is None else np.asarray(v_fixed, complex)
    return ReducedNetwork(
        red[:k, :k], n_gfl, tau=tau, omega0=omega0, y_fixed=red[:k, k:], v_fixed=vf
    )


def reduce_case(case: NetworkCase) -> ReducedNetwork:
    B = build_admittance(case)
    idx = case.index()
    keep = [idx[b] for b in case.converter_nodes]
    fixed = [] if case.infinite_bus is None else [idx[case.infinite_bus]]
    vf = [case.infinite_voltage] if fixed else None
    return kron_reduce(
        B, keep, case.n_gfl, fixed, tau=case.tau, omega0=case.omega0, v_fixed=vf
    )


def gamma_inverse(s: complex, tau: float, omega0: float) -> np.ndarray:
    a = tau + s / omega0
    return np.array([[a, -1.0], [1.0, a]], dtype=complex)


def gamma(s: complex, tau: float, omega0: float = OMEGA0_DEFAULT) -> np.ndarray:
    """Inverse of [[tau + s/w0, -1], [1, tau + s/w0]]."""
    a = tau + s / omega0
    det = a * a + 1.0
    if abs(det) <= 1e-12 * (abs(a) ** 2 + 1.0):
        raise NetworkResonance(f"gamma is singular at s={s}")
    return np.array([[a, 1.0], [-1.0, a]], dtype=complex) / det


def partition_dynamics(rn: ReducedNetwork, s: complex) -> np.ndarray:
    """G_net(s) mapping [I_gfl; V_gfm] (xy pairs) to [V_gfl; I_gfm]."""
    g = gamma(s, rn.tau, rn.omega0)
    gi = gamma_inverse(s, rn.tau, rn.omega0)
    I2 = np.eye(2)
    X = rn.X
    top = np.hstack([np.kron(X, gi), np.kron(rn.b, I2)])
    bot = np.hstack([np.kron(rn.c, I2), np.kron(rn.Yeq, g)])
    return np.vstack([top, bot])


# ---------------------------------------------------------------------------
# operating point


@dataclass(frozen=True)
class Injection:
    """Steady-state set-point of one converter.

    GFL: either currents ``i_d, i_q`` in its own frame or powers ``P, Q``.
    GFM: terminal voltage ``v_d`` and active power ``P``.
    """

    kind: str
    i_d: float | None = None
    i_q: float | None = None
    P: float | None = None
    Q: float | None = None
    v_d: float = 1.0


@dataclass
class OperatingPoint:
    V: np.ndarray
    theta: np.ndarray
    i_d: np.ndarray
    i_q: np.ndarray
    v_d: np.ndarray
    v_q: np.ndarray

    def __post_init__(self):
        for name in ("V", "theta", "i_d", "i_q", "v_d", "v_q"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if np.any(self.V <= 0):
            raise DegenerateOperatingPoint("voltage magnitudes must be positive")

    @property
    def I(self) -> np.ndarray:
        return np.hypot(self.i_d, self.i_q)

    @property
    def phi(self) -> np.ndarray:
        return np.arctan2(self.i_q, self.i_d)

    def voltage_phasors(self) -> np.ndarray:
        return (self.v_d + 1j * self.v_q) * np.exp(1j * self.theta)

    def current_phasors(self) -> np.ndarray:
        return (self.i_d + 1j * self.i_q) * np.exp(1j * self.theta)

    @classmethod
    def from_phasors(cls, V: np.ndarray, I: np.ndarray) -> "OperatingPoint":
        """Frames aligned with the terminal voltage (v_q = 0)."""
        V = np.asarray(V, complex)
        I = np.asarray(I, complex)
        th = np.angle(V)
        idq = I * np.exp(-1j * th)
        return cls(np.abs(V), th, idq.real, idq.imag, np.abs(V), np.zeros(len(V)))

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("V", "theta", "i_d", "i_q", "v_d", "v_q")}


def _steady_admittance(rn: ReducedNetwork) -> tuple[np.ndarray, np.ndarray]:
    z = rn.tau + 1j
    Yc = rn.Y_net / z
    c = (rn.y_fixed @ rn.v_fixed) / z if rn.y_fixed.size else np.zeros(rn.Y_net.shape[0], complex)
    return Yc, c


def solve_operating_point(
    rn: ReducedNetwork,
    injections: Sequence[Injection],
    *,
    tol: float = PF_TOL,
    max_iter: int = PF_MAX_ITER,
) -> OperatingPoint:
    """Newton power flow on the reduced network from a flat start.

    Fixed-voltage buses act as slack; without one, the first GFM is the
    angle reference.  GFM nodes are PV nodes, GFL nodes are PQ nodes
    (constant power or constant current in their own frame).
    """
    N = rn.Y_net.shape[0]
    if len(injections) != N:
        raise InvalidNetwork(f"{len(injections)} injections for {N} converter nodes")
    kinds = [inj.kind.upper() for inj in injections]
    if kinds != ["GFL"] * rn.n + ["GFM"] * rn.m:
        raise InvalidNetwork("injections must list GFL converters first, then GFM")
    has_fixed = rn.y_fixed.shape[1] > 0 and np.any(rn.y_fixed != 0)
    if not has_fixed and rn.m == 0:
        raise InvalidNetwork("no slack: need an infinite bus or a GFM converter")
    slack = None if has_fixed else rn.n

    Yc, c = _steady_admittance(rn)
    Vm = np.ones(N)
    Va = np.zeros(N)
    for k in range(rn.n, N):
        Vm[k] = injections[k].v_d
    if np.any(Vm <= 0):
        raise DegenerateOperatingPoint("GFM voltage set-points must be positive")

    ang = [k for k in range(N) if k != slack]
    mag = list(range(rn.n))

    def scheduled(vm):
        S = np.zeros(N, complex)
        dS = np.zeros(N, complex)  # d S_sched / d|V| at own node
        for k, inj in enumerate(injections):
            if k >= rn.n:
                S[k] = inj.P or 0.0
            elif inj.i_d is not None or inj.i_q is not None:
                idd, iqq = inj.i_d or 0.0, inj.i_q or 0.0
                S[k] = vm[k] * (idd - 1j * iqq)
                dS[k] = idd - 1j * iqq
            else:
                S[k] = (inj.P or 0.0) + 1j * (inj.Q or 0.0)
        return S, dS

    def mismatch(vm, va):
        V = vm * np.exp(1j * va)
        Ibus = Yc @ V + c
        Scalc = V * np.conj(Ibus)
        Ssp, dSsp = scheduled(vm)
        d = Scalc - Ssp
        F = np.concatenate([d.real[ang], d.imag[mag]])
        return F, V, Ibus, dSsp

    for it in range(max_iter + 1):
        F, V, Ibus, dSsp = mismatch(Vm, Va)
        if not np.all(np.isfinite(F)):
            raise PowerFlowDiverged("non-finite mismatch")
        if np.max(np.abs(F), initial=0.0) < tol:
            break
        if it == max_iter:
            raise PowerFlowDiverged(
                f"no convergence in {max_iter} iterations (mismatch {np.max(np.abs(F)):.3e})"
            )
        dS_dVa = 1j * np.diag(V) @ np.conj(np.diag(Ibus) - Yc @ np.diag(V))
        Vn = V / np.abs(V)
        dS_dVm = np.diag(V) @ np.conj(Yc @ np.diag(Vn)) + np.conj(np.diag(Ibus)) @ np.diag(Vn)
        dS_dVm = dS_dVm - np.diag(dSsp)
        Jac = np.block(
            [
                [dS_dVa.real[np.ix_(ang, ang)], dS_dVm.real[np.ix_(ang, mag)]],
                [dS_dVa.imag[np.ix_(mag, ang)], dS_dVm.imag[np.ix_(mag, mag)]],
            ]
        )
        try:
            dx = np.linalg.solve(Jac, -F)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowDiverged("singular power-flow Jacobian") from exc
        Va[ang] += dx[: len(ang)]
        Vm[mag] += dx[len(ang):]
        if np.any(Vm <= 0):
            raise PowerFlowDiverged("voltage collapsed to a nonpositive magnitude")

    V = Vm * np.exp(1j * Va)
    return OperatingPoint.from_phasors(V, Yc @ V + c)


@dataclass
class ResidualReport:
    current_residual: np.ndarray
    gfm_vq: np.ndarray
    tol: float
    issues: list[str]

    @property
    def ok(self) -> bool:
        return not self.issues

    @property
    def max_residual(self) -> float:
        return float(np.max(self.current_residual, initial=0.0))


def validate_operating_point(rn: ReducedNetwork, op: OperatingPoint, tol: float = PF_TOL) -> ResidualReport:
    """Nodal current balance and GFM frame alignment; report only."""
    Yc, c = _steady_admittance(rn)
    res = np.abs(Yc @ op.voltage_phasors() + c - op.current_phasors())
    vq = np.abs(op.v_q[rn.n:])
    issues = []
    for k in np.flatnonzero(res > tol):
        issues.append(f"node {k}: current balance residual {res[k]:.3e}")
    for k in np.flatnonzero(vq > tol):
        issues.append(f"GFM {rn.n + k}: v_q = {op.v_q[rn.n + k]:.3e} (must be 0)")
    return ResidualReport(res, vq, tol, issues)
