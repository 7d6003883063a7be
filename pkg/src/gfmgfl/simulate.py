"""Linear time-domain simulation and parameter sweeps.

The disturbance is an initial angle offset on one converter; the reduced
model has no grid-voltage input to perturb.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.signal import find_peaks

from .casefile import Case, System, build_system, set_parameter
from .criteria import margin_gfl, margin_gfm
from .decoupling import coupling_index, split_subsystems
from .errors import GfmGflError, PreconditionGfmUnstable
from .matrixphase import small_phase_check
from .smallsignal import SmallSignalModel

log = logging.getLogger(__name__)

DEFAULT_DURATION = 5.0
MAX_STEP = 1e-4
OVERFLOW = 1e150


@dataclass
class SimScenario:
    theta0: np.ndarray | None = None
    converter: int = 0
    amplitude: float = 0.01
    duration: float = DEFAULT_DURATION
    step: float | None = None
    sample_every: int = 1

    def __post_init__(self):
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        if self.step is not None and self.duration < self.step:
            raise ValueError("duration must be at least one step")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")

    def initial_state(self, dim: int, N: int) -> np.ndarray:
        x0 = np.zeros(dim)
        if self.theta0 is not None:
            th = np.asarray(self.theta0, dtype=float)
            if th.shape != (N,):
                raise ValueError(f"theta0 needs {N} entries")
            x0[:N] = th
        elif N:
            if not 0 <= self.converter < N:
                raise ValueError(f"converter index {self.converter} out of range")
            x0[self.converter] = self.amplitude
        return x0


def default_step(A: np.ndarray) -> float:
    lam = np.abs(np.linalg.eigvals(A)).max(initial=0.0)
    return MAX_STEP if lam == 0 else min(MAX_STEP, 0.05 / lam)


def rk4_propagator(A: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step for a linear system, as a matrix."""
    hA = h * A
    P = np.eye(len(A))
    term = np.eye(len(A))
    for k in range(1, 5):
        term = term @ hA / k
        P = P + term
    return P


@dataclass
class SimResult:
    t: np.ndarray
    x: np.ndarray
    N: int
    n: int
    P_gfm: np.ndarray | None = None
    blowup_time: float | None = None

    @property
    def theta(self) -> np.ndarray:
        return self.x[:, : self.N]

    @property
    def omega(self) -> np.ndarray:
        return self.x[:, self.N : 2 * self.N]

    def table(self) -> tuple[list[str], np.ndarray]:
        N, n = self.N, self.n
        names = ["t"] + [f"dtheta_{k + 1}" for k in range(N)] + [f"domega_{k + 1}" for k in range(N)]
        cols = [self.t[:, None], self.theta, self.omega]
        if self.P_gfm is not None:
            names += [f"dP_gfm_{k + 1}" for k in range(n, N)]
            cols.append(self.P_gfm)
        return names, np.hstack(cols)


def simulate(
    A: np.ndarray,
    scenario: SimScenario | None = None,
    model: SmallSignalModel | None = None,
    N: int | None = None,
) -> SimResult:
    """Integrate ``dx/dt = A x`` from the scenario's perturbed state.

    A trajectory that overflows is truncated and its time recorded in
    ``blowup_time`` instead of raising.
    """
    scenario = scenario or SimScenario()
    A = np.asarray(A, dtype=float)
    dim = len(A)
    if model is not None:
        N, n = model.N, model.n
    else:
        N, n = (dim // 2 if N is None else N), 0
    h = scenario.step or default_step(A)
    steps = max(1, int(round(scenario.duration / h)))
    P = rk4_propagator(A, h)
    stride = scenario.sample_every
    x = scenario.initial_state(dim, N)
    out = np.empty((steps // stride + 1, dim))
    out[0] = x
    blowup = None
    k_out = 1
    for k in range(1, steps + 1):
        x = P @ x
        if not np.all(np.isfinite(x)) or np.abs(x).max() > OVERFLOW:
            blowup = k * h
            log.info("trajectory overflowed at t=%.4g s", blowup)
            break
        if k % stride == 0:
            out[k_out] = x
            k_out += 1
    out = out[:k_out]
    t = np.arange(k_out) * stride * h
    P_gfm = gfm_power(model, out) if model is not None and model.m else None
    return SimResult(t, out, N, n, P_gfm, blowup)


def gfm_power(model: SmallSignalModel, x: np.ndarray) -> np.ndarray:
    """``v_d * (L3 dtheta_gfl + I_q dtheta_gfm + w0^2 z1)`` per GFM."""
    n, m, N = model.n, model.m, model.N
    th_l = x[:, :n]
    th_m = x[:, n:N]
    z1 = x[:, 2 * N : 2 * N + m]
    M = th_l @ model.L3.T + th_m @ model.I_gfm_q.T + model.omega0**2 * z1
    return M * model.v_d[n:]


def simulate_system(system: System, scenario: SimScenario | None = None) -> SimResult:
    return simulate(system.A(), scenario, system.model)


def growth_rate(t: np.ndarray, y: np.ndarray, window: float = 0.5) -> float:
    """Exponential growth rate of an output envelope, 1/s.

    ``y`` may be a vector signal (its norm is used).  The fit uses the last
    ``window`` fraction of the record, through the envelope peaks when the
    signal oscillates.
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    mag = np.linalg.norm(y, axis=1) if y.ndim == 2 else np.abs(y)
    keep = (t >= t[-1] * (1 - window)) & (mag > 0)
    t, mag = t[keep], mag[keep]
    if len(t) < 3:
        raise ValueError("too few samples to fit a growth rate")
    logy = np.log(mag)
    peaks, _ = find_peaks(logy)
    if len(peaks) >= 3:
        t, logy = t[peaks], logy[peaks]
    return float(np.polyfit(t, logy, 1)[0])


def envelope_verdict(result: SimResult) -> str:
    """'grow' or 'decay' from the envelope over the last third of the run."""
    if result.blowup_time is not None:
        return "grow"
    return "grow" if growth_rate(result.t, result.x[:, : 2 * result.N], window=1 / 3) > 0 else "decay"


# ---------------------------------------------------------------------------
# sweeps

ANALYSES = ("modes", "margins", "decoupling", "phase")
CROSSING_QUANTITIES = ("max_re", "max_re_gfl", "max_re_gfm", "d_gfl", "d_gfm")


def analyze_point(case: Case, path: str, value: float, analyses: Sequence[str] = ANALYSES) -> dict:
    row: dict = {"param": float(value), "ok": True, "error": ""}
    try:
        system = build_system(set_parameter(case, path, value))
        model = system.model
        if "modes" in analyses:
            row["max_re"] = system.modes().max_real
            row["verdict_modes"] = "stable" if row["max_re"] < 0 else "unstable"
            if model.n and model.m:
                sub = split_subsystems(model)
                row["max_re_gfl"] = sub.gfl.max_real
                row["max_re_gfm"] = sub.gfm.max_real
        if "margins" in analyses:
            if model.n:
                row["d_gfl"] = margin_gfl(model)
            if model.m:
                row["d_gfm"] = margin_gfm(model)[0]
        if "decoupling" in analyses and model.n and model.m:
            rep = coupling_index(model)
            row["eps_hat"] = rep.coupling_index
            row["verdict_decoupling"] = rep.verdict()
        if "phase" in analyses and model.n:
            try:
                row["verdict_phase"] = small_phase_check(model).verdict
            except PreconditionGfmUnstable:
                row["verdict_phase"] = "refused"
    except (GfmGflError, np.linalg.LinAlgError) as exc:
        row.update(ok=False, error=f"{type(exc).__name__}: {exc}")
    return row


def _sig_tolerance(x: float, digits: int = 3) -> float:
    if x == 0:
        return 10.0 ** (-digits)
    return 0.5 * 10.0 ** (math.floor(math.log10(abs(x))) - digits + 1)


def bisect_crossing(f: Callable[[float], float], a: float, b: float, fa: float, digits: int = 3) -> float:
    """Sign change of ``f`` in ``[a, b]`` located to ``digits`` significant digits."""
    for _ in range(100):
        mid = 0.5 * (a + b)
        if abs(b - a) <= _sig_tolerance(mid, digits):
            return mid
        fm = f(mid)
        if not np.isfinite(fm):
            return mid
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


@dataclass
class Crossing:
    quantity: str
    lower: float
    upper: float
    estimate: float


@dataclass
class SweepResult:
    path: str
    rows: list[dict]
    crossings: list[Crossing] = field(default_factory=list)

    def critical(self, quantity: str) -> list[float]:
        return [c.estimate for c in self.crossings if c.quantity == quantity]

    @property
    def failed(self) -> int:
        return sum(not r["ok"] for r in self.rows)


def sweep(
    case: Case,
    path: str,
    values: Sequence[float],
    analyses: Sequence[str] = ANALYSES,
    refine: bool = True,
    jobs: int = 1,
) -> SweepResult:
    values = [float(v) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            k = len(values)
            rows = list(pool.map(analyze_point, [case] * k, [path] * k, values, [tuple(analyses)] * k))
    else:
        rows = [analyze_point(case, path, v, analyses) for v in values]
    result = SweepResult(path, rows)
    if not refine:
        return result
    for q in CROSSING_QUANTITIES:
        pts = [(r["param"], r[q]) for r in rows if r["ok"] and r.get(q) is not None and np.isfinite(r[q])]
        for (a, fa), (b, fb) in zip(pts, pts[1:]):
            if (fa > 0) == (fb > 0):
                continue

            def f(v, q=q):
                r = analyze_point(case, path, v, _needs(q))
                return r.get(q, np.nan) if r["ok"] else np.nan

            result.crossings.append(Crossing(q, a, b, bisect_crossing(f, a, b, fa)))
    return result


def _needs(quantity: str) -> tuple[str, ...]:
    return ("margins",) if quantity.startswith("d_") else ("modes",)
