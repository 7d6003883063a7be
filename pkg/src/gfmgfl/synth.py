"""Random case generator for property tests and randomized studies.

Cases are radial-plus-mesh networks: every converter hangs off a hub bus,
hubs form a chain with a few extra ties, and each hub connects to the
infinite bus.  Loading is kept light so the power flow always converges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CaseRanges:
    tau: tuple[float, float] = (0.05, 0.2)
    x_converter: tuple[float, float] = (0.05, 0.2)
    x_hub: tuple[float, float] = (0.05, 0.2)
    x_grid: tuple[float, float] = (0.1, 0.3)
    current: tuple[float, float] = (0.1, 0.5)
    power: tuple[float, float] = (0.0, 0.4)
    kP: tuple[float, float] = (5.0, 20.0)
    kI: tuple[float, float] = (2000.0, 5000.0)
    J: tuple[float, float] = (1.0, 8.0)
    D: tuple[float, float] = (10.0, 40.0)


DECOUPLED = CaseRanges()
COUPLED = CaseRanges(current=(0.5, 0.9), power=(0.3, 0.6), J=(0.2, 1.0), D=(0.5, 20.0), kP=(0.3, 10.0))


def _u(rng: np.random.Generator, r: tuple[float, float]) -> float:
    return float(rng.uniform(*r))


def random_case(
    rng: np.random.Generator,
    n: int,
    m: int,
    phi: float | None = 0.0,
    ranges: CaseRanges = DECOUPLED,
    hubs: int | None = None,
) -> dict:
    """Case-file dict with ``n`` GFL and ``m`` GFM converters.

    ``phi`` fixes every GFL power-factor angle; ``None`` draws one per
    converter in [-0.5, 0.5] rad.
    """
    N = n + m
    hubs = hubs or max(1, min(3, N - 1))
    conv = list(range(1, N + 1))
    hub = list(range(N + 1, N + hubs + 1))
    grid = N + hubs + 1
    tau = _u(rng, ranges.tau)
    lines = []
    for b in conv:
        lines.append({"from": b, "to": int(rng.choice(hub)), "x": _u(rng, ranges.x_converter)})
    for a, b in zip(hub, hub[1:]):
        lines.append({"from": a, "to": b, "x": _u(rng, ranges.x_hub)})
    if hubs > 2 and rng.random() < 0.5:
        lines.append({"from": hub[0], "to": hub[-1], "x": _u(rng, ranges.x_hub)})
    for h in hub:
        lines.append({"from": h, "to": grid, "x": _u(rng, ranges.x_grid)})
    for line in lines:
        line["r"] = tau * line["x"]
    converters = []
    for b in conv[:n]:
        ang = float(rng.uniform(-0.5, 0.5)) if phi is None else phi
        i = _u(rng, ranges.current)
        converters.append(
            {
                "node": b,
                "kind": "GFL",
                "kP": _u(rng, ranges.kP),
                "kI": _u(rng, ranges.kI),
                "i_d": i * np.cos(ang),
                "i_q": i * np.sin(ang),
            }
        )
    for b in conv[n:]:
        converters.append(
            {"node": b, "kind": "GFM", "J": _u(rng, ranges.J), "D": _u(rng, ranges.D), "P": _u(rng, ranges.power)}
        )
    return {
        "name": f"random_{n}p{m}",
        "buses": conv + hub + [grid],
        "lines": lines,
        "tau": tau,
        "infinite_bus": grid,
        "converters": converters,
    }
