"""Command-line front end.

Exit codes: 0 when the analysis ran (verdicts are data), 2 for input
errors, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .casefile import PARAM_PATHS, System, build_system, load_case
from .criteria import margins
from .decoupling import coupling_index, default_grid
from .errors import InputError, NumericalError, PreconditionGfmUnstable
from .matrixphase import small_phase_check
from .simulate import ANALYSES, SimScenario, envelope_verdict, simulate_system, sweep

log = logging.getLogger(__name__)


@dataclasses.dataclass
class AnalysisConfig:
    command: str
    case: str
    out: str | None = None
    format: str = "text"
    seed: int = 0
    approximate: bool = False
    epsilon: float = 0.05
    decouple_points: int = 200
    margin_points: int = 50
    phase_points: int = 400
    augmentation: float = 0.1
    sector_tol: float = 1e-9
    duration: float = 5.0
    step: float | None = None
    converter: int = 0
    amplitude: float = 0.01
    random_perturbation: bool = False
    sample_every: int = 10
    param: str | None = None
    start: float | None = None
    stop: float | None = None
    steps: int = 11
    analyses: list[str] = dataclasses.field(default_factory=lambda: list(ANALYSES))
    jobs: int = 1

    def check(self) -> None:
        for name in ("epsilon", "augmentation", "sector_tol", "duration", "amplitude"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        if self.step is not None and not self.step > 0:
            raise InputError("step must be positive")
        for name in ("decouple_points", "margin_points", "phase_points", "steps", "jobs", "sample_every"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be at least 1")
        if self.format not in ("text", "json"):
            raise InputError("format must be text or json")
        unknown = set(self.analyses) - set(ANALYSES)
        if unknown:
            raise InputError(f"unknown analyses: {', '.join(sorted(unknown))}")
        if self.command == "sweep":
            if self.param not in PARAM_PATHS:
                raise InputError(f"--param must be one of {', '.join(PARAM_PATHS)}")
            if self.start is None or self.stop is None:
                raise InputError("sweep needs --from and --to")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def _fmt(x: Any) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    return "" if x is None else str(x)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


class Report:
    """Collects summary values and prints them as text or JSON."""

    def __init__(self, cfg: AnalysisConfig):
        self.cfg = cfg
        self.data: dict[str, Any] = {}
        self.out = Path(cfg.out) if cfg.out else None
        if self.out:
            self.out.mkdir(parents=True, exist_ok=True)
            (self.out / "config.json").write_text(cfg.to_json() + "\n")

    def csv(self, name: str, header, rows) -> None:
        if self.out:
            write_csv(self.out / name, header, rows)

    def emit(self) -> None:
        if self.out:
            (self.out / "summary.json").write_text(json.dumps(self.data, indent=2, default=_jsonable) + "\n")
        if self.cfg.format == "json":
            print(json.dumps({"config": dataclasses.asdict(self.cfg), **self.data}, indent=2, default=_jsonable))
            return
        print(f"# config: {self.cfg.to_json()}")
        for key, value in self.data.items():
            if isinstance(value, float):
                value = _fmt(value)
            elif isinstance(value, (list, dict)):
                value = json.dumps(value, default=_jsonable)
            print(f"{key}: {value}")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def _system(cfg: AnalysisConfig) -> System:
    return build_system(load_case(cfg.case), approximate=cfg.approximate)


def cmd_analyze(cfg: AnalysisConfig, rep: Report) -> None:
    system = _system(cfg)
    ms = system.modes()
    rep.csv("modes.csv", ("re", "im", "zeta", "hz", "label"), ms.rows())
    dom = ms.dominant()
    rep.data.update(
        n_gfl=system.model.n,
        n_gfm=system.model.m,
        modes=len(ms),
        max_real=ms.max_real,
        dominant=None if dom is None else {"re": dom.real, "im": dom.imag, "hz": dom.imag / (2 * np.pi)},
        verdict="STABLE" if ms.max_real < 0 else "UNSTABLE",
    )


def cmd_decouple(cfg: AnalysisConfig, rep: Report) -> None:
    model = _system(cfg).model
    report = coupling_index(model, default_grid(model, cfg.decouple_points), cfg.epsilon)
    rep.csv("decouple.csv", ("omega", "delta", "eps_hat"), zip(report.omega, report.delta_curve, report.index_curve))
    rep.data.update(
        coupling_index=report.coupling_index,
        delta_min=report.delta_min,
        offdiag_energy=report.offdiag_energy,
        damping_lower_bound=report.damping_lower_bound,
        epsilon=cfg.epsilon,
        verdict=report.verdict(),
    )


def cmd_margins(cfg: AnalysisConfig, rep: Report) -> None:
    system = _system(cfg)
    report = margins(system.model, system.rn, points=cfg.margin_points)
    rep.csv("margins.csv", ("omega", "d_gfm"), zip(report.omegas, report.d_gfm_curve))
    rep.data.update(report.summary())


def cmd_phase(cfg: AnalysisConfig, rep: Report) -> None:
    model = _system(cfg).model
    try:
        prof = small_phase_check(model, augmentation=cfg.augmentation, points=cfg.phase_points, tol=cfg.sector_tol)
    except PreconditionGfmUnstable as exc:
        rep.data.update(verdict="refused", reason=f"precondition failed: {exc}")
        return
    rep.csv("phase.csv", ("omega", "phi_net_max", "phi_net_min", "gfl_max", "gfl_min", "margin"), prof.rows())
    rep.data.update(
        verdict=prof.verdict,
        min_margin=prof.min_margin,
        high_frequency_margin=prof.high_frequency_margin,
        sectorial_points=int(prof.sectorial.sum()),
        grid_points=len(prof.omega),
        d_gfm=prof.d_gfm,
        notes=prof.notes,
    )


def cmd_simulate(cfg: AnalysisConfig, rep: Report) -> None:
    system = _system(cfg)
    theta0 = None
    if cfg.random_perturbation:
        rng = np.random.default_rng(cfg.seed)
        theta0 = rng.normal(0.0, cfg.amplitude, system.model.N)
    scen = SimScenario(theta0, cfg.converter, cfg.amplitude, cfg.duration, cfg.step, cfg.sample_every)
    res = simulate_system(system, scen)
    names, table = res.table()
    rep.csv("timeseries.csv", names, table)
    rep.data.update(
        samples=len(res.t),
        end_time=float(res.t[-1]),
        blowup_time=res.blowup_time,
        max_real=system.modes().max_real,
        envelope=envelope_verdict(res),
    )


SWEEP_COLUMNS = (
    "param",
    "ok",
    "max_re",
    "max_re_gfl",
    "max_re_gfm",
    "d_gfl",
    "d_gfm",
    "eps_hat",
    "verdict_modes",
    "verdict_decoupling",
    "verdict_phase",
    "error",
)


def cmd_sweep(cfg: AnalysisConfig, rep: Report) -> None:
    case = load_case(cfg.case)
    values = np.linspace(cfg.start, cfg.stop, cfg.steps)
    res = sweep(case, cfg.param, values, cfg.analyses, jobs=cfg.jobs)
    rep.csv("sweep.csv", SWEEP_COLUMNS, ([r.get(c) for c in SWEEP_COLUMNS] for r in res.rows))
    rep.data.update(
        param=cfg.param,
        rows=len(res.rows),
        failed=res.failed,
        crossings=[dataclasses.asdict(c) for c in res.crossings],
        note=_bracket_note(res),
    )


def _bracket_note(res) -> str:
    if not res.crossings:
        return "no sign change on the grid"
    parts = [f"{c.quantity} changes sign in [{_fmt(c.lower)}, {_fmt(c.upper)}], at ~{_fmt(c.estimate)}" for c in res.crossings]
    return "; ".join(parts)


HANDLERS = {
    "analyze": cmd_analyze,
    "decouple": cmd_decouple,
    "margins": cmd_margins,
    "phase": cmd_phase,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gfmgfl", description="Small-signal stability of GFM/GFL converter networks")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("case", nargs="?", help="case JSON file or bundled case name")
    common.add_argument("--config", help="re-run from an echoed config.json")
    common.add_argument("--out", help="directory for CSV/JSON outputs")
    common.add_argument("--format", choices=("text", "json"))
    common.add_argument("--seed", type=int)
    common.add_argument("--approximate", action="store_true", default=None, help="use H = T_J and drop D_lm")
    common.add_argument("-v", "--verbose", action="store_true")

    sub.add_parser("analyze", parents=[common], help="modes and stability verdict")
    p = sub.add_parser("decouple", parents=[common], help="coupling index and damping bound")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--points", dest="decouple_points", type=int)
    p = sub.add_parser("margins", parents=[common], help="decentralized margins")
    p.add_argument("--points", dest="margin_points", type=int)
    p = sub.add_parser("phase", parents=[common], help="small-phase check")
    p.add_argument("--points", dest="phase_points", type=int)
    p.add_argument("--augmentation", type=float)
    p.add_argument("--sector-tol", dest="sector_tol", type=float)
    p = sub.add_parser("simulate", parents=[common], help="linear time-domain simulation")
    p.add_argument("--duration", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--converter", type=int, help="0-based index of the perturbed converter")
    p.add_argument("--amplitude", type=float)
    p.add_argument("--random", dest="random_perturbation", action="store_true", default=None)
    p.add_argument("--sample-every", dest="sample_every", type=int, help="keep every k-th step")
    p = sub.add_parser("sweep", parents=[common], help="one-parameter sweep")
    p.add_argument("--param", choices=PARAM_PATHS)
    p.add_argument("--from", dest="start", type=float)
    p.add_argument("--to", dest="stop", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--analyses", type=lambda s: s.split(","))
    p.add_argument("--jobs", type=int)
    return parser


def make_config(args: argparse.Namespace) -> AnalysisConfig:
    values: dict[str, Any] = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        if values.get("command", args.command) != args.command:
            raise InputError(f"config is for '{values['command']}', not '{args.command}'")
    fields = {f.name for f in dataclasses.fields(AnalysisConfig)}
    unknown = set(values) - fields
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, value in vars(args).items():
        if key in fields and value is not None:
            values[key] = value
    values["command"] = args.command
    if not values.get("case"):
        raise InputError("no case given")
    cfg = AnalysisConfig(**values)
    cfg.check()
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = make_config(args)
        rep = Report(cfg)
        HANDLERS[cfg.command](cfg, rep)
        rep.emit()
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
