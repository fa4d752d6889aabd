"""Command line driver: field loading, experiment configs, reports and exit codes.

Subcommands: ``detect``, ``bump``, ``radial``, ``quadrant``, ``hyperbolize``
and ``duff``. Exit codes: 0 success, 1 input error, 2 detection finished with
diagnostics, 3 a construction stage failed or a tracked cycle was lost.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import re
import sys
from dataclasses import dataclass, replace

from . import constructions, cycles, flow
from .polyfield import (FieldFormatError, Poly2, VectorField, format_field, read_field,
                        translate)

EXIT_OK, EXIT_INPUT, EXIT_DIAGNOSTICS, EXIT_STAGE = 0, 1, 2, 3
COMMANDS = ("detect", "bump", "radial", "quadrant", "hyperbolize", "duff")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one CLI run depends on; the report embeds it."""

    command: str
    field: str
    region: str = "disk:0,0,4"
    translate: tuple[float, float] | None = None
    out: str | None = None
    report: str | None = None
    csv: str | None = None
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_time: float = 1e3
    max_steps: int = 100000
    grid_points: int = 400
    threads: int = 1
    seed: int | None = None
    cycle: int = 0
    alpha_min: float = -0.05
    alpha_max: float = 0.05
    alpha_step: float = 0.005

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["translate"] is not None:
            d["translate"] = list(d["translate"])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("translate") is not None:
            d["translate"] = tuple(float(v) for v in d["translate"])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        return cls.from_dict(json.loads(text))

    def detect_config(self) -> cycles.DetectConfig:
        integ = flow.IntegratorConfig(rel_tol=self.rel_tol, abs_tol=self.abs_tol,
                                      max_time=self.max_time, max_steps=self.max_steps)
        return cycles.DetectConfig(integrator=integ, grid_points=self.grid_points,
                                   threads=self.threads)

    def construction_config(self) -> constructions.ConstructionConfig:
        return constructions.ConstructionConfig(detect=self.detect_config(), region=self.region,
                                                seed=self.seed)

    def alpha_grid(self) -> list[float]:
        if self.alpha_step <= 0:
            raise ValueError("alpha step must be positive")
        n = int(round((self.alpha_max - self.alpha_min) / self.alpha_step))
        grid = [round(self.alpha_min + k * self.alpha_step, 12) for k in range(n + 1)]
        return [a for a in grid if a <= self.alpha_max + 1e-12]


# fields ----------------------------------------------------------------------------

def van_der_pol(mu: float) -> VectorField:
    x, y = Poly2.x(), Poly2.y()
    return VectorField(y, -x + (1 - x * x) * y * mu)


def polar_test_field(power: int) -> VectorField:
    """``(-y + x (r^2 - 1)^k, x + y (r^2 - 1)^k)``: the unit circle has multiplicity k."""
    x, y = Poly2.x(), Poly2.y()
    w = (x * x + y * y - 1) ** power
    return VectorField(-y + x * w, x + y * w)


def builtin_field(name: str):
    m = re.fullmatch(r"vdp:([^:]+)", name)
    if m:
        return van_der_pol(float(m.group(1)))
    m = re.fullmatch(r"ring:(\d+)", name)
    if m:
        return constructions.sin_ring(int(m.group(1)))
    if name == "polar2":
        return polar_test_field(2)
    if name == "polar3":
        return polar_test_field(3)
    return None


def load_field(spec: str):
    """A built-in name (``vdp:<mu>``, ``ring:<k>``, ``polar2``, ``polar3``) or a field file."""
    X = builtin_field(spec)
    if X is not None:
        return X
    return read_field(spec)


# commands ----------------------------------------------------------------------------

def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _report_text(cfg: ExperimentConfig, body: dict) -> str:
    return json.dumps({"config": cfg.to_dict(), **body}, indent=2) + "\n"


def _prepare(cfg: ExperimentConfig):
    X = load_field(cfg.field)
    if cfg.translate is not None:
        if not isinstance(X, VectorField):
            raise ValueError("--translate needs a polynomial field")
        X = translate(X, cfg.translate)
    return X


def run_detect(cfg: ExperimentConfig) -> int:
    X = _prepare(cfg)
    dcfg = cfg.detect_config()
    if cfg.csv:
        dcfg = replace(dcfg, keep_scans=True)
    rep = cycles.detect_cycles(X, cfg.region, dcfg, description=cfg.field)
    _write(cfg.out or cfg.report, _report_text(cfg, {"detection": rep.to_dict()}))
    if cfg.csv:
        _write(cfg.csv, rep.scan_csv())
    return EXIT_DIAGNOSTICS if rep.diagnostics else EXIT_OK


def run_construction(cfg: ExperimentConfig) -> int:
    X = _prepare(cfg)
    if not isinstance(X, VectorField):
        raise ValueError(f"{cfg.command} needs a polynomial field")
    ccfg = cfg.construction_config()
    rep = None
    stage = None
    try:
        if cfg.command == "bump":
            rep = constructions.degree_bump(X, ccfg)
        elif cfg.command == "radial":
            rep = constructions.radial_bump(X, ccfg)
        elif cfg.command == "quadrant":
            rep = constructions.quadrant_transform(X, ccfg)
        else:
            before = cycles.detect_cycles(X, cfg.region, ccfg.detect, description=cfg.field)
            _, _, rep = constructions.hyperbolize(X, before, ccfg)
    except constructions.StageFailure as exc:
        rep, stage = exc.report, exc.stage
        print(f"stage failed: {exc.stage}: {exc.diagnostics}", file=sys.stderr)
    except constructions.CycleNotInQuadrant as exc:
        stage = "first-quadrant"
        print(f"stage failed: first-quadrant: {exc}", file=sys.stderr)
    except constructions.NoImprovingRotation as exc:
        rep, stage = exc.report, "rotation"
        print(f"stage failed: rotation: {exc} (best alpha {exc.best_alpha!r})", file=sys.stderr)
    if rep is not None:
        _write(cfg.report, _report_text(cfg, {"construction": rep.to_dict()}))
        if rep.output_field is not None and cfg.out:
            _write(cfg.out, format_field(rep.output_field, f"{cfg.command} of {cfg.field}"))
    if stage is None and rep is not None and not rep.success:
        stage = "final"
        print("stage failed: final: target not reached", file=sys.stderr)
    return EXIT_OK if stage is None else EXIT_STAGE


def run_duff(cfg: ExperimentConfig) -> int:
    X = _prepare(cfg)
    dcfg = cfg.detect_config()
    rep = cycles.detect_cycles(X, cfg.region, dcfg, description=cfg.field)
    if not 0 <= cfg.cycle < rep.pi:
        print(f"no cycle with index {cfg.cycle} (detected {rep.pi})", file=sys.stderr)
        return EXIT_INPUT
    try:
        pts = cycles.duff_probe(X, rep.cycles[cfg.cycle], cfg.alpha_grid(), dcfg)
    except cycles.LostTrack as exc:
        print(f"lost track at alpha={exc.alpha!r}; last good alpha={exc.last_alpha!r}",
              file=sys.stderr)
        return EXIT_STAGE
    lines = ["alpha,s_star,roots"]
    for p in pts:
        s = "" if p.s_star is None else repr(float(p.s_star))
        lines.append(f"{p.alpha!r},{s},{';'.join(repr(float(r)) for r in p.roots)}")
    _write(cfg.csv or cfg.out, "\n".join(lines) + "\n")
    if cfg.report:
        _write(cfg.report, _report_text(cfg, {"detection": rep.to_dict()}))
    return EXIT_OK


# argument parsing --------------------------------------------------------------------

def _pair(text: str):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected dx,dy")
    return (float(parts[0]), float(parts[1]))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cyclelab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--field", help="field file or vdp:<mu>, ring:<k>, polar2, polar3")
        src.add_argument("--ring", type=int, metavar="K", help="built-in sin-ring field")
        p.add_argument("--config", help="load every setting from an experiment config JSON")
        p.add_argument("--save-config", help="write the resolved config JSON here")
        p.add_argument("--region", default="disk:0,0,4")
        p.add_argument("--translate", type=_pair, metavar="DX,DY",
                       help="use X(x+dx, y+dy) instead of X")
        p.add_argument("--out")
        p.add_argument("--report")
        p.add_argument("--csv")
        p.add_argument("--rel-tol", type=float, default=1e-10)
        p.add_argument("--abs-tol", type=float, default=1e-12)
        p.add_argument("--max-time", type=float, default=1e3)
        p.add_argument("--max-steps", type=int, default=100000)
        p.add_argument("--grid", type=int, default=400, dest="grid_points")
        p.add_argument("--threads", type=int)
        p.add_argument("--seed", type=int)
        if name == "duff":
            p.add_argument("--cycle", type=int, default=0)
            p.add_argument("--alpha-min", type=float, default=-0.05)
            p.add_argument("--alpha-max", type=float, default=0.05)
            p.add_argument("--alpha-step", type=float, default=0.005)
    return ap


def _threads(value) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get("CYCLELAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"CYCLELAB_THREADS must be an integer, got {env!r}") from None
    return 1


def config_from_args(ns) -> ExperimentConfig:
    if ns.config:
        with open(ns.config, encoding="utf-8") as fh:
            cfg = ExperimentConfig.from_json(fh.read())
        if cfg.command != ns.command:
            raise ValueError(f"config is for {cfg.command!r}, not {ns.command!r}")
        return cfg
    if ns.ring is not None:
        field_spec = f"ring:{ns.ring}"
    elif ns.field:
        field_spec = ns.field
    else:
        raise ValueError("one of --field or --ring is required")
    extra = {}
    if ns.command == "duff":
        extra = {"cycle": ns.cycle, "alpha_min": ns.alpha_min, "alpha_max": ns.alpha_max,
                 "alpha_step": ns.alpha_step}
    return ExperimentConfig(command=ns.command, field=field_spec, region=ns.region,
                            translate=ns.translate, out=ns.out, report=ns.report, csv=ns.csv,
                            rel_tol=ns.rel_tol, abs_tol=ns.abs_tol, max_time=ns.max_time,
                            max_steps=ns.max_steps, grid_points=ns.grid_points,
                            threads=_threads(ns.threads), seed=ns.seed, **extra)


def run(cfg: ExperimentConfig) -> int:
    if cfg.command == "detect":
        return run_detect(cfg)
    if cfg.command == "duff":
        return run_duff(cfg)
    return run_construction(cfg)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
        cycles.Region.parse(cfg.region)
        if ns.save_config:
            _write(ns.save_config, cfg.to_json())
        return run(cfg)
    except FieldFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
