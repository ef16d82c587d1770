"""Command-line front end: ``hdridge {simulate,theory,sweep,blpc} --config run.toml``."""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, io, rmt
from .config import IDENTITY_ONLY, RunConfig, parse_config
from .errors import HdRidgeError, ValidationError
from .harness import BETA_POLICY, run_scenario, sweep
from .spectrum import SpectralLaw, build_block_covariance

THREADS_ENV = "HDRIDGE_THREADS"


def _threads(cli_value: int | None, cfg: RunConfig) -> int:
    """Worker count: ``--threads``, then ``HDRIDGE_THREADS``, then the config."""
    if cli_value is not None:
        return cli_value
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            v = int(env)
        except ValueError:
            raise ValidationError([f"{THREADS_ENV} must be a positive integer, got {env!r}"]) from None
        if v < 1:
            raise ValidationError([f"{THREADS_ENV} must be a positive integer, got {env!r}"])
        return v
    return cfg.threads


class _Outputs:
    """Tracks written files so a failed run can remove them."""

    def __init__(self, root: Path, fmt: str):
        self.root = root
        self.fmt = fmt
        self.written: list[Path] = []
        self.created_root = not root.exists()

    def open(self):
        self.root.mkdir(parents=True, exist_ok=True)

    def table(self, stem: str, rows, columns) -> Path:
        path = self.root / f"{stem}.{self.fmt}"
        self.written.append(path)
        return io.write_rows(path, rows, columns, self.fmt)

    def json(self, name: str, data: dict) -> Path:
        path = self.root / name
        self.written.append(path)
        path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
        return path

    def cleanup(self):
        for p in self.written:
            p.unlink(missing_ok=True)
        if self.created_root and self.root.exists() and not any(self.root.iterdir()):
            self.root.rmdir()


def theory_predictions(cfg: RunConfig) -> list[tuple[str, float, rmt.AsymptoticPrediction]]:
    """(scenario_id, grid lambda, prediction) for every theory grid point and formula."""
    cov = build_block_covariance(cfg.block_specs())
    laws = cov.laws()
    identity = cov.is_identity()
    t = cfg.theory
    formulas = t.formulas or (("S", "R", "RW", "RZ", "B", "BW", "BZ") if identity else ("R", "B", "BW", "BZ"))
    if not identity and any(f in IDENTITY_ONLY for f in formulas):
        raise ValidationError([f"formulas {list(IDENTITY_ONLY)} need an identity covariance"])
    ov = cfg.overrides
    out = []
    for h2 in t.h2:
        for om in t.omega:
            for lam_cfg in t.lam:
                star = rmt.optimal_lambda(h2, om)
                lam = star if lam_cfg is None else lam_cfg
                sid = f"theory/h2={h2!r}/omega={om!r}/lambda={'optimal' if lam_cfg is None else repr(lam)}"
                om_w, om_z = om * t.n_over_n_w, om * t.n_over_n_z
                closed = rmt.a2_identity_closed_forms(h2, om, om_w, om_z, lam) if identity else None
                for f in formulas:
                    if f in ("S", "RW", "RZ"):
                        out.append((sid, lam, closed[f]))
                    elif f == "R":
                        if lam_cfg is None:
                            out.append((sid, lam, rmt.a2_ridge(h2, om, SpectralLaw.pooled(laws))))
                        if identity:
                            out.append((sid, lam, closed["R"]))
                    elif f == "B":
                        out.append((sid, lam, rmt.a2_block_ridge(h2, om, laws, lam, cross_term=ov.r3_form)))
                    elif f == "BW":
                        out.append((sid, lam, rmt.a2_block_ref(h2, om, laws, lam, "W", om_w, ov.thm3_inner_n)))
                    elif f == "BZ":
                        out.append((sid, lam, rmt.a2_block_ref(h2, om, laws, lam, "Z", om_z)))
    return out


def metadata(cfg: RunConfig, threads: int) -> dict:
    return {
        "command": cfg.command,
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "threads": threads,
        "beta_policy": BETA_POLICY,
        "conditional_theory": "BLPC and non-identity marginal theory use replication 0's training design",
        "overrides": dataclasses.asdict(cfg.overrides),
        "versions": {
            "hdridge": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def execute(cfg: RunConfig, threads: int) -> Path:
    """Run ``cfg`` and write its outputs; on any error the partial files are removed."""
    out = _Outputs(Path(cfg.output_dir), cfg.format)
    try:
        if cfg.command == "theory":
            preds = theory_predictions(cfg)  # computed before any file exists
            out.open()
            rows = []
            for sid, lam, pred in preds:
                row = io.theory_row(sid, pred)
                row["lambda"] = lam
                rows.append(row)
            out.table("theory", rows, io.THEORY_COLUMNS)
        else:
            base = cfg.to_scenario()
            base.validate()
            if cfg.command == "sweep":
                summaries = sweep(cfg.sweep.axis, cfg.sweep.values, base, threads)
            else:
                summaries = [run_scenario(base, threads)]
            out.open()
            out.table("results", [r for s in summaries for r in io.result_rows(s)], io.RESULT_COLUMNS)
            out.table("summary", [r for s in summaries for r in io.summary_rows(s)], io.SUMMARY_COLUMNS)
            out.table("theory", [r for s in summaries for r in io.theory_rows(s)], io.THEORY_COLUMNS)
        out.json("metadata.json", metadata(cfg, threads))
    except BaseException:
        out.cleanup()
        raise
    return out.root


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdridge", description=__doc__)
    ap.add_argument("--version", action="version", version=f"hdridge {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "run one scenario and write results, summary and theory tables",
        "theory": "evaluate asymptotic formulas over an (h2, omega, lambda) grid",
        "sweep": "run a scenario over a grid of one axis",
        "blpc": "run BLPC ridge over (tau, lambda scale) pairs",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--threads", type=int, help=f"worker count (fallback: ${THREADS_ENV}, then config)")
        p.add_argument("--seed", type=int, help="base seed (overrides config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config, args.command)
        changes = {}
        if args.out is not None:
            changes["output_dir"] = args.out
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ValidationError(["--seed must be an unsigned 64-bit integer"])
            changes["seed"] = args.seed
        if args.threads is not None and args.threads < 1:
            raise ValidationError(["--threads must be >= 1"])
        cfg = dataclasses.replace(cfg, **changes)
        threads = _threads(args.threads, cfg)
        root = execute(cfg, threads)
    except ValidationError as exc:
        print("hdridge: invalid configuration:", file=sys.stderr)
        for p in exc.problems:
            print(f"  - {p}", file=sys.stderr)
        return 2
    except HdRidgeError as exc:
        print(f"hdridge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {cfg.command} outputs to {root}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
