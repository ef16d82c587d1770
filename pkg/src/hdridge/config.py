"""TOML run configuration: strict parsing, validation and rendering.

Grammar (every key optional unless noted; unknown keys are an error)::

    command = "simulate"          # simulate | theory | sweep | blpc
    output_dir = "out"
    format = "csv"                # csv | json
    threads = 1
    seed = 0

    [overrides]
    xty_norm = "panel"            # panel | training
    thm3_inner_n = "panel"        # panel | training
    r3_form = "pair"              # pair | resolvent

    [[blocks]]                    # required, training covariance, in order
    kind = "ar1"                  # ar1 | equicorrelated | identity | custom
    size = 50                     # required except for custom
    rho = 0.5
    count = 20                    # repeat this block
    path = "ld.csv"               # custom only, relative to the config file

    [[panel_blocks]]              # optional W covariance, same layout

    [scenario]                    # simulate, sweep, blpc
    id = "s1"
    n = 1000                      # required
    n_w = 1000
    n_z = 1000
    h2 = 0.5                      # required
    sparsity = 1.0
    design = "gaussian"           # gaussian | genotype
    effect_variance = 1.0
    lambda = "optimal"            # "optimal" or a positive number
    replications = 10

    [[estimators]]                # simulate, sweep (fields of EstimatorSpec)
    kind = "ridge"
    label = "R"
    lambda = 1.0
    cov_source = "X"
    grouping = "blocks"
    tau = 0.5
    lam_scale = 1.0
    panel_n = 100

    [sweep]
    axis = "omega"                # omega | h2 | lambda | panel_size | panel_rho
    values = [0.5, 1.0, 2.0]

    [theory]
    h2 = [0.5]
    omega = [0.5, 1.0]
    lambda = ["optimal"]          # "optimal" and/or numbers
    n_over_n_w = 1.0              # omega_w = omega * n_over_n_w
    n_over_n_z = 1.0
    formulas = ["R", "B", "BW", "BZ"]

    [blpc]
    tau = [0.35, 0.5, 0.8]
    lam_scale = [10.0, 1.0, 0.1, 0.01, 0.0]
    grouping = "blocks"
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import tomli
import tomli_w

from .errors import ParseError, ValidationError
from .estimators import EstimatorSpec
from .harness import SWEEP_AXES, Scenario
from .rmt import CROSS_TERMS
from .spectrum import BlockSpec

COMMANDS = ("simulate", "theory", "sweep", "blpc")
FORMATS = ("csv", "json")
BLOCK_KINDS = ("ar1", "equicorrelated", "identity", "custom")
FORMULAS = ("S", "R", "RW", "RZ", "B", "BW", "BZ")
IDENTITY_ONLY = ("S", "RW", "RZ")

TOP_KEYS = {"command", "output_dir", "format", "threads", "seed", "overrides", "blocks", "panel_blocks",
            "scenario", "estimators", "sweep", "theory", "blpc"}
TABLE_KEYS = {
    "overrides": {"xty_norm", "thm3_inner_n", "r3_form"},
    "blocks": {"kind", "size", "rho", "count", "path"},
    "panel_blocks": {"kind", "size", "rho", "count", "path"},
    "scenario": {"id", "n", "n_w", "n_z", "h2", "sparsity", "design", "effect_variance", "lambda", "replications"},
    "estimators": {"kind", "label", "lambda", "cov_source", "grouping", "tau", "lam_scale", "panel_n"},
    "sweep": {"axis", "values"},
    "theory": {"h2", "omega", "lambda", "n_over_n_w", "n_over_n_z", "formulas"},
    "blpc": {"tau", "lam_scale", "grouping"},
}
ARRAY_TABLES = ("blocks", "panel_blocks", "estimators")


@dataclass(frozen=True)
class BlockEntry:
    kind: str
    size: int | None = None
    rho: float = 0.0
    count: int = 1
    path: str | None = None

    def specs(self, base_dir: Path) -> list[BlockSpec]:
        if self.kind == "custom":
            spec = BlockSpec.from_csv(base_dir / self.path)
        elif self.kind == "identity":
            spec = BlockSpec.identity(self.size)
        else:
            spec = BlockSpec(self.kind, int(self.size), float(self.rho))
        return [spec] * self.count


@dataclass(frozen=True)
class ScenarioConfig:
    n: int
    h2: float
    id: str = "scenario"
    n_w: int | None = None
    n_z: int | None = None
    sparsity: float = 1.0
    design: str = "gaussian"
    effect_variance: float = 1.0
    lam: float | None = None
    replications: int = 10


@dataclass(frozen=True)
class SweepConfig:
    axis: str
    values: tuple


@dataclass(frozen=True)
class TheoryConfig:
    h2: tuple = (0.5,)
    omega: tuple = (1.0,)
    lam: tuple = (None,)
    n_over_n_w: float = 1.0
    n_over_n_z: float = 1.0
    formulas: tuple | None = None


@dataclass(frozen=True)
class BlpcConfig:
    tau: tuple = (0.35, 0.5, 0.8)
    lam_scale: tuple = (10.0, 1.0, 0.1, 0.01, 0.0)
    grouping: str = "blocks"


@dataclass(frozen=True)
class Overrides:
    xty_norm: str = "panel"
    thm3_inner_n: str = "panel"
    r3_form: str = "pair"


@dataclass(frozen=True)
class RunConfig:
    command: str
    blocks: tuple
    panel_blocks: tuple | None = None
    scenario: ScenarioConfig | None = None
    estimators: tuple = ()
    sweep: SweepConfig | None = None
    theory: TheoryConfig | None = None
    blpc: BlpcConfig | None = None
    output_dir: str = "out"
    format: str = "csv"
    threads: int = 1
    seed: int = 0
    overrides: Overrides = Overrides()
    base_dir: Path = field(default=Path("."), compare=False)

    def block_specs(self, panel: bool = False) -> list[BlockSpec]:
        entries = self.panel_blocks if panel else self.blocks
        return [s for e in entries for s in e.specs(self.base_dir)]

    def to_scenario(self) -> Scenario:
        sc, ov = self.scenario, self.overrides
        return Scenario(
            blocks=tuple(self.block_specs()),
            n=sc.n,
            h2=sc.h2,
            estimators=tuple(self.estimators) + self.blpc_estimators(),
            n_w=sc.n_w,
            n_z=sc.n_z,
            sparsity=sc.sparsity,
            design_mode=sc.design,
            effect_variance=sc.effect_variance,
            lam=sc.lam,
            replications=sc.replications,
            base_seed=self.seed,
            panel_blocks=None if self.panel_blocks is None else tuple(self.block_specs(panel=True)),
            scenario_id=sc.id,
            xty_norm=ov.xty_norm,
            thm3_inner_n=ov.thm3_inner_n,
            r3_form=ov.r3_form,
        )

    def blpc_estimators(self) -> tuple:
        if self.command != "blpc" or self.blpc is None:
            return ()
        return tuple(
            EstimatorSpec("blpc_block_ridge", grouping=self.blpc.grouping, tau=t, lam_scale=c,
                          label=f"blpc_ridge[tau={t!r},c={c!r}]")
            for t in self.blpc.tau
            for c in self.blpc.lam_scale
        )

    def digest(self) -> str:
        """SHA-256 of the rendered config, ignoring output location and worker count."""
        neutral = replace(self, output_dir=".", threads=1)
        return hashlib.sha256(render_config(neutral).encode()).hexdigest()


# ---------------------------------------------------------------------------
# parsing


def _line_of(text: str, key: str) -> int | None:
    m = re.search(rf"^\s*{re.escape(key)}\s*=", text, flags=re.M)
    return None if m is None else text.count("\n", 0, m.start()) + 1


def _check_keys(text: str, data: dict) -> None:
    def fail(key, where):
        line = _line_of(text, key)
        at = f" (line {line})" if line else ""
        raise ParseError(f"unknown key {key!r} in {where}{at}")

    for k in data:
        if k not in TOP_KEYS:
            fail(k, "top level")
    for table, allowed in TABLE_KEYS.items():
        if table not in data:
            continue
        val = data[table]
        items = val if table in ARRAY_TABLES else [val]
        if table in ARRAY_TABLES and not isinstance(val, list):
            raise ParseError(f"[{table}] must be an array of tables ([[{table}]])")
        for i, item in enumerate(items):
            if not isinstance(item, dict):
                raise ParseError(f"[{table}] must be a table")
            for k in item:
                if k not in allowed:
                    fail(k, f"[{table}]" if table not in ARRAY_TABLES else f"[[{table}]] #{i}")


class _Collector:
    """Type coercion that records every problem instead of stopping at the first."""

    def __init__(self):
        self.problems: list[str] = []

    def get(self, d, key, where, kind, default=None, required=False):
        if key not in d:
            if required:
                self.problems.append(f"{where}: missing required key {key!r}")
            return default
        v = d[key]
        try:
            return _coerce(v, kind)
        except (TypeError, ValueError) as exc:
            self.problems.append(f"{where}.{key}: {exc}")
            return default


def _coerce(v, kind):
    if kind == "int":
        if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
            raise ValueError(f"expected an integer, got {v!r}")
        return int(v)
    if kind == "float":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValueError(f"expected a number, got {v!r}")
        return float(v)
    if kind == "str":
        if not isinstance(v, str):
            raise ValueError(f"expected a string, got {v!r}")
        return v
    if kind == "lam":
        if v == "optimal":
            return None
        return _coerce(v, "float")
    if kind.startswith("list:"):
        if not isinstance(v, list):
            raise ValueError(f"expected an array, got {v!r}")
        return tuple(_coerce(x, kind[5:]) for x in v)
    raise AssertionError(kind)


def _blocks(c: _Collector, raw, where: str) -> tuple:
    out = []
    for i, b in enumerate(raw):
        w = f"{where}[{i}]"
        kind = c.get(b, "kind", w, "str", "ar1")
        if kind not in BLOCK_KINDS:
            c.problems.append(f"{w}.kind must be one of {BLOCK_KINDS}, got {kind!r}")
        size = c.get(b, "size", w, "int", None, required=kind != "custom")
        if size is not None and size < 1:
            c.problems.append(f"{w}.size must be >= 1")
        count = c.get(b, "count", w, "int", 1)
        if count < 1:
            c.problems.append(f"{w}.count must be >= 1")
        path = c.get(b, "path", w, "str", None, required=kind == "custom")
        if path is not None and kind != "custom":
            c.problems.append(f"{w}.path only applies to custom blocks")
        rho = c.get(b, "rho", w, "float", 0.0)
        entry = BlockEntry(kind, size, rho, count, path)
        if kind in ("ar1", "equicorrelated") and size is not None:
            try:
                BlockSpec(kind, size, rho).validate()
            except Exception as exc:
                c.problems.append(f"{w}: {exc}")
        out.append(entry)
    return tuple(out)


def parse_text(text: str, base_dir: str | Path = ".", command: str | None = None) -> RunConfig:
    """Parse and validate TOML ``text``; ``command`` overrides the file's command."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ParseError(f"malformed TOML: {exc}") from exc
    _check_keys(text, data)
    c = _Collector()

    cmd = command or c.get(data, "command", "config", "str", None, required=True)
    if command and "command" in data and data["command"] != command:
        c.problems.append(f"config command {data['command']!r} does not match requested {command!r}")
    if cmd is not None and cmd not in COMMANDS:
        c.problems.append(f"command must be one of {COMMANDS}, got {cmd!r}")
    fmt = c.get(data, "format", "config", "str", "csv")
    if fmt not in FORMATS:
        c.problems.append(f"format must be one of {FORMATS}, got {fmt!r}")
    threads = c.get(data, "threads", "config", "int", 1)
    if threads < 1:
        c.problems.append("threads must be >= 1")
    seed = c.get(data, "seed", "config", "int", 0)
    if not 0 <= seed < 2**64:
        c.problems.append("seed must be an unsigned 64-bit integer")
    out_dir = c.get(data, "output_dir", "config", "str", "out")

    ov_raw = data.get("overrides", {})
    ov = Overrides(
        c.get(ov_raw, "xty_norm", "overrides", "str", "panel"),
        c.get(ov_raw, "thm3_inner_n", "overrides", "str", "panel"),
        c.get(ov_raw, "r3_form", "overrides", "str", "pair"),
    )
    for k, allowed in (("xty_norm", ("panel", "training")), ("thm3_inner_n", ("panel", "training")),
                       ("r3_form", CROSS_TERMS)):
        if getattr(ov, k) not in allowed:
            c.problems.append(f"overrides.{k} must be one of {allowed}, got {getattr(ov, k)!r}")

    if "blocks" not in data or not data["blocks"]:
        c.problems.append("need at least one [[blocks]] entry")
    blocks = _blocks(c, data.get("blocks", []), "blocks")
    panel = _blocks(c, data["panel_blocks"], "panel_blocks") if "panel_blocks" in data else None

    scenario = None
    if "scenario" in data:
        s = data["scenario"]
        scenario = ScenarioConfig(
            n=c.get(s, "n", "scenario", "int", 3, required=True),
            h2=c.get(s, "h2", "scenario", "float", 0.5, required=True),
            id=c.get(s, "id", "scenario", "str", "scenario"),
            n_w=c.get(s, "n_w", "scenario", "int", None),
            n_z=c.get(s, "n_z", "scenario", "int", None),
            sparsity=c.get(s, "sparsity", "scenario", "float", 1.0),
            design=c.get(s, "design", "scenario", "str", "gaussian"),
            effect_variance=c.get(s, "effect_variance", "scenario", "float", 1.0),
            lam=c.get(s, "lambda", "scenario", "lam", None),
            replications=c.get(s, "replications", "scenario", "int", 10),
        )
    elif cmd in ("simulate", "sweep", "blpc"):
        c.problems.append(f"command {cmd!r} needs a [scenario] table")

    ests = []
    for i, e in enumerate(data.get("estimators", [])):
        w = f"estimators[{i}]"
        ests.append(EstimatorSpec(
            kind=c.get(e, "kind", w, "str", "ridge", required=True),
            lam=c.get(e, "lambda", w, "lam", None),
            cov_source=c.get(e, "cov_source", w, "str", "X"),
            grouping=c.get(e, "grouping", w, "str", "blocks"),
            label=c.get(e, "label", w, "str", ""),
            tau=c.get(e, "tau", w, "float", 0.5),
            lam_scale=c.get(e, "lam_scale", w, "float", 1.0),
            panel_n=c.get(e, "panel_n", w, "int", None),
        ))
    if cmd in ("simulate", "sweep") and not ests:
        c.problems.append(f"command {cmd!r} needs at least one [[estimators]] entry")

    sweep = None
    if "sweep" in data:
        sw = data["sweep"]
        axis = c.get(sw, "axis", "sweep", "str", "omega", required=True)
        kind = "list:int" if axis == "panel_size" else "list:float"
        sweep = SweepConfig(axis, c.get(sw, "values", "sweep", kind, (), required=True))
        if axis not in SWEEP_AXES:
            c.problems.append(f"sweep.axis must be one of {SWEEP_AXES}, got {axis!r}")
        if not sweep.values:
            c.problems.append("sweep.values is empty")
    elif cmd == "sweep":
        c.problems.append("command 'sweep' needs a [sweep] table")

    theory = None
    if "theory" in data:
        t = data["theory"]
        theory = TheoryConfig(
            h2=c.get(t, "h2", "theory", "list:float", (0.5,)),
            omega=c.get(t, "omega", "theory", "list:float", (1.0,)),
            lam=c.get(t, "lambda", "theory", "list:lam", (None,)),
            n_over_n_w=c.get(t, "n_over_n_w", "theory", "float", 1.0),
            n_over_n_z=c.get(t, "n_over_n_z", "theory", "float", 1.0),
            formulas=c.get(t, "formulas", "theory", "list:str", None),
        )
        for k in ("h2", "omega", "lam"):
            if not getattr(theory, k):
                c.problems.append(f"theory.{'lambda' if k == 'lam' else k} grid is empty")
        if any(not 0 < h < 1 for h in theory.h2):
            c.problems.append("theory.h2 values must lie in (0, 1)")
        if any(not o > 0 for o in theory.omega):
            c.problems.append("theory.omega values must be > 0")
        if any(l is not None and not l > 0 for l in theory.lam):
            c.problems.append("theory.lambda values must be 'optimal' or > 0")
        if not (theory.n_over_n_w > 0 and theory.n_over_n_z > 0):
            c.problems.append("theory panel ratios must be > 0")
        for f in theory.formulas or ():
            if f not in FORMULAS:
                c.problems.append(f"theory.formulas entries must be in {FORMULAS}, got {f!r}")
    elif cmd == "theory":
        theory = TheoryConfig()

    blpc = None
    if "blpc" in data:
        b = data["blpc"]
        blpc = BlpcConfig(
            tau=c.get(b, "tau", "blpc", "list:float", BlpcConfig.tau),
            lam_scale=c.get(b, "lam_scale", "blpc", "list:float", BlpcConfig.lam_scale),
            grouping=c.get(b, "grouping", "blpc", "str", "blocks"),
        )
        if not blpc.tau or not blpc.lam_scale:
            c.problems.append("blpc grids must be nonempty")
    elif cmd == "blpc":
        blpc = BlpcConfig()

    cfg = RunConfig(cmd, blocks, panel, scenario, tuple(ests), sweep, theory, blpc, out_dir, fmt, threads,
                    seed, ov, Path(base_dir))
    if not c.problems:
        c.problems.extend(_semantic_problems(cfg))
    if c.problems:
        raise ValidationError(c.problems)
    return cfg


def _semantic_problems(cfg: RunConfig) -> list[str]:
    out = []
    try:
        specs = cfg.block_specs()
        pspecs = cfg.block_specs(panel=True) if cfg.panel_blocks is not None else None
    except Exception as exc:
        return [f"blocks: {exc}"]
    for i, s in enumerate(specs + (pspecs or [])):
        try:
            s.validate()
        except Exception as exc:
            out.append(f"block {i}: {exc}")
    if cfg.command in ("simulate", "sweep", "blpc") and cfg.scenario is not None:
        out.extend(_scenario_problems(cfg))
    if cfg.command == "theory" and cfg.theory is not None and cfg.theory.formulas:
        identity = all(s.kind != "custom" and (s.rho == 0.0) for s in specs)
        bad = [f for f in cfg.theory.formulas if f in IDENTITY_ONLY]
        if bad and not identity:
            out.append(f"formulas {bad} need an identity covariance")
    return out


def _scenario_problems(cfg: RunConfig) -> list[str]:
    try:
        scen = cfg.to_scenario()
    except Exception as exc:
        return [f"scenario: {exc}"]
    probs = scen.problems()
    if cfg.command == "sweep" and cfg.sweep is not None and cfg.sweep.axis == "panel_rho":
        if any(s.kind == "custom" for s in scen.blocks):
            probs.append("panel_rho sweeps need ar1 or equicorrelated blocks")
    return probs


def parse_config(path: str | Path, command: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    return parse_text(text, path.parent, command)


# ---------------------------------------------------------------------------
# rendering


def _block_dict(b: BlockEntry) -> dict:
    d = {"kind": b.kind}
    if b.size is not None:
        d["size"] = b.size
    if b.kind in ("ar1", "equicorrelated"):
        d["rho"] = b.rho
    d["count"] = b.count
    if b.path is not None:
        d["path"] = b.path
    return d


def _lam(v):
    return "optimal" if v is None else v


def render_config(cfg: RunConfig) -> str:
    """TOML text that ``parse_text`` maps back to an equal ``RunConfig``."""
    d = {
        "command": cfg.command,
        "output_dir": cfg.output_dir,
        "format": cfg.format,
        "threads": cfg.threads,
        "seed": cfg.seed,
        "overrides": {
            "xty_norm": cfg.overrides.xty_norm,
            "thm3_inner_n": cfg.overrides.thm3_inner_n,
            "r3_form": cfg.overrides.r3_form,
        },
        "blocks": [_block_dict(b) for b in cfg.blocks],
    }
    if cfg.panel_blocks is not None:
        d["panel_blocks"] = [_block_dict(b) for b in cfg.panel_blocks]
    if cfg.scenario is not None:
        s = cfg.scenario
        sd = {"id": s.id, "n": s.n, "h2": s.h2, "sparsity": s.sparsity, "design": s.design,
              "effect_variance": s.effect_variance, "lambda": _lam(s.lam), "replications": s.replications}
        if s.n_w is not None:
            sd["n_w"] = s.n_w
        if s.n_z is not None:
            sd["n_z"] = s.n_z
        d["scenario"] = sd
    if cfg.estimators:
        ests = []
        for e in cfg.estimators:
            ed = {"kind": e.kind, "label": e.label, "lambda": _lam(e.lam), "cov_source": e.cov_source,
                  "grouping": e.grouping, "tau": e.tau, "lam_scale": e.lam_scale}
            if e.panel_n is not None:
                ed["panel_n"] = e.panel_n
            ests.append(ed)
        d["estimators"] = ests
    if cfg.sweep is not None:
        d["sweep"] = {"axis": cfg.sweep.axis, "values": list(cfg.sweep.values)}
    if cfg.theory is not None:
        t = cfg.theory
        td = {"h2": list(t.h2), "omega": list(t.omega), "lambda": [_lam(v) for v in t.lam],
              "n_over_n_w": t.n_over_n_w, "n_over_n_z": t.n_over_n_z}
        if t.formulas is not None:
            td["formulas"] = list(t.formulas)
        d["theory"] = td
    if cfg.blpc is not None:
        d["blpc"] = {"tau": list(cfg.blpc.tau), "lam_scale": list(cfg.blpc.lam_scale),
                     "grouping": cfg.blpc.grouping}
    return tomli_w.dumps(d)
