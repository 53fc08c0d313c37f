"""Flat ``section.key = value`` experiment configuration.

Lines starting with ``#`` are comments.  Lists are comma separated, and
``auto`` leaves an optional value unset.  ``serialize`` writes keys in a fixed
order so that ``parse(serialize(c)) == c`` and the config hash is stable.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .maps import BUILTINS, PiecewiseMap, make_map

MAP_PARAMS = {kind: names for kind, (_, names) in BUILTINS.items()}
SEED_MAX = (1 << 64) - 1


@dataclass(frozen=True)
class MapConfig:
    kind: str = "contraction_1d"
    params: tuple = (("a", 0.5), ("c", 0.0))

    def build(self) -> PiecewiseMap:
        try:
            return make_map(self.kind, **dict(self.params))
        except ConfigError as exc:
            name = exc.field or "map"
            if not name.startswith("map"):
                raise ConfigError(str(exc).split(": ", 1)[-1], f"map.{name}") from exc
            raise


@dataclass(frozen=True)
class ObservableConfig:
    kind: str = "point"
    z: Optional[tuple] = (0.3,)


@dataclass(frozen=True)
class RunConfig:
    n: int = 1000
    blocks: int = 10000
    burn_in: Optional[int] = None
    budget: int = 1_000_000


@dataclass(frozen=True)
class LevelConfig:
    mode: str = "analytic"
    tau: float = 1.0


@dataclass(frozen=True)
class DiagnoseConfig:
    lags: int = 30
    set_lo: float = 0.25
    set_hi: float = 0.5
    n_grid: tuple = (100, 1000, 10000)


@dataclass(frozen=True)
class ExperimentConfig:
    map: MapConfig = field(default_factory=MapConfig)
    epsilon: float = 0.5
    observable: ObservableConfig = field(default_factory=ObservableConfig)
    run: RunConfig = field(default_factory=RunConfig)
    levels: LevelConfig = field(default_factory=LevelConfig)
    diagnose: DiagnoseConfig = field(default_factory=DiagnoseConfig)
    seed: int = 0
    output: str = "runs"
    grid_level: int = 8

    def validate(self) -> "ExperimentConfig":
        """Check every range before any computation; raises :class:`ConfigError` naming the key."""
        if self.map.kind not in BUILTINS:
            raise ConfigError(f"unknown map kind {self.map.kind!r}; choose from {sorted(BUILTINS)}", "map.kind")
        fmap = self.map.build()
        if not (0.0 < self.epsilon < 1.0):
            raise ConfigError(f"must lie in (0, 1), got {self.epsilon}", "epsilon")
        if self.observable.kind not in ("point", "attractor"):
            raise ConfigError("must be 'point' or 'attractor'", "observable.kind")
        if self.observable.kind == "point":
            z = self.observable.z
            if z is None or len(z) != fmap.dim:
                raise ConfigError(f"needs {fmap.dim} coordinates", "observable.z")
            if any(not (0.0 <= v <= 1.0) for v in z):
                raise ConfigError("coordinates must lie in [0, 1]", "observable.z")
        for key in ("n", "blocks", "budget"):
            if getattr(self.run, key) < 1:
                raise ConfigError("must be at least 1", f"run.{key}")
        if self.run.burn_in is not None and self.run.burn_in < 0:
            raise ConfigError("must be non-negative", "run.burn_in")
        if self.levels.mode not in ("analytic", "empirical", "exact"):
            raise ConfigError("must be analytic, empirical or exact", "levels.mode")
        if not (self.levels.tau > 0) or not math.isfinite(self.levels.tau):
            raise ConfigError("must be positive and finite", "levels.tau")
        if not (0 <= self.seed <= SEED_MAX):
            raise ConfigError("must be an unsigned 64-bit integer", "seed")
        if not (0 <= self.grid_level <= 14):
            raise ConfigError("must lie in 0..14", "grid_level")
        if self.diagnose.lags < 1:
            raise ConfigError("must be at least 1", "diagnose.lags")
        if not (0.0 <= self.diagnose.set_lo < self.diagnose.set_hi <= 1.0):
            raise ConfigError("need 0 <= set_lo < set_hi <= 1", "diagnose.set_lo")
        if any(n < 4 for n in self.diagnose.n_grid):
            raise ConfigError("block lengths must be at least 4", "diagnose.n_grid")
        return self

    def with_overrides(self, seed: Optional[int] = None, output: Optional[str] = None) -> "ExperimentConfig":
        out = self
        if seed is not None:
            out = replace(out, seed=int(seed))
        if output is not None:
            out = replace(out, output=str(output))
        return out

    def hash(self) -> str:
        """Short digest of every setting except the output location."""
        text = serialize(replace(self, output=""))
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def header(self) -> str:
        return f"# config_hash={self.hash()} seed={self.seed}"


# ----------------------------------------------------------------- parsing
def _num(text: str, key: str, kind=float):
    try:
        v = kind(text)
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as {kind.__name__}", key) from None
    if kind is float and not math.isfinite(v):
        raise ConfigError("must be finite", key)
    return v


def _optional_int(text: str, key: str):
    return None if text.lower() in ("auto", "none", "") else _num(text, key, int)


def _floats(text: str, key: str) -> tuple:
    return tuple(_num(t.strip(), key) for t in text.split(",") if t.strip())


def _ints(text: str, key: str) -> tuple:
    return tuple(_num(t.strip(), key, int) for t in text.split(",") if t.strip())


def parse(text: str) -> ExperimentConfig:
    """Parse the flat format; unknown keys and malformed lines are errors."""
    raw: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", "config")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError("duplicate key", key)
        raw[key] = value
    base = ExperimentConfig()
    kind = raw.pop("map.kind", base.map.kind)
    if kind not in MAP_PARAMS:
        raise ConfigError(f"unknown map kind {kind!r}; choose from {sorted(MAP_PARAMS)}", "map.kind")
    defaults = dict(base.map.params) if kind == base.map.kind else {}
    params = []
    for name in MAP_PARAMS[kind]:
        key = f"map.{name}"
        if key in raw:
            params.append((name, _num(raw.pop(key), key)))
        elif name in defaults:
            params.append((name, defaults[name]))
        else:
            raise ConfigError("missing map parameter", key)
    obs_kind = raw.pop("observable.kind", base.observable.kind)
    z = raw.pop("observable.z", None)
    z = _floats(z, "observable.z") if z is not None else (base.observable.z if obs_kind == "point" else None)
    run = RunConfig(
        _num(raw.pop("run.n", str(base.run.n)), "run.n", int),
        _num(raw.pop("run.blocks", str(base.run.blocks)), "run.blocks", int),
        _optional_int(raw.pop("run.burn_in", "auto"), "run.burn_in"),
        _num(raw.pop("run.budget", str(base.run.budget)), "run.budget", int),
    )
    levels = LevelConfig(
        raw.pop("levels.mode", base.levels.mode),
        _num(raw.pop("levels.tau", repr(base.levels.tau)), "levels.tau"),
    )
    diag = DiagnoseConfig(
        _num(raw.pop("diagnose.lags", str(base.diagnose.lags)), "diagnose.lags", int),
        _num(raw.pop("diagnose.set_lo", repr(base.diagnose.set_lo)), "diagnose.set_lo"),
        _num(raw.pop("diagnose.set_hi", repr(base.diagnose.set_hi)), "diagnose.set_hi"),
        _ints(raw.pop("diagnose.n_grid", ",".join(map(str, base.diagnose.n_grid))), "diagnose.n_grid"),
    )
    cfg = ExperimentConfig(
        MapConfig(kind, tuple(params)),
        _num(raw.pop("epsilon", repr(base.epsilon)), "epsilon"),
        ObservableConfig(obs_kind, z),
        run,
        levels,
        diag,
        _num(raw.pop("seed", str(base.seed)), "seed", int),
        raw.pop("output", base.output),
        _num(raw.pop("grid_level", str(base.grid_level)), "grid_level", int),
    )
    if raw:
        key = sorted(raw)[0]
        raise ConfigError("unknown key", key)
    return cfg


def serialize(cfg: ExperimentConfig) -> str:
    lines = [f"map.kind = {cfg.map.kind}"]
    lines += [f"map.{k} = {v!r}" for k, v in cfg.map.params]
    lines.append(f"epsilon = {cfg.epsilon!r}")
    lines.append(f"observable.kind = {cfg.observable.kind}")
    if cfg.observable.z is not None:
        lines.append("observable.z = " + ", ".join(repr(v) for v in cfg.observable.z))
    lines += [
        f"run.n = {cfg.run.n}",
        f"run.blocks = {cfg.run.blocks}",
        f"run.burn_in = {'auto' if cfg.run.burn_in is None else cfg.run.burn_in}",
        f"run.budget = {cfg.run.budget}",
        f"levels.mode = {cfg.levels.mode}",
        f"levels.tau = {cfg.levels.tau!r}",
        f"diagnose.lags = {cfg.diagnose.lags}",
        f"diagnose.set_lo = {cfg.diagnose.set_lo!r}",
        f"diagnose.set_hi = {cfg.diagnose.set_hi!r}",
        "diagnose.n_grid = " + ", ".join(str(n) for n in cfg.diagnose.n_grid),
        f"seed = {cfg.seed}",
        f"output = {cfg.output}",
        f"grid_level = {cfg.grid_level}",
    ]
    return "\n".join(lines) + "\n"


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc.strerror}", "config") from exc
    return parse(text)
