"""Plain-text ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Values stay strings until a
command asks for them through the typed getters, so one file can serve every
subcommand.
"""

from __future__ import annotations

from datetime import timedelta
from pathlib import Path

from .geogrid import BIN_LENGTHS, GridSpec, TimeBinning, parse_timestamp
from .model import FitConfig, ModelVariant
from .optimizer import AdamConfig
from .panel import LagSpec, NeighborSpec

DEFAULTS = {
    "origin_x": "0",
    "origin_y": "0",
    "cell_size": "1000",
    "n_cols": "20",
    "n_rows": "20",
    "epoch": "2010-01-01T00:00:00Z",
    "bin_length": "3mo",
    "n_bins": "48",
    "max_time_gap_minutes": "30",
    "max_dist_gap_m": "5000",
    "pairing": "3mo/3mo",
    "neighbor_window": "0",
    "neighbor_source": "illegal",
    "variant": "past_effort",
    "l2_attractiveness": "1e-5",
    "learning_rate": "0.01",
    "beta1": "0.9",
    "beta2": "0.999",
    "epsilon": "1e-8",
    "max_iterations": "20000",
    "tolerance": "1e-9",
    "window": "50",
    "seed": "0",
}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), str(p))


def format_config(values: dict) -> str:
    return "".join(f"{k} = {values[k]}\n" for k in sorted(values))


class RunConfig:
    """Resolved key/value settings with typed accessors."""

    def __init__(self, values: dict[str, str] | None = None):
        self.values = dict(DEFAULTS)
        self.values.update({k: str(v) for k, v in (values or {}).items()})

    def __contains__(self, key):
        return key in self.values

    def get(self, key, default=None):
        return self.values.get(key, default)

    def _typed(self, key, cast, default=None):
        raw = self.values.get(key)
        if raw is None or raw == "":
            if default is not None:
                return default
            raise ConfigError(f"missing config key {key!r}")
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc

    def int(self, key, default=None) -> int:
        return self._typed(key, int, default)

    def float(self, key, default=None) -> float:
        return self._typed(key, float, default)

    def str(self, key, default=None) -> str:
        return self._typed(key, str, default)

    def path(self, key) -> Path:
        p = Path(self.str(key))
        if not p.exists():
            raise ConfigError(f"input path for {key!r} does not exist: {p}")
        return p

    def bin_length_days(self) -> int:
        raw = self.str("bin_length")
        if raw in BIN_LENGTHS:
            return BIN_LENGTHS[raw]
        days = self.int("bin_length")
        if days not in BIN_LENGTHS.values():
            raise ConfigError(f"bin_length must be one of {', '.join(BIN_LENGTHS)} "
                              f"or {sorted(BIN_LENGTHS.values())} days")
        return days

    def grid(self) -> GridSpec:
        try:
            return GridSpec(self.float("origin_x"), self.float("origin_y"), self.int("n_cols"),
                            self.int("n_rows"), self.float("cell_size"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def binning(self) -> TimeBinning:
        try:
            return TimeBinning(self._typed("epoch", parse_timestamp), self.bin_length_days(),
                               self.int("n_bins"))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def gaps(self) -> tuple[timedelta, float]:
        return timedelta(minutes=self.float("max_time_gap_minutes")), self.float("max_dist_gap_m")

    def lags(self) -> LagSpec:
        try:
            return LagSpec.from_pairing(self.str("pairing"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def neighbors(self) -> NeighborSpec | None:
        w = self.int("neighbor_window")
        if w == 0:
            return None
        try:
            return NeighborSpec(w)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def variant(self) -> ModelVariant:
        try:
            return ModelVariant.parse(self.str("variant"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def adam(self) -> AdamConfig:
        try:
            return AdamConfig(
                learning_rate=self.float("learning_rate"), beta1=self.float("beta1"),
                beta2=self.float("beta2"), epsilon=self.float("epsilon"),
                max_iterations=self.int("max_iterations"), tolerance=self.float("tolerance"),
                window=self.int("window"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def fit_config(self) -> FitConfig:
        try:
            return FitConfig(adam=self.adam(), l2_attractiveness=self.float("l2_attractiveness"),
                             seed=self.int("seed"))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def echo(self) -> str:
        return format_config(self.values)
