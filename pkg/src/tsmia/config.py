"""Experiment configuration: a documented key/value text format plus
validation and stage digests.

Format rules (see README for the full key reference):

* one ``key = value`` pair per line; ``#`` starts a comment; blank lines
  are ignored
* dotted keys nest (``forecaster.kind = mlp``)
* values are parsed as JSON when possible (numbers, lists, booleans,
  quoted strings); anything else is taken as a bare string
* the ``attack`` key may repeat; each occurrence appends one attack
  (a JSON object with at least ``{"name": ...}``)
* a ``schema_version`` field is required (currently 1)
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .attacks import EnsembleConfig, RmiaConfig
from .data import SyntheticPopulationConfig
from .evaluation import GameConfig
from .forecasters import ForecasterConfig
from .signals import SignalId

SCHEMA_VERSION = 1
_REPEATABLE = {"attack"}


class ConfigError(ValueError):
    pass


def parse_kv_text(text: str) -> dict:
    """Parse the key/value format into a nested dict; repeatable keys
    accumulate into lists."""
    root: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value_text = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        try:
            value = json.loads(value_text)
        except json.JSONDecodeError:
            value = value_text
        parts = key.split(".")
        node = root
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"config line {lineno}: {key!r} clashes with a scalar")
        leaf = parts[-1]
        if leaf in _REPEATABLE:
            node.setdefault(leaf, []).append(value)
        elif leaf in node:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        else:
            node[leaf] = value
    return root


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    synthetic: SyntheticPopulationConfig = field(default_factory=SyntheticPopulationConfig)
    csv_path: str | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be synthetic or csv, got {self.source!r}")
        if self.source == "csv" and not self.csv_path:
            raise ConfigError("data.csv_path required for csv source")


@dataclass(frozen=True)
class WindowConfig:
    lookback: int = 50
    horizon: int = 10
    stride: int = 1

    def __post_init__(self):
        if min(self.lookback, self.horizon, self.stride) < 1:
            raise ConfigError("window: lookback, horizon, stride must be >= 1")


@dataclass(frozen=True)
class SplitConfig:
    train: int = 12
    val: int = 12
    test: int = 12
    aux: int = 24

    def sizes(self) -> tuple[int, int, int, int]:
        return (self.train, self.val, self.test, self.aux)

    def __post_init__(self):
        if min(self.sizes()) < 1:
            raise ConfigError("split: all pool sizes must be >= 1")


@dataclass(frozen=True)
class ShadowConfig:
    k: int = 16
    offline_fraction: float = 0.5

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError("shadows.k must be >= 2")
        if not 0 < self.offline_fraction <= 1:
            raise ConfigError("shadows.offline_fraction must be in (0, 1]")


@dataclass(frozen=True)
class SignalConfig:
    set: tuple[SignalId, ...] = (
        SignalId.MSE,
        SignalId.MAE,
        SignalId.RSMAPE,
        SignalId.TREND,
        SignalId.SEASONALITY,
        SignalId.EMBEDDING,
    )
    trend_degree: int = 1

    def __post_init__(self):
        if not self.set:
            raise ConfigError("signals.set must not be empty")
        if self.trend_degree < 0:
            raise ConfigError("signals.trend_degree must be >= 0")


@dataclass(frozen=True)
class AttackSpec:
    """One configured attack instance.

    ``name`` is one of lira, rmia, ensemble, classifier. ``signals``
    restricts lira to a subset of the configured signal set; ``signal``
    picks rmia's single signal. Remaining fields are per-attack knobs.
    """

    name: str
    mode: str = "online"
    signals: tuple[SignalId, ...] | None = None
    signal: SignalId | None = None
    variance_mode: str = "per-example"
    gamma: float = 1.0
    alpha: float = 1.0 / 3.0
    population_size: int = 256
    executions: int = 5
    repetitions: int = 3
    subset_size: int = 50
    combinations: int = 9
    fraction: float = 0.1
    hidden: tuple[int, ...] = (64, 32)
    max_epochs: int = 64
    patience: int = 3

    def __post_init__(self):
        if self.name not in ("lira", "rmia", "ensemble", "classifier"):
            raise ConfigError(f"unknown attack {self.name!r}")
        if self.mode not in ("online", "offline"):
            raise ConfigError(f"attack {self.name}: unknown mode {self.mode!r}")
        if self.variance_mode not in ("per-example", "global"):
            raise ConfigError(f"attack {self.name}: unknown variance mode")
        if self.name == "rmia":
            if self.signal is None:
                raise ConfigError("rmia: a signal must be configured")
            if self.signal is SignalId.RSMAPE:
                raise ConfigError("rmia: rsmape is unbounded and not allowed")
        if self.name == "classifier" and not 0 < self.fraction <= 1:
            raise ConfigError("classifier: fraction must be in (0, 1]")

    def key(self) -> str:
        if self.name == "lira":
            suffix = "multi" if self.signals is None or len(self.signals) > 1 else self.signals[0].value
            return f"lira-{self.mode}:{suffix}"
        if self.name == "rmia":
            return f"rmia-{self.mode}:{self.signal.value}"
        if self.name == "classifier":
            return f"classifier-{self.mode}"
        return "ensemble"

    def display_label(self) -> str:
        if self.name == "ensemble":
            return "Ensemble (simplified)"
        return self.key()

    def rmia_config(self) -> RmiaConfig:
        return RmiaConfig(
            gamma=self.gamma, alpha=self.alpha, mode=self.mode,
            population_size=self.population_size,
        )

    def ensemble_config(self) -> EnsembleConfig:
        return EnsembleConfig(
            executions=self.executions, repetitions=self.repetitions,
            subset_size=self.subset_size, combinations=self.combinations,
        )


DEFAULT_ATTACKS = (
    AttackSpec(name="lira", mode="online"),
    AttackSpec(name="lira", mode="offline"),
    AttackSpec(name="rmia", mode="online", signal=SignalId.MAE),
    AttackSpec(name="rmia", mode="offline", signal=SignalId.MAE),
)


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    data: DataConfig = field(default_factory=DataConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    scaler_unit_fallback: bool = False
    forecaster: ForecasterConfig = field(default_factory=ForecasterConfig)
    shadows: ShadowConfig = field(default_factory=ShadowConfig)
    signals: SignalConfig = field(default_factory=SignalConfig)
    attacks: tuple[AttackSpec, ...] = DEFAULT_ATTACKS
    game: GameConfig = field(default_factory=GameConfig)
    seeds: tuple[int, ...] = (1,)
    out_dir: str = "runs/audit"

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seeds")
        if not self.attacks:
            raise ConfigError("at least one attack is required")
        keys = [a.key() for a in self.attacks]
        if len(set(keys)) != len(keys):
            raise ConfigError(f"duplicate attack instances: {sorted(keys)}")
        configured = set(self.signals.set)
        for attack in self.attacks:
            if attack.name == "lira" and attack.signals is not None:
                missing = [s.value for s in attack.signals if s not in configured]
                if missing:
                    raise ConfigError(f"lira uses unconfigured signals {missing}")
            if attack.name == "rmia" and attack.signal not in configured:
                raise ConfigError(f"rmia signal {attack.signal.value!r} not in signals.set")
        if self.data.source == "synthetic":
            total = sum(self.split.sizes())
            if total > self.data.synthetic.users:
                raise ConfigError(
                    f"split sizes sum to {total} but population has "
                    f"{self.data.synthetic.users} users"
                )

    def needed_modes(self) -> tuple[str, ...]:
        modes = []
        for attack in self.attacks:
            if attack.name != "ensemble" and attack.mode not in modes:
                modes.append(attack.mode)
        return tuple(modes)


def _signal_list(value, where: str) -> tuple[SignalId, ...]:
    if not isinstance(value, list):
        raise ConfigError(f"{where}: expected a JSON list of signal names")
    out = []
    for name in value:
        try:
            out.append(SignalId(str(name).lower()))
        except ValueError:
            raise ConfigError(f"{where}: unknown signal {name!r}") from None
    return tuple(out)


def _pair(value, where: str) -> tuple[float, float]:
    if not isinstance(value, list) or len(value) != 2:
        raise ConfigError(f"{where}: expected [low, high]")
    return (float(value[0]), float(value[1]))


def _build_section(section: dict, builder, where: str):
    try:
        return builder(**section)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where}: {err}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    if "schema_version" not in raw:
        raise ConfigError("missing schema_version")
    known = {
        "schema_version", "data", "window", "split", "scaler_unit_fallback",
        "forecaster", "shadows", "signals", "attack", "game", "seeds", "out",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    data_raw = dict(raw.get("data", {}))
    synth_raw = dict(data_raw.pop("synthetic", {}))
    for name in ("amplitude", "frequency", "phase", "trend", "noise"):
        if name in synth_raw:
            synth_raw[name] = _pair(synth_raw[name], f"data.synthetic.{name}")
    synthetic = _build_section(synth_raw, SyntheticPopulationConfig, "data.synthetic")
    data = _build_section(dict(data_raw, synthetic=synthetic), DataConfig, "data")

    forecaster_raw = dict(raw.get("forecaster", {}))
    if "hidden" in forecaster_raw:
        forecaster_raw["hidden"] = tuple(int(h) for h in forecaster_raw["hidden"])
    signal_raw = dict(raw.get("signals", {}))
    if "set" in signal_raw:
        signal_raw["set"] = _signal_list(signal_raw["set"], "signals.set")

    attacks = []
    for i, spec in enumerate(raw.get("attack", [])):
        if not isinstance(spec, dict) or "name" not in spec:
            raise ConfigError(f"attack #{i + 1}: expected a JSON object with a name")
        spec = dict(spec)
        if "signals" in spec and spec["signals"] is not None:
            spec["signals"] = _signal_list(spec["signals"], f"attack #{i + 1} signals")
        if "signal" in spec and spec["signal"] is not None:
            spec["signal"] = _signal_list([spec["signal"]], f"attack #{i + 1} signal")[0]
        if "hidden" in spec:
            spec["hidden"] = tuple(int(h) for h in spec["hidden"])
        attacks.append(_build_section(spec, AttackSpec, f"attack #{i + 1}"))

    seeds = raw.get("seeds", [1])
    if not isinstance(seeds, list):
        seeds = [seeds]

    kwargs = dict(
        schema_version=int(raw["schema_version"]),
        data=data,
        window=_build_section(dict(raw.get("window", {})), WindowConfig, "window"),
        split=_build_section(dict(raw.get("split", {})), SplitConfig, "split"),
        scaler_unit_fallback=bool(raw.get("scaler_unit_fallback", False)),
        forecaster=_build_section(forecaster_raw, ForecasterConfig, "forecaster"),
        shadows=_build_section(dict(raw.get("shadows", {})), ShadowConfig, "shadows"),
        signals=_build_section(signal_raw, SignalConfig, "signals"),
        game=_build_section(dict(raw.get("game", {})), GameConfig, "game"),
        seeds=tuple(int(s) for s in seeds),
    )
    if attacks:
        kwargs["attacks"] = tuple(attacks)
    if "out" in raw:
        kwargs["out_dir"] = str(raw["out"])
    try:
        return ExperimentConfig(**kwargs)
    except (ConfigError, ValueError) as err:
        raise ConfigError(str(err)) from None


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(parse_kv_text(fh.read()))


def _canonical(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _canonical(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, SignalId):
        return obj.value
    return obj


def digest(*parts) -> str:
    """Stable hex digest of a sequence of config fragments; used to key
    cache entries by exactly the stages they depend on."""
    payload = json.dumps([_canonical(p) for p in parts], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]
