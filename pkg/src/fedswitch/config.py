"""Experiment configuration.

Configs are flat TOML tables. Every physical key carries its unit in the
name (``_hz``, ``_w``, ``_m``, ``_s``, ``_j``); ``*_db`` keys are decibel
conveniences converted to linear at parse time. dBm keys are not accepted.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_preset", "preset_names", "STRATEGIES"]

STRATEGIES = ("proposed", "vanilla", "greedy", "one-shot", "max-power")
_ALIASES = {"vanilla-fedlora": "vanilla", "one_shot": "one-shot", "max_power": "max-power", "oneshot": "one-shot"}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class ExperimentConfig:
    # radio
    bandwidth_hz: float = 1e9
    noise_density_w_per_hz: float = 10 ** (-162 / 10) * 1e-3
    alpha: float = 3.8
    theta: float = 10 ** (-0.5)
    gnb_density_per_m2: float = 1e-5
    p_max_w: float = 0.2
    p_min_w: float = 1e-3
    e_min_s: float = 5e-3
    omega: float = 1e-3
    j_max: int = 60
    interference_mode: str = "genie"
    perfect_channel: bool = False
    # geometry
    cell_radius_m: float = 250.0
    ue_min_distance_m: float = 10.0
    interferer_field_radius_m: float = 1000.0
    interferer_guard_radius_m: float | None = None
    # computation
    cpu_frequency_hz: float = 1.5e9
    capacitance_coeff: float = 1e-27
    cycles_per_bit: float = 737.5
    local_iterations: int = 4
    foundation_bits: float | None = None
    adapter_bits_per_rank: float = 1.179648e6
    # optimisation
    n_modules: int = 4
    n_ues: int = 20
    subscription_cap: int = 1
    participation_floor: float = 0.1
    mu_per_j: float = 1.0
    dual_step: float = 0.1
    q_th_rel: float = 1e-4
    e_max: int = 20
    # learning task
    task_mode: str = "logistic"
    n_features: int = 10
    n_outputs: int = 4
    samples_per_ue: int = 200
    dirichlet_concentration: float = 0.3
    ridge: float = 0.05
    feature_radius: float = 1.0
    test_fraction: float = 0.2
    data_noise: float = 0.1
    class_sep: float = 1.0
    n_groups: int = 0
    w0_scale: float = 0.1
    adapter_rank: int = 2
    adapter_init_scale: float = 1.0
    batch_fraction: float = 0.1
    learning_rate: float = 0.0
    zeta2: float = 0.0
    constant_samples: int = 20000
    # run
    strategy: str = "proposed"
    rounds: int = 100
    seeds: tuple = (0,)
    phi_threshold: float = 0.0
    output_dir: str = "runs"

    def __post_init__(self):
        _validate(self)

    @property
    def rank(self) -> int | None:
        """Adapter rank, ``None`` for a direct parameterisation (``adapter_rank = 0``)."""
        return None if self.adapter_rank == 0 else self.adapter_rank

    @property
    def upload_bits(self) -> float:
        rank = self.adapter_rank or min(self.n_features, self.n_outputs)
        return self.adapter_bits_per_rank * rank

    @property
    def model_bits(self) -> float:
        """Bits processed per sample in the computation-energy term."""
        base = 32.0 * self.n_features * self.n_outputs if self.foundation_bits is None else self.foundation_bits
        return base + self.upload_bits

    @property
    def guard_radius_m(self) -> float:
        return self.cell_radius_m if self.interferer_guard_radius_m is None else self.interferer_guard_radius_m

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    def config_hash(self) -> str:
        """Short digest of every setting except output location and seed list."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("seeds")
        blob = json.dumps(d, sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_POSITIVE = (
    "bandwidth_hz", "noise_density_w_per_hz", "theta", "gnb_density_per_m2", "p_max_w", "p_min_w",
    "e_min_s", "omega", "cell_radius_m", "interferer_field_radius_m", "cpu_frequency_hz",
    "capacitance_coeff", "cycles_per_bit", "adapter_bits_per_rank", "dual_step", "q_th_rel", "ridge",
    "feature_radius", "dirichlet_concentration", "adapter_init_scale",
)
_POS_INT = ("j_max", "local_iterations", "n_modules", "n_ues", "subscription_cap", "e_max", "n_features",
            "n_outputs", "samples_per_ue", "constant_samples")
_NONNEG = ("ue_min_distance_m", "mu_per_j", "data_noise", "w0_scale", "learning_rate", "zeta2", "phi_threshold",
           "class_sep")


def _fail(key, msg):
    raise ConfigError(f"{key}: {msg}")


def _validate(c: ExperimentConfig):
    for k in _POSITIVE:
        v = getattr(c, k)
        if not (isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and v > 0):
            _fail(k, f"must be a positive number, got {v!r}")
    for k in _POS_INT:
        v = getattr(c, k)
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            _fail(k, f"must be a positive integer, got {v!r}")
    for k in _NONNEG:
        v = getattr(c, k)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v >= 0:
            _fail(k, f"must be a non-negative number, got {v!r}")
    if not c.alpha > 2:
        _fail("alpha", f"path-loss exponent must exceed 2, got {c.alpha!r}")
    if c.p_min_w > c.p_max_w:
        _fail("p_min_w", "must not exceed p_max_w")
    if not 0 < c.omega < 1:
        _fail("omega", "must lie in (0, 1)")
    if c.interference_mode not in ("genie", "expected"):
        _fail("interference_mode", "must be 'genie' or 'expected'")
    if c.ue_min_distance_m >= c.cell_radius_m:
        _fail("ue_min_distance_m", "must be below cell_radius_m")
    if not c.interferer_field_radius_m > c.cell_radius_m:
        _fail("interferer_field_radius_m", "must exceed cell_radius_m")
    g = c.guard_radius_m
    if not 0 <= g < c.interferer_field_radius_m:
        _fail("interferer_guard_radius_m", "must lie in [0, interferer_field_radius_m)")
    if c.interference_mode == "expected" and g == 0:
        _fail("interferer_guard_radius_m", "expected interference diverges without a guard radius")
    if c.foundation_bits is not None and not c.foundation_bits >= 0:
        _fail("foundation_bits", "must be non-negative")
    if c.subscription_cap > c.n_modules:
        _fail("subscription_cap", "cannot exceed n_modules")
    if not 0 <= c.participation_floor <= 1:
        _fail("participation_floor", "must lie in [0, 1]")
    if c.participation_floor * c.n_modules > c.subscription_cap:
        _fail("participation_floor", "floors sum beyond the subscription cap")
    if c.task_mode not in ("logistic", "quadratic"):
        _fail("task_mode", "must be 'logistic' or 'quadratic'")
    if c.task_mode == "logistic" and c.n_outputs < 2:
        _fail("n_outputs", "logistic mode needs at least two classes")
    if not 0 < c.test_fraction < 1:
        _fail("test_fraction", "must lie in (0, 1)")
    if not 0 < c.batch_fraction <= 1:
        _fail("batch_fraction", "must lie in (0, 1]")
    if c.adapter_rank < 0 or c.adapter_rank > min(c.n_features, c.n_outputs):
        _fail("adapter_rank", f"must lie in [0, {min(c.n_features, c.n_outputs)}] (0 = direct)")
    if c.n_groups < 0:
        _fail("n_groups", "must be non-negative")
    if c.strategy not in STRATEGIES:
        _fail("strategy", f"must be one of {', '.join(STRATEGIES)}")
    if c.rounds < 0:
        _fail("rounds", "must be non-negative")
    if not c.seeds or any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in c.seeds):
        _fail("seeds", "must be a non-empty list of non-negative integers")


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_DB_KEYS = {"theta_db": "theta", "noise_density_db": "noise_density_w_per_hz"}
_INT_KEYS = set(_POS_INT) | {"rounds", "adapter_rank", "n_groups"}


def parse_config(source=None, **overrides) -> ExperimentConfig:
    """Build a validated config from a TOML file path, TOML text, or a dict.

    ``None`` or empty text gives the defaults. Keyword overrides are applied
    last with the same key rules.
    """
    if source is None:
        raw = {}
    elif isinstance(source, dict):
        raw = dict(source)
    elif isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and "=" not in source):
        raw = tomllib.loads(Path(source).read_text(encoding="utf-8"))
    else:
        raw = tomllib.loads(source)
    raw.update(overrides)
    values = {}
    for key, val in raw.items():
        if isinstance(val, dict):
            _fail(key, "nested tables are not supported; use flat keys")
        if key in _DB_KEYS:
            target = _DB_KEYS[key]
            if target in raw:
                _fail(key, f"conflicts with {target}")
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                _fail(key, f"must be a number, got {val!r}")
            values[target] = 10 ** (val / 10)
            continue
        if key.endswith("_dbm") or "dbm" in key:
            _fail(key, "dBm keys are not accepted; use the *_w key or a *_db key")
        if key not in _FIELDS:
            _fail(key, "unknown key")
        if key == "strategy" and isinstance(val, str):
            val = _ALIASES.get(val, val)
        if key == "seeds":
            val = tuple(val) if isinstance(val, (list, tuple)) else (val,)
        elif key in _INT_KEYS and isinstance(val, float) and val.is_integer():
            val = int(val)
        elif isinstance(val, int) and not isinstance(val, bool) and _FIELDS[key].type in ("float", "float | None"):
            val = float(val)
        values[key] = val
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def preset_names() -> list:
    """Names of the bundled experiment presets."""
    from importlib.resources import files

    return sorted(p.name[:-5] for p in files("fedswitch.presets").iterdir() if p.name.endswith(".toml"))


def load_preset(name: str, **overrides) -> ExperimentConfig:
    """Parse a bundled preset, e.g. ``load_preset("switching_strategies", seeds=[0])``."""
    from importlib.resources import files

    path = files("fedswitch.presets") / f"{name}.toml"
    if not path.is_file():
        raise ConfigError(f"preset: unknown preset {name!r}; available: {', '.join(preset_names())}")
    raw = tomllib.loads(path.read_text(encoding="utf-8"))
    raw.update(overrides)
    return parse_config(raw)
