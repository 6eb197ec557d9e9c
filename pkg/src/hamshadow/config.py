"""Experiment configuration: a YAML file plus command-line overrides."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
import yaml

from .channel import MIN_CLI_TIME, coefficients, min_invertible_time
from .errors import ConfigError, DomainError
from .rmt import MAX_QUBITS
from .shadows import (
    make_basis_state,
    make_ghz_state,
    make_maximally_mixed,
    make_off_diagonal_fidelity,
    make_pauli_observable,
    make_projector_observable,
)

EXPERIMENTS = (
    "reconstruct",
    "variance-scan-time",
    "variance-scan-dim",
    "form-factors",
    "beats",
    "complexity",
    "nonlinear-demo",
)
# Keys that change how a run executes but not what it computes.
NON_SEMANTIC_KEYS = ("threads", "out")
DEFAULT_SEED = 0x5EED


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    num_qubits: int = 5
    times: tuple = (0.4,)
    qubits: tuple = ()
    dims: tuple = ()
    snapshots: int = 10_000
    seed: int = DEFAULT_SEED
    state: str = "ghz"
    observable: str = "offdiag-fidelity"
    epsilon: float = 0.1
    delta: float = 0.1
    beats: int = 5
    fit: bool = False
    replay: str | None = None
    save_snapshots: bool = False
    pair_budget: int = 10**6
    threads: int = 1
    out: str = "."

    @property
    def t(self):
        return self.times[0]

    def to_dict(self, semantic_only=False):
        d = asdict(self)
        d["times"] = list(self.times)
        d["qubits"] = list(self.qubits)
        d["dims"] = list(self.dims)
        d["seed"] = hex(self.seed)
        if semantic_only:
            for k in NON_SEMANTIC_KEYS:
                d.pop(k)
        return d

    def config_hash(self):
        blob = json.dumps(self.to_dict(semantic_only=True), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def parse_seed(value):
    if isinstance(value, bool):
        raise ConfigError(f"invalid seed {value!r}")
    if isinstance(value, int):
        seed = value
    else:
        try:
            seed = int(str(value), 16)
        except ValueError:
            raise ConfigError(f"seed must be a hex string or integer, got {value!r}") from None
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must fit in 64 bits")
    return seed


def _time_grid(raw):
    if isinstance(raw, dict):
        try:
            grid = np.linspace(float(raw["start"]), float(raw["stop"]), int(raw["num"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"time grid needs numeric start, stop, num: {exc}") from None
        return tuple(float(x) for x in grid)
    if isinstance(raw, (list, tuple)):
        return tuple(float(x) for x in raw)
    return (float(raw),)


def _int_list(raw, name):
    if isinstance(raw, dict):
        return tuple(range(int(raw["start"]), int(raw["stop"]) + 1))
    if isinstance(raw, (list, tuple)):
        return tuple(int(x) for x in raw)
    raise ConfigError(f"{name} must be a list or a start/stop range")


_KEY_ALIASES = {"N": "num_qubits", "t": "times", "M": "snapshots", "master_seed": "seed"}


def config_from_mapping(data) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    data = {_KEY_ALIASES.get(k, k).replace("-", "_"): v for k, v in data.items()}
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    if "experiment" not in data:
        raise ConfigError("configuration needs an 'experiment' key")
    try:
        if "times" in data:
            data["times"] = _time_grid(data["times"])
        if "qubits" in data:
            data["qubits"] = _int_list(data["qubits"], "qubits")
        if "dims" in data:
            data["dims"] = _int_list(data["dims"], "dims")
        if "seed" in data:
            data["seed"] = parse_seed(data["seed"])
        for key in ("num_qubits", "snapshots", "beats", "pair_budget", "threads"):
            if key in data:
                data[key] = int(data[key])
        for key in ("epsilon", "delta"):
            if key in data:
                data[key] = float(data[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed configuration value: {exc}") from None
    cfg = ExperimentConfig(**data)
    validate(cfg)
    return cfg


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a YAML config; non-None keyword overrides win over file values."""
    if path is None:
        data = {}
    else:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    data = dict(data)
    for k, v in overrides.items():
        if v is not None:
            data[k] = v
    return config_from_mapping(data)


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    out = replace(cfg, **changes)
    validate(out)
    return out


def _check_time(t, dim):
    if not t >= MIN_CLI_TIME:
        raise ConfigError(
            f"t={t!r} is below {MIN_CLI_TIME}: the inverse channel is near-singular there; "
            f"use t >= {MIN_CLI_TIME}"
        )
    if not coefficients(t, dim).invertible:
        raise ConfigError(
            f"channel is not invertible at t={t!r} for D={dim}; use t >= {min_invertible_time(dim):.3g}"
        )


def validate(cfg: ExperimentConfig):
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    if not 1 <= cfg.num_qubits <= MAX_QUBITS:
        raise ConfigError(f"num_qubits must be in 1..{MAX_QUBITS}")
    if not cfg.times:
        raise ConfigError("at least one time is required")
    if cfg.snapshots < 2:
        raise ConfigError("snapshots must be at least 2")
    if cfg.threads < 1:
        raise ConfigError("threads must be positive")
    if not 0 < cfg.epsilon < 1 or not cfg.delta > 0:
        raise ConfigError("budget needs 0 < epsilon < 1 and delta > 0")
    if not 1 <= cfg.beats <= 100:
        raise ConfigError("beats must be in 1..100")
    if cfg.pair_budget < 1:
        raise ConfigError("pair_budget must be positive")
    if cfg.experiment == "form-factors":
        if any(t < 0 for t in cfg.times):
            raise ConfigError("form-factor times must be non-negative")
        if any(d < 2 for d in cfg.dims or (2,)):
            raise ConfigError("dims must be at least 2")
        return
    if cfg.experiment == "beats":
        return
    qubit_list = cfg.qubits if cfg.experiment == "variance-scan-dim" else (cfg.num_qubits,)
    if cfg.experiment == "variance-scan-dim" and not cfg.qubits:
        raise ConfigError("variance-scan-dim needs a 'qubits' list")
    if cfg.experiment == "nonlinear-demo" and 4 ** cfg.num_qubits > 4096:
        raise ConfigError("nonlinear-demo supports at most 6 qubits")
    for n in qubit_list:
        if not 1 <= n <= MAX_QUBITS:
            raise ConfigError(f"qubit count {n} out of range")
        for t in cfg.times:
            _check_time(t, 1 << n)
        build_state(cfg.state, n)
        if cfg.experiment != "nonlinear-demo":
            build_observable(cfg.observable, n)


def build_state(label, num_qubits):
    try:
        if label == "ghz":
            return make_ghz_state(num_qubits)
        if label in ("maximally-mixed", "mixed"):
            return make_maximally_mixed(num_qubits)
        if label.startswith("basis:"):
            bits = label.split(":", 1)[1]
            if len(bits) != num_qubits:
                raise ConfigError(f"basis state {bits!r} does not have {num_qubits} qubits")
            return make_basis_state(bits)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown state {label!r} (ghz, maximally-mixed, basis:<bits>)")


def build_observable(label, num_qubits):
    try:
        if label == "offdiag-fidelity":
            return make_off_diagonal_fidelity(num_qubits)
        if label.startswith("pauli:"):
            p = label.split(":", 1)[1]
            if len(p) != num_qubits:
                raise ConfigError(f"Pauli string {p!r} does not act on {num_qubits} qubits")
            return make_pauli_observable(p)
        if label == "z1":
            return make_pauli_observable("Z" + "I" * (num_qubits - 1))
        if label.startswith("projector:"):
            bits = label.split(":", 1)[1]
            if len(bits) != num_qubits:
                raise ConfigError(f"projector {bits!r} does not have {num_qubits} qubits")
            return make_projector_observable(bits)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(
        f"unknown observable {label!r} (offdiag-fidelity, pauli:<string>, z1, projector:<bits>)"
    )

