"""Run configuration and its plain-text (INI) representation.

File grammar
------------
Standard INI as read by :mod:`configparser`, five sections::

    [run]       algorithm, T, max_bytes
    [protocol]  m, K, Q, l, T_prime, eta, eta_L, align_steps, align_lr,
                store_capacity, cse_aux_lr, k_from_epoch
    [data]      n, n_eval, d, C, separation, dirichlet_alpha, batch_size, probe_size
    [model]     full_dims, full_activations, head, cut_index, aux_dims, aux_activations
    [seeds]     dataset, partition, init, streams, aux_init

Lists are comma separated (``full_dims = 20, 64, 64, 5``).  ``none`` marks an
unset optional value: ``dirichlet_alpha = none`` is an i.i.d. split,
``l = none`` never aligns, ``T_prime = none`` means ``T_prime = T``,
``aux_dims = none`` reuses the server architecture, ``seeds.aux_init = none``
gives every client the same initial auxiliary.  Keys missing from a file take
their defaults; unknown keys are an error.
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, fields, replace

from .models import SplitSpec
from .numcore import ConfigurationError, MLPSpec

ALGORITHMS = ("fsl_sage", "fedavg", "splitfed_ms", "splitfed_ss", "cse_fsl")

SECTIONS = {
    "run": ("algorithm", "T", "max_bytes"),
    "protocol": ("m", "K", "Q", "l", "T_prime", "eta", "eta_L", "align_steps", "align_lr",
                 "store_capacity", "cse_aux_lr", "k_from_epoch"),
    "data": ("n", "n_eval", "d", "C", "separation", "dirichlet_alpha", "batch_size",
             "probe_size"),
    "model": ("full_dims", "full_activations", "head", "cut_index", "aux_dims",
              "aux_activations"),
    "seeds": ("seed_dataset", "seed_partition", "seed_init", "seed_streams", "seed_aux_init"),
}


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "fsl_sage"
    T: int = 50
    max_bytes: int | None = None

    m: int = 4
    K: int = 10
    Q: int = 2
    l: int | None = 5
    T_prime: int | None = None
    eta: float = 0.05
    eta_L: float = 0.05
    align_steps: int = 50
    align_lr: float = 3.0
    store_capacity: int | None = None
    cse_aux_lr: float | None = None
    k_from_epoch: bool = False

    n: int = 8000
    n_eval: int = 2000
    d: int = 20
    C: int = 5
    separation: float = 3.0
    dirichlet_alpha: float | None = 1.0
    batch_size: int = 32
    probe_size: int = 512

    full_dims: tuple[int, ...] = (20, 64, 64, 5)
    full_activations: tuple[str, ...] = ("relu", "relu", "identity")
    head: str = "softmax_xent"
    cut_index: int = 1
    aux_dims: tuple[int, ...] | None = None
    aux_activations: tuple[str, ...] | None = None

    seed_dataset: int = 0
    seed_partition: int = 1
    seed_init: int = 2
    seed_streams: int = 3
    seed_aux_init: int | None = None

    def __post_init__(self):
        for name in ("full_dims", "full_activations", "aux_dims", "aux_activations"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))

    # -- derived -------------------------------------------------------------
    @property
    def t_prime(self) -> int:
        return self.T if self.T_prime is None else self.T_prime

    @property
    def aux_lr_cse(self) -> float:
        return self.eta_L if self.cse_aux_lr is None else self.cse_aux_lr

    def split_spec(self) -> SplitSpec:
        full = MLPSpec(self.full_dims, self.full_activations, self.head)
        aux = None
        if self.aux_dims is not None:
            if self.aux_activations is None:
                raise ConfigurationError("aux_dims given without aux_activations")
            aux = MLPSpec(self.aux_dims, self.aux_activations, self.head)
        return SplitSpec(full, self.cut_index, aux)

    def validate(self) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigurationError(msg)
        need(self.algorithm in ALGORITHMS, f"algorithm must be one of {ALGORITHMS}")
        need(self.T >= 1, "T must be at least 1")
        need(self.m >= 1, "m must be at least 1")
        need(self.K >= 1, "K must be at least 1")
        need(self.Q >= 1, "Q must be at least 1")
        need(self.K % self.Q == 0, "Q must divide K")
        need(self.l is None or self.l >= 1, "l must be at least 1 (or none)")
        need(self.T_prime is None or 0 <= self.T_prime <= self.T, "T_prime must lie in [0, T]")
        for name in ("eta", "eta_L", "align_lr"):
            need(getattr(self, name) >= 0, f"{name} must be non-negative")
        need(self.cse_aux_lr is None or self.cse_aux_lr >= 0, "cse_aux_lr must be non-negative")
        need(self.align_steps >= 0, "align_steps must be non-negative")
        need(self.store_capacity is None or self.store_capacity >= 1,
             "store_capacity must be at least 1 (or none)")
        need(self.batch_size >= 1, "batch_size must be at least 1")
        need(self.dirichlet_alpha is None or self.dirichlet_alpha > 0,
             "dirichlet_alpha must be positive (or none for iid)")
        need(self.n >= self.C and self.n >= self.m, "n too small for C classes and m clients")
        need(self.n_eval >= 1, "n_eval must be at least 1")
        need(1 <= self.probe_size <= self.n_eval, "probe_size must lie in [1, n_eval]")
        need(self.separation > 0, "separation must be positive")
        need(self.max_bytes is None or self.max_bytes > 0, "max_bytes must be positive")
        need(self.full_dims[0] == self.d, "full_dims must start with the input dim d")
        need(self.full_dims[-1] == self.C, "full_dims must end with the class count C")
        self.split_spec()
        return self

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)


# -- text form ---------------------------------------------------------------

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_INI_NAME = {"seed_dataset": "dataset", "seed_partition": "partition", "seed_init": "init",
             "seed_streams": "streams", "seed_aux_init": "aux_init"}
_FROM_INI = {(sec, _INI_NAME.get(k, k)): k for sec, keys in SECTIONS.items() for k in keys}


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(format_value(x) for x in v)
    return str(v)


def parse_value(name: str, text: str):
    typ = str(_FIELD_TYPES[name])
    s = text.strip()
    if s.lower() == "none":
        if "None" not in typ:
            raise ConfigurationError(f"{name} may not be none")
        return None
    try:
        if typ.startswith("bool"):
            if s.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(s)
            return s.lower() in ("true", "1", "yes")
        if "tuple[int" in typ:
            return tuple(int(x) for x in s.split(","))
        if "tuple[str" in typ:
            return tuple(x.strip() for x in s.split(","))
        if typ.startswith("int"):
            try:
                return int(s)
            except ValueError:
                v = float(s)  # accepts 1e6
                if not v.is_integer():
                    raise
                return int(v)
        if typ.startswith("float"):
            v = float(s)
            if math.isnan(v):
                raise ValueError(s)
            return v
        return s
    except ValueError:
        raise ConfigurationError(f"cannot parse {name} = {text!r}") from None


def emit(config: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for sec, keys in SECTIONS.items():
        cp[sec] = {_INI_NAME.get(k, k): format_value(getattr(config, k)) for k in keys}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse(text: str, base: RunConfig | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    values = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigurationError(f"unknown section [{sec}]")
        for key, raw in cp[sec].items():
            name = _FROM_INI.get((sec, key))
            if name is None:
                raise ConfigurationError(f"unknown key {key!r} in [{sec}]")
            values[name] = parse_value(name, raw)
    return replace(base or RunConfig(), **values)


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def set_field(config: RunConfig, name: str, text: str) -> RunConfig:
    """Override one field from its textual value (used by sweeps)."""
    if name not in _FIELD_TYPES:
        raise ConfigurationError(f"unknown parameter {name!r}")
    return replace(config, **{name: parse_value(name, text)})
