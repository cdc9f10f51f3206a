"""Client / server / auxiliary networks cut out of one full MLP."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import ConfigurationError, MLPSpec, ParamVector


@dataclass(frozen=True)
class SplitSpec:
    """A full network, the layer index where it is cut, and the auxiliary design.

    ``aux=None`` means the auxiliary copies the server-side architecture.
    """

    full: MLPSpec
    cut_index: int
    aux: MLPSpec | None = None

    def __post_init__(self):
        if not 1 <= self.cut_index < self.full.n_layers:
            raise ConfigurationError(
                f"cut_index must be in [1, {self.full.n_layers - 1}], got {self.cut_index}")
        if self.full.head == "none":
            raise ConfigurationError("the full network needs a loss head")
        aux = self.aux_spec
        if aux.in_dim != self.cut_dim:
            raise ConfigurationError(
                f"auxiliary input dim {aux.in_dim} != cut-layer width {self.cut_dim}")
        if aux.head != self.full.head:
            raise ConfigurationError("auxiliary and server must share the loss head")
        if aux.out_dim != self.full.out_dim:
            raise ConfigurationError("auxiliary output dim must match the server output dim")

    @property
    def cut_dim(self) -> int:
        return self.full.layer_dims[self.cut_index]

    @property
    def client_spec(self) -> MLPSpec:
        return MLPSpec(self.full.layer_dims[:self.cut_index + 1],
                       self.full.activations[:self.cut_index], "none")

    @property
    def server_spec(self) -> MLPSpec:
        return MLPSpec(self.full.layer_dims[self.cut_index:],
                       self.full.activations[self.cut_index:], self.full.head)

    @property
    def aux_spec(self) -> MLPSpec:
        return self.server_spec if self.aux is None else self.aux


@dataclass(frozen=True, eq=False)
class ModelBundle:
    split: SplitSpec
    client_init: ParamVector
    server_init: ParamVector
    aux_init: ParamVector

    @property
    def client_spec(self) -> MLPSpec:
        return self.split.client_spec

    @property
    def server_spec(self) -> MLPSpec:
        return self.split.server_spec

    @property
    def aux_spec(self) -> MLPSpec:
        return self.split.aux_spec

    def aux_init_for(self, client_id: int, seed: int | None = None) -> ParamVector:
        """Per-client auxiliary initialization.

        With ``seed=None`` every client starts from the shared ``aux_init``;
        otherwise a client-specific draw keyed on ``(seed, client_id)``.
        """
        if seed is None:
            return self.aux_init.copy()
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, client_id)))
        return init_params(self.aux_spec, rng)


def init_params(spec: MLPSpec, rng: np.random.Generator) -> ParamVector:
    """Glorot-uniform weights, zero biases."""
    arrays = []
    for d_in, d_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        a = np.sqrt(6.0 / (d_in + d_out))
        arrays.append(rng.uniform(-a, a, size=(d_in, d_out)))
        arrays.append(np.zeros((1, d_out)))
    return ParamVector.from_arrays(arrays)


def build_bundle(split: SplitSpec, seed: int) -> ModelBundle:
    ss = np.random.SeedSequence(seed)
    full_rng, aux_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    full = init_params(split.full, full_rng)
    client, server = decompose(split, full)
    aux = init_params(split.aux_spec, aux_rng)
    return ModelBundle(split, client, server, aux)


def _client_size(split: SplitSpec) -> int:
    return split.client_spec.n_params


def compose(split: SplitSpec, client_params: ParamVector, server_params: ParamVector):
    """The monolithic ``(spec, params)`` equivalent to client feeding server."""
    if client_params.manifest != split.client_spec.manifest():
        raise ConfigurationError("client parameters do not match the client spec")
    if server_params.manifest != split.server_spec.manifest():
        raise ConfigurationError("server parameters do not match the server spec")
    data = np.concatenate([client_params.data, server_params.data])
    return split.full, ParamVector(data, split.full.manifest())


def decompose(split: SplitSpec, full_params: ParamVector):
    if full_params.manifest != split.full.manifest():
        raise ConfigurationError("parameters do not match the full spec")
    n_c = _client_size(split)
    client = ParamVector(full_params.data[:n_c].copy(), split.client_spec.manifest())
    server = ParamVector(full_params.data[n_c:].copy(), split.server_spec.manifest())
    return client, server
