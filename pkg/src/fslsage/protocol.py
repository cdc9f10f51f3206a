"""FSL-SAGE: clients train against auxiliary gradient estimators, the S-server
trains on uploaded cut-layer activations and periodically re-fits each
client's auxiliary to its own input gradients, the F-server averages clients.

Schedule of one round ``t`` (clients in ascending id wherever order matters):

1. broadcast the aggregated client model;
2. every client runs ``K`` local steps, uploading ``(z_f, y)`` every ``K/Q`` steps;
3. the S-server consumes the ``m*Q`` uploads slot by slot (slot q: clients 0..m-1);
4. the F-server averages the client models;
5. if ``t % l == 0`` and ``t <= T_prime``: align each auxiliary and send it down.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import numcore as nc
from .config import RunConfig
from .data import BatchSampler, Dataset, Shard, client_stream, dirichlet_partition, \
    gen_gaussian_mixture, iid_partition
from .metrics import CommLedger, MetricsRow, estimation_error, evaluate, global_loss, \
    grad_norm_full
from .models import ModelBundle, build_bundle

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SmashedRecord:
    z_f: np.ndarray
    labels: np.ndarray
    origin: tuple[int, int, int]  # (client, round, local step)

    def __post_init__(self):
        if self.z_f.shape[0] != np.asarray(self.labels).shape[0]:
            raise nc.ConfigurationError("smashed batch and labels disagree in size")

    @property
    def wire_scalars(self) -> int:
        # activations plus one scalar per label
        return self.z_f.size + self.z_f.shape[0]


class AlignmentStore:
    """Per-client FIFO of uploaded ``(z_f, y)``; backward targets are never kept."""

    def __init__(self, capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive or None")
        self.capacity = capacity
        self._records: deque[SmashedRecord] = deque(maxlen=capacity)

    def append(self, record: SmashedRecord) -> None:
        self._records.append(record)

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    @property
    def records(self) -> list[SmashedRecord]:
        return list(self._records)

    def stacked(self):
        """All records as one matrix, their labels, and per-row weights 1/B_record."""
        recs = self._records
        z = np.concatenate([r.z_f for r in recs])
        y = np.concatenate([np.asarray(r.labels) for r in recs])
        w = np.concatenate([np.full(r.z_f.shape[0], 1.0 / r.z_f.shape[0]) for r in recs])
        return z, y, w


@dataclass(eq=False)
class ClientState:
    client_id: int
    client_params: nc.ParamVector
    aux_params: nc.ParamVector
    sampler: BatchSampler


@dataclass(eq=False)
class ServerState:
    server_params: nc.ParamVector
    stores: list[AlignmentStore] = field(default_factory=list)


def _local_step(bundle: ModelBundle, client_params, aux_params, x, y, eta_L, aux_lr):
    z = nc.forward(bundle.client_spec, client_params, x)[-1]
    _, aux_grad, z_hat = nc.loss_and_grad(bundle.aux_spec, aux_params, z, y)
    g = nc.vjp_params(bundle.client_spec, client_params, x, z_hat)
    client_params = nc.sgd_step(client_params, g, eta_L)
    if aux_lr:
        aux_params = nc.sgd_step(aux_params, aux_grad, aux_lr)
    return z, client_params, aux_params


def client_local_round(state: ClientState, bundle: ModelBundle, K: int, Q: int, eta_L: float,
                       round_index: int = 0, aux_lr: float = 0.0):
    """``K`` local steps driven by the auxiliary's input gradient.

    Returns the updated state and the ``Q`` smashed records emitted at the steps
    with ``(k + 1) % (K // Q) == 0``.  With ``aux_lr > 0`` the auxiliary is also
    trained on its own head loss (the CSE-FSL rule); FSL-SAGE uses ``aux_lr=0``.
    """
    if Q < 1 or K % Q:
        raise nc.ConfigurationError("Q must divide K")
    period = K // Q
    xc, xa = state.client_params, state.aux_params
    records = []
    for k in range(K):
        x, y = state.sampler.next_batch()
        z, xc, xa = _local_step(bundle, xc, xa, x, y, eta_L, aux_lr)
        if (k + 1) % period == 0:
            records.append(SmashedRecord(z, np.array(y), (state.client_id, round_index, k)))
    return replace(state, client_params=xc, aux_params=xa), records


def sserver_process(state: ServerState, record: SmashedRecord, server_spec: nc.MLPSpec,
                    eta: float, store: bool = True) -> ServerState:
    """One gradient step of the server model on an upload, then archive it."""
    if record.z_f.shape[1] != server_spec.in_dim:
        raise nc.ConfigurationError(
            f"smashed width {record.z_f.shape[1]} != server input dim {server_spec.in_dim}")
    _, g, _ = nc.loss_and_grad(server_spec, state.server_params, record.z_f, record.labels)
    state.server_params = nc.sgd_step(state.server_params, g, eta)
    if store:
        state.stores[record.origin[0]].append(record)
    return state


def alignment_targets(store: AlignmentStore, server_spec, server_params):
    """Stacked store contents with backward targets from the *current* server."""
    z, y, w = store.stacked()
    return z, y, w, nc.input_gradient(server_spec, server_params, z, y, row_weight=w)


def alignment_loss(aux_spec, aux_params, store: AlignmentStore, server_spec, server_params):
    z, y, w, targets = alignment_targets(store, server_spec, server_params)
    return nc.gradient_matching_loss(aux_spec, aux_params, z, y, targets, w, len(store))[0]


def align_auxiliary(aux_params: nc.ParamVector, store: AlignmentStore, server_params: nc.ParamVector,
                    steps: int, align_lr: float, aux_spec: nc.MLPSpec, server_spec: nc.MLPSpec):
    """Fit the auxiliary's input gradient to the server's over the whole store.

    Minimizes the mean over stored batches of ``||z_hat_b - z_b||^2`` by
    ``steps`` full-batch gradient-descent steps.  Returns
    ``(new_aux_params, final_loss)``.
    """
    if len(store) == 0:
        raise ValueError("alignment requested with an empty store")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    z, y, w, targets = alignment_targets(store, server_spec, server_params)
    R = len(store)
    params = aux_params
    for _ in range(steps):
        _, g = nc.gradient_matching_loss(aux_spec, params, z, y, targets, w, R)
        params = nc.sgd_step(params, g, align_lr)
    loss, _ = nc.gradient_matching_loss(aux_spec, params, z, y, targets, w, R)
    return params, loss


def fserver_aggregate(client_params: Sequence[nc.ParamVector]) -> nc.ParamVector:
    return nc.mean_params(client_params)


# --- shared run scaffolding ---------------------------------------------------

@dataclass(eq=False)
class RunContext:
    config: RunConfig
    train: Dataset
    evalset: Dataset
    probe: tuple[np.ndarray, np.ndarray]
    shards: list[Shard]
    bundle: ModelBundle
    samplers: list[BatchSampler]
    ledger: CommLedger
    K: int


def local_steps(config: RunConfig, shards: Sequence[Shard]) -> int:
    """``K``, or with ``k_from_epoch`` one pass over an average shard rounded up to a multiple of Q."""
    if not config.k_from_epoch:
        return config.K
    mean_shard = float(np.mean([len(s) for s in shards]))
    K = int(np.ceil(mean_shard / config.batch_size))
    return int(np.ceil(K / config.Q) * config.Q)


def prepare(config: RunConfig, ledger: CommLedger | None = None) -> RunContext:
    config.validate()
    full = gen_gaussian_mixture(config.n + config.n_eval, config.d, config.C,
                                config.separation, config.seed_dataset)
    train = full.subset(np.arange(config.n))
    evalset = full.subset(np.arange(config.n, config.n + config.n_eval))
    probe = (evalset.inputs[:config.probe_size], evalset.labels[:config.probe_size])
    if config.dirichlet_alpha is None:
        shards = iid_partition(train.n, config.m, config.seed_partition)
    else:
        shards = dirichlet_partition(train.labels, config.m, config.dirichlet_alpha,
                                     config.seed_partition)
    bundle = build_bundle(config.split_spec(), config.seed_init)
    bs = config.batch_size
    for s in shards:
        if len(s) < bs:
            raise nc.ConfigurationError(
                f"client {s.client_id} holds {len(s)} samples, fewer than batch_size={bs}")
    samplers = [BatchSampler(s, train, bs, client_stream(config.seed_streams, s.client_id))
                for s in shards]
    return RunContext(config, train, evalset, probe, shards, bundle, samplers,
                      ledger if ledger is not None else CommLedger(), local_steps(config, shards))


def measure(ctx: RunContext, t: int, client_params, server_params, aux=None,
            eps_pre=None, align_loss=None) -> MetricsRow:
    b = ctx.bundle
    eval_loss, acc = evaluate(b, client_params, server_params, ctx.evalset)
    eps = None
    if aux is not None:
        eps = estimation_error(b, [client_params] * len(aux), aux, server_params, ctx.probe)
    return MetricsRow(
        round=t,
        train_loss=global_loss(b, client_params, server_params, ctx.train, ctx.shards),
        eval_loss=eval_loss,
        eval_accuracy=acc,
        cumulative_bytes=ctx.ledger.cumulative_bytes(t),
        epsilon_t=eps,
        epsilon_pre_align=eps_pre,
        grad_norm_sq=grad_norm_full(b, client_params, server_params, ctx.probe),
        alignment_loss=align_loss,
    )


def snapshot(t, client_params, server_params, aux=None) -> dict:
    return {"round": t, "client": client_params, "server": server_params,
            "aux": None if aux is None else list(aux)}


def over_budget(ctx: RunContext) -> bool:
    mb = ctx.config.max_bytes
    return mb is not None and ctx.ledger.total_bytes() >= mb


def is_alignment_round(t: int, l: int | None, t_prime: int) -> bool:
    return l is not None and t % l == 0 and t <= t_prime


def run_fsl_sage(config: RunConfig, ledger: CommLedger | None = None,
                 client_order: Sequence[int] | None = None,
                 trace: list | None = None) -> list[MetricsRow]:
    """Simulate FSL-SAGE (lazy when ``T_prime < T``).

    ``client_order`` only permutes the order in which local rounds are executed;
    the S-server always consumes uploads in the canonical order.  If ``trace``
    is a list, the end-of-round parameters are appended to it.
    """
    ctx = prepare(config, ledger)
    cfg, b, led = ctx.config, ctx.bundle, ctx.ledger
    m, K, Q = cfg.m, ctx.K, cfg.Q
    n_c, n_a = b.client_spec.n_params, b.aux_spec.n_params
    order = list(range(m)) if client_order is None else list(client_order)
    if sorted(order) != list(range(m)):
        raise ValueError("client_order must be a permutation of the client ids")

    xc = b.client_init.copy()
    aux = [b.aux_init_for(i, cfg.seed_aux_init) for i in range(m)]
    server = ServerState(b.server_init.copy(), [AlignmentStore(cfg.store_capacity) for _ in range(m)])
    rows = []
    for t in range(cfg.T):
        for i in range(m):
            led.charge(t, "down", "model", i, n_c)
        results = {}
        for i in order:
            st = ClientState(i, xc, aux[i], ctx.samplers[i])
            results[i] = client_local_round(st, b, K, Q, cfg.eta_L, t)
        for q in range(Q):
            for i in range(m):
                rec = results[i][1][q]
                led.charge(t, "up", "smashed", i, rec.wire_scalars)
                sserver_process(server, rec, b.server_spec, cfg.eta)
        for i in range(m):
            led.charge(t, "up", "model", i, n_c)
        xc = fserver_aggregate([results[i][0].client_params for i in range(m)])

        eps_pre = align_loss = None
        if is_alignment_round(t, cfg.l, cfg.t_prime):
            eps_pre = estimation_error(b, [xc] * m, aux, server.server_params, ctx.probe)
            losses = []
            for i in range(m):
                if len(server.stores[i]) == 0:
                    continue
                aux[i], li = align_auxiliary(aux[i], server.stores[i], server.server_params,
                                             cfg.align_steps, cfg.align_lr, b.aux_spec,
                                             b.server_spec)
                losses.append(li)
                led.charge(t, "down", "aux", i, n_a)
            align_loss = float(np.mean(losses)) if losses else None
        if trace is not None:
            trace.append(snapshot(t, xc, server.server_params, aux))
        rows.append(measure(ctx, t, xc, server.server_params, aux, eps_pre, align_loss))
        log.debug("fsl_sage round %d: %s", t, rows[-1])
        if over_budget(ctx):
            break
    return rows
