"""FedAvg, SplitFed (multi- and single-server) and CSE-FSL on the same substrate
as FSL-SAGE: same data, partition, initial weights and client batch streams
for a given config, so only the training rule differs."""
from __future__ import annotations

import logging

from . import numcore as nc
from .config import RunConfig
from .metrics import CommLedger, MetricsRow
from .models import compose, decompose
from .protocol import ClientState, ServerState, client_local_round, fserver_aggregate, \
    measure, over_budget, prepare, run_fsl_sage, snapshot, sserver_process

log = logging.getLogger(__name__)


def run_fedavg(config: RunConfig, ledger: CommLedger | None = None,
               trace: list | None = None) -> list[MetricsRow]:
    """Every client trains the whole model for K steps; the server averages."""
    ctx = prepare(config, ledger)
    cfg, b, led = ctx.config, ctx.bundle, ctx.ledger
    spec, x = compose(b.split, b.client_init, b.server_init)
    n_x = spec.n_params
    rows = []
    for t in range(cfg.T):
        local = []
        for i in range(cfg.m):
            led.charge(t, "down", "model", i, n_x)
            xi = x
            for _ in range(ctx.K):
                bx, by = ctx.samplers[i].next_batch()
                _, g, _ = nc.loss_and_grad(spec, xi, bx, by)
                xi = nc.sgd_step(xi, g, cfg.eta_L)
            led.charge(t, "up", "model", i, n_x)
            local.append(xi)
        x = fserver_aggregate(local)
        xc, xs = decompose(b.split, x)
        if trace is not None:
            trace.append(snapshot(t, xc, xs))
        rows.append(measure(ctx, t, xc, xs))
        if over_budget(ctx):
            break
    return rows


def run_splitfed(config: RunConfig, mode: str = "single_server",
                 ledger: CommLedger | None = None, trace: list | None = None) -> list[MetricsRow]:
    """Split learning with exact server feedback at every local step.

    ``multi_server`` keeps one server copy per client and averages the copies
    at the end of each round (inside the server machine, so no wire bytes);
    ``single_server`` updates one shared copy in canonical client order.
    """
    if mode not in ("multi_server", "single_server"):
        raise ValueError(f"unknown SplitFed mode {mode!r}")
    ctx = prepare(config, ledger)
    cfg, b, led = ctx.config, ctx.bundle, ctx.ledger
    m, cspec, sspec = cfg.m, b.client_spec, b.server_spec
    n_c = cspec.n_params
    xc, xs = b.client_init.copy(), b.server_init.copy()
    rows = []
    for t in range(cfg.T):
        for i in range(m):
            led.charge(t, "down", "model", i, n_c)
        clients = [xc] * m
        servers = [xs] * m if mode == "multi_server" else None
        for k in range(ctx.K):
            for i in range(m):
                bx, by = ctx.samplers[i].next_batch()
                z = nc.forward(cspec, clients[i], bx)[-1]
                led.charge(t, "up", "smashed", i, z.size + z.shape[0])
                cur = servers[i] if servers is not None else xs
                _, gs, zb = nc.loss_and_grad(sspec, cur, z, by)
                cur = nc.sgd_step(cur, gs, cfg.eta)
                if servers is not None:
                    servers[i] = cur
                else:
                    xs = cur
                led.charge(t, "down", "gradient", i, zb.size)
                gc = nc.vjp_params(cspec, clients[i], bx, zb)
                clients[i] = nc.sgd_step(clients[i], gc, cfg.eta_L)
        for i in range(m):
            led.charge(t, "up", "model", i, n_c)
        xc = fserver_aggregate(clients)
        if servers is not None:
            xs = fserver_aggregate(servers)
        if trace is not None:
            trace.append(snapshot(t, xc, xs))
        rows.append(measure(ctx, t, xc, xs))
        if over_budget(ctx):
            break
    return rows


def run_cse_fsl(config: RunConfig, ledger: CommLedger | None = None,
                trace: list | None = None) -> list[MetricsRow]:
    """Auxiliaries trained on their own local loss and averaged every round; no alignment."""
    ctx = prepare(config, ledger)
    cfg, b, led = ctx.config, ctx.bundle, ctx.ledger
    m, K, Q = cfg.m, ctx.K, cfg.Q
    n_c, n_a = b.client_spec.n_params, b.aux_spec.n_params
    xc, xa = b.client_init.copy(), b.aux_init.copy()
    server = ServerState(b.server_init.copy(), [])
    rows = []
    for t in range(cfg.T):
        for i in range(m):
            led.charge(t, "down", "model", i, n_c)
            led.charge(t, "down", "aux", i, n_a)
        results = [client_local_round(ClientState(i, xc, xa, ctx.samplers[i]), b, K, Q,
                                      cfg.eta_L, t, aux_lr=cfg.aux_lr_cse) for i in range(m)]
        for q in range(Q):
            for i in range(m):
                rec = results[i][1][q]
                led.charge(t, "up", "smashed", i, rec.wire_scalars)
                sserver_process(server, rec, b.server_spec, cfg.eta, store=False)
        for i in range(m):
            led.charge(t, "up", "model", i, n_c)
            led.charge(t, "up", "aux", i, n_a)
        xc = fserver_aggregate([r[0].client_params for r in results])
        xa = fserver_aggregate([r[0].aux_params for r in results])
        if trace is not None:
            trace.append(snapshot(t, xc, server.server_params, [xa] * m))
        rows.append(measure(ctx, t, xc, server.server_params, [xa] * m))
        if over_budget(ctx):
            break
    return rows


def simulate(config: RunConfig, ledger: CommLedger | None = None,
             trace: list | None = None) -> list[MetricsRow]:
    """Run whichever algorithm ``config.algorithm`` names."""
    alg = config.algorithm
    if alg == "fsl_sage":
        return run_fsl_sage(config, ledger, trace=trace)
    if alg == "fedavg":
        return run_fedavg(config, ledger, trace)
    if alg == "splitfed_ms":
        return run_splitfed(config, "multi_server", ledger, trace)
    if alg == "splitfed_ss":
        return run_splitfed(config, "single_server", ledger, trace)
    if alg == "cse_fsl":
        return run_cse_fsl(config, ledger, trace)
    raise nc.ConfigurationError(f"unknown algorithm {alg!r}")
