"""Byte ledger, gradient-estimation error, stationarity gap and per-round rows."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import numcore as nc
from .models import ModelBundle, compose

WIRE_BYTES_PER_SCALAR = 4
DIRECTIONS = ("up", "down")
CHANNELS = ("model", "smashed", "gradient", "aux")


class LedgerEvent(NamedTuple):
    round: int
    direction: str
    channel: str
    client: int
    scalars: int

    @property
    def bytes(self) -> int:
        return WIRE_BYTES_PER_SCALAR * self.scalars


class CommLedger:
    """Append-only record of every transmission."""

    def __init__(self):
        self._events: list[LedgerEvent] = []
        self._by_round: dict[int, int] = defaultdict(int)

    def charge(self, round: int, direction: str, channel: str, client: int, scalars: int) -> None:
        if direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {direction!r}")
        if channel not in CHANNELS:
            raise ValueError(f"unknown channel {channel!r}")
        if scalars < 0:
            raise ValueError("scalar count must be non-negative")
        if self._events and round < self._events[-1].round:
            raise ValueError("ledger events must arrive in non-decreasing round order")
        ev = LedgerEvent(int(round), direction, channel, int(client), int(scalars))
        self._events.append(ev)
        self._by_round[ev.round] += ev.scalars

    @property
    def events(self) -> tuple[LedgerEvent, ...]:
        return tuple(self._events)

    def select(self, **where) -> list[LedgerEvent]:
        for k in where:
            if k not in LedgerEvent._fields:
                raise ValueError(f"unknown ledger key {k!r}")
        return [e for e in self._events
                if all(getattr(e, k) == v for k, v in where.items())]

    def total_bytes(self, **where) -> int:
        if not where:
            return WIRE_BYTES_PER_SCALAR * sum(self._by_round.values())
        return WIRE_BYTES_PER_SCALAR * sum(e.scalars for e in self.select(**where))

    def cumulative_bytes(self, through_round: int) -> int:
        return WIRE_BYTES_PER_SCALAR * sum(v for r, v in self._by_round.items() if r <= through_round)

    def bytes_by(self, key: str) -> dict:
        out: dict = defaultdict(int)
        for e in self._events:
            out[getattr(e, key)] += e.bytes
        return dict(out)

    def count(self, **where) -> int:
        return len(self.select(**where))


def charge(ledger: CommLedger, event: LedgerEvent) -> None:
    ledger.charge(*event)


@dataclass
class MetricsRow:
    round: int
    train_loss: float
    eval_loss: float
    eval_accuracy: float
    cumulative_bytes: int
    epsilon_t: float | None = None
    epsilon_pre_align: float | None = None
    grad_norm_sq: float | None = None
    alignment_loss: float | None = None


CSV_COLUMNS = tuple(f.name for f in fields(MetricsRow))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(rows: Sequence[MetricsRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def read_metrics_csv(path) -> list[MetricsRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            vals = {}
            for f in fields(MetricsRow):
                s = rec[f.name]
                if s == "":
                    vals[f.name] = None
                elif f.name in ("round", "cumulative_bytes"):
                    vals[f.name] = int(s)
                else:
                    vals[f.name] = float(s)
            rows.append(MetricsRow(**vals))
    return rows


def bytes_to_target(rows: Iterable[MetricsRow], target: float) -> int | None:
    """Cumulative bytes at the first round whose eval accuracy reaches ``target``."""
    for r in rows:
        if r.eval_accuracy >= target:
            return r.cumulative_bytes
    return None


def run_summary(config_echo: dict, rows: Sequence[MetricsRow], ledger: CommLedger) -> dict:
    best = max(rows, key=lambda r: r.eval_accuracy) if rows else None
    return {
        "config": config_echo,
        "rounds": len(rows),
        "final": asdict(rows[-1]) if rows else None,
        "best_accuracy": best.eval_accuracy if best else None,
        "best_round": best.round if best else None,
        "total_bytes": ledger.total_bytes(),
        "bytes_by_channel": {c: ledger.total_bytes(channel=c) for c in CHANNELS},
        "bytes_by_direction": {d: ledger.total_bytes(direction=d) for d in DIRECTIONS},
    }


def write_summary_json(summary: dict, path) -> None:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        return v
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=clean)
        fh.write("\n")


# --- probes -----------------------------------------------------------------

def client_grad_via_aux(bundle: ModelBundle, client_params, aux_params, x, y) -> nc.ParamVector:
    """Client-parameter gradient with the auxiliary standing in for the server."""
    z = nc.forward(bundle.client_spec, client_params, x)[-1]
    z_hat = nc.input_gradient(bundle.aux_spec, aux_params, z, y)
    return nc.vjp_params(bundle.client_spec, client_params, x, z_hat)


def client_grad_true(bundle: ModelBundle, client_params, server_params, x, y) -> nc.ParamVector:
    """Client block of the composed network's loss gradient."""
    spec, full = compose(bundle.split, client_params, server_params)
    _, g, _ = nc.loss_and_grad(spec, full, x, y)
    n_c = bundle.client_spec.n_params
    return nc.ParamVector(g.data[:n_c], bundle.client_spec.manifest())


def estimation_error(bundle: ModelBundle, client_params: Sequence[nc.ParamVector],
                     aux_params: Sequence[nc.ParamVector], server_params: nc.ParamVector,
                     probe) -> float:
    """Client-average squared gap between auxiliary-based and true client gradients
    on a shared probe batch."""
    x, y = probe
    if len(x) == 0:
        raise ValueError("empty probe batch")
    if len(client_params) != len(aux_params):
        raise ValueError("one auxiliary per client is required")
    total = 0.0
    for xc, xa in zip(client_params, aux_params):
        d = client_grad_via_aux(bundle, xc, xa, x, y).data - \
            client_grad_true(bundle, xc, server_params, x, y).data
        total += float(d @ d)
    return total / len(client_params)


def grad_norm_full(bundle: ModelBundle, client_params, server_params, probe) -> float:
    """Squared norm of the full-model gradient of the probe-mean loss."""
    x, y = probe
    if len(x) == 0:
        raise ValueError("empty probe batch")
    spec, full = compose(bundle.split, client_params, server_params)
    _, g, _ = nc.loss_and_grad(spec, full, x, y)
    return float(g.data @ g.data)


def global_loss(bundle: ModelBundle, client_params, server_params, dataset, shards) -> float:
    """Average over clients of each client's mean loss on its own shard."""
    spec, full = compose(bundle.split, client_params, server_params)
    losses = [nc.loss_value(spec, full, dataset.inputs[s.indices], dataset.labels[s.indices])
              for s in shards]
    return float(np.mean(losses))


def evaluate(bundle: ModelBundle, client_params, server_params, dataset) -> tuple[float, float]:
    spec, full = compose(bundle.split, client_params, server_params)
    out = nc.predict(spec, full, dataset.inputs)
    loss = nc.loss_value(spec, full, dataset.inputs, dataset.labels)
    acc = float(np.mean(out.argmax(axis=1) == dataset.labels))
    return loss, acc
