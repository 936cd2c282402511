"""Federated rounds: client updates, aggregation strategies, distillation fusion.

Strategies
----------
fedavg        sample clients, local SGD, shard-size weighted parameter average.
fedprox       fedavg whose local gradients add mu * (x - anchor); mu = 0 takes
              the exact fedavg code path.
fedavgm       fedavg plus server momentum: v' = beta * v + (x_prev - avg),
              x' = avg - beta * v. beta = 0 reduces to fedavg bit for bit.
feddf         fedavg's average, then refined by distilling the ensemble of
              received client models into it on unlabeled inputs.
feddf_hetero  feddf across several model prototypes: each prototype's student
              starts from its own group average and distills against the
              ensemble of every received model.

Determinism: every random stream is derived from (seed, stream tag, round,
client), never from call order, so thread-parallel client execution is
bitwise identical to sequential execution.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._errors import ConfigError, ShapeError
from . import numerics
from .data import Dataset, DistillPool, sample_distill_batch
from .models import (
    ParamVector,
    Prototype,
    average_params,
    binarize_ste_grad,
    binarize_values,
    init_params,
    predict_logits,
)

STRATEGIES = ("fedavg", "fedprox", "fedavgm", "feddf", "feddf_hetero")

# stream tags keep derived RNG streams disjoint from each other
_SAMPLE_STREAM = 1
_CLIENT_STREAM = 2
_POOL_STREAM = 3
_INIT_STREAM = 4


def sampling_rng(seed: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _SAMPLE_STREAM, round_index]))


def client_rng(seed: int, round_index: int, client_id: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed, _CLIENT_STREAM, round_index, client_id])
    )


def pool_rng(seed: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _POOL_STREAM, round_index]))


@dataclass
class DistillConfig:
    """Server-side distillation settings.

    max_steps bounds the Adam steps per fusion; patience stops early once
    validation accuracy has not improved for that many steps. init_mode
    picks the student start: the fresh average or the previous round's
    server model.
    """

    max_steps: int
    patience: int
    pool: DistillPool
    base_lr: float = 1e-3
    init_mode: str = "from_average"

    def __post_init__(self) -> None:
        if self.max_steps < 0:
            raise ConfigError("distill max_steps must be >= 0")
        if self.max_steps > 0 and not 1 <= self.patience <= self.max_steps:
            raise ConfigError(
                f"patience must lie in [1, max_steps], got {self.patience} with max_steps {self.max_steps}"
            )
        if not self.base_lr > 0:
            raise ConfigError("distill base_lr must be positive")
        if self.init_mode not in ("from_average", "from_previous"):
            raise ConfigError(f"unknown init_mode {self.init_mode!r}")


@dataclass
class FLConfig:
    """One experiment arm: population, participation, local schedule, strategy."""

    rounds: int
    client_count: int
    participation: float
    local_epochs: int
    local_lr: float
    local_batch: int
    strategy: str
    seed: int = 0
    prox_mu: float = 0.0
    server_momentum: float = 0.0
    drop_threshold: float | None = None
    distill: DistillConfig | None = None

    def __post_init__(self) -> None:
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.client_count < 1:
            raise ConfigError("client_count must be >= 1")
        if not 0.0 < self.participation <= 1.0:
            raise ConfigError("participation must lie in (0, 1]")
        if self.local_epochs < 0:
            raise ConfigError("local_epochs must be >= 0")
        if not self.local_lr > 0:
            raise ConfigError("local_lr must be positive")
        if self.local_batch < 1:
            raise ConfigError("local_batch must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.prox_mu < 0:
            raise ConfigError("prox_mu must be >= 0")
        if self.prox_mu != 0.0 and self.strategy != "fedprox":
            raise ConfigError("prox_mu is only meaningful for strategy 'fedprox'")
        if not 0.0 <= self.server_momentum < 1.0:
            raise ConfigError("server_momentum must lie in [0, 1)")
        if self.server_momentum != 0.0 and self.strategy != "fedavgm":
            raise ConfigError("server_momentum is only meaningful for strategy 'fedavgm'")
        needs_distill = self.strategy in ("feddf", "feddf_hetero")
        if needs_distill and self.distill is None:
            raise ConfigError(f"strategy {self.strategy!r} requires a distill config")
        if not needs_distill and self.distill is not None:
            raise ConfigError(f"strategy {self.strategy!r} does not take a distill config")
        if self.drop_threshold is not None and not 0.0 <= self.drop_threshold < 1.0:
            raise ConfigError("drop_threshold must lie in [0, 1)")


@dataclass
class ServerState:
    """Server model(s) keyed by prototype id, plus momentum buffers."""

    params: dict[str, ParamVector]
    velocity: dict[str, np.ndarray]
    round_index: int
    seed: int

    @staticmethod
    def initialize(prototypes: list[Prototype], seed: int) -> "ServerState":
        if not prototypes:
            raise ConfigError("need at least one prototype")
        ids = [p.id for p in prototypes]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate prototype ids in {ids}")
        classes = {p.n_classes for p in prototypes}
        inputs = {p.n_inputs for p in prototypes}
        if len(classes) != 1 or len(inputs) != 1:
            raise ConfigError("all prototypes must share input width and class count")
        if seed < 0:
            raise ConfigError("seed must be non-negative")
        params = {}
        for i, p in enumerate(prototypes):
            s = int(np.random.SeedSequence([seed, _INIT_STREAM, i]).generate_state(1, np.uint64)[0])
            params[p.id] = init_params(p, s)
        velocity = {p.id: np.zeros(p.n_params, dtype=np.float64) for p in prototypes}
        return ServerState(params, velocity, 0, seed)


@dataclass
class RoundRecord:
    """Per-round metrics; per_prototype is empty for homogeneous rounds."""

    round_index: int
    sampled: list[int]
    dropped: list[int]
    acc_averaged: float
    acc_fused: float
    acc_ensemble: float
    distill_steps: int
    per_prototype: dict[str, dict[str, float]] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "round": self.round_index,
            "sampled": self.sampled,
            "dropped": self.dropped,
            "acc_averaged": self.acc_averaged,
            "acc_fused": self.acc_fused,
            "acc_ensemble": self.acc_ensemble,
            "distill_steps": self.distill_steps,
            "acc_per_prototype": self.per_prototype,
        }


def sample_clients(client_count: int, participation: float, rng: np.random.Generator) -> np.ndarray:
    """ceil(participation * client_count) distinct client ids, sorted."""
    if client_count < 1:
        raise ConfigError("client_count must be >= 1")
    if not 0.0 < participation <= 1.0:
        raise ConfigError("participation must lie in (0, 1]")
    count = int(np.ceil(participation * client_count))
    return np.sort(rng.choice(client_count, size=count, replace=False))


def top1_accuracy(params: ParamVector, dataset: Dataset) -> float:
    """Fraction of argmax predictions matching labels; ties pick the lowest class."""
    if dataset.class_count != params.prototype.n_classes:
        raise ShapeError(
            f"dataset has {dataset.class_count} classes, prototype expects "
            f"{params.prototype.n_classes}"
        )
    logits = predict_logits(params, dataset.inputs)
    preds = np.argmax(logits, axis=1)
    return float((preds == dataset.labels).mean())


def client_local_update(
    start: ParamVector,
    shard: Dataset,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    prox_mu: float = 0.0,
    anchor: ParamVector | None = None,
) -> ParamVector:
    """Epochs of shuffled mini-batch SGD on cross-entropy; constant lr.

    prox_mu > 0 adds mu * (x - anchor) to every gradient (anchor defaults to
    start); mu = 0 takes the untouched SGD path. Binary prototypes train
    through the straight-through estimator. epochs = 0 returns start's values
    unchanged.
    """
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    proto = start.prototype
    if shard.dim != proto.n_inputs or shard.class_count != proto.n_classes:
        raise ShapeError(
            f"shard ({shard.dim} dims, {shard.class_count} classes) does not fit "
            f"prototype {proto.id!r}"
        )
    anchor_values = (anchor if anchor is not None else start).values
    params = start.copy()
    state = numerics.OptimizerState.sgd(lr)
    binary = proto.precision == "binary_ste"
    n = len(shard)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            sel = order[lo : lo + batch_size]
            xb = shard.inputs[sel]
            yb = shard.labels[sel]
            if binary:
                g = binarize_ste_grad(params, xb, yb)
            else:
                g = numerics.grad("ce", params, xb, labels=yb)
            if prox_mu != 0.0:
                g = g + prox_mu * (params.values - anchor_values)
            params, state = numerics.opt_step(state, params, g)
    return params


def _kept_indices(models: list[ParamVector], val: Dataset, threshold: float | None) -> list[int]:
    if threshold is None:
        return list(range(len(models)))
    accs = [top1_accuracy(m, val) for m in models]
    kept = [i for i, a in enumerate(accs) if a > threshold]
    if not kept:
        kept = [int(np.argmax(accs))]
    return kept


def drop_worst(models: list[ParamVector], val: Dataset, threshold: float) -> list[ParamVector]:
    """Filter out models whose validation accuracy is <= threshold.

    If every model falls at or below the threshold, the single best one is
    kept so aggregation always has input.
    """
    if not models:
        raise ValueError("drop_worst needs at least one model")
    return [models[i] for i in _kept_indices(models, val, threshold)]


def ensemble_logits(teachers: list[ParamVector], inputs: np.ndarray) -> np.ndarray:
    """Mean of the teachers' logits; teachers may differ in architecture."""
    if not teachers:
        raise ValueError("ensemble needs at least one teacher")
    classes = {t.prototype.n_classes for t in teachers}
    if len(classes) != 1:
        raise ShapeError(f"teachers disagree on class count: {sorted(classes)}")
    stack = np.stack([predict_logits(t, inputs) for t in teachers])
    return stack.mean(axis=0)


def ensemble_accuracy(teachers: list[ParamVector], dataset: Dataset) -> float:
    logits = ensemble_logits(teachers, dataset.inputs)
    preds = np.argmax(logits, axis=1)
    return float((preds == dataset.labels).mean())


def _full_precision_twin(proto: Prototype) -> Prototype:
    if proto.precision == "full":
        return proto
    return Prototype(proto.id, proto.layer_widths, proto.activation, "full")


def feddf_fuse(
    teachers: list[ParamVector],
    init: ParamVector,
    cfg: DistillConfig,
    val: Dataset,
    rng: np.random.Generator,
) -> tuple[ParamVector, int]:
    """Distill the teachers' averaged logits into a student started at init.

    Adam with cosine-annealed lr over max_steps; after each step the student
    is scored on val, the best snapshot is tracked (seeded with init itself),
    and the loop stops early once patience steps pass without improvement.
    Returns (best snapshot, steps actually taken). Binarized prototypes are
    trained and scored as their full-precision twin; the returned vector is
    re-bound to the original prototype as its master values.
    """
    if not teachers:
        raise ValueError("feddf_fuse needs at least one teacher")
    proto = init.prototype
    if cfg.pool.dim != proto.n_inputs:
        raise ShapeError(f"pool dim {cfg.pool.dim} != model input width {proto.n_inputs}")
    if cfg.max_steps == 0:
        return init.copy(), 0
    student_proto = _full_precision_twin(proto)
    student = ParamVector(student_proto, init.values.copy())
    opt = numerics.OptimizerState.adam(
        cfg.base_lr, student_proto.n_params, schedule="cosine", total_steps=cfg.max_steps
    )
    best_values = init.values.copy()
    best_acc = top1_accuracy(student, val)
    best_step = 0
    steps = 0
    for _ in range(cfg.max_steps):
        batch = sample_distill_batch(cfg.pool, rng)
        targets = numerics.softmax(ensemble_logits(teachers, batch))
        g = numerics.grad("kl_vs_target", student, batch, target_probs=targets)
        student, opt = numerics.opt_step(opt, student, g)
        steps += 1
        acc = top1_accuracy(student, val)
        if acc > best_acc:
            best_acc = acc
            best_values = student.values.copy()
            best_step = steps
        if steps - best_step >= cfg.patience:
            break
    return ParamVector(proto, best_values), steps


def _train_sampled(
    cfg: FLConfig,
    state: ServerState,
    shards: list[Dataset],
    starts: dict[int, ParamVector],
    ids: np.ndarray,
    parallel: bool,
) -> list[ParamVector]:
    t = state.round_index + 1
    mu = cfg.prox_mu if cfg.strategy == "fedprox" else 0.0

    def train_one(k: int) -> ParamVector:
        start = starts[k]
        trained = client_local_update(
            start,
            shards[k],
            cfg.local_epochs,
            cfg.local_lr,
            cfg.local_batch,
            client_rng(cfg.seed, t, k),
            prox_mu=mu,
            anchor=start,
        )
        if start.prototype.precision == "binary_ste":
            # clients transmit the binarized copy, not the master values
            trained = ParamVector(start.prototype, binarize_values(start.prototype, trained.values))
        return trained

    if parallel:
        with ThreadPoolExecutor(max_workers=min(8, len(ids))) as ex:
            return list(ex.map(train_one, [int(k) for k in ids]))
    return [train_one(int(k)) for k in ids]


def _check_round_inputs(state: ServerState, cfg: FLConfig, shards: list[Dataset]) -> None:
    if state.seed != cfg.seed:
        raise ConfigError(f"state seed {state.seed} != config seed {cfg.seed}")
    if len(shards) != cfg.client_count:
        raise ConfigError(f"{cfg.client_count} clients but {len(shards)} shards")


def run_round_homogeneous(
    state: ServerState,
    cfg: FLConfig,
    shards: list[Dataset],
    val: Dataset,
    parallel: bool = False,
    capture: dict | None = None,
) -> tuple[ServerState, RoundRecord]:
    """One round with a single shared prototype. Returns (new state, record)."""
    if cfg.strategy == "feddf_hetero":
        raise ConfigError("feddf_hetero rounds go through run_round_heterogeneous")
    _check_round_inputs(state, cfg, shards)
    if len(state.params) != 1:
        raise ConfigError(f"homogeneous round needs exactly one prototype, got {len(state.params)}")
    (pid,) = state.params
    x_prev = state.params[pid]
    t = state.round_index + 1
    ids = sample_clients(cfg.client_count, cfg.participation, sampling_rng(cfg.seed, t))
    trained = _train_sampled(cfg, state, shards, {int(k): x_prev for k in ids}, ids, parallel)
    kept_idx = _kept_indices(trained, val, cfg.drop_threshold)
    kept_ids = [int(ids[i]) for i in kept_idx]
    kept_models = [trained[i] for i in kept_idx]
    dropped = [int(k) for k in ids if int(k) not in set(kept_ids)]
    weights = [len(shards[k]) for k in kept_ids]
    avg = average_params(kept_models, weights)
    acc_avg = top1_accuracy(avg, val)
    acc_ens = ensemble_accuracy(kept_models, val)
    velocity = dict(state.velocity)
    distill_steps = 0
    if cfg.strategy in ("fedavg", "fedprox"):
        new = avg
    elif cfg.strategy == "fedavgm":
        beta = cfg.server_momentum
        v_prev = state.velocity[pid]
        new_values = avg.values if beta == 0.0 else avg.values - beta * v_prev
        new = ParamVector(x_prev.prototype, new_values)
        velocity[pid] = beta * v_prev + (x_prev.values - avg.values)
    else:  # feddf
        init = avg if cfg.distill.init_mode == "from_average" else x_prev
        new, distill_steps = feddf_fuse(kept_models, init, cfg.distill, val, pool_rng(cfg.seed, t))
    acc_fused = acc_avg if new is avg else top1_accuracy(new, val)
    if capture is not None:
        capture["averaged"] = avg
        capture["client_models"] = {int(k): m for k, m in zip(ids, trained)}
        capture["kept_ids"] = kept_ids
    record = RoundRecord(
        round_index=t,
        sampled=[int(k) for k in ids],
        dropped=dropped,
        acc_averaged=acc_avg,
        acc_fused=acc_fused,
        acc_ensemble=acc_ens,
        distill_steps=distill_steps,
    )
    new_state = ServerState({pid: new}, velocity, t, state.seed)
    return new_state, record


def run_round_heterogeneous(
    state: ServerState,
    cfg: FLConfig,
    shards: list[Dataset],
    client_prototypes: list[str],
    val: Dataset,
    parallel: bool = False,
    capture: dict | None = None,
) -> tuple[ServerState, RoundRecord]:
    """One round across several prototypes (strategy feddf_hetero).

    Every sampled client trains its own prototype's current server model.
    Per prototype, surviving members are averaged within the group; that
    average (or the previous server model) seeds a student distilled against
    the ensemble of all surviving models from every group. Prototypes with no
    surviving member this round keep their previous parameters and are absent
    from per_prototype. Top-level acc_averaged and acc_fused are means over
    the prototypes updated this round.
    """
    if cfg.strategy != "feddf_hetero":
        raise ConfigError("run_round_heterogeneous requires strategy 'feddf_hetero'")
    _check_round_inputs(state, cfg, shards)
    if len(client_prototypes) != cfg.client_count:
        raise ConfigError(
            f"client_prototypes maps {len(client_prototypes)} clients, expected {cfg.client_count}"
        )
    unknown = sorted(set(client_prototypes) - set(state.params))
    if unknown:
        raise ConfigError(f"client_prototypes references undeclared prototypes {unknown}")
    t = state.round_index + 1
    ids = sample_clients(cfg.client_count, cfg.participation, sampling_rng(cfg.seed, t))
    starts = {int(k): state.params[client_prototypes[int(k)]] for k in ids}
    trained = _train_sampled(cfg, state, shards, starts, ids, parallel)
    kept_idx = _kept_indices(trained, val, cfg.drop_threshold)
    kept_ids = [int(ids[i]) for i in kept_idx]
    kept_models = [trained[i] for i in kept_idx]
    dropped = [int(k) for k in ids if int(k) not in set(kept_ids)]
    acc_ens = ensemble_accuracy(kept_models, val)
    prng = pool_rng(cfg.seed, t)
    new_params = dict(state.params)
    per_proto: dict[str, dict[str, float]] = {}
    distill_steps = 0
    for pid in sorted(state.params):
        members = [i for i, k in enumerate(kept_ids) if client_prototypes[k] == pid]
        if not members:
            continue
        group_models = [kept_models[i] for i in members]
        group_weights = [len(shards[kept_ids[i]]) for i in members]
        avg_p = average_params(group_models, group_weights)
        init = avg_p if cfg.distill.init_mode == "from_average" else state.params[pid]
        fused, steps = feddf_fuse(kept_models, init, cfg.distill, val, prng)
        new_params[pid] = fused
        per_proto[pid] = {
            "acc_averaged": top1_accuracy(avg_p, val),
            "acc_fused": top1_accuracy(fused, val),
        }
        distill_steps = max(distill_steps, steps)
        if capture is not None:
            capture.setdefault("averaged_by_prototype", {})[pid] = avg_p
    if not per_proto:
        raise ConfigError("no prototype received any surviving client this round")
    acc_avg = float(np.mean([d["acc_averaged"] for d in per_proto.values()]))
    acc_fused = float(np.mean([d["acc_fused"] for d in per_proto.values()]))
    if capture is not None:
        capture["client_models"] = {int(k): m for k, m in zip(ids, trained)}
        capture["kept_ids"] = kept_ids
    record = RoundRecord(
        round_index=t,
        sampled=[int(k) for k in ids],
        dropped=dropped,
        acc_averaged=acc_avg,
        acc_fused=acc_fused,
        acc_ensemble=acc_ens,
        distill_steps=distill_steps,
        per_prototype=per_proto,
    )
    new_state = ServerState(new_params, dict(state.velocity), t, state.seed)
    return new_state, record


def run_training(
    cfg: FLConfig,
    shards: list[Dataset],
    val: Dataset,
    prototypes: list[Prototype],
    client_prototypes: list[str] | None = None,
    parallel: bool = False,
    capture_final: dict | None = None,
) -> tuple[ServerState, list[RoundRecord]]:
    """Full T-round run from a fresh server state; pure function of cfg + data.

    The distillation pool's epoch cursor is reset at the start so repeated
    calls with the same config are identical.
    """
    if cfg.distill is not None:
        cfg.distill.pool.reset()
    state = ServerState.initialize(prototypes, cfg.seed)
    records: list[RoundRecord] = []
    for r in range(cfg.rounds):
        cap = capture_final if r == cfg.rounds - 1 else None
        if cfg.strategy == "feddf_hetero":
            if client_prototypes is None:
                raise ConfigError("feddf_hetero needs a client_prototypes map")
            state, rec = run_round_heterogeneous(
                state, cfg, shards, client_prototypes, val, parallel, cap
            )
        else:
            state, rec = run_round_homogeneous(state, cfg, shards, val, parallel, cap)
        records.append(rec)
    return state, records
