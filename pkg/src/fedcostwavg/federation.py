"""Synchronous round orchestration.

Each round: broadcast the global model, wait for every registered client's
update (a hard barrier; a missing client aborts the run), compute averaging
weights, aggregate, evaluate on the held-out global validation split, record
metrics.

Round 1 has no cost history, so every strategy uses size-proportional
weights there; the configured strategy takes over from round 2.

Experiments are paired: every strategy in a comparison starts from the same
initial model, the same data partition, and the same per-round client seeds
(derived from ``(master_seed, client_id, round)``), so the aggregation rule
is the only varying factor.

All recorded metrics are deterministic for a fixed config and master seed.
Wall-clock timings are therefore never written into records; they go to the
log instead.
"""

from __future__ import annotations

import hashlib
import logging
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import models
from .aggregation import (
    ClientUpdate,
    CostHistory,
    StrategyConfig,
    aggregate,
    cost_ratios,
    fedavg_weights,
    fedcostwavg_weights,
    fedcostwintavg_weights,
)
from .data import Dataset, Partition, generate, partition_dirichlet, split_train_val
from .errors import BarrierViolationError, ConfigError, FedCostError, ProtocolError
from .models import Batch, ModelSpec
from .transport import (
    GlobalModel,
    Join,
    Session,
    Shutdown,
    TcpSession,
    Update,
    connect,
    inproc_pair,
)

logger = logging.getLogger(__name__)

ROUND_TIMEOUT = 600.0
HANDSHAKE_TIMEOUT = 120.0


def derive_seed(master_seed: int, *parts) -> int:
    """Stable 64-bit seed from the master seed and a label path.

    Uses a keyed hash rather than Python's ``hash`` so the same config
    reproduces the same streams across processes and platforms.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master_seed)).encode())
    for part in parts:
        h.update(b"\x1f")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "little")


@dataclass
class ExperimentConfig:
    task: str = "blobs-classification"
    model: str = "logreg"
    n_samples: int = 369
    input_dim: int = 5
    n_classes: int = 3
    hidden_dim: int = 16
    noise: float = 1.0
    n_centers: int = 17
    beta: float = 0.5
    train_fraction: float = 0.8
    rounds: int = 30
    epochs: int = 10
    lr: float = 0.05
    batch_size: int = 32
    strategies: list[StrategyConfig] = field(
        default_factory=lambda: [StrategyConfig("fedavg"), StrategyConfig("fedcostwavg")]
    )
    master_seed: int = 0
    cost_on: str = "train"

    def __post_init__(self):
        if self.rounds < 1 or self.epochs < 1 or self.n_centers < 1:
            raise ConfigError("rounds, epochs and n_centers must all be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.cost_on not in ("train", "local_val"):
            raise ConfigError(f"cost_on must be 'train' or 'local_val', got {self.cost_on!r}")
        if self.model not in models.MODEL_KINDS:
            raise ConfigError(f"unknown model {self.model!r}")
        classifier = self.model in ("logreg", "mlp")
        if classifier != (self.task == "blobs-classification"):
            raise ConfigError(f"model {self.model!r} does not fit task {self.task!r}")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        kinds = [s.kind for s in self.strategies]
        if len(set(kinds)) != len(kinds):
            raise ConfigError("strategy kinds must be unique within one experiment")
        self.model_spec()  # validates dims

    def model_spec(self) -> ModelSpec:
        if self.model == "linreg":
            return ModelSpec("linreg", self.input_dim, 1)
        if self.model == "logreg":
            return ModelSpec("logreg", self.input_dim, self.n_classes)
        return ModelSpec("mlp", self.input_dim, self.n_classes, self.hidden_dim)

    def echo_dict(self) -> dict:
        """Semantic config only, for the summary file: identical between
        transports and independent of output paths."""
        return {
            "task": self.task,
            "model": self.model,
            "n_samples": self.n_samples,
            "input_dim": self.input_dim,
            "n_classes": self.n_classes,
            "hidden_dim": self.hidden_dim,
            "noise": self.noise,
            "n_centers": self.n_centers,
            "beta": self.beta,
            "train_fraction": self.train_fraction,
            "rounds": self.rounds,
            "epochs": self.epochs,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "master_seed": self.master_seed,
            "cost_on": self.cost_on,
            "strategies": [
                {
                    "kind": s.kind,
                    "alpha": s.alpha,
                    "window": s.window,
                    "min_cost_floor": s.min_cost_floor,
                    "experimental": s.experimental,
                }
                for s in self.strategies
            ],
        }


@dataclass
class RoundState:
    round_index: int
    global_model: np.ndarray
    cost_history: CostHistory
    ratio_history: list[list[float]]
    strategy: StrategyConfig
    client_ids: tuple[int, ...]


@dataclass
class MetricsRecord:
    round: int
    strategy: str
    client_ids: list[int]
    client_costs: list[float]
    client_weights: list[float]
    val_loss: float
    val_acc: float | None
    # Kept at 0 so metric streams stay bit-identical across runs; real
    # timings are logged, not recorded.
    wall_ms: int = 0


def run_round(state: RoundState, updates: list[ClientUpdate], evaluator=None):
    """Execute one aggregation step; returns (next state, metrics record)."""
    got = sorted(u.client_id for u in updates)
    if got != sorted(state.client_ids):
        raise BarrierViolationError(
            f"round {state.round_index + 1}: expected updates from {sorted(state.client_ids)}, "
            f"got {got}"
        )
    ordered = sorted(updates, key=lambda u: u.client_id)

    ratio_history = state.ratio_history
    if not state.cost_history:
        weights = fedavg_weights(ordered)  # bootstrap: no previous costs yet
    elif not state.cost_history.covers(u.client_id for u in ordered):
        logger.warning(
            "round %d: cost history is incomplete; falling back to size-only weights",
            state.round_index + 1,
        )
        weights = fedavg_weights(ordered)
    elif state.strategy.kind == "fedavg":
        weights = fedavg_weights(ordered)
    elif state.strategy.kind == "fedcostwavg":
        weights = fedcostwavg_weights(ordered, state.cost_history, state.strategy)
    else:
        ratios = cost_ratios(ordered, state.cost_history, state.strategy.min_cost_floor)
        ratio_history = (state.ratio_history + [ratios])[-state.strategy.window :]
        weights = fedcostwintavg_weights(ordered, ratio_history, state.strategy)

    new_model = aggregate(ordered, weights)
    next_state = RoundState(
        round_index=state.round_index + 1,
        global_model=new_model,
        cost_history=CostHistory({u.client_id: u.cost for u in ordered}),
        ratio_history=ratio_history,
        strategy=state.strategy,
        client_ids=state.client_ids,
    )
    val_loss, val_acc = evaluator(new_model) if evaluator else (float("nan"), None)
    record = MetricsRecord(
        round=next_state.round_index,
        strategy=state.strategy.kind,
        client_ids=[u.client_id for u in ordered],
        client_costs=[u.cost for u in ordered],
        client_weights=[float(w) for w in weights.weights],
        val_loss=val_loss,
        val_acc=val_acc,
    )
    return next_state, record


@dataclass
class ClientWorker:
    """Client-side logic: local training on a fixed partition, driven by a
    session until Shutdown arrives."""

    client_id: int
    spec: ModelSpec
    train_batch: Batch
    cost_batch: Batch
    epochs: int
    lr: float
    batch_size: int
    master_seed: int

    def train_once(self, round_no: int, start: np.ndarray):
        seed = derive_seed(self.master_seed, "client", self.client_id, round_no)
        trained, cost = models.local_train(
            self.spec, start, self.train_batch, self.epochs, self.lr, self.batch_size, seed
        )
        if self.cost_batch is not self.train_batch:
            cost = models.loss(self.spec, trained, self.cost_batch)
        return trained, cost

    def run_session(self, session: Session) -> None:
        session.send(Join(self.client_id, self.train_batch.n))
        while True:
            msg = session.receive()
            if isinstance(msg, Shutdown):
                return
            if not isinstance(msg, GlobalModel):
                raise ProtocolError(f"client expected GlobalModel, got {type(msg).__name__}")
            trained, cost = self.train_once(msg.round, msg.params)
            session.send(
                Update(msg.round, self.client_id, self.train_batch.n, cost, trained)
            )


@dataclass
class ExperimentSetup:
    """Everything derivable from the config alone; identical on every node."""

    config: ExperimentConfig
    spec: ModelSpec
    train: Dataset
    val_batch: Batch
    partition: Partition
    init_model: np.ndarray

    def evaluator(self):
        return lambda params: models.evaluate(self.spec, params, self.val_batch)

    def make_worker(self, client_id: int) -> ClientWorker:
        cfg = self.config
        if not 0 <= client_id < cfg.n_centers:
            raise ConfigError(f"client_id must be in [0, {cfg.n_centers}), got {client_id}")
        idx = self.partition.center_indices[client_id]
        local = self.train.subset(idx)
        full = Batch(local.inputs, local.targets)
        train_batch, cost_batch = full, full
        if cfg.cost_on == "local_val":
            n_holdout = int(np.floor((1.0 - cfg.train_fraction) * local.n))
            if n_holdout >= 1 and local.n - n_holdout >= 1:
                perm = np.random.default_rng(
                    derive_seed(cfg.master_seed, "localval", client_id)
                ).permutation(local.n)
                train_batch = full.take(np.sort(perm[n_holdout:]))
                cost_batch = full.take(np.sort(perm[:n_holdout]))
            else:
                logger.warning(
                    "client %d has too few samples for a local holdout; "
                    "cost falls back to the training split",
                    client_id,
                )
        return ClientWorker(
            client_id=client_id,
            spec=self.spec,
            train_batch=train_batch,
            cost_batch=cost_batch,
            epochs=cfg.epochs,
            lr=cfg.lr,
            batch_size=cfg.batch_size,
            master_seed=cfg.master_seed,
        )


def prepare_experiment(config: ExperimentConfig) -> ExperimentSetup:
    """Generate dataset, split, partition and initial model from the seed."""
    dataset = generate(
        config.task,
        config.n_samples,
        config.input_dim,
        config.n_classes,
        config.noise,
        derive_seed(config.master_seed, "data"),
    )
    train, val = split_train_val(
        dataset, config.train_fraction, derive_seed(config.master_seed, "split")
    )
    partition = partition_dirichlet(
        train, config.n_centers, config.beta, derive_seed(config.master_seed, "partition")
    )
    spec = config.model_spec()
    init_model = models.init_params(spec, derive_seed(config.master_seed, "init"))
    return ExperimentSetup(
        config=config,
        spec=spec,
        train=train,
        val_batch=Batch(val.inputs, val.targets),
        partition=partition,
        init_model=init_model,
    )


@dataclass
class StrategyRunResult:
    strategy: StrategyConfig
    status: str  # "ok" or "failed"
    error: str | None
    records: list[MetricsRecord]
    round_models: list[np.ndarray]
    round0_val_loss: float
    round0_val_acc: float | None

    @property
    def final_val_loss(self) -> float | None:
        return self.records[-1].val_loss if self.records else None

    @property
    def final_val_acc(self) -> float | None:
        return self.records[-1].val_acc if self.records else None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list[StrategyRunResult]

    @property
    def failed(self) -> bool:
        return any(r.status != "ok" for r in self.runs)

    def all_records(self) -> list[MetricsRecord]:
        return [rec for run in self.runs for rec in run.records]


def run_strategy_over_sessions(
    sessions: dict[int, Session],
    strategy: StrategyConfig,
    init_model: np.ndarray,
    rounds: int,
    evaluator,
) -> StrategyRunResult:
    """Drive one strategy for the given number of rounds over open sessions.

    Round errors abort the run; partial records are kept and the result is
    marked failed.  Sessions receive Shutdown in every case.
    """
    client_ids = tuple(sorted(sessions))
    state = RoundState(
        round_index=0,
        global_model=np.array(init_model, dtype=np.float64, copy=True),
        cost_history=CostHistory({}),
        ratio_history=[],
        strategy=strategy,
        client_ids=client_ids,
    )
    round0_val_loss, round0_val_acc = evaluator(state.global_model)
    records: list[MetricsRecord] = []
    round_models: list[np.ndarray] = []
    status, error = "ok", None
    try:
        for rnd in range(1, rounds + 1):
            t0 = time.perf_counter()
            for cid in client_ids:
                sessions[cid].send(GlobalModel(rnd, state.global_model))
            updates = []
            for cid in client_ids:
                try:
                    msg = sessions[cid].receive()
                except FedCostError as exc:
                    raise BarrierViolationError(
                        f"client {cid} dropped out in round {rnd}: {exc}"
                    ) from exc
                if not isinstance(msg, Update) or msg.client_id != cid or msg.round != rnd:
                    raise BarrierViolationError(
                        f"client {cid} sent an out-of-protocol reply in round {rnd}: {msg!r}"
                    )
                updates.append(
                    ClientUpdate(msg.client_id, msg.params, msg.sample_count, msg.cost)
                )
            state, record = run_round(state, updates, evaluator)
            records.append(record)
            round_models.append(state.global_model.copy())
            logger.info(
                "strategy=%s round=%d/%d val_loss=%.6g (%.1f ms)",
                strategy.kind, rnd, rounds, record.val_loss,
                1000.0 * (time.perf_counter() - t0),
            )
    except FedCostError as exc:
        status, error = "failed", f"{type(exc).__name__}: {exc}"
        logger.error("strategy %s aborted: %s", strategy.kind, error)
    finally:
        for sess in sessions.values():
            try:
                sess.send(Shutdown())
            except FedCostError:
                pass
    return StrategyRunResult(
        strategy=strategy,
        status=status,
        error=error,
        records=records,
        round_models=round_models,
        round0_val_loss=round0_val_loss,
        round0_val_acc=round0_val_acc,
    )


def _client_thread_main(worker: ClientWorker, session: Session) -> None:
    try:
        worker.run_session(session)
    except FedCostError as exc:
        logger.error("client %d worker stopped: %s", worker.client_id, exc)
    finally:
        session.close()


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every configured strategy in-process with paired seeds.

    Clients run on threads connected through in-process channels carrying
    the same framed protocol that the TCP transport uses.
    """
    if config.strategies and any(s.experimental for s in config.strategies):
        logger.warning("fedcostwintavg is EXPERIMENTAL: its windowed formula is "
                       "this project's own extension")
    setup = prepare_experiment(config)
    evaluator = setup.evaluator()
    workers = [setup.make_worker(cid) for cid in range(config.n_centers)]
    runs = []
    for strategy in config.strategies:
        sessions: dict[int, Session] = {}
        threads = []
        try:
            for worker in workers:
                coord_side, client_side = inproc_pair(timeout=ROUND_TIMEOUT)
                thread = threading.Thread(
                    target=_client_thread_main,
                    args=(worker, client_side),
                    name=f"client-{worker.client_id}",
                    daemon=True,
                )
                threads.append(thread)
                thread.start()
                join = coord_side.receive()
                if not isinstance(join, Join) or join.client_id != worker.client_id:
                    raise ProtocolError(f"unexpected handshake from client: {join!r}")
                sessions[join.client_id] = coord_side
            runs.append(
                run_strategy_over_sessions(
                    sessions, strategy, setup.init_model, config.rounds, evaluator
                )
            )
        finally:
            for sess in sessions.values():
                sess.close()
            for thread in threads:
                thread.join(timeout=30)
    return ExperimentResult(config=config, runs=runs)


def serve_experiment(
    config: ExperimentConfig,
    host: str,
    port: int,
    expected_clients: int | None = None,
    handshake_timeout: float = HANDSHAKE_TIMEOUT,
    on_listen=None,
) -> ExperimentResult:
    """Coordinator over TCP: accept joins, run all strategies, shut down.

    One connection carries exactly one strategy run, so every client must
    reconnect for each strategy in the list (round numbers on a connection
    then never decrease).  ``on_listen(host, port)`` is called once the
    socket is bound, with the actual port.
    """
    expected = config.n_centers if expected_clients is None else expected_clients
    if expected < 1:
        raise ConfigError(f"expected client count must be >= 1, got {expected}")
    if expected != config.n_centers:
        raise ConfigError(
            f"full participation required: expected_clients={expected} "
            f"but the experiment has {config.n_centers} centers"
        )
    setup = prepare_experiment(config)
    evaluator = setup.evaluator()
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        srv.bind((host, port))
        srv.listen(expected)
        actual_port = srv.getsockname()[1]
        logger.info("listening on %s:%d, waiting for %d clients", host, actual_port, expected)
        if on_listen is not None:
            on_listen(host, actual_port)
        runs = []
        for strategy in config.strategies:
            sessions = _accept_joins(srv, set(range(expected)), handshake_timeout)
            try:
                runs.append(
                    run_strategy_over_sessions(
                        sessions, strategy, setup.init_model, config.rounds, evaluator
                    )
                )
            finally:
                for sess in sessions.values():
                    sess.close()
        return ExperimentResult(config=config, runs=runs)
    finally:
        srv.close()


def _accept_joins(
    srv: socket.socket, expected_ids: set[int], handshake_timeout: float
) -> dict[int, TcpSession]:
    """Accept connections until every expected client has joined.

    Connections that fail the handshake (bad protocol, duplicate or unknown
    id) are dropped and waiting continues until the timeout.
    """
    deadline = time.monotonic() + handshake_timeout
    sessions: dict[int, TcpSession] = {}
    while set(sessions) != expected_ids:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            for sess in sessions.values():
                sess.close()
            raise BarrierViolationError(
                f"timed out waiting for clients; joined={sorted(sessions)}, "
                f"expected={sorted(expected_ids)}"
            )
        srv.settimeout(remaining)
        try:
            conn, addr = srv.accept()
        except TimeoutError:
            continue
        except OSError as exc:
            raise BarrierViolationError(f"accept failed: {exc}") from exc
        conn.settimeout(handshake_timeout)
        session = TcpSession(conn)
        try:
            join = session.receive()
            if not isinstance(join, Join):
                raise ProtocolError(f"expected Join, got {type(join).__name__}")
            if join.client_id not in expected_ids or join.client_id in sessions:
                raise ProtocolError(f"unexpected or duplicate client id {join.client_id}")
        except FedCostError as exc:
            logger.warning("rejected connection from %s: %s", addr, exc)
            session.close()
            continue
        conn.settimeout(ROUND_TIMEOUT)
        sessions[join.client_id] = session
        logger.info("client %d joined (%d samples)", join.client_id, join.sample_count)
    return sessions


def run_client(
    config: ExperimentConfig,
    client_id: int,
    host: str,
    port: int,
    connect_timeout: float = 30.0,
) -> None:
    """Join a coordinator over TCP and train until Shutdown.

    The client rebuilds its partition deterministically from the shared
    config; raw data never crosses the wire.  One invocation serves one
    strategy run; start a fresh client for each strategy the coordinator
    will execute.
    """
    setup = prepare_experiment(config)
    worker = setup.make_worker(client_id)
    session = connect(host, port, timeout=connect_timeout)
    try:
        worker.run_session(session)
    finally:
        session.close()
