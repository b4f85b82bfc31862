"""Experiment runner and comparison harness.

Subcommands:

- ``run``      execute one strategy and write metrics
- ``compare``  execute several strategies with paired seeds
- ``serve``    coordinator over TCP (full participation, fixed client count)
- ``client``   one training center over TCP

Config files are flat ``key = value`` text ('#' starts a comment); any
command-line override wins over the file.  Outputs land in the chosen
output directory as ``metrics.csv`` and ``summary.json``; both are
byte-reproducible for a fixed config and master seed.

metrics.csv columns (one row per client per round, global values repeated
on every row of the round):

    round,strategy,client_id,client_cost,client_weight,val_loss,val_acc,wall_ms
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .aggregation import (
    DEFAULT_ALPHA,
    DEFAULT_MIN_COST_FLOOR,
    DEFAULT_WINDOW,
    STRATEGY_KINDS,
    StrategyConfig,
)
from .errors import ConfigError, FedCostError
from .federation import ExperimentConfig, ExperimentResult, run_client, run_experiment, serve_experiment

logger = logging.getLogger(__name__)

METRICS_HEADER = "round,strategy,client_id,client_cost,client_weight,val_loss,val_acc,wall_ms"

_CONFIG_COERCERS = {
    "task": str,
    "model": str,
    "n_samples": int,
    "input_dim": int,
    "n_classes": int,
    "hidden_dim": int,
    "noise": float,
    "n_centers": int,
    "beta": float,
    "train_fraction": float,
    "rounds": int,
    "epochs": int,
    "lr": float,
    "batch_size": int,
    "strategy": str,
    "strategies": str,
    "alpha": float,
    "window": int,
    "min_cost_floor": float,
    "seed": int,
    "cost_on": str,
    "out": str,
    "transport": str,
    "listen": str,
    "connect": str,
    "expected_clients": int,
}

_EXPERIMENT_FIELDS = (
    "task", "model", "n_samples", "input_dim", "n_classes", "hidden_dim", "noise",
    "n_centers", "beta", "train_fraction", "rounds", "epochs", "lr", "batch_size",
    "cost_on",
)


def parse_config_file(path) -> dict:
    """Read a flat key = value config file into a typed dict."""
    values: dict = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_COERCERS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _CONFIG_COERCERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return values


def _merge_settings(args) -> dict:
    """File settings with CLI overrides folded in."""
    settings = parse_config_file(args.config) if args.config else {}
    for key in _CONFIG_COERCERS:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    return settings


def _strategy_list(settings, default_kinds) -> list[StrategyConfig]:
    raw = settings.get("strategies") or settings.get("strategy") or default_kinds
    kinds = [k.strip() for k in raw.split(",")] if isinstance(raw, str) else list(raw)
    alpha = settings.get("alpha", DEFAULT_ALPHA)
    window = settings.get("window", DEFAULT_WINDOW)
    floor = settings.get("min_cost_floor", DEFAULT_MIN_COST_FLOOR)
    out = []
    for kind in kinds:
        if kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy {kind!r} (choose from {', '.join(STRATEGY_KINDS)})")
        out.append(StrategyConfig(kind=kind, alpha=alpha, window=window, min_cost_floor=floor))
    return out


def build_experiment_config(settings, default_kinds="fedavg,fedcostwavg") -> ExperimentConfig:
    kwargs = {k: settings[k] for k in _EXPERIMENT_FIELDS if k in settings}
    if "seed" in settings:
        kwargs["master_seed"] = settings["seed"]
    kwargs["strategies"] = _strategy_list(settings, default_kinds)
    return ExperimentConfig(**kwargs)


def _out_dir(settings) -> Path:
    out = settings.get("out") or os.environ.get("FEDCOST_OUT_DIR") or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_addr(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"address must look like HOST:PORT, got {addr!r}")
    try:
        return host, int(port)
    except ValueError as exc:
        raise ConfigError(f"bad port in address {addr!r}") from exc


def _fmt(value) -> str:
    if value is None:
        return "nan"
    return repr(float(value))


def write_metrics_csv(path, result: ExperimentResult) -> None:
    lines = [METRICS_HEADER]
    for run in result.runs:
        for rec in run.records:
            for cid, cost, weight in zip(rec.client_ids, rec.client_costs, rec.client_weights):
                lines.append(
                    f"{rec.round},{rec.strategy},{cid},{_fmt(cost)},{_fmt(weight)},"
                    f"{_fmt(rec.val_loss)},{_fmt(rec.val_acc)},{rec.wall_ms}"
                )
    Path(path).write_text("\n".join(lines) + "\n")


def write_summary_json(path, result: ExperimentResult) -> None:
    strategies = {}
    for run in result.runs:
        strategies[run.strategy.kind] = {
            "status": run.status,
            "error": run.error,
            "alpha": run.strategy.alpha,
            "experimental": run.strategy.experimental,
            "rounds_completed": len(run.records),
            "round0_val_loss": run.round0_val_loss,
            "round0_val_acc": run.round0_val_acc,
            "final_val_loss": run.final_val_loss,
            "final_val_acc": run.final_val_acc,
        }
    payload = {"config": result.config.echo_dict(), "strategies": strategies}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_outputs(out_dir: Path, result: ExperimentResult) -> None:
    write_metrics_csv(out_dir / "metrics.csv", result)
    write_summary_json(out_dir / "summary.json", result)
    logger.info("wrote %s and %s", out_dir / "metrics.csv", out_dir / "summary.json")


def _execute(settings, config: ExperimentConfig) -> int:
    transport = settings.get("transport", "inproc")
    if transport not in ("inproc", "tcp"):
        raise ConfigError(f"transport must be 'inproc' or 'tcp', got {transport!r}")
    out_dir = _out_dir(settings)
    if transport == "tcp":
        host, port = _parse_addr(settings.get("listen", "127.0.0.1:7463"))
        result = serve_experiment(
            config, host, port,
            expected_clients=settings.get("expected_clients"),
            on_listen=_announce_listen,
        )
    else:
        result = run_experiment(config)
    _write_outputs(out_dir, result)
    if result.failed:
        for run in result.runs:
            if run.status != "ok":
                print(f"error: strategy {run.strategy.kind} failed: {run.error}", file=sys.stderr)
        return 1
    return 0


def _announce_listen(host: str, port: int) -> None:
    # machine-readable so harnesses can discover an ephemeral port
    print(f"listening {host} {port}", flush=True)


def _cmd_run(args) -> int:
    settings = _merge_settings(args)
    if getattr(args, "strategy", None) is not None:
        settings.pop("strategies", None)  # the CLI flag beats a file-level list
    return _execute(settings, build_experiment_config(settings, default_kinds="fedcostwavg"))


def _cmd_compare(args) -> int:
    settings = _merge_settings(args)
    if getattr(args, "strategies", None) is not None:
        settings.pop("strategy", None)
    return _execute(settings, build_experiment_config(settings))


def _cmd_serve(args) -> int:
    settings = _merge_settings(args)
    settings["transport"] = "tcp"
    return _execute(settings, build_experiment_config(settings))


def _cmd_client(args) -> int:
    settings = _merge_settings(args)
    config = build_experiment_config(settings)
    host, port = _parse_addr(settings.get("connect", "127.0.0.1:7463"))
    run_client(config, args.client_id, host, port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedcostwavg",
        description="Federated-learning simulator comparing size-weighted and "
                    "cost-improvement-weighted model averaging.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_strategies):
        p.add_argument("--config", help="flat key = value config file")
        if with_strategies == "one":
            p.add_argument("--strategy", choices=STRATEGY_KINDS, help="strategy to run")
        elif with_strategies == "many":
            p.add_argument("--strategies", help="comma-separated strategy kinds")
        p.add_argument("--alpha", type=float, help="size/cost balance in [0, 1]")
        p.add_argument("--rounds", type=int, help="number of federated rounds")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory (default $FEDCOST_OUT_DIR or ./out)")

    p_run = sub.add_parser("run", help="run a single aggregation strategy")
    common(p_run, "one")
    p_run.add_argument("--transport", choices=("inproc", "tcp"))
    p_run.add_argument("--listen", help="HOST:PORT when --transport tcp")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="run several strategies with paired seeds")
    common(p_cmp, "many")
    p_cmp.add_argument("--transport", choices=("inproc", "tcp"))
    p_cmp.add_argument("--listen", help="HOST:PORT when --transport tcp")
    p_cmp.set_defaults(func=_cmd_compare)

    p_srv = sub.add_parser("serve", help="run the coordinator over TCP")
    common(p_srv, "many")
    p_srv.add_argument("--listen", help="HOST:PORT to bind (port 0 for ephemeral)")
    p_srv.add_argument("--expected-clients", dest="expected_clients", type=int,
                       help="client count to wait for (must equal n_centers)")
    p_srv.set_defaults(func=_cmd_serve)

    p_cli = sub.add_parser("client", help="join a coordinator as one center")
    common(p_cli, None)
    p_cli.add_argument("--client-id", dest="client_id", type=int, required=True)
    p_cli.add_argument("--connect", help="coordinator HOST:PORT")
    p_cli.set_defaults(func=_cmd_client)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FedCostError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
