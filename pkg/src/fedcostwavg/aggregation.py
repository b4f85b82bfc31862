"""Per-center averaging weights and global-model aggregation.

Two production strategies plus one experimental extension:

- ``fedavg``: each center is weighted by its share of the training data,
  ``s_share[j] = samples[j] / total_samples``.
- ``fedcostwavg``: mixes the data-size share with a cost-improvement share.
  Each center's cost ratio is its previous-round cost divided by its
  current-round cost (> 1 means its loss went down).  The weight is
  ``alpha * size_share + (1 - alpha) * ratio_share`` where ratio_share
  normalizes the cost ratios to sum to one.
- ``fedcostwintavg`` (EXPERIMENTAL): like fedcostwavg, but each center's cost
  ratio is replaced by its arithmetic mean over a sliding window of recent
  rounds, current round included.  The windowed form is this project's own
  extension and is flagged as experimental wherever it appears.

Weights from any strategy are non-negative and sum to one (within 1e-9);
they feed ``aggregate``, a convex combination of the client parameter
vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    EmptyRoundError,
    InvalidCostError,
    MissingHistoryError,
    WeightNormError,
)
from .params import WEIGHT_SUM_TOL, ParamVector, convex_combine

STRATEGY_KINDS = ("fedavg", "fedcostwavg", "fedcostwintavg")

DEFAULT_ALPHA = 0.5
DEFAULT_WINDOW = 3
DEFAULT_MIN_COST_FLOOR = 1e-12


@dataclass
class ClientUpdate:
    """One center's round output."""

    client_id: int
    params: np.ndarray
    sample_count: int
    cost: float

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.sample_count < 1:
            raise ConfigError(f"sample_count must be >= 1, got {self.sample_count}")
        if not (np.isfinite(self.cost) and self.cost > 0):
            raise InvalidCostError(f"cost must be positive and finite, got {self.cost!r}")


@dataclass
class CostHistory:
    """Per-center cost recorded at the end of the previous round."""

    prev_cost_by_client: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for cid, cost in self.prev_cost_by_client.items():
            if not (np.isfinite(cost) and cost > 0):
                raise InvalidCostError(f"stored cost for client {cid} invalid: {cost!r}")

    def covers(self, client_ids) -> bool:
        return all(cid in self.prev_cost_by_client for cid in client_ids)

    def __bool__(self) -> bool:
        return bool(self.prev_cost_by_client)


@dataclass
class StrategyConfig:
    kind: str
    alpha: float = DEFAULT_ALPHA
    window: int = DEFAULT_WINDOW
    min_cost_floor: float = DEFAULT_MIN_COST_FLOOR

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy kind {self.kind!r}")
        _check_alpha(self.alpha)
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if not self.min_cost_floor > 0:
            raise ConfigError("min_cost_floor must be > 0")

    @property
    def experimental(self) -> bool:
        return self.kind == "fedcostwintavg"


@dataclass
class WeightVector:
    """Averaging weights aligned with a list of client ids."""

    client_ids: list[int]
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.client_ids) != self.weights.shape[0]:
            raise DimensionError("client_ids and weights differ in length")
        if (self.weights < 0).any():
            raise WeightNormError("negative averaging weight")
        total = float(np.sum(self.weights))
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise WeightNormError(f"weights sum to {total!r}")


def _check_alpha(alpha: float) -> None:
    if not (np.isfinite(alpha) and 0.0 <= alpha <= 1.0):
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha!r}")


def fedavg_weights(updates: list[ClientUpdate]) -> WeightVector:
    """Weights proportional to each center's training-sample count."""
    if not updates:
        raise EmptyRoundError("cannot compute weights for an empty round")
    counts = np.array([u.sample_count for u in updates], dtype=np.float64)
    return WeightVector([u.client_id for u in updates], counts / counts.sum())


def cost_ratios(
    updates: list[ClientUpdate],
    history: CostHistory,
    floor: float = DEFAULT_MIN_COST_FLOOR,
) -> list[float]:
    """Previous-round cost over current cost, per update.

    The current cost is floored before dividing so a near-zero loss cannot
    overflow the ratio; there is deliberately no upper clamp.
    """
    ratios = []
    for u in updates:
        if u.client_id not in history.prev_cost_by_client:
            raise MissingHistoryError(f"no previous cost for client {u.client_id}")
        prev = history.prev_cost_by_client[u.client_id]
        if not (np.isfinite(prev) and prev > 0):
            raise InvalidCostError(f"previous cost for client {u.client_id} invalid: {prev!r}")
        ratios.append(prev / max(u.cost, floor))
    return ratios


def fedcostwavg_weights(
    updates: list[ClientUpdate],
    history: CostHistory,
    config: StrategyConfig,
) -> WeightVector:
    """Cost-improvement-weighted averaging.

    weight[j] = alpha * samples[j]/total + (1 - alpha) * ratio[j]/ratio_total
    """
    if config.kind != "fedcostwavg":
        raise ConfigError(f"expected a fedcostwavg config, got {config.kind!r}")
    _check_alpha(config.alpha)
    if not updates:
        raise EmptyRoundError("cannot compute weights for an empty round")
    ratios = cost_ratios(updates, history, config.min_cost_floor)
    return _mix(updates, ratios, config.alpha)


def fedcostwintavg_weights(
    updates: list[ClientUpdate],
    ratio_history: list[list[float]],
    config: StrategyConfig,
) -> WeightVector:
    """EXPERIMENTAL windowed variant: each center's cost ratio is averaged
    over the most recent rounds (up to ``config.window``, current included).

    ``ratio_history`` holds one ratio vector per round, oldest first, each
    aligned with ``updates``; the last entry is the current round's.
    """
    if config.kind != "fedcostwintavg":
        raise ConfigError(f"expected a fedcostwintavg config, got {config.kind!r}")
    _check_alpha(config.alpha)
    if not updates:
        raise EmptyRoundError("cannot compute weights for an empty round")
    if not ratio_history:
        raise MissingHistoryError("ratio history is empty")
    recent = ratio_history[-config.window:]
    for vec in recent:
        if len(vec) != len(updates):
            raise DimensionError("ratio vector length does not match update count")
    stacked = np.asarray(recent, dtype=np.float64)
    if not (np.isfinite(stacked).all() and (stacked > 0).all()):
        raise InvalidCostError("ratio history contains non-positive or non-finite entries")
    mean_ratios = stacked.mean(axis=0)
    return _mix(updates, list(mean_ratios), config.alpha)


def _mix(updates: list[ClientUpdate], ratios: list[float], alpha: float) -> WeightVector:
    counts = np.array([u.sample_count for u in updates], dtype=np.float64)
    size_share = counts / counts.sum()
    ratio_arr = np.asarray(ratios, dtype=np.float64)
    ratio_share = ratio_arr / ratio_arr.sum()
    weights = alpha * size_share + (1.0 - alpha) * ratio_share
    return WeightVector([u.client_id for u in updates], weights)


def aggregate(updates: list[ClientUpdate], weights: WeightVector) -> ParamVector:
    """New global model: convex combination of the update parameters."""
    if not updates:
        raise EmptyRoundError("cannot aggregate an empty round")
    if len(updates) != len(weights.client_ids) or any(
        u.client_id != cid for u, cid in zip(updates, weights.client_ids)
    ):
        raise DimensionError("weight vector is not aligned with the update list")
    return convex_combine([u.params for u in updates], list(weights.weights))
