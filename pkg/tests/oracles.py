"""Deliberately naive reference implementations used only by tests.

These are straight transcriptions of the averaging rules in plain Python
arithmetic, written before and kept independent of the production
``fedcostwavg.aggregation`` module.  No guards beyond input validation.
"""


def oracle_weights(strategy, s, prev, curr, alpha):
    """Per-center averaging weights, computed the obvious way.

    s: sample counts; prev/curr: per-center costs from the previous and
    current round; alpha: balance between the size share and the
    cost-improvement share.
    """
    assert len(s) >= 1
    assert all(si > 0 for si in s)
    if strategy == "fedavg":
        total = sum(s)
        return [si / total for si in s]
    if strategy == "fedcostwavg":
        assert len(prev) == len(curr) == len(s)
        assert all(p > 0 for p in prev) and all(c > 0 for c in curr)
        total = sum(s)
        ratios = [p / c for p, c in zip(prev, curr)]
        ratio_total = sum(ratios)
        return [
            alpha * si / total + (1.0 - alpha) * r / ratio_total
            for si, r in zip(s, ratios)
        ]
    raise ValueError(f"unknown strategy {strategy!r}")


def oracle_windowed_weights(s, ratio_rounds, alpha):
    """Integral-variant reference: mean of each center's cost ratio over the
    given rounds replaces the single-round ratio."""
    assert len(ratio_rounds) >= 1
    mean_ratios = [
        sum(round_[j] for round_ in ratio_rounds) / len(ratio_rounds)
        for j in range(len(s))
    ]
    total = sum(s)
    ratio_total = sum(mean_ratios)
    return [
        alpha * si / total + (1.0 - alpha) * r / ratio_total
        for si, r in zip(s, mean_ratios)
    ]


def fd_gradient(spec, params, batch, h):
    """Central-difference gradient of the model loss, coordinate by coordinate."""
    from fedcostwavg import models

    assert h > 0
    base = list(params)
    grad = []
    for t in range(len(base)):
        hi = list(base)
        lo = list(base)
        hi[t] += h
        lo[t] -= h
        grad.append((models.loss(spec, hi, batch) - models.loss(spec, lo, batch)) / (2 * h))
    return grad
