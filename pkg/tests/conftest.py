from fedcostwavg.aggregation import ClientUpdate, CostHistory


def make_instance(rng, n=None, dim=3):
    """Random but valid (updates, history, s, prev, curr) tuple.

    Costs span several orders of magnitude but stay far from the ratio
    floor so reference arithmetic is exact enough for 1e-12 comparisons.
    """
    if n is None:
        n = int(rng.integers(1, 6))
    s = [int(v) for v in rng.integers(1, 1000, n)]
    prev = [float(v) for v in 10.0 ** rng.uniform(-3, 3, n)]
    curr = [float(v) for v in 10.0 ** rng.uniform(-3, 3, n)]
    updates = [
        ClientUpdate(j, rng.standard_normal(dim), s[j], curr[j]) for j in range(n)
    ]
    history = CostHistory({j: prev[j] for j in range(n)})
    return updates, history, s, prev, curr
