import math

import torch

from aeda.datasets.grouped import group_stats
from aeda.utils.errors import ConfigError
from aeda.utils.utils import make_generator, round_half_up


def _cell_sizes(n0, n1, rho):
    """How many (b=0, b=1) examples to keep so that the b=1 fraction is rho.

    Only drops; returns the sizes and whether rho was attainable.
    """
    total = n0 + n1
    if total == 0:
        return 0, 0, True
    if math.isclose(n1 / total, rho, rel_tol=0.0, abs_tol=1e-12):
        return n0, n1, True
    if rho >= 1.0:
        return (0, n1, True) if n1 > 0 else (n0, 0, False)
    if rho <= 0.0:
        return (n0, 0, True) if n0 > 0 else (0, n1, False)
    if n0 == 0 or n1 == 0:
        # a strictly mixed ratio needs both cells
        return n0, n1, False

    keep0 = n1 * (1.0 - rho) / rho
    if keep0 <= n0:
        return round_half_up(keep0), n1, True
    keep1 = n0 * rho / (1.0 - rho)
    return n0, min(n1, round_half_up(keep1)), True


def inject_imbalance(dataset, ratio_plan, seed):
    """Subsample each (t, b) cell so that class t has b=1 fraction ratio_plan[t].

    Examples are only dropped, never duplicated or relabeled; kept examples
    keep their original order. Dropped counts and unattainable ratios are
    recorded in the returned dataset's metadata.
    """
    if len(ratio_plan) != dataset.num_classes:
        raise ConfigError("ratio_plan must have one entry per class")
    for t, rho in enumerate(ratio_plan):
        if not 0.0 <= rho <= 1.0:
            raise ConfigError("ratio for class {} must lie in [0, 1], got {}".format(t, rho))

    generator = make_generator(seed)
    stats = group_stats(dataset)
    keep = []
    dropped = {}
    shortfall = {}
    for t in range(dataset.num_classes):
        n0, n1 = stats.counts[(t, 0)], stats.counts[(t, 1)]
        keep0, keep1, attainable = _cell_sizes(n0, n1, ratio_plan[t])
        for b, n_keep in [(0, keep0), (1, keep1)]:
            cell = ((dataset.targets == t) & (dataset.biases == b)).nonzero(as_tuple=True)[0]
            chosen = torch.randperm(len(cell), generator=generator)[:n_keep]
            keep.extend(cell[chosen].tolist())
        if keep0 + keep1 < n0 + n1:
            dropped[str(t)] = n0 + n1 - keep0 - keep1
        if not attainable:
            achieved = keep1 / (keep0 + keep1) if keep0 + keep1 else None
            shortfall[str(t)] = {"requested": ratio_plan[t], "achieved": achieved}

    metadata = dict(dataset.metadata)
    metadata.update({"ratio_plan": list(ratio_plan), "dropped": dropped, "shortfall": shortfall})
    return dataset.subset(sorted(keep), metadata=metadata)
