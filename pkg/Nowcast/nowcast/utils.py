import os
import json
import math
import random

import numpy as np
import torch


def seed_everything(seed):
    random.seed(seed)
    os.environ['PYTHONHASHSEED'] = str(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)


def substream(seed: int, *counters: int) -> np.random.Generator:
    """Counter-based generator: the same (seed, counters) always yields the same stream."""
    entropy = [int(seed)] + [int(c) for c in counters]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def ensure_dir(path: str) -> str:
    if len(path) > 0 and not os.path.exists(path):
        os.makedirs(path)
    return path


def save_json(obj, save_path: str):
    if len(os.path.dirname(save_path)) > 0:
        ensure_dir(os.path.dirname(save_path))
    with open(save_path, "w", encoding="utf-8", newline="\n") as fp:
        json.dump(obj, fp, indent=2, sort_keys=True, default=_to_builtin)
        fp.write("\n")


def _to_builtin(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, torch.Tensor):
        return value.tolist()
    return str(value)


def nearest_rank(sorted_values: np.ndarray, q: float, axis: int = -1) -> np.ndarray:
    """
    Nearest-rank percentile of already sorted samples along ``axis``.

    :param q: percentile in (0, 100]
    """
    n = sorted_values.shape[axis]
    rank = min(max(int(math.ceil(round(q * n / 100.0, 9))), 1), n)
    return np.take(sorted_values, rank - 1, axis=axis)
