"""
Random seed utilities for reproducible training runs
"""

import os
import random

import numpy as np
import torch


def set_seed(seed: int = 0, deterministic: bool = True):
    """
    Seed Python, NumPy and PyTorch.

    Args:
        seed: Seed value
        deterministic: Also ask PyTorch for deterministic kernels
    """
    os.environ["PYTHONHASHSEED"] = str(seed)
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.cuda.manual_seed_all(seed)

    if deterministic:
        torch.backends.cudnn.deterministic = True
        torch.backends.cudnn.benchmark = False
        torch.use_deterministic_algorithms(True, warn_only=True)


def epoch_rng(seed: int, epoch: int, stream: int = 0) -> np.random.Generator:
    """Independent generator per (epoch, stream), so a resumed run draws the same crops."""
    return np.random.default_rng([seed, epoch, stream])
