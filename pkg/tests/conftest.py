from pathlib import Path

import pytest
from loguru import logger

from deblur_gan.config import TrainConfig
from deblur_gan.services.dataset_service import make_synthetic_dataset

# 8 training pairs and 4 held-out pairs, 64 px, the desk-scale corpus
TRAIN_SEED = 7
TEST_SEED = 11


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("synthetic")
    make_synthetic_dataset(8, 64, TRAIN_SEED, root, split="train")
    make_synthetic_dataset(4, 64, TEST_SEED, root, split="test")
    return root


@pytest.fixture
def tiny_config(synthetic_root, tmp_path) -> TrainConfig:
    """Width-reduced networks on 32 px patches: a full step takes milliseconds."""
    return TrainConfig(
        batch_size=4,
        epochs=1,
        patch=32,
        seed=TRAIN_SEED,
        extractor="random",
        width_divisor=16,
        dataset_root=str(synthetic_root),
        output_dir=str(tmp_path / "run"),
    )


@pytest.fixture
def log_messages():
    messages = []
    handler_id = logger.add(lambda m: messages.append(m.record["message"]), level="DEBUG")
    yield messages
    logger.remove(handler_id)
