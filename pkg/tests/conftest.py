"""Shared fixtures: a synthetic corpus and two trained toy models.

The expensive fixtures are session-scoped and lazy, so unit-test runs stay
fast; the full level-3 experiment is only built when the acceptance tests
ask for it.
"""

import numpy as np
import pytest

from uapaudio import attacks, dataset, model
from uapaudio.frontend import TOY_FRONTEND_A, TOY_FRONTEND_B

TOY_CLASSES = 4
TOY_PER_CLASS = 260  # 208 train / 52 valid per class at the default split
TOY_SEED = 7

TRAIN_A = model.TrainConfig(epochs=15, batch_size=32, lr=2e-3, seed=11, label_smoothing=0.15)
TRAIN_B = model.TrainConfig(epochs=15, batch_size=32, lr=2e-3, seed=22, label_smoothing=0.15)


class AffineModel:
    """Closed-form multiclass model for oracle tests: logits = W x + b."""

    def __init__(self, W, b, label_set=None):
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.label_set = tuple(label_set) if label_set else tuple(
            str(i) for i in range(self.W.shape[0])
        )

    def logits(self, x):
        x = x.samples if hasattr(x, "samples") else np.asarray(x, dtype=np.float64)
        return self.W @ x + self.b

    def logits_and_jacobian(self, x):
        return self.logits(x), self.W.copy()

    def predict_batch(self, batch):
        return np.argmax(batch @ self.W.T + self.b, axis=1)


@pytest.fixture(scope="session")
def affine_model_cls():
    return AffineModel


@pytest.fixture(scope="session")
def toy_dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("toyset")
    dataset.synth_dataset(root, n_classes=TOY_CLASSES, per_class=TOY_PER_CLASS, seed=TOY_SEED)
    return root


@pytest.fixture(scope="session")
def toy_train_set(toy_dataset_dir):
    return dataset.load_split(toy_dataset_dir, "train")


@pytest.fixture(scope="session")
def toy_valid_set(toy_dataset_dir):
    return dataset.load_split(toy_dataset_dir, "valid")


@pytest.fixture(scope="session")
def toy_model_a(toy_train_set):
    params, _ = model.train(
        toy_train_set, TRAIN_A, frontend=TOY_FRONTEND_A, arch=model.TOY_ARCHITECTURE
    )
    return model.ClassifierModel(params)


@pytest.fixture(scope="session")
def toy_model_b(toy_train_set):
    params, _ = model.train(
        toy_train_set, TRAIN_B, frontend=TOY_FRONTEND_B, arch=model.TOY_ARCHITECTURE
    )
    return model.ClassifierModel(params)


@pytest.fixture(scope="session")
def level3_experiment(toy_model_a, toy_train_set):
    """The expensive level-3 run shared by several acceptance criteria."""
    level = attacks.UniversalityLevel.for_level(3, (), toy_model_a.label_set)
    cfg = attacks.AttackConfig(rng_seed=101)
    return attacks.run_level_experiment(
        level, toy_train_set, toy_model_a, cfg, train_per_class=200
    )
