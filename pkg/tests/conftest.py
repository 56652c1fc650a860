"""Shared fixtures. Heavy artifacts (trained weights, corpora) are cached
under tests/_cache so repeated runs don't retrain; delete the directory
to force a rebuild."""

from pathlib import Path

import numpy as np
import pytest

from noisecam.dataset import gen_dataset
from noisecam.network import build_default_model, load_weights, save_weights, train

CACHE = Path(__file__).parent / "_cache"

SMALL_SEED = 7
SMALL_PER_CLASS = 60
SMALL_EPOCHS = 12


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def untrained_model():
    return build_default_model(seed=3)


@pytest.fixture(scope="session")
def small_dataset():
    return gen_dataset(SMALL_PER_CLASS, seed=11)


@pytest.fixture(scope="session")
def tiny_corpus(small_model, small_dataset):
    """A handful of attacked seeds with noise variants, cached on disk."""
    from noisecam.attack import AttackConfig
    from noisecam.bench import build_attack_corpus, load_manifest

    out = CACHE / "tiny_corpus"
    if not (out / "manifest.json").exists():
        build_attack_corpus(
            small_model, small_dataset, AttackConfig(), seed=5, out_dir=out, max_seeds=10
        )
    manifest = load_manifest(out)
    if manifest["successes"] < 2:
        pytest.skip("tiny corpus has fewer than 2 successful attacks")
    return out


@pytest.fixture(scope="session")
def small_model(small_dataset):
    """A modestly trained model, good enough for attack/detector units."""
    CACHE.mkdir(exist_ok=True)
    path = CACHE / "small_weights.nwv"
    if path.exists():
        return load_weights(path)
    model = build_default_model(seed=SMALL_SEED)
    model, _ = train(
        model,
        small_dataset.images,
        small_dataset.labels,
        epochs=SMALL_EPOCHS,
        lr=0.05,
        batch=32,
        seed=SMALL_SEED,
    )
    save_weights(model, path)
    return model
