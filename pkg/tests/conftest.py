from types import SimpleNamespace

import pytest

from neurologic.config import ModelConfig, TrainConfig
from neurologic.datagen import WorldSpec, make_world, sample_dataset
from neurologic.engine import ReasoningModel, initial_rulebase, train

TINY_MODEL = ModelConfig(event_dim=16, raw_dim=32, heads=2, l0=4)
TINY_TRAIN = TrainConfig(epochs=15, finetune_epochs=2, lr=1e-2, update_samples=200)


def tiny_world(seed=4, **kw):
    spec = dict(n_primitives=12, n_activities=3, n_objects=3, n_samples=300)
    spec.update(kw)
    return make_world(WorldSpec(**spec), seed)


@pytest.fixture(scope="session")
def tiny():
    """A small world with a briefly trained model, shared across test files."""
    world = tiny_world()
    data = sample_dataset(world, seed=1)
    model = ReasoningModel.create(world.primitives, world.activities, TINY_MODEL, seed=0)
    base = initial_rulebase(world.prior_rules, 3, TINY_MODEL.l0)
    res = train(model, data, base, TINY_TRAIN, seed=0)
    return SimpleNamespace(world=world, data=data, model=res.model, rulebase=res.rulebase,
                           history=res.history, initial=base)
