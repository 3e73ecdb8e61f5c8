import pytest

from guessbench.rollout import RolloutConfig, generate_corpus
from guessbench.universe import (
    AttributeSchema,
    Section,
    Universe,
    build_universe,
    default_synthetic_spec,
    generate_synthetic_universe,
)

# Three-item world used throughout the hand-oracle tests:
#   A: Type={Grass},        Stat=300
#   B: Type={Fire},         Stat=250
#   C: Type={Grass,Poison}, Stat=410
U3_RECORDS = [
    {"name": "A", "type_list": "Grass", "stat": 300},
    {"name": "B", "type_list": "Fire", "stat": 250},
    {"name": "C", "type_list": "Grass|Poison", "stat": 410},
]

U3_SCHEMA = AttributeSchema((
    Section("Type", "categorical", ("Fire", "Grass", "Poison"), "type_list", 2),
    Section("Stat", "numeric", (180, 720), "stat"),
))


@pytest.fixture
def u3() -> Universe:
    return build_universe(U3_RECORDS, U3_SCHEMA)


@pytest.fixture(scope="session")
def small_universe() -> Universe:
    return generate_synthetic_universe(default_synthetic_spec(64), seed=7)


@pytest.fixture(scope="session")
def world() -> Universe:
    return generate_synthetic_universe(default_synthetic_spec(256), seed=7)


def rollout_defaults(**kw) -> RolloutConfig:
    base = dict(
        format="concise",
        max_rounds=2010,
        history_window=2,
        forget_history_prob=0.85,
        mask_prob=0.9,
        max_mask_sections=3,
        epsilon=0.25,
        seed=0,
    )
    base.update(kw)
    return RolloutConfig(**base)


@pytest.fixture(scope="session")
def small_corpus(world):
    cfg = rollout_defaults(seed=3, token_budget=9000)
    return generate_corpus(world, cfg, 12)


@pytest.fixture(scope="session")
def small_verbose_corpus(world):
    cfg = rollout_defaults(format="verbose", seed=5, token_budget=9000,
                           mask_prob=0.4, max_mask_sections=2, max_rounds=260)
    return generate_corpus(world, cfg, 12)
