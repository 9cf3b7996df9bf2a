import random

import pytest

from ctikit.corpus import DatasetBundle, LabeledInstance

_TOPICS = [
    "exchange server zero day exploited in the wild patch immediately",
    "proxylogon vulnerability confirmed used to install ransomware on servers",
    "new indicators of compromise released for the exchange breach",
    "urgent security update available for on premises mail servers",
    "attackers scanning for unpatched exchange endpoints worldwide",
    "cute cat picture thread going viral this morning",
    "tech stocks rally as markets open higher today",
    "weather forecast promises sunshine for the weekend trip",
    "new coffee shop opened downtown with great reviews",
    "sports roundup the home team wins again in overtime",
]


def synthetic_instance(i: int, rng: random.Random) -> LabeledInstance:
    relevant = i % 2 == 0
    base = _TOPICS[rng.randrange(0, 5)] if relevant else _TOPICS[rng.randrange(5, 10)]
    words = base.split()
    rng.shuffle(words)
    text = f"{base} item {i} " + " ".join(words[:3])
    return LabeledInstance(
        id=f"t{i:05d}",
        text=text,
        label="relevant" if relevant else "irrelevant",
    )


def synthetic_bundle(n: int, seed: int = 0) -> DatasetBundle:
    rng = random.Random(seed)
    bundle = DatasetBundle()
    for i in range(n):
        inst = synthetic_instance(i, rng)
        bundle.instances[inst.id] = inst
    return bundle


@pytest.fixture
def small_bundle() -> DatasetBundle:
    return synthetic_bundle(40, seed=1)
