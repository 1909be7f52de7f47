import numpy as np
import pytest

from ctsdg import synth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_domains(names=("ft1", "ft2", "ft3"), n_per_class=20, seed=7):
    rng = np.random.default_rng(seed)
    domains = []
    for name in names:
        ds, _ = synth.gen_domain_dataset(synth.SPEC_LIBRARY[name], n_per_class, rng)
        domains.append(ds)
    return domains


@pytest.fixture(scope="session")
def small_domains():
    return make_domains(n_per_class=10, seed=7)
