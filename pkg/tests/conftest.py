import numpy as np
import pytest

from mpnp_ddi.chem import featurize_smiles
from mpnp_ddi.data import random_molecules


def random_graphs(seed, count, **kwargs):
    rng = np.random.default_rng(seed)
    return [featurize_smiles(s) for s in random_molecules(rng, count, **kwargs)]


@pytest.fixture(scope="session")
def molecules():
    return random_graphs(11, 24, max_atoms=10)
