import numpy as np
import pytest

from trajid import syngen


@pytest.fixture(scope="session")
def small_catalog():
    """Three well-separated subjects, one repetition of each target."""
    catalog, signatures = syngen.synth_catalog(
        n_subjects=3, trials_per_target=1, separation=1.0, master_seed=11
    )
    return catalog, signatures


@pytest.fixture(scope="session")
def cv_catalog():
    """Three well-separated subjects with 18 trials each (2 per target)."""
    catalog, _ = syngen.synth_catalog(
        n_subjects=3, trials_per_target=2, separation=1.0, master_seed=13
    )
    return catalog


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.PCG64(1234))
