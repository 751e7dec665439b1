import numpy as np
import pytest

from pingnav.experiments import build_bank, save_full_bank


@pytest.fixture(scope="session")
def small_bank():
    # heavily shortened training: cheap enough for every test session,
    # competent enough that rollouts point roughly the right way
    return build_bank(1, duration_s=240.0,
                      expert_stages=((3e-2, 60), (1e-2, 40)),
                      pooled_stages=((3e-2, 20), (1e-2, 10)))


@pytest.fixture(scope="session")
def small_bank_dir(small_bank, tmp_path_factory):
    d = tmp_path_factory.mktemp("bank")
    save_full_bank(d, small_bank)
    return d
