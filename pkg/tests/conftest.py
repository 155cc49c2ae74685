import numpy as np
import pytest

from fewstep.config import RunConfig
from fewstep.schedule import Schedule, make_schedule
from fewstep.teacher import ring_mixture


@pytest.fixture(scope="session")
def sched():
    return make_schedule()


@pytest.fixture(scope="session")
def ring():
    return ring_mixture()


@pytest.fixture()
def tiny_sched():
    # two hand-picked steps so every coefficient is mental arithmetic:
    # alphas_bar = [1, 1/4, 1e-4], so sqrt(ab_1) = 0.5 and 1 - ab_1 = 3/4
    betas = np.array([0.75, 1.0 - 4e-4])
    ab = np.array([1.0, 0.25, 1e-4])
    return Schedule("linear", 2, float(betas[0]), float(betas[1]), betas, ab)


# Small enough to train every phase in well under a second, large enough
# that nothing degenerates (4 modes, 50-step schedule, 5-point grid).
TINY_BLOB = {
    "seed": 7,
    "eval_seed": 900,
    "batch_size": 16,
    "lr": 5e-5,
    "two_scale_ratio": 2,
    "grid": [0, 12, 25, 37, 50],
    "mixture": {"kind": "ring", "n_modes": 4, "radius": 2.0, "sigma": 0.1},
    "schedule": {"num_steps": 50},
    "nets": {
        "teacher_hidden": [16, 16],
        "student_hidden": [16, 16],
        "fake_hidden": [16, 16],
        "head_hidden": [8],
    },
    "teacher": {"iters": 60, "batch": 16},
    "pretrain": {"iters": 30},
    "gan": {"iters": 10},
    "dmd": {"iters": 10},
    "eval": {"n_samples": 64, "baseline_steps": 10},
}


def tiny_blob(**updates) -> dict:
    """Deep-ish copy of TINY_BLOB with top-level section overrides merged in."""
    blob = {k: (dict(v) if isinstance(v, dict) else list(v) if isinstance(v, list) else v)
            for k, v in TINY_BLOB.items()}
    for key, val in updates.items():
        if isinstance(val, dict) and isinstance(blob.get(key), dict):
            blob[key].update(val)
        else:
            blob[key] = val
    return blob


@pytest.fixture()
def tiny_cfg():
    return RunConfig.from_dict(tiny_blob())
