import pytest

from hohonet.dataset import write_dataset
from hohonet.io import write_json

SMALL = dict(H=32, W=64, count=16, seed=3)


def tiny_run(task="depth", lr=1e-3, epochs=5, count=16, H=32, W=64, seed=3, **model):
    n = {"depth": 1, "semantic": 3, "layout": 3}[task]
    m = dict(H_inp=H, W_inp=W, backbone_widths=[8, 8, 16, 16], D=16, heads=2, r=8, N=n, task=task)
    m.update(model)
    return {
        "model": m,
        "optim": {"lr": lr, "total_epochs": epochs, "batch": 4},
        "data": {"count": count, "H": H, "W": W, "seed": seed},
        "task": task,
    }


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("small") / "data"
    write_dataset(root, SMALL["seed"], SMALL["count"], SMALL["H"], SMALL["W"])
    return root


@pytest.fixture
def config_file(tmp_path):
    def make(**kw):
        p = tmp_path / f"cfg_{len(list(tmp_path.glob('cfg_*')))}.json"
        write_json(p, tiny_run(**kw))
        return p

    return make
