import numpy as np
import pytest

from monosurf import datagen, dataset_io, network, trainer


@pytest.fixture(scope="session")
def tiny_scene_cfg():
    return datagen.SceneConfig(
        num_states=12,
        grid_side=9,
        image_side=32,
        num_poses=1,
        num_lights=2,
        seed=11,
    )


@pytest.fixture(scope="session")
def tiny_dataset_path(tmp_path_factory, tiny_scene_cfg):
    path = tmp_path_factory.mktemp("data") / "tiny.hdmd"
    datagen.generate_dataset(tiny_scene_cfg, path)
    return path


@pytest.fixture(scope="session")
def tiny_dataset(tiny_dataset_path):
    with dataset_io.DatasetReader(tiny_dataset_path) as ds:
        yield ds


@pytest.fixture(scope="session")
def tiny_model_cfg():
    return network.ModelConfig(
        input_side=32, grid_side=9, widths=(6, 12), dtype="float32", seed=5
    )


@pytest.fixture(scope="session")
def tiny_trained(tiny_dataset, tiny_model_cfg):
    """A briefly trained tiny model shared by trainer/CLI tests."""
    model = network.build_model(tiny_model_cfg, trainer.base_surface_of(tiny_dataset))
    cfg = trainer.TrainConfig(epochs=4, batch_size=8, seed=2)
    model, history = trainer.train(model, tiny_dataset, cfg)
    return model, history


def make_rng(seed=0):
    return np.random.default_rng(seed)
