import numpy as np
import pytest
import torch
from PIL import Image

from flowvad.benchmark import run_benchmark
from flowvad.media import save_frame

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """Trained desk benchmark per seed, built once per session and shared."""
    cache = {}

    def get(seed: int):
        if seed not in cache:
            cache[seed] = run_benchmark(seed, tmp_path_factory.mktemp(f"desk{seed}"))
        return cache[seed]

    return get


def write_clip(directory, frames, suffix=".png", width=4):
    directory.mkdir(parents=True, exist_ok=True)
    for t, f in enumerate(frames):
        save_frame(directory / f"{t:0{width}d}{suffix}", f)


def random_frames(n, size=8, seed=0):
    return np.random.default_rng(seed).random((n, size, size, 3)).astype(np.float32)


def make_ped2_miniature(root, train=16, test=12, frames=3, shape=(12, 18)):
    """UCSD layout: Train/TrainNNN/NNN.tif, Test/TestNNN/NNN.tif and TestNNN_gt/NNN.bmp masks."""
    rng = np.random.default_rng(0)
    for i in range(1, train + 1):
        d = root / "Train" / f"Train{i:03d}"
        d.mkdir(parents=True)
        for t in range(1, frames + 1):
            Image.fromarray(rng.integers(0, 256, shape, dtype=np.uint8)).save(d / f"{t:03d}.tif")
    for i in range(1, test + 1):
        d = root / "Test" / f"Test{i:03d}"
        gt = root / "Test" / f"Test{i:03d}_gt"
        d.mkdir(parents=True)
        gt.mkdir(parents=True)
        for t in range(1, frames + 1):
            Image.fromarray(rng.integers(0, 256, shape, dtype=np.uint8)).save(d / f"{t:03d}.tif")
            mask = np.zeros(shape, dtype=np.uint8)
            if t == frames:
                mask[3, 4] = 255
            Image.fromarray(mask).save(gt / f"{t:03d}.bmp")
