import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

ASSETS = Path(__file__).resolve().parents[1] / "assets"


def write_png(path, seed, size=(40, 28)):
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
    Image.fromarray(arr, "RGB").save(path)
    return path


@pytest.fixture
def session_dir(tmp_path):
    """A ready-to-run session: three sample images plus the mark asset."""
    images = [write_png(tmp_path / f"img{i}.png", seed=100 + i) for i in range(3)]
    config = {
        "out": str(tmp_path / "trace"),
        "steps": 6,
        "watermark_image": str(ASSETS / "f6ww8.png"),
        "alpha": 0.8,
        "anchor": [0.9, 0.9],
        "scale": 1.0,
        "expected_answer": "8",
        "model": {"seed": 7, "num_layers": 4},
        "samples": [
            {"id": f"s{i}", "image": str(img), "question": f"Is there a dog in the image {i}?"}
            for i, img in enumerate(images)
        ],
    }
    path = tmp_path / "session.json"
    path.write_text(json.dumps(config))
    return path
