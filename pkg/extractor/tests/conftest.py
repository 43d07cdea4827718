import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def token_file(rng, tmp_path):
    path = tmp_path / "tokens.txt"
    rows = rng.integers(12, size=(4, 4))
    path.write_text("\n".join(" ".join(map(str, r)) for r in rows) + "\n")
    return str(path), rows


@pytest.fixture
def image_file(rng, tmp_path):
    path = tmp_path / "images.txt"
    rows = rng.integers(2, size=(6, 4))  # 2x2 binary images
    path.write_text("\n".join(" ".join(map(str, r)) for r in rows) + "\n")
    return str(path), rows
