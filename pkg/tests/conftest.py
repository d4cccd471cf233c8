import numpy as np
import pytest
from hypothesis import settings

from xrayad.core import ImageRecord, write_png

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def make_records(n_pos: int, n_neg: int, studies: int = 1):
    """One image per study; positive patients have every study positive."""
    records = []
    for i in range(n_pos + n_neg):
        label = "positive" if i < n_pos else "negative"
        for s in range(studies):
            records.append(ImageRecord(f"pat{i:03d}", f"study{s}", label, image_id=f"pat{i:03d}_study{s}_image1"))
    return records


def write_image(root, patient, study_dir, name, pixels):
    path = root / patient / study_dir / name
    path.parent.mkdir(parents=True, exist_ok=True)
    write_png(path, pixels)
    return path


@pytest.fixture
def tiny_tree(tmp_path):
    """3 patients x 2 studies x 1 image."""
    rng = np.random.default_rng(0)
    for p in range(3):
        for s in range(2):
            label = "positive" if (p == 0 and s == 1) else "negative"
            write_image(tmp_path, f"patient{p}", f"study{s}_{label}", "image1.png", rng.random((8, 10)))
    return tmp_path
