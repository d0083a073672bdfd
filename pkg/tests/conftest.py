import numpy as np
import pytest
from PIL import Image

from noisierplus.data import write_manifest


def write_png(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="L").save(path)
    return path


def make_corpus(root, n_images=3, shape=(40, 48), seed=0, with_clean=True):
    """Random 8-bit noisy/clean pairs plus a manifest; returns the manifest path."""
    rng = np.random.default_rng(seed)
    (root / "noisy").mkdir(parents=True, exist_ok=True)
    (root / "clean").mkdir(exist_ok=True)
    entries = []
    for k in range(n_images):
        clean = rng.integers(20, 236, size=shape)
        noisy = np.clip(clean + rng.normal(0, 10, size=shape), 0, 255).round()
        write_png(root / "noisy" / f"im{k:02d}.png", noisy)
        write_png(root / "clean" / f"im{k:02d}.png", clean)
        entries.append((f"im{k:02d}", f"noisy/im{k:02d}.png", f"clean/im{k:02d}.png" if with_clean else None))
    return write_manifest(root / "manifest.txt", entries)


@pytest.fixture
def small_corpus(tmp_path):
    return make_corpus(tmp_path / "corpus")


# One line per acceptance criterion, printed at the end of the session.
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[key])
