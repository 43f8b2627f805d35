import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cif.feature_io import load_manifest  # noqa: E402
from cif.synth import SynthConfig, generate_synthetic_class  # noqa: E402

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_class(tmp_path_factory):
    """Small two-modality synthetic class shared by pipeline-level tests."""
    cfg = SynthConfig(rows=12, cols=12, dim=16, margin=2, block=2, n_train=4,
                      n_test_normal=4, n_test_anomalous=4, px_per_patch=4)
    out = tmp_path_factory.mktemp("small")
    generate_synthetic_class(cfg, 3, out)
    return load_manifest(out / "manifest.json")


@pytest.fixture(scope="session")
def acceptance_class(tmp_path_factory):
    cfg = SynthConfig(rows=28, cols=28, dim=64, k_true=4, sigma=0.05, delta=1.0,
                      n_train=4, n_test_normal=20, n_test_anomalous=20)
    out = tmp_path_factory.mktemp("accept")
    generate_synthetic_class(cfg, 42, out)
    return load_manifest(out / "manifest.json")
