import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from shm.synthdata import DatasetConfig, build_dataset


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    cfg = DatasetConfig(train_foregrounds=4, test_foregrounds=2, train_backgrounds_per_fg=2,
                        test_backgrounds_per_fg=1, height=96, width=96, seed=3)
    return build_dataset(cfg, tmp_path_factory.mktemp("tiny"))


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """The 160 / 20 desk-scale dataset, seed 0."""
    return build_dataset(DatasetConfig.desk_scale(), tmp_path_factory.mktemp("desk") / "data")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod and mod.VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in mod.VERDICTS:
            terminalreporter.write_line(line)
