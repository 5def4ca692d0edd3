import pytest

from glaucoscreen.pipeline import preprocess_manifest
from glaucoscreen.synthetic import generate_synthetic


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """120 synthetic images (3:1) with their preprocessed views."""
    root = tmp_path_factory.mktemp("small")
    generate_synthetic(120, 3, 256, 11, root / "data")
    preprocess_manifest(root / "data" / "manifest.csv", root / "views")
    return root


def pytest_configure(config):
    config.acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.acceptance_lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
