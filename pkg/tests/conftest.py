import os
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]
DATA_DIR = Path(os.environ.get("INSENSOR_DATA_DIR", ROOT / "data"))
MNIST_DIR = DATA_DIR / "mnist"
CIFAR_DIR = DATA_DIR / "cifar10"

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
