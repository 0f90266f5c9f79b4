from pathlib import Path

import pytest

import mixsim
from mixsim.dataset import load_dataset
from mixsim.scenario import load_scenario

DATA = Path(mixsim.__file__).parent / "data"

# criterion number -> report line, printed after the run
_CRITERIA: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}  [{detail}]"
    _CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def pedestrian_dataset():
    return load_dataset([DATA / "pedestrians.csv"], dt=0.1)


@pytest.fixture(scope="session")
def crowd2():
    return load_scenario(DATA / "crowd2.scn")
