import pytest

from vmr import programs


@pytest.fixture(scope="session")
def wordcount():
    return programs.load("wordcount")


@pytest.fixture(scope="session")
def frequency():
    return programs.load("frequency")
