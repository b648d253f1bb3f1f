import pytest

from helpers import SEEK_AND_PICK
from swarmbt.btree import parse_xml
from swarmbt.grammar import default_grammar
from swarmbt.sim import foraging_registry


@pytest.fixture(scope="session")
def grammar():
    return default_grammar()


@pytest.fixture(scope="session")
def registry():
    return foraging_registry()


@pytest.fixture
def seek_and_pick():
    return parse_xml(SEEK_AND_PICK)
