from pathlib import Path

import pytest

from trialmatch.ontology import load_ontology

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def toy_ontology():
    """A small hand-built disease hierarchy shared across test modules."""
    return load_ontology(DATA_DIR / "toy_ontology.jsonl")
