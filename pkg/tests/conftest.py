import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixture_corpus import build_demo_corpus, build_killer_suite  # noqa: E402


@pytest.fixture(scope="session")
def demo_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo-corpus")
    info = build_demo_corpus(root)
    return root, info


@pytest.fixture(scope="session")
def killer_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("killer-corpus")
    info = build_killer_suite(root)
    return root, info
