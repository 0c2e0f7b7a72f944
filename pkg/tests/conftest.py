from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

REPO = Path(__file__).parent.parent
TOY = REPO / "data" / "toy"


@pytest.fixture(scope="session")
def repo_root() -> Path:
    return REPO


@pytest.fixture(scope="session")
def toy_dir() -> Path:
    return TOY


@pytest.fixture(scope="session")
def toy_config(repo_root: Path) -> Path:
    return repo_root / "configs" / "toy.json"


@pytest.fixture(scope="session")
def toy_lexicon():
    from medlogic.matcher import load_lexicon

    return load_lexicon(TOY / "lexicon.tsv")


@pytest.fixture(scope="session")
def toy_table():
    from medlogic.matcher import load_relation_table

    return load_relation_table(TOY / "relations.tsv")


@pytest.fixture(scope="session")
def toy_vectors():
    from medlogic.metrics import WordVectors

    return WordVectors.load(TOY / "vectors.txt")


@pytest.fixture
def clean_llm_env(monkeypatch):
    """CLI runs must not pick up a real endpoint from the environment."""
    monkeypatch.delenv("MEDLOGIC_LLM_URL", raising=False)
    monkeypatch.delenv("MEDLOGIC_LLM_TOKEN", raising=False)


@pytest.fixture
def run_cli(clean_llm_env, capsys):
    """Invoke the console entry point in process, return (exit_code, stderr)."""
    from medlogic.cli import main

    def run(*argv: str) -> tuple[int, str]:
        code = main(list(argv))
        captured = capsys.readouterr()
        return code, captured.err

    return run
