import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synth import synthetic_records  # noqa: E402

from medlogic_finetune import TrainConfig, WordTokenizer


@pytest.fixture(scope="session")
def quick_config() -> TrainConfig:
    """Small run for unit tests; the acceptance test uses the defaults."""
    return TrainConfig(epochs=2)


@pytest.fixture(scope="session")
def lu_records():
    return synthetic_records("LU", 24, seed=101)


@pytest.fixture(scope="session")
def aqa_records():
    return synthetic_records("AQA", 24, seed=202)


@pytest.fixture(scope="session")
def shared_tokenizer(lu_records, aqa_records) -> WordTokenizer:
    texts = [r.input_text for r in lu_records + aqa_records]
    texts += [r.output_text for r in lu_records + aqa_records]
    return WordTokenizer.build(texts)
