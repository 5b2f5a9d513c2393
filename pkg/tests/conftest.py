import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from seamdec import csubset as cs
from seamdec.config import CorpusSettings
from seamdec.corpus import gen_spec_for, make_sample
from seamdec.errors import SeamError

# Nine instructions that compute `b = a / 3` at -O0.
DIVIDE_BY_THREE = """\
\tmov\teax, DWORD PTR [rbp-4]
\tmovsx\trdx, eax
\timul\trdx, rdx, 1431655766
\tshr\trdx, 32
\tsar\teax, 31
\tmov\tecx, edx
\tsub\tecx, eax
\tmov\teax, ecx
\tmov\tDWORD PTR [rbp-8], eax
"""


@pytest.fixture
def divide_by_three() -> str:
    return DIVIDE_BY_THREE


@pytest.fixture(scope="session")
def corpus_settings() -> CorpusSettings:
    return CorpusSettings()


@pytest.fixture(scope="session")
def sample_factory(corpus_settings):
    """Reference-backend sample for (kind, level, seed)."""
    cache = {}

    def build(kind: str, level: int, seed: int):
        key = (kind, level, seed)
        if key not in cache:
            spec = gen_spec_for(cs.StmtKind(kind), level, seed, corpus_settings)
            cache[key] = make_sample(spec)
        return cache[key]

    return build


@pytest.fixture(scope="session")
def mixed_samples(sample_factory):
    samples = []
    for kind in cs.StmtKind:
        for level in (0, 1, 2):
            for seed in (1, 2, 3):
                try:
                    samples.append(sample_factory(kind.value, level, seed))
                except SeamError:
                    continue
    return samples


GOLDEN_DIR = Path(__file__).resolve().parent / "golden"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: seeded property sweeps over thousands of generated programs")


@pytest.fixture
def golden():
    """Compare text with a frozen file under tests/golden, writing it on the first run."""

    def check(name: str, text: str) -> None:
        path = GOLDEN_DIR / name
        if not path.exists():
            GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        assert text == path.read_text(encoding="utf-8"), f"{name} differs from the frozen copy"

    return check
