import pytest

from seamdec import csubset as cs
from seamdec.asmtext import parse_function
from seamdec.config import CorpusSettings
from seamdec.corpus import (
    build_corpus, collect_position_stats, label_boundaries, load_corpus, load_positions, save_corpus, select,
    split_corpus, stratum_quotas,
)
from seamdec.errors import BoundaryError
from seamdec.models import boundary_ranges
from seamdec.seamcode import SeamLine, code_bearing

TWO_LINES = """\
\t.text
main:
\t.loc 1 2 5
\tmov\teax, DWORD PTR [rbp-4]
\tadd\teax, DWORD PTR [rbp-8]
\tmov\tDWORD PTR [rbp-12], eax
\t.loc 1 3 5
\tmov\teax, DWORD PTR [rbp-12]
\tmov\tDWORD PTR [rbp-4], eax
"""


def test_boundary_bits_for_two_lines():
    insns = parse_function(TWO_LINES).instructions
    bits = label_boundaries(insns)
    assert bits == [0, 0, 1, 0, 1]
    assert boundary_ranges(bits) == [(0, 3), (3, 5)]


def test_missing_loc_is_a_boundary_error():
    insns = parse_function("\t.text\nmain:\n\tnop\n").instructions
    with pytest.raises(BoundaryError):
        label_boundaries(insns)


def test_one_group_per_code_bearing_line(mixed_samples):
    assert mixed_samples
    for sample in mixed_samples:
        lines = [SeamLine(tuple(tokens)) for tokens in sample.sc]
        assert sum(sample.boundaries) == sum(code_bearing(lines))
        assert sample.boundaries[-1] == 1
        assert len(sample.boundaries) == len(sample.ac)
        assert sorted(sample.alignment) == [k for k, flag in enumerate(code_bearing(lines)) if flag]


def test_sample_carries_literals_and_identifiers(sample_factory):
    sample = sample_factory("call", 1, 4)
    assert sample.identifiers[-1] == "main"
    assert all(lit["kind"] in ("IMM", "STR", "FUNC") for lit in sample.literals)
    assert sum(1 for lit in sample.literals if lit["kind"] == "FUNC") == sum(
        1 for insn in sample.ac if insn[0] == "call")
    assert sample.provenance["backend"] == "reference"


def test_quotas_differ_by_at_most_one():
    strata = [(kind, level) for kind in cs.StmtKind for level in (0, 1, 2)]
    for total in (1, 11, 12, 100, 20000):
        quotas = stratum_quotas(total, strata)
        assert sum(quotas) == total
        assert max(quotas) - min(quotas) <= 1


@pytest.fixture(scope="module")
def small_corpus():
    settings = CorpusSettings(levels=[0, 1])
    return build_corpus(settings, size=24, seed=7)


def test_corpus_is_deduplicated_and_balanced(small_corpus):
    samples, split, stats = small_corpus
    assert len(samples) == 24
    assert len({s.dedup_key for s in samples}) == len(samples)
    assert stats.accepted == 24
    assert stats.generated == stats.accepted + stats.duplicates + stats.rejected
    assert set(stats.per_stratum.values()) == {3}


def test_split_is_disjoint_and_complete(small_corpus):
    samples, split, _ = small_corpus
    assert split.is_disjoint()
    assert sorted(split.train + split.validation + split.test) == sorted(s.id for s in samples)


def test_split_is_seeded():
    samples, _, _ = build_corpus(CorpusSettings(kinds=[cs.StmtKind.EXPRESSION], levels=[0]), size=10, seed=3)
    assert split_corpus(samples, (0.8, 0.1, 0.1), 5) == split_corpus(samples, (0.8, 0.1, 0.1), 5)


def test_build_is_deterministic(small_corpus):
    again, split, _ = build_corpus(CorpusSettings(levels=[0, 1]), size=24, seed=7)
    assert [s.to_dict() for s in again] == [s.to_dict() for s in small_corpus[0]]
    assert split == small_corpus[1]


def test_save_and_load(tmp_path, small_corpus):
    samples, split, _ = small_corpus
    positions = collect_position_stats(samples)
    save_corpus(tmp_path, samples, split, positions)
    loaded, loaded_split = load_corpus(tmp_path)
    assert [s.id for s in loaded] == [s.id for s in samples]
    assert loaded[0].to_dict() == samples[0].to_dict()
    assert loaded_split == split
    assert load_positions(tmp_path).to_dict() == positions.to_dict()
    assert sorted(s.id for s in select(loaded, split.test)) == sorted(split.test)


def test_position_stats_cover_original_names(small_corpus):
    samples, _, _ = small_corpus
    table = collect_position_stats(samples)
    for sample in samples:
        for name in sample.identifiers[:-1]:
            assert name in table
