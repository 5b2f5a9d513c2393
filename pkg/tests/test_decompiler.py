import pytest

from seamdec import csubset as cs
from seamdec.bintran import EOS, PAD, SOS, UNK, TokenVocab, TranslationResult
from seamdec.corpus import collect_position_stats
from seamdec.decompiler import DecompileOptions, decompile_function
from seamdec.errors import StageError
from seamdec.orchestrator import comparator_swap, structurally_equal
from seamdec.semrec import Namer, NamerConfig


class GoldTranslator:
    """Answers every segment with the reference SeamCode line of one sample."""

    def __init__(self, sample):
        self.sample = sample
        self.calls = 0

    def translate_many(self, groups, batch_size=64):
        self.calls += 1
        assert len(groups) == len(self.sample.alignment)
        out = []
        for k in self.sample.alignment:
            tokens = list(self.sample.sc[k])
            out.append(TranslationResult(tokens, [1.0] * (len(tokens) + 1)))
        return out


def test_gold_translations_rebuild_the_source(mixed_samples):
    checked = 0
    for sample in mixed_samples:
        translator = GoldTranslator(sample)
        result = decompile_function(sample.asm, translator, options=DecompileOptions(oracle_segmentation=True))
        assert translator.calls == 1
        assert structurally_equal(result.c_text, sample.source), (sample.id, result.c_text, sample.source)
        assert result.segments == sample.groups()
        assert result.literals_harvested == len(sample.literals)
        checked += 1
    assert checked >= 12


def test_call_literals_are_restored(sample_factory):
    sample = sample_factory("call", 1, 2)
    result = decompile_function(sample.asm, GoldTranslator(sample), options=DecompileOptions(oracle_segmentation=True))
    for callee in cs.callees(cs.parse_c(sample.source)):
        assert f"{callee}(" in result.c_text


def test_function_name_wraps_output(sample_factory):
    sample = sample_factory("expression", 0, 1)
    result = decompile_function(sample.asm, GoldTranslator(sample),
                                options=DecompileOptions(oracle_segmentation=True, with_function_name=True))
    assert result.c_text.startswith("int main(void) {")
    assert result.to_dict()["function_name"] == "FUNC"


def test_namer_assigns_every_variable(sample_factory, mixed_samples):
    sample = sample_factory("while", 2, 3)
    src = TokenVocab.build([[t for insn in s.ac for t in insn] for s in mixed_samples], [PAD, UNK])
    ids = TokenVocab.build([s.identifiers for s in mixed_samples], [PAD, SOS, EOS])
    namer = Namer.create(NamerConfig(embed=8, vector=16, hidden=16, seed=2), src, ids,
                         collect_position_stats(mixed_samples))
    result = decompile_function(sample.asm, GoldTranslator(sample), namer=namer,
                                options=DecompileOptions(oracle_segmentation=True))
    declared = [name for name, _ in cs.declared_variables(cs.parse_c(result.c_text))]
    assert sorted(declared) == sorted(result.names.values())
    assert len(set(result.names.values())) == len(result.names)
    assert structurally_equal(result.c_text, sample.source)


def test_empty_body_is_a_parse_stage_error():
    translator = GoldTranslator(None)
    with pytest.raises(StageError) as info:
        decompile_function("\t.text\nmain:\n\tpush\trbp\n\tmov\trbp, rsp\n\tpop\trbp\n\tret\n", translator)
    assert info.value.stage == "parse"
    assert translator.calls == 0


def test_structural_equality_ignores_names():
    assert structurally_equal("int a; a = a + 1;", "int x; x = x + 1;")
    assert not structurally_equal("int a; a = a + 1;", "int x; x = x - 1;")
    assert not structurally_equal("not C at all", "int x;")


def test_comparator_swap():
    assert comparator_swap(["IF", "v0", "v1", "<"], ["IF", "v0", "v1", ">="])
    assert not comparator_swap(["IF", "v0", "v1", "<"], ["IF", "v0", "v1", "<"])
    assert not comparator_swap(["IF", "v0", "v1", "+"], ["IF", "v0", "v1", "<"])
