import json
import random

import pytest
import torch

from seamdec import csubset as cs
from seamdec.bintran import EOS, PAD, SOS, UNK, TokenVocab
from seamdec.config import NamerSettings
from seamdec.constants import POSITION_COUNT
from seamdec.corpus import collect_position_stats
from seamdec.errors import NamingError
from seamdec.nnkit import sidecar_path
from seamdec.positions import LOOP_CONDITION, LOOP_COUNTER, PositionTable
from seamdec.semrec import (
    FUNCTION_ENCODERS, AttentionPoolEncoder, IdentifierSeq, Namer, NamerConfig, NamerPair, assign_identifiers,
    count_function_positions, namer_pairs, ranked_positions, read_namer_jsonl, recover_function_name, train_namer,
    register_encoder, write_namer_jsonl,
)

LOOP_SKETCH = "int v0; int v1; while (v0 < v1) { v0 = v0 + 1; }"


def _row(**counts):
    vec = [0] * POSITION_COUNT
    for pos, value in counts.items():
        vec[int(pos[1:])] = value
    return vec


def test_ranked_positions_prefer_counts_then_index():
    assert ranked_positions(_row(p3=2, p1=2, p7=5)) == [7, 1, 3]
    assert ranked_positions([0] * POSITION_COUNT) == []


def test_loop_counter_gets_the_counter_name():
    func = count_function_positions(cs.parse_c(LOOP_SKETCH))
    assert func.vector("v0")[LOOP_COUNTER] == 1
    vocab = PositionTable({"size": [1] * POSITION_COUNT, "i": [10] * POSITION_COUNT})
    mapping = assign_identifiers(["size", "i"], vocab, func)
    assert mapping == {"v0": "i", "v1": "size"}


def test_position_decides_between_candidates():
    func = count_function_positions(cs.parse_c(LOOP_SKETCH))
    counter = [0] * POSITION_COUNT
    counter[LOOP_COUNTER] = 50
    bound = [0] * POSITION_COUNT
    bound[LOOP_CONDITION] = 40
    vocab = PositionTable({"i": counter, "n": bound})
    mapping = assign_identifiers(["n", "i"], vocab, func)
    assert mapping == {"v0": "i", "v1": "n"}


def test_fallback_names_avoid_collisions():
    func = count_function_positions(cs.parse_c("int v0; int v1; v0 = v0 + 1;"))
    vocab = PositionTable({"var2": [5] * POSITION_COUNT})
    mapping = assign_identifiers(["var2"], vocab, func)
    assert mapping == {"v0": "var2", "v1": "var2_1"}


def test_unknown_candidates_are_ignored():
    func = count_function_positions(cs.parse_c("int v0; v0 = v0 + 1;"))
    mapping = assign_identifiers(["ghost"], PositionTable(), func)
    assert mapping == {"v0": "var1"}


def _assign_by_enumeration(identifiers, vocab, func):
    """Every (position, candidate) pair scored per variable; the best unused pair wins."""
    variables = list(func.rows)
    candidates = [n for n in dict.fromkeys(identifiers) if n in vocab]
    order = sorted(range(len(variables)), key=lambda i: (-sum(func.rows[variables[i]]), i))
    mapping, used = {}, set()
    for i in order:
        vec = func.rows[variables[i]]
        options = [
            ((-vec[p], p, -vocab.rows[name][p], candidates.index(name)), name)
            for p in range(POSITION_COUNT) for name in candidates
            if vec[p] > 0 and vocab.rows[name][p] > 0 and name not in used
        ]
        if options:
            name = min(options)[1]
        else:
            name, suffix = f"var{i + 1}", 1
            while name in used:
                name, suffix = f"var{i + 1}_{suffix}", suffix + 1
        used.add(name)
        mapping[variables[i]] = name
    return mapping


def _sparse_vector(rng, top):
    return [rng.randint(1, top) if rng.random() < 0.3 else 0 for _ in range(POSITION_COUNT)]


@pytest.mark.parametrize("chunk", range(10))
def test_assignment_matches_exhaustive_simulation(chunk):
    pool = ["i", "j", "n", "size", "total", "var1", "var2", "ghost"]
    for seed in range(chunk * 100, chunk * 100 + 100):
        rng = random.Random(seed)
        names = rng.sample(pool, rng.randint(0, len(pool)))
        vocab = PositionTable({n: _sparse_vector(rng, 3) for n in names if n != "ghost"})
        func = PositionTable({f"v{k}": _sparse_vector(rng, 2) for k in range(rng.randint(1, 6))})
        mapping = assign_identifiers(names, vocab, func)
        assert mapping == _assign_by_enumeration(names, vocab, func), seed
        assert set(mapping) == set(func.rows)
        assert len(set(mapping.values())) == len(mapping)
        assert all(name in names or name.startswith("var") for name in mapping.values())


def test_engineered_tie_goes_to_earlier_candidate():
    strong = [0] * POSITION_COUNT
    strong[3] = 2
    weak = [0] * POSITION_COUNT
    weak[3] = 1
    func = PositionTable({"v0": list(strong), "v1": list(strong), "v2": list(weak)})
    vocab = PositionTable({"size": [0] * 3 + [4] + [0] * 22, "n": [0] * 3 + [4] + [0] * 22})
    mapping = assign_identifiers(["size", "n"], vocab, func)
    assert mapping == {"v0": "size", "v1": "n", "v2": "var3"}
    assert mapping == _assign_by_enumeration(["size", "n"], vocab, func)


def test_function_name_is_first_unprofiled_leftover():
    vocab = PositionTable({"i": [1] * POSITION_COUNT, "size": [1] * POSITION_COUNT})
    assigned = {"v0": "i"}
    assert recover_function_name(["i", "size", "compute", "other"], assigned, vocab) == "compute"
    assert recover_function_name(["i", "size"], assigned, vocab) is None


def test_namer_jsonl_round_trip(tmp_path, mixed_samples):
    pairs = namer_pairs(mixed_samples[:5])
    path = tmp_path / "namer.jsonl"
    write_namer_jsonl(path, pairs)
    assert read_namer_jsonl(path) == pairs


def test_bad_namer_line(tmp_path):
    path = tmp_path / "namer.jsonl"
    path.write_text('{"tokens": ["mov"], "identifiers": ["a"]}\n\n{"tokens": ["mov"]}\n', encoding="utf-8")
    with pytest.raises(NamingError, match=":3:"):
        read_namer_jsonl(path)


def test_untrained_namer_predicts_distinct_names(tmp_path):
    src = TokenVocab.build([["mov", "eax", "IMM"]], [PAD, UNK])
    ids = TokenVocab.build([["i", "n", "size"]], [PAD, SOS, EOS])
    namer = Namer.create(NamerConfig(embed=8, vector=16, hidden=16, max_len=5, seed=4), src, ids)
    seq = namer.predict(["mov", "eax", "IMM", "never-seen"])
    assert len(seq.tokens) == len(set(seq.tokens)) <= 5
    assert all(t in ("i", "n", "size") for t in seq.tokens)
    assert namer.predict([]) == IdentifierSeq()

    path = tmp_path / "namer.ckpt"
    namer.save(path)
    assert Namer.load(path).predict(["mov", "eax", "IMM"]) == namer.predict(["mov", "eax", "IMM"])


def test_train_namer(tmp_path, mixed_samples):
    settings = NamerSettings(embed=8, vector=16, hidden=16, epochs=2, batch_size=8)
    cfg = NamerConfig(embed=8, vector=16, hidden=16, max_len=12, seed=1)
    pairs = namer_pairs(mixed_samples)
    result = train_namer(pairs[:24], pairs[24:], cfg, settings, tmp_path / "namer.ckpt",
                         positions=collect_position_stats(mixed_samples), deterministic=False)
    assert [h[0] for h in result.history] == [1, 2]
    namer = Namer.load(result.checkpoint)
    assert len(namer.positions) > 0


def test_train_namer_without_pairs(tmp_path):
    with pytest.raises(NamingError):
        train_namer([NamerPair([], ["a"])], [], NamerConfig(), NamerSettings(), tmp_path / "n.ckpt",
                    deterministic=False)


@pytest.fixture
def small_vocabs():
    src = TokenVocab.build([["mov", "eax", "IMM", "add", "ecx"]], [PAD, UNK])
    ids = TokenVocab.build([["i", "n", "size"]], [PAD, SOS, EOS])
    return src, ids


def test_attention_encoder_is_selected_and_recorded(tmp_path, small_vocabs):
    cfg = NamerConfig(embed=8, vector=16, hidden=16, max_len=5, seed=4, encoder="attention")
    namer = Namer.create(cfg, *small_vocabs)
    assert isinstance(namer.model.encoder, AttentionPoolEncoder)
    tokens = ["mov", "eax", "IMM", "add", "ecx", "eax"]
    vector = namer.encode_function(tokens)
    assert vector.shape == (16,)
    assert torch.equal(vector, namer.encode_function(tokens))

    path = tmp_path / "namer.ckpt"
    namer.save(path)
    sidecar = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    assert sidecar["encoder"] == "attention"
    loaded = Namer.load(path)
    assert isinstance(loaded.model.encoder, AttentionPoolEncoder)
    assert torch.allclose(loaded.encode_function(tokens), vector)


def test_registered_encoder_is_used(monkeypatch, small_vocabs):
    class FirstToken(torch.nn.Module):
        def __init__(self, vocab_size, embed, vector_size):
            super().__init__()
            self.vector_size = vector_size
            self.embedding = torch.nn.Embedding(vocab_size, vector_size)

        def forward(self, ids, valid):
            return self.embedding(ids[:, 0])

    monkeypatch.setattr("seamdec.semrec.FUNCTION_ENCODERS", dict(FUNCTION_ENCODERS))
    register_encoder("first", FirstToken)
    namer = Namer.create(NamerConfig(embed=8, vector=16, hidden=16, max_len=5, encoder="first"), *small_vocabs)
    assert torch.equal(namer.encode_function(["mov", "eax"]), namer.encode_function(["mov", "ecx", "IMM"]))


def test_unknown_encoder(small_vocabs):
    with pytest.raises(NamingError, match="unknown function encoder"):
        Namer.create(NamerConfig(encoder="asm2vec"), *small_vocabs)


def test_encoder_comes_from_settings():
    cfg = NamerConfig.from_settings(NamerSettings(encoder="attention"), seed=3)
    assert cfg.encoder == "attention"
    assert cfg.seed == 3
