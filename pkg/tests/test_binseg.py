import dataclasses
import random

import pytest

from seamdec.binseg import Segmenter, SegmenterConfig, oracle_ranges, segment_ranges, train_segmenter
from seamdec.config import SegmenterSettings
from seamdec.errors import DegenerateLabels


def test_ranges_from_probabilities():
    assert segment_ranges([0.1, 0.2, 0.9, 0.3, 0.8]) == [(0, 3), (3, 5)]
    assert segment_ranges([0.1, 0.2, 0.3]) == [(0, 3)]
    assert segment_ranges([0.6, 0.4], threshold=0.7) == [(0, 2)]
    assert segment_ranges([]) == []


@pytest.mark.parametrize("seed", range(500))
def test_ranges_partition_the_function(seed):
    rng = random.Random(seed)
    probs = [rng.random() for _ in range(rng.randint(1, 60))]
    threshold = rng.choice((0.5, rng.random()))
    ranges = segment_ranges(probs, threshold)
    assert ranges[0][0] == 0
    assert ranges[-1][1] == len(probs)
    for (_, end), (start, _) in zip(ranges, ranges[1:]):
        assert end == start
    assert all(s < e for s, e in ranges)
    assert all(probs[e - 1] >= threshold for _, e in ranges[:-1])


def test_oracle_ranges_close_the_tail():
    assert oracle_ranges([0, 1, 0, 0]) == [(0, 2), (2, 4)]
    assert oracle_ranges([0, 0, 1]) == [(0, 3)]


def test_oracle_ranges_match_sample_groups(mixed_samples):
    for sample in mixed_samples:
        assert oracle_ranges(sample.boundaries) == sample.groups()


def test_all_boundary_labels_are_rejected(tmp_path, mixed_samples):
    degenerate = [dataclasses.replace(s, boundaries=[1] * len(s.ac)) for s in mixed_samples[:4]]
    settings = SegmenterSettings(d_model=16, heads=2, ffn=32, epochs=1)
    with pytest.raises(DegenerateLabels) as info:
        train_segmenter(degenerate, [], SegmenterConfig(d_model=16, heads=2, ffn=32), settings,
                        tmp_path / "seg.ckpt", deterministic=False)
    assert info.value.value == 1


def test_training_and_segmenting(tmp_path, mixed_samples):
    settings = SegmenterSettings(d_model=16, heads=2, ffn=32, epochs=2, batch_size=8, lr=5e-3)
    cfg = SegmenterConfig(d_model=16, heads=2, ffn=32, max_distance=4, seed=2)
    result = train_segmenter(mixed_samples[:20], mixed_samples[20:24], cfg, settings,
                             tmp_path / "seg.ckpt", deterministic=False)
    assert [e.epoch for e in result.history] == [1, 2]
    assert result.checkpoint is not None

    segmenter = Segmenter.load(result.checkpoint)
    sample = mixed_samples[-1]
    probs = segmenter.probabilities(sample.ac)
    assert len(probs) == len(sample.ac)
    assert all(0.0 <= p <= 1.0 for p in probs)
    ranges = segmenter.segment(sample.ac)
    assert ranges[-1][1] == len(sample.ac)
    # unseen operand tokens map to the unknown class
    assert len(segmenter.probabilities([["mov", "eax", ",", "never-seen"]])) == 1
    assert segmenter.probabilities([]) == []
