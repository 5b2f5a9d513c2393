import numpy as np
import pytest
import torch

from seamdec import nnkit
from seamdec.errors import CheckpointError, MaskError, ShapeError


def test_softmax_of_equal_logits():
    out = nnkit.softmax(torch.tensor([1.0, 1.0, 1.0]))
    assert torch.allclose(out, torch.full((3,), 1 / 3))


def test_layer_norm_of_constant_is_zero():
    out = nnkit.layer_norm(torch.full((2, 5), 3.5))
    assert torch.allclose(out, torch.zeros(2, 5))


def test_matmul_matches_numpy():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    out = nnkit.matmul(torch.from_numpy(a), torch.from_numpy(b))
    assert np.allclose(out.numpy(), a @ b)
    with pytest.raises(ShapeError):
        nnkit.matmul(torch.zeros(2, 3), torch.zeros(4, 5))


def test_cross_entropy_shape_check():
    with pytest.raises(ShapeError):
        nnkit.cross_entropy(torch.zeros(2, 3, 5), torch.zeros(2, 4, dtype=torch.long))


def test_relative_index_is_clipped():
    idx = nnkit.relative_index(3, 4, 1)
    assert idx.tolist() == [[1, 2, 2, 2], [0, 1, 2, 2], [0, 0, 1, 2]]
    with pytest.raises(ValueError):
        nnkit.relative_index(2, 2, 0)


def _qkv(n=4, d=6, seed=0, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return [torch.randn(1, n, d, generator=gen, dtype=dtype) for _ in range(3)]


def test_identity_mask_returns_values():
    q, k, v = _qkv()
    out, weights = nnkit.masked_attention(q, k, v, torch.eye(4))
    assert torch.allclose(weights[0], torch.eye(4, dtype=torch.float64))
    assert torch.allclose(out, v)


def test_all_ones_mask_equals_unmasked():
    q, k, v = _qkv()
    masked, _ = nnkit.masked_attention(q, k, v, torch.ones(4, 4))
    plain, _ = nnkit.masked_attention(q, k, v)
    assert torch.allclose(masked, plain)


def test_empty_mask_row_is_rejected():
    q, k, v = _qkv()
    mask = torch.ones(4, 4)
    mask[2] = 0
    with pytest.raises(MaskError) as info:
        nnkit.masked_attention(q, k, v, mask)
    assert info.value.row == 2


def test_masked_keys_do_not_influence_output():
    torch.manual_seed(0)
    layer = nnkit.EncoderLayer(8, 2, 16, max_distance=2).double()
    layer.eval()
    x = torch.randn(1, 4, 8, dtype=torch.float64)
    mask = torch.ones(4, 4)
    mask[0, 2:] = 0
    before, weights = layer(x, mask)
    assert torch.all(weights[0, 0, 2:] == 0)
    perturbed = x.clone()
    perturbed[0, 3] += 5.0
    after, _ = layer(perturbed, mask)
    assert torch.allclose(before[0, 0], after[0, 0])
    assert not torch.allclose(before[0, 1], after[0, 1])


def test_padded_keys_are_ignored():
    q, k, v = _qkv()
    valid = torch.tensor([[True, True, True, False]])
    out, weights = nnkit.masked_attention(q, k, v, key_valid=valid)
    assert torch.all(weights[0, :3, 3] == 0)
    trimmed, _ = nnkit.masked_attention(q[:, :3], k[:, :3], v[:, :3])
    assert torch.allclose(out[:, :3], trimmed)


def test_attention_gradients_match_finite_differences():
    q, k, v = _qkv(n=3, d=4, seed=1)
    params = [t.requires_grad_() for t in (q, k, v)]
    table = torch.randn(5, 4, dtype=torch.float64, requires_grad=True)
    w = torch.randn(1, 3, 4, dtype=torch.float64)
    mask = torch.tensor([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]])

    def loss():
        out, _ = nnkit.masked_attention(*params, mask, table, 2)
        return (out * w).sum()

    assert nnkit.grad_check(loss, params + [table]) < 1e-4


def test_encoder_layer_gradients_match_finite_differences():
    torch.manual_seed(3)
    layer = nnkit.EncoderLayer(4, 2, 8, max_distance=2).double()
    x = torch.randn(1, 3, 4, dtype=torch.float64)
    w = torch.randn(1, 3, 4, dtype=torch.float64)

    def loss():
        out, _ = layer(x, torch.ones(3, 3))
        return (out * w).sum()

    params = [layer.self_attn.q_proj.weight, layer.self_attn.rel_table, layer.ff.linear1.bias]
    assert nnkit.grad_check(loss, params) < 1e-4


def test_decoder_layer_is_causal():
    torch.manual_seed(0)
    layer = nnkit.DecoderLayer(8, 2, 16).double()
    layer.eval()
    tgt = torch.randn(1, 4, 8, dtype=torch.float64)
    memory = torch.randn(1, 3, 8, dtype=torch.float64)
    full, _ = layer(tgt, memory)
    prefix, _ = layer(tgt[:, :2], memory)
    assert torch.allclose(full[:, :2], prefix)


def test_recurrent_cell_shapes():
    cell = nnkit.RecurrentCell(5, 7)
    h, c = cell(torch.zeros(2, 5), (torch.zeros(2, 7), torch.zeros(2, 7)))
    assert h.shape == c.shape == (2, 7)


def test_checkpoint_round_trip(tmp_path):
    layer = nnkit.EncoderLayer(8, 2, 16, max_distance=3)
    nnkit.init_fan_in_uniform(layer, 5)
    path = tmp_path / "layer.ckpt"
    nnkit.save_checkpoint(path, nnkit.state_tensors(layer), {"kind": "test", "width": 8})
    tensors, sidecar = nnkit.load_checkpoint(path)
    assert sidecar["kind"] == "test" and sidecar["width"] == 8
    assert "app_version" in sidecar
    for name, value in layer.state_dict().items():
        assert torch.equal(tensors[name], value)

    fresh = nnkit.EncoderLayer(8, 2, 16, max_distance=3)
    fresh.load_state_dict(tensors)
    x = torch.randn(1, 5, 8)
    assert torch.allclose(fresh(x)[0], layer(x)[0])


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"not a checkpoint")
    nnkit.sidecar_path(path).write_text("{}", encoding="utf-8")
    with pytest.raises(CheckpointError):
        nnkit.load_checkpoint(path)


def test_fan_in_init_is_seeded():
    a = nnkit.EncoderLayer(8, 2, 16)
    b = nnkit.EncoderLayer(8, 2, 16)
    nnkit.init_fan_in_uniform(a, 11)
    nnkit.init_fan_in_uniform(b, 11)
    for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(pa, pb)
    bound = 1 / np.sqrt(8)
    assert a.self_attn.q_proj.weight.abs().max() <= bound


def test_cross_attention_ignores_padded_memory():
    torch.manual_seed(0)
    layer = nnkit.DecoderLayer(8, 2, 16).double()
    layer.eval()
    tgt = torch.randn(1, 4, 8, dtype=torch.float64)
    memory = torch.randn(1, 4, 8, dtype=torch.float64)
    valid = torch.tensor([[True, True, False, False]])
    out, weights = layer(tgt, memory, valid)
    assert torch.all(weights[0, :, 2:] == 0)
    trimmed, _ = layer(tgt, memory[:, :2], valid[:, :2])
    assert torch.allclose(out, trimmed)


def test_pad_self_needs_square_attention():
    q, k, v = _qkv()
    with pytest.raises(ShapeError):
        nnkit.masked_attention(q[:, :2], k, v, key_valid=torch.ones(1, 4, dtype=torch.bool), pad_self=True)


def test_masked_positions_never_reach_the_query_row():
    layer = nnkit.EncoderLayer(8, 2, 16, max_distance=3).double()
    layer.eval()
    gen = torch.Generator().manual_seed(11)
    checked = 0
    for _ in range(100):
        n = int(torch.randint(2, 9, (1,), generator=gen))
        mask = (torch.rand(n, n, generator=gen) < 0.5).double()
        mask.fill_diagonal_(1.0)
        x = torch.randn(1, n, 8, generator=gen, dtype=torch.float64)
        before, weights = layer(x, mask)
        assert torch.all(weights[0][mask == 0] == 0)
        for i, j in (mask == 0).nonzero().tolist():
            perturbed = x.clone()
            perturbed[0, j] += 3.0
            after, _ = layer(perturbed, mask)
            assert torch.allclose(before[0, i], after[0, i])
            checked += 1
            break
    assert checked > 50
