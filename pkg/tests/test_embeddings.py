import json
import struct

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mcgan.embeddings import (MAGIC, AttributeSpec, ConditioningAugment,
                              EmbeddingFormatError, EmbeddingTable,
                              interpolate, kl_divergence, toy_encode)
from mcgan.toydata import attribute_grid


# ------------------------------------------------------------ binary format

def test_smallest_well_formed_file(tmp_path):
    header = json.dumps({"count": 2, "dim": 4}).encode()
    payload = np.arange(8, dtype="<f4").tobytes()
    path = tmp_path / "e.bin"
    path.write_bytes(MAGIC + struct.pack("<I", len(header)) + header + payload)
    table = EmbeddingTable.load(path)
    assert table.count == 2 and table.dim == 4
    np.testing.assert_array_equal(table.rows, np.arange(8, dtype="<f4").reshape(2, 4))


def test_truncated_payload_rejected(tmp_path):
    header = json.dumps({"count": 2, "dim": 4}).encode()
    payload = np.arange(4, dtype="<f4").tobytes()  # 16 bytes, needs 32
    path = tmp_path / "e.bin"
    path.write_bytes(MAGIC + struct.pack("<I", len(header)) + header + payload)
    with pytest.raises(EmbeddingFormatError, match="payload"):
        EmbeddingTable.load(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "e.bin"
    path.write_bytes(b"NOT-A-TABLE!....whatever")
    with pytest.raises(EmbeddingFormatError, match="magic"):
        EmbeddingTable.load(path)


def test_truncated_header_rejected(tmp_path):
    path = tmp_path / "e.bin"
    path.write_bytes(MAGIC + struct.pack("<I", 1000) + b"{}")
    with pytest.raises(EmbeddingFormatError, match="header"):
        EmbeddingTable.load(path)


def test_malformed_header_rejected(tmp_path):
    header = b"not json at all!!"
    path = tmp_path / "e.bin"
    path.write_bytes(MAGIC + struct.pack("<I", len(header)) + header)
    with pytest.raises(EmbeddingFormatError, match="header"):
        EmbeddingTable.load(path)


def test_dim_mismatch_rejected(tmp_path):
    table = EmbeddingTable(np.zeros((3, 8), dtype=np.float32))
    path = tmp_path / "e.bin"
    table.save(path)
    with pytest.raises(EmbeddingFormatError, match="dim"):
        EmbeddingTable.load(path, expected_dim=16)


def test_save_load_round_trip_byte_identical(tmp_path, rng):
    rows = rng.standard_normal((5, 7)).astype(np.float32)
    table = EmbeddingTable(rows, index={"img-0": [0, 1], "img-1": [4]})
    p1 = tmp_path / "a.bin"
    p2 = tmp_path / "b.bin"
    table.save(p1)
    EmbeddingTable.load(p1).save(p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert EmbeddingTable.load(p2).rows_for("img-1") == [4]


def test_index_entries_validated():
    with pytest.raises(ValueError, match="outside"):
        EmbeddingTable(np.zeros((2, 3), dtype=np.float32), index={"x": [5]})


# ----------------------------------------------------------------- encoder

def test_toy_encode_deterministic():
    a = AttributeSpec("ellipse", (0.95, 0.10, 0.10), "small")
    np.testing.assert_array_equal(toy_encode(a, 32), toy_encode(a, 32))


def test_toy_encode_distinguishes_colors():
    a = AttributeSpec("ellipse", (0.95, 0.10, 0.10), "small")
    b = AttributeSpec("ellipse", (0.10, 0.20, 0.95), "small")
    assert not np.allclose(toy_encode(a, 32), toy_encode(b, 32))


def test_attribute_grid_is_27_pairwise_distinct():
    grid = attribute_grid()
    assert len(grid) == 27
    vecs = [toy_encode(a, 64) for a in grid]
    for i in range(27):
        for j in range(i + 1, 27):
            assert not np.allclose(vecs[i], vecs[j]), (i, j)


def test_attribute_spec_validation():
    with pytest.raises(ValueError):
        AttributeSpec("hexagon", (0.5, 0.5, 0.5), "small")
    with pytest.raises(ValueError):
        AttributeSpec("ellipse", (1.5, 0.0, 0.0), "small")
    with pytest.raises(ValueError):
        AttributeSpec("ellipse", (0.5, 0.5, 0.5), "tiny")


# ------------------------------------------------------------ interpolation

def test_interpolate_endpoints_exact(rng):
    p1 = rng.standard_normal(16).astype(np.float32)
    p2 = rng.standard_normal(16).astype(np.float32)
    np.testing.assert_array_equal(interpolate(p1, p2, 0.0), p1)
    np.testing.assert_array_equal(interpolate(p1, p2, 1.0), p2)


def test_interpolate_midpoint():
    p1 = np.array([2.0, 0.0], dtype=np.float32)
    p2 = np.array([0.0, 2.0], dtype=np.float32)
    np.testing.assert_array_equal(interpolate(p1, p2, 0.5), [1.0, 1.0])


def test_interpolate_rejects_out_of_range():
    p = np.zeros(4, dtype=np.float32)
    with pytest.raises(ValueError):
        interpolate(p, p, 1.5)


@given(alpha=st.floats(0.0, 1.0))
@settings(max_examples=50, deadline=None)
def test_interpolate_affine_symmetry(alpha):
    rng = np.random.default_rng(7)
    p1 = rng.standard_normal(8).astype(np.float32)
    p2 = rng.standard_normal(8).astype(np.float32)
    s = interpolate(p1, p2, alpha) + interpolate(p2, p1, alpha)
    np.testing.assert_allclose(s, p1 + p2, atol=1e-5)


# --------------------------------------------------- conditioning augment

def test_zero_epsilon_returns_mu():
    ca = ConditioningAugment(12, 6)
    phi = torch.randn(3, 12, generator=torch.Generator().manual_seed(0))
    res = ca(phi, epsilon=torch.zeros(3, 6))
    assert torch.equal(res.c_hat, res.mu)


def test_zeroed_weights_give_bias_constants():
    ca = ConditioningAugment(12, 6)
    with torch.no_grad():
        ca.fc.weight.zero_()
        ca.fc.bias.copy_(torch.arange(12, dtype=torch.float32) * 0.1)
    phi = torch.randn(4, 12, generator=torch.Generator().manual_seed(1))
    mu, sigma = ca.project(phi)
    expected_mu = torch.arange(6, dtype=torch.float32) * 0.1
    expected_sigma = torch.exp(0.5 * torch.arange(6, 12, dtype=torch.float32) * 0.1)
    for i in range(4):
        torch.testing.assert_close(mu[i], expected_mu)
        torch.testing.assert_close(sigma[i], expected_sigma)


def test_c_hat_matches_hand_matrix_arithmetic():
    # independent oracle: numpy matrix multiply on basis vectors
    ca = ConditioningAugment(4, 2)
    g = torch.Generator().manual_seed(3)
    with torch.no_grad():
        ca.fc.weight.copy_(torch.randn(4, 4, generator=g))
        ca.fc.bias.copy_(torch.randn(4, generator=g))
    phi = torch.zeros(1, 4)
    phi[0, 0] = 1.0
    eps = torch.zeros(1, 2)
    eps[0, 0] = 1.0
    w = ca.fc.weight.detach().numpy()
    b = ca.fc.bias.detach().numpy()
    out = w @ np.array([1.0, 0, 0, 0], dtype=np.float32) + b
    mu_o, logvar_o = out[:2], out[2:]
    c_hat_o = mu_o + np.exp(0.5 * logvar_o) * np.array([1.0, 0.0], dtype=np.float32)
    res = ca(phi, epsilon=eps)
    np.testing.assert_allclose(res.c_hat[0].detach().numpy(), c_hat_o, rtol=1e-6)


def test_epsilon_symmetry_about_mu():
    ca = ConditioningAugment(12, 6)
    phi = torch.randn(2, 12, generator=torch.Generator().manual_seed(2))
    eps = torch.randn(2, 6, generator=torch.Generator().manual_seed(3))
    plus = ca(phi, epsilon=eps)
    minus = ca(phi, epsilon=-eps)
    torch.testing.assert_close(plus.c_hat + minus.c_hat, 2 * plus.mu)


def test_dimension_mismatch_rejected():
    ca = ConditioningAugment(12, 6)
    with pytest.raises(ValueError):
        ca.project(torch.zeros(2, 13))
    with pytest.raises(ValueError):
        ca(torch.zeros(2, 12), epsilon=torch.zeros(2, 5))


# -------------------------------------------------------------------- KL

def test_kl_standard_normal_is_zero():
    assert float(kl_divergence(torch.zeros(1, 4), torch.ones(1, 4))) == 0.0


def test_kl_single_term_hand_value():
    mu = torch.tensor([[1.0, 0.0]])
    sigma = torch.tensor([[1.0, 1.0]])
    assert float(kl_divergence(mu, sigma)) == pytest.approx(0.5, abs=1e-7)


def test_kl_batch_mean_semantics():
    g = torch.Generator().manual_seed(5)
    mu = torch.randn(6, 4, generator=g)
    sigma = torch.rand(6, 4, generator=g) + 0.5
    whole = float(kl_divergence(mu, sigma))
    per = [float(kl_divergence(mu[i:i + 1], sigma[i:i + 1])) for i in range(6)]
    assert whole == pytest.approx(np.mean(per), rel=1e-6)


def test_kl_rejects_non_positive_sigma():
    with pytest.raises(ValueError):
        kl_divergence(torch.zeros(1, 2), torch.tensor([[1.0, 0.0]]))


@given(seed=st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_kl_non_negative(seed):
    g = torch.Generator().manual_seed(seed)
    mu = torch.randn(3, 8, generator=g) * 3
    sigma = torch.exp(torch.randn(3, 8, generator=g))
    assert float(kl_divergence(mu, sigma)) >= 0.0


def test_kl_matches_monte_carlo_single_case():
    # sampling oracle: E_q[log q(x) - log p(x)] with q = N(mu, diag sigma^2)
    rng = np.random.default_rng(11)
    mu = rng.normal(size=8) * 0.8
    sigma = np.exp(rng.normal(size=8) * 0.4)
    x = rng.normal(size=(200_000, 8)) * sigma + mu
    log_q = (-0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma)).sum(axis=1)
    log_p = (-0.5 * x ** 2).sum(axis=1)
    mc = float(np.mean(log_q - log_p))
    closed = float(kl_divergence(torch.tensor(mu).view(1, -1).float(),
                                 torch.tensor(sigma).view(1, -1).float()))
    assert closed == pytest.approx(mc, rel=0.02)
