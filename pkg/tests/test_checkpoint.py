import json

import pytest
import torch
from torch import nn

from mcgan.checkpoint import (CheckpointError, flatten_adam, load_checkpoint,
                              load_module, namespace, restore_adam,
                              save_checkpoint, select_namespace)
from mcgan.config import Hyperparams


def small_hp():
    return Hyperparams(width=16, height=16, num_blocks=2, noise_dim=8,
                       embed_dim=12, cond_dim=6, seed_channels=16,
                       disc_channels=8)


def random_tensors(seed=0):
    g = torch.Generator().manual_seed(seed)
    return {
        "m/weight": torch.randn(4, 3, generator=g),
        "m/bias": torch.randn(4, generator=g),
        "m/steps": torch.arange(5, dtype=torch.int64),
    }


def test_round_trip_is_bitwise(tmp_path):
    tensors = random_tensors()
    save_checkpoint(tmp_path / "ckpt", small_hp(), tensors,
                    train_state={"epoch": 3})
    hp, loaded, state = load_checkpoint(tmp_path / "ckpt")
    assert hp.to_dict() == small_hp().to_dict()
    assert state == {"epoch": 3}
    for name, t in tensors.items():
        assert torch.equal(loaded[name], t), name
    # float payloads round-trip bitwise through the packed blob
    assert loaded["m/weight"].dtype == torch.float32
    # integer tensors keep exact values through the JSON index
    assert loaded["m/steps"].dtype == torch.int64


def test_manifest_and_blob_layout(tmp_path):
    save_checkpoint(tmp_path / "ckpt", small_hp(), random_tensors())
    manifest = json.loads((tmp_path / "ckpt" / "manifest.json").read_text())
    assert manifest["format_version"] == 1
    index = json.loads((tmp_path / "ckpt" / "tensors.index.json").read_text())
    names = [e["name"] for e in index]
    assert names == sorted(names)
    blob = (tmp_path / "ckpt" / "tensors.bin").read_bytes()
    float_entries = [e for e in index if "offset" in e]
    total = sum(4 * int(torch.tensor(e["shape"]).prod()) if e["shape"] else 4
                for e in float_entries)
    assert len(blob) == total


def test_future_format_version_rejected(tmp_path):
    save_checkpoint(tmp_path / "ckpt", small_hp(), random_tensors())
    mf = tmp_path / "ckpt" / "manifest.json"
    doc = json.loads(mf.read_text())
    doc["format_version"] = 99
    mf.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "ckpt")


def test_truncated_blob_rejected(tmp_path):
    save_checkpoint(tmp_path / "ckpt", small_hp(), random_tensors())
    blob = tmp_path / "ckpt" / "tensors.bin"
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "ckpt")


def test_namespace_helpers():
    sd = {"weight": torch.zeros(2), "bias": torch.zeros(2)}
    spaced = namespace("gen", sd)
    assert set(spaced) == {"gen/weight", "gen/bias"}
    back = select_namespace(spaced, "gen")
    assert set(back) == {"weight", "bias"}
    with pytest.raises(CheckpointError):
        select_namespace(spaced, "disc")


class TinyNet(nn.Module):
    def __init__(self, out=3):
        super().__init__()
        self.fc = nn.Linear(4, out)


def test_load_module_round_trip():
    a, b = TinyNet(), TinyNet()
    with torch.no_grad():
        a.fc.weight.fill_(1.5)
        a.fc.bias.fill_(-0.5)
    tensors = namespace("net", a.state_dict())
    load_module(b, tensors, "net")
    assert torch.equal(a.fc.weight, b.fc.weight)
    assert torch.equal(a.fc.bias, b.fc.bias)


def test_load_module_shape_mismatch():
    tensors = namespace("net", TinyNet(out=5).state_dict())
    with pytest.raises(CheckpointError):
        load_module(TinyNet(out=3), tensors, "net")


def test_load_module_missing_tensor():
    sd = TinyNet().state_dict()
    del sd["fc.bias"]
    with pytest.raises(CheckpointError):
        load_module(TinyNet(), namespace("net", sd), "net")


def test_load_module_unexpected_tensor():
    sd = TinyNet().state_dict()
    sd["extra"] = torch.zeros(1)
    with pytest.raises(CheckpointError):
        load_module(TinyNet(), namespace("net", sd), "net")


def test_adam_state_survives_round_trip(tmp_path):
    net = TinyNet()
    opt = torch.optim.Adam(net.parameters(), lr=3e-4, betas=(0.5, 0.999))
    for _ in range(4):
        opt.zero_grad()
        net.fc(torch.ones(2, 4)).sum().backward()
        opt.step()
    named = list(net.named_parameters())
    tensors, meta = flatten_adam(opt, named)
    assert meta["steps"]["fc.weight"] == 4
    save_checkpoint(tmp_path / "ckpt", small_hp(), tensors,
                    train_state={"optim": meta})
    _, loaded, state = load_checkpoint(tmp_path / "ckpt")

    net2 = TinyNet()
    net2.load_state_dict(net.state_dict())
    opt2 = torch.optim.Adam(net2.parameters(), lr=1.0)
    restore_adam(opt2, list(net2.named_parameters()), loaded, state["optim"])
    assert opt2.param_groups[0]["lr"] == 3e-4
    assert opt2.param_groups[0]["betas"] == (0.5, 0.999)

    # identical gradients then one step must keep both replicas identical
    for o, n in ((opt, net), (opt2, net2)):
        o.zero_grad()
        n.fc(torch.ones(2, 4)).sum().backward()
        o.step()
    assert torch.equal(net.fc.weight, net2.fc.weight)
    assert torch.equal(net.fc.bias, net2.fc.bias)
