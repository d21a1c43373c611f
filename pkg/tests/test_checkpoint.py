import json
import struct

import pytest
import torch

from gblab.checkpoint import MAGIC, CheckpointError, load_checkpoint, load_model, save_checkpoint, save_model
from gblab.genesis import Genesis, GenesisConfig


def test_round_trip_tensors_and_meta(tmp_path):
    tensors = {
        "a": torch.randn(3, 4),
        "b": torch.arange(5, dtype=torch.int64),
        "c": torch.tensor(2.5, dtype=torch.float64),
        "d": torch.randn(4, 4).t(),  # non-contiguous
    }
    save_checkpoint(tmp_path / "x.gblab", tensors, {"step": 7, "note": "hi"})
    got, meta = load_checkpoint(tmp_path / "x.gblab")
    assert meta == {"step": 7, "note": "hi"}
    assert list(got) == list(tensors)
    for k in tensors:
        assert got[k].dtype == tensors[k].dtype and torch.equal(got[k], tensors[k])


def test_file_layout(tmp_path):
    save_checkpoint(tmp_path / "x.gblab", {"w": torch.tensor([1.0, 2.0])}, {})
    raw = (tmp_path / "x.gblab").read_bytes()
    assert raw[:6] == MAGIC == b"GBLAB1"
    (n,) = struct.unpack("<Q", raw[6:14])
    header = json.loads(raw[14:14 + n])
    assert header["format_version"] == 1
    assert header["tensors"] == [{"name": "w", "dtype": "<f4", "shape": [2], "offset": 0, "nbytes": 8}]
    assert raw[14 + n:] == struct.pack("<2f", 1.0, 2.0)


def test_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE" * 10)
    with pytest.raises(CheckpointError, match="not a GBLAB1"):
        load_checkpoint(tmp_path / "x")


def test_truncated(tmp_path):
    p = tmp_path / "x.gblab"
    save_checkpoint(p, {"w": torch.zeros(100)}, {})
    p.write_bytes(p.read_bytes()[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)
    p.write_bytes(MAGIC + b"\x01")
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)


def test_model_round_trip(tmp_path):
    torch.manual_seed(0)
    cfg = GenesisConfig(K=2, mask_latent_dim=2, component_latent_dim=3, component_arch="SYMMETRIC_DC",
                        rnn_hidden=8, prior_mlp_hidden=8)
    model = Genesis(cfg)
    model(torch.rand(2, 3, 64, 64))  # move BN running stats off their defaults
    save_model(tmp_path / "m.gblab", model, {"step": 3})
    again, meta = load_model(tmp_path / "m.gblab")
    assert again.cfg == cfg and meta["step"] == 3
    for (k, v), (k2, v2) in zip(model.state_dict().items(), again.state_dict().items()):
        assert k == k2 and torch.equal(v, v2)
    x = torch.rand(1, 3, 64, 64)
    model.eval(), again.eval()
    g = lambda: torch.Generator().manual_seed(1)  # noqa: E731
    assert torch.equal(model(x, g()).nll_per_image, again(x, g()).nll_per_image)


def test_load_model_without_config(tmp_path):
    save_checkpoint(tmp_path / "x.gblab", {}, {})
    with pytest.raises(CheckpointError, match="model_config"):
        load_model(tmp_path / "x.gblab")


def test_no_tmp_file_left_behind(tmp_path):
    save_checkpoint(tmp_path / "x.gblab", {"w": torch.zeros(1)}, {})
    assert sorted(p.name for p in tmp_path.iterdir()) == ["x.gblab"]
