import json
import struct

import numpy as np
import pytest
import torch
import yaml

from physinpaint.config import ExperimentConfig, dump_config, from_dict, load_config, preset
from physinpaint.errors import ConfigError, ShapeError
from physinpaint.grid import Normalization
from physinpaint.io import (
    checkpoint_from_training,
    decode_checkpoint,
    decode_dataset,
    encode_checkpoint,
    encode_dataset,
    read_checkpoint,
    read_dataset,
    read_table,
    restore_optimizers,
    write_checkpoint,
    write_dataset,
    write_pgm,
    write_table,
)
from physinpaint.nets import NetworkConfig, build_networks
from physinpaint.wgan import TrainConfig, make_optimizers


def test_dataset_header_layout(rng):
    x = rng.standard_normal((3, 4, 5, 6)).astype(np.float32)
    norm = Normalization.fit(x)
    blob = encode_dataset(x, norm)
    magic, version, flags, nx, ny, c, n = struct.unpack_from("<4sHHIIIQ", blob)
    assert (magic, version, flags, nx, ny, c, n) == (b"GIFS", 1, 1, 6, 5, 4, 3)
    assert struct.unpack_from("<4d", blob, 28) == norm.mean
    assert struct.unpack_from("<4d", blob, 60) == norm.std
    assert len(blob) == 92 + x.size * 4
    # channel-major within a sample, row-major within a channel
    assert np.frombuffer(blob, "<f4", count=1, offset=92 + 4 * (1 * 30 + 2 * 6 + 3))[0] == x[0, 1, 2, 3]


def test_dataset_round_trip_bit_exact(tmp_path, rng):
    x = rng.standard_normal((4, 4, 8, 8)).astype(np.float32)
    norm = Normalization.fit(x)
    write_dataset(tmp_path / "a.gifs", x, norm, {"seed": 1})
    ds = read_dataset(tmp_path / "a.gifs")
    assert ds.samples.tobytes() == x.tobytes()
    assert ds.normalization == norm and ds.manifest == {"seed": 1}
    write_dataset(tmp_path / "b.gifs", ds.samples, ds.normalization)
    assert (tmp_path / "a.gifs").read_bytes() == (tmp_path / "b.gifs").read_bytes()


def test_empty_dataset_has_no_statistics():
    blob = encode_dataset(np.zeros((0, 4, 8, 8), np.float32), None)
    ds = decode_dataset(blob)
    assert len(ds) == 0 and ds.normalization is None
    assert struct.unpack_from("<H", blob, 6)[0] == 0


def test_dataset_corruption_detected(rng):
    blob = encode_dataset(rng.standard_normal((2, 4, 4, 4)), None)
    with pytest.raises(ShapeError):
        decode_dataset(blob[:-4])
    with pytest.raises(ShapeError):
        decode_dataset(b"XXXX" + blob[4:])
    with pytest.raises(ShapeError):
        encode_dataset(np.zeros((2, 3, 4, 4)), None)


def _trained_tiny():
    cfg = NetworkConfig(nx=8, ny=8, z_dim=3, base_channels=2)
    g, d = build_networks(cfg, 0)
    opt_g, opt_d = make_optimizers(g, d, TrainConfig())
    loss = g(torch.randn(4, 3)).pow(2).mean() + d(torch.randn(4, 4, 8, 8)).mean()
    loss.backward()
    opt_g.step()
    opt_d.step()
    return cfg, g, d, opt_g, opt_d


def test_checkpoint_round_trip_bit_exact(tmp_path):
    cfg, g, d, opt_g, opt_d = _trained_tiny()
    meta = {"network": cfg.to_dict(), "iteration": 1}
    ck = checkpoint_from_training(meta, g, d, opt_g, opt_d)
    write_checkpoint(tmp_path / "a.gick", ck)
    back = read_checkpoint(tmp_path / "a.gick")
    assert back.meta == meta
    for k, v in g.state_dict().items():
        assert back.generator_state[k].dtype == v.dtype
        assert back.generator_state[k].numpy().tobytes() == v.numpy().tobytes()
    write_checkpoint(tmp_path / "b.gick", back)
    assert (tmp_path / "a.gick").read_bytes() == (tmp_path / "b.gick").read_bytes()
    g2, d2 = build_networks(cfg, 1)
    o2 = make_optimizers(g2, d2, TrainConfig())
    restore_optimizers(back, *o2)
    s1, s2 = opt_g.state_dict(), o2[0].state_dict()
    for pid in s1["state"]:
        for key in s1["state"][pid]:
            assert torch.equal(torch.as_tensor(s1["state"][pid][key]), torch.as_tensor(s2["state"][pid][key]))


def test_checkpoint_bad_magic():
    blob = encode_checkpoint({}, {"x": torch.zeros(2)})
    assert decode_checkpoint(blob)[0] == {}
    with pytest.raises(ShapeError):
        decode_checkpoint(b"NOPE" + blob[4:])


def test_table_round_trip(tmp_path):
    rows = [{"a": 1, "b": 0.1 + 0.2}, {"a": 2, "b": float("nan")}]
    write_table(tmp_path / "t.tsv", rows)
    back = read_table(tmp_path / "t.tsv")
    assert float(back[0]["b"]) == 0.1 + 0.2 and back[1]["a"] == "2"


def test_pgm(tmp_path):
    f = np.arange(12.0).reshape(3, 4)
    write_pgm(tmp_path / "f.pgm", f)
    raw = (tmp_path / "f.pgm").read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n")
    body = np.frombuffer(raw[len(b"P5\n4 3\n255\n") :], np.uint8).reshape(3, 4)
    assert body[-1, 0] == 0 and body[0, -1] == 255  # bottom row of the field printed last


def test_presets_load():
    toy, paper = preset("toy"), preset("paper")
    assert (toy.grid.nx, toy.dataset.kl_truncation, toy.dataset.size) == (16, 64, 2000)
    assert (paper.grid.nx, paper.dataset.kl_truncation, paper.dataset.size) == (64, 512, 10000)
    assert paper.train.batch_size == 50 and paper.train.total_g_iterations == 150000
    assert paper.train.lambda_r == 1 and paper.train.lambda_b == 10
    assert paper.cases == ((10, 0), (10, 20), (20, 0), (20, 40), (40, 0), (40, 80), (40, 120), (60, 120))
    assert paper.zdim_study == (20, 50, 100, 150, 200)
    assert paper.inpaint.lambda_p == 0.1 and paper.inpaint.learning_rate == 1e-2
    with pytest.raises(ConfigError):
        preset("huge")


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        from_dict({"grdi": {}})
    with pytest.raises(ConfigError):
        from_dict({"grid": {"nx": 16, "nz": 3}})
    with pytest.raises(ConfigError):
        from_dict({"train": {"lr": 1}})


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        from_dict({"grid": {"nx": 12, "ny": 16}})  # not divisible by 8
    with pytest.raises(ConfigError):
        from_dict({"cases": [[0, 0]]})
    with pytest.raises(ConfigError):
        from_dict({"dataset": {"kl_truncation": 300}})
    with pytest.raises(ConfigError):
        from_dict({"covariance": {"sigma2": -1}})


def test_config_yaml_round_trip(tmp_path):
    cfg = preset("toy").with_seed(42)
    (tmp_path / "c.yaml").write_text(dump_config(cfg))
    assert load_config(tmp_path / "c.yaml") == cfg
    assert cfg.dataset.seed == 42 and cfg.train.seed == 42


def test_bad_yaml_is_config_error(tmp_path):
    (tmp_path / "c.yaml").write_text("grid: [unclosed")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.yaml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
