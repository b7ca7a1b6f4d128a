import json

import numpy as np
import pytest
import torch

from physinpaint import pipeline
from physinpaint.cli import main
from physinpaint.config import from_dict
from physinpaint.darcy import solve_sample
from physinpaint.errors import ConfigError, ShapeError
from physinpaint.io import read_checkpoint, read_dataset, read_table, write_checkpoint
from physinpaint.nets import build_networks
from physinpaint.wgan import TrainConfig

SMALL = {
    "name": "small",
    "grid": {"nx": 8, "ny": 8},
    "covariance": {"kernel": "exponential"},
    "dataset": {"size": 24, "seed": 3, "kl_truncation": 16},
    "network": {"z_dim": 4, "base_channels": 2},
    "train": {"batch_size": 8, "total_g_iterations": 4},
    "inpaint": {"max_iterations": 10, "restarts": 2},
    "evaluation": {"n_samples": 6},
    "truth": {"count": 2},
    "cases": [[2, 0], [2, 3], [4, 3]],
    "zdim_study": [2],
    "zdim_case": [2, 3],
    "checkpoint_every": 2,
}


@pytest.fixture(scope="module")
def cfg():
    return from_dict(SMALL)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, cfg):
    root = tmp_path_factory.mktemp("pipe")
    pipeline.cmd_gen_data(cfg, root / "data.gifs")
    pipeline.cmd_train(cfg, root / "data.gifs", root / "run")
    return root


def test_gen_data_contents(cfg, workdir):
    ds = read_dataset(workdir / "data.gifs")
    assert ds.samples.shape == (24, 4, 8, 8)
    assert ds.manifest["seed"] == 3 and ds.manifest["kl_truncation"] == 16
    assert ds.manifest["covariance"]["kernel"] == "exponential"
    # sample k is the solver applied to the KL draw with seed 3 + k
    basis = pipeline.build_basis(cfg)
    ref = pipeline.generate_samples(cfg, basis, 1, 3 + 5)[0]
    np.testing.assert_array_equal(ds.samples[5], ref.astype(np.float32))
    assert ds.normalization.std[0] > 0


def test_gen_data_deterministic(cfg, workdir, tmp_path):
    pipeline.cmd_gen_data(cfg, tmp_path / "again.gifs")
    assert (tmp_path / "again.gifs").read_bytes() == (workdir / "data.gifs").read_bytes()
    assert (tmp_path / "again.gifs.manifest.json").read_bytes() == (workdir / "data.gifs.manifest.json").read_bytes()


def test_gen_data_empty(tmp_path):
    cfg = from_dict({**SMALL, "dataset": {"size": 0, "kl_truncation": 16}})
    pipeline.cmd_gen_data(cfg, tmp_path / "e.gifs")
    ds = read_dataset(tmp_path / "e.gifs")
    assert len(ds) == 0 and ds.normalization is None
    assert ds.manifest["flags"]["normalization_present"] is False


def test_train_outputs(workdir):
    log = read_table(workdir / "run" / "train_log.tsv")
    assert [int(r["iteration"]) for r in log] == [1, 2, 3, 4]
    ck = read_checkpoint(workdir / "run" / "checkpoint.gick")
    assert ck.meta["iteration"] == 4


def test_train_deterministic(cfg, workdir, tmp_path):
    pipeline.cmd_train(cfg, workdir / "data.gifs", tmp_path / "run")
    assert (tmp_path / "run" / "checkpoint.gick").read_bytes() == (workdir / "run" / "checkpoint.gick").read_bytes()
    assert (tmp_path / "run" / "train_log.tsv").read_bytes() == (workdir / "run" / "train_log.tsv").read_bytes()


def test_train_zero_iterations_is_initialisation(cfg, workdir, tmp_path):
    train_cfg = TrainConfig(batch_size=8, total_g_iterations=0, seed=cfg.train.seed)
    path = pipeline.cmd_train(cfg, workdir / "data.gifs", tmp_path, train_cfg=train_cfg)
    ck = read_checkpoint(path)
    g, _ = build_networks(cfg.network_config(), cfg.train.seed)
    for k, v in g.state_dict().items():
        assert torch.equal(ck.generator_state[k], v)
    assert ck.meta["iteration"] == 0


def test_resume_continues(cfg, workdir, tmp_path):
    longer = TrainConfig(batch_size=8, total_g_iterations=6)
    pipeline.cmd_train(cfg, workdir / "data.gifs", tmp_path, resume=workdir / "run" / "checkpoint.gick", train_cfg=longer)
    log = read_table(tmp_path / "train_log.tsv")
    assert [int(r["iteration"]) for r in log] == [5, 6]


def test_resume_grid_mismatch(cfg, workdir, tmp_path):
    big = from_dict({**SMALL, "grid": {"nx": 16, "ny": 16}})
    pipeline.cmd_gen_data(from_dict({**SMALL, "grid": {"nx": 16, "ny": 16}, "dataset": {"size": 8, "kl_truncation": 16}}), tmp_path / "big.gifs")
    with pytest.raises(ShapeError):
        pipeline.cmd_train(big, tmp_path / "big.gifs", tmp_path / "r", resume=workdir / "run" / "checkpoint.gick")
    with pytest.raises(ShapeError):
        pipeline.cmd_train(cfg, tmp_path / "big.gifs", tmp_path / "r")


def test_divergence_keeps_last_checkpoint(cfg, workdir, tmp_path):
    from physinpaint.errors import DivergenceError
    from physinpaint.io import read_dataset as rd
    from physinpaint.io import write_dataset

    ds = rd(workdir / "data.gifs")
    write_dataset(tmp_path / "huge.gifs", ds.samples, type(ds.normalization)((0, 0, 0, 0), (1e30, 1e30, 1e30, 1e30)))
    out = tmp_path / "run"
    out.mkdir()
    sentinel = (workdir / "run" / "checkpoint.gick").read_bytes()
    (out / "checkpoint.gick").write_bytes(sentinel)
    with pytest.raises(DivergenceError):
        pipeline.cmd_train(cfg, tmp_path / "huge.gifs", out)
    assert (out / "checkpoint.gick").read_bytes() == sentinel
    assert (out / "divergence.tsv").exists()


def test_eval_uncond(cfg, workdir, tmp_path):
    summary = pipeline.cmd_eval_uncond(cfg, workdir / "run" / "checkpoint.gick", tmp_path, dataset_path=workdir / "data.gifs")
    assert summary["n"] == 6
    rows = read_table(tmp_path / "consistency.tsv")
    assert len(rows) == 6
    spec = read_table(tmp_path / "spectrum_lnK.tsv")
    assert {"generated_cumfrac_sample_trace", "generated_cumfrac_prior_total", "training_cumfrac_prior_total"} <= set(spec[0])
    assert (tmp_path / "sample0_lnK.pgm").exists()


def test_eval_uncond_single_sample(cfg, workdir, tmp_path):
    summary = pipeline.cmd_eval_uncond(cfg, workdir / "run" / "checkpoint.gick", tmp_path, n=1)
    assert summary["n"] == 1
    assert len(read_table(tmp_path / "consistency.tsv")) == 1


def test_eval_oracle_generator(cfg, tmp_path):
    """Solver pairs passed straight through: residual near zero, h consistency exact."""
    basis = pipeline.build_basis(cfg)
    samples = pipeline.generate_samples(cfg, basis, 3, 50)
    summary = pipeline.evaluate_samples(cfg, samples, tmp_path, basis=basis)
    assert summary["mean_rmse_h"] <= 1e-12
    assert summary["mean_ssim_h"] == pytest.approx(1.0, abs=1e-12)
    zeroed = samples.copy()
    zeroed[:, 2:] = 0
    ref = pipeline.evaluate_samples(cfg, zeroed, tmp_path / "zeroed", basis=basis)
    assert summary["mean_L_r"] <= 0.1 * ref["mean_L_r"]
    rows = read_table(tmp_path / "consistency.tsv")
    assert all(float(r["rmse_h"]) <= 1e-12 for r in rows)


def test_inpaint_cases(cfg, workdir, tmp_path):
    summary = pipeline.cmd_inpaint(cfg, workdir / "run" / "checkpoint.gick", tmp_path)
    assert [(r["N_K"], r["N_h"]) for r in summary] == [(2, 0), (2, 3), (4, 3)]
    assert all(r["runs"] == 4 for r in summary)
    runs = read_table(tmp_path / "inpaint_runs.tsv")
    assert len(runs) == 6
    assert (tmp_path / "truth0_measurements.txt").exists()


def test_inpaint_rejects_empty_case(cfg, workdir, tmp_path):
    with pytest.raises(ConfigError):
        pipeline.cmd_inpaint(cfg, workdir / "run" / "checkpoint.gick", tmp_path, cases=[(0, 0)])


def test_zdim_study_single_row(cfg, workdir, tmp_path):
    rows = pipeline.cmd_zdim_study(cfg, workdir / "data.gifs", tmp_path)
    assert len(rows) == 1 and rows[0]["z_dim"] == 2
    assert 0 < rows[0]["energy_full_trace"] <= rows[0]["energy_truncated_total"] <= 1
    assert "rmse_mean" in rows[0]


def test_energy_rows_out_of_range(cfg):
    basis = pipeline.build_basis(cfg)
    rows = pipeline.energy_rows(basis, [4, 99])
    assert np.isnan(rows[1]["energy_full_trace"])


def test_solve_and_spectrum(cfg, workdir, tmp_path):
    s = pipeline.cmd_solve(cfg, tmp_path / "solve", seed=1)
    assert 0 <= s["h_min"] <= s["h_max"] <= 1
    r = pipeline.cmd_spectrum(cfg, tmp_path / "spec", dataset_path=workdir / "data.gifs")
    assert r["kl_truncation"] == 16
    assert 0 < r["h_top40_fraction_sample_trace"] <= 1 + 1e-12


def test_cli_exit_codes(tmp_path, workdir, capsys):
    cfg_path = tmp_path / "c.yaml"
    import yaml

    cfg_path.write_text(yaml.safe_dump(SMALL))
    assert main(["solve", "--config", str(cfg_path), "--out", str(tmp_path / "s")]) == 0
    assert json.loads(capsys.readouterr().out)["h_max"] <= 1
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "t")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid: {nx: 8, ny: 8, typo: 1}\n")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "s")]) == 2
    neumann = tmp_path / "neumann.yaml"
    neumann.write_text(yaml.safe_dump({**SMALL, "boundary": {"dirichlet": []}}))
    assert main(["solve", "--config", str(neumann), "--out", str(tmp_path / "s")]) == 3
    assert main(["gen-data", "--config", str(cfg_path), "--seed", "5", "--out", str(tmp_path / "d.gifs")]) == 0
    assert read_dataset(tmp_path / "d.gifs").manifest["seed"] == 5
    with pytest.raises(SystemExit) as info:
        main(["nonsense"])
    assert info.value.code == 2
