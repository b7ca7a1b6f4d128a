"""End-to-end commands: dataset generation, training, evaluation, inpainting, z-dimension study.

Each command is a deterministic function of (config, input files); outputs go to
an output directory as tab-separated tables, JSON summaries and PGM images.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig, dump_config
from .darcy import generate_pair, solve_sample
from .errors import ConfigError, DivergenceError, NumericalError, ShapeError
from .grid import LNK, HEAD, Normalization
from .inpaint import InpaintConfig, LatentModel, inpaint, sample_measurements, write_measurements
from .io import (
    Checkpoint,
    atomic_write_text,
    canonical_json,
    checkpoint_from_training,
    read_checkpoint,
    read_dataset,
    restore_optimizers,
    write_checkpoint,
    write_dataset,
    write_pgm,
    write_table,
)
from .kl import KLBasis, kl_basis, retained_energy, sample_lnk
from .metrics import consistency_check, dataset_spectrum, r_squared, rmse
from .nets import Discriminator, Generator, NetworkConfig, build_networks
from .physics import SobelKernels, boundary_loss_per_sample, residual_loss_per_sample
from .wgan import TrainConfig, make_optimizers, sample_generator, train

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.gick"


def build_basis(cfg: ExperimentConfig) -> KLBasis:
    return kl_basis(cfg.grid_spec, cfg.covariance, cfg.dataset.kl_truncation)


def sample_seed_z(seed: int, m: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(m)


def generate_samples(cfg: ExperimentConfig, basis: KLBasis, n: int, seed: int) -> np.ndarray:
    """Samples ``seed + index`` for index in range(n), shape (n, 4, ny, nx) float64."""
    grid = cfg.grid_spec
    out = np.empty((n, 4, grid.ny, grid.nx))
    for index in range(n):
        z = sample_seed_z(seed + index, basis.truncation)
        try:
            out[index] = generate_pair(basis, cfg.covariance, cfg.boundary, z, config=cfg.solver)
        except NumericalError as exc:
            raise NumericalError(f"solver failed on sample {index}: {exc}") from exc
    return out


# -- gen-data ---------------------------------------------------------------


def cmd_gen_data(cfg: ExperimentConfig, out_path, basis: KLBasis | None = None) -> Path:
    out_path = Path(out_path)
    basis = basis or build_basis(cfg)
    samples = generate_samples(cfg, basis, cfg.dataset.size, cfg.dataset.seed)
    norm = Normalization.fit(samples) if len(samples) else None
    manifest = {
        "format": "GIFS",
        "version": 1,
        "config_name": cfg.name,
        "grid": dataclasses.asdict(cfg.grid),
        "covariance": cfg.covariance.to_dict(),
        "boundary": cfg.boundary.to_dict(),
        "kl_truncation": basis.truncation,
        "kl_retained_energy_full_trace": retained_energy(basis, basis.truncation),
        "seed": cfg.dataset.seed,
        "sample_seeds": "seed + index",
        "size": int(len(samples)),
        "normalization": None if norm is None else norm.to_dict(),
        "flags": {"normalization_present": norm is not None},
    }
    write_dataset(out_path, samples, norm, manifest)
    log.info("wrote %d samples to %s", len(samples), out_path)
    return out_path


# -- train ------------------------------------------------------------------


def checkpoint_meta(net_cfg: NetworkConfig, train_cfg: TrainConfig, norm: Normalization, iteration: int, cfg: ExperimentConfig) -> dict:
    return {
        "network": net_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "normalization": norm.to_dict(),
        "iteration": iteration,
        "grid": dataclasses.asdict(cfg.grid),
        "boundary": cfg.boundary.to_dict(),
    }


@dataclass
class LoadedModel:
    generator: Generator
    discriminator: Discriminator
    normalization: Normalization
    meta: dict


def networks_from_checkpoint(ckpt: Checkpoint) -> LoadedModel:
    net_cfg = NetworkConfig(**ckpt.meta["network"])
    dtype = next(iter(ckpt.generator_state.values())).dtype
    g, d = build_networks(net_cfg, seed=0, dtype=dtype)
    g.load_state_dict(ckpt.generator_state)
    d.load_state_dict(ckpt.discriminator_state)
    nm = ckpt.meta["normalization"]
    return LoadedModel(g, d, Normalization(tuple(nm["mean"]), tuple(nm["std"])), ckpt.meta)


def load_model(path) -> LoadedModel:
    return networks_from_checkpoint(read_checkpoint(path))


def cmd_train(
    cfg: ExperimentConfig,
    dataset_path,
    out_dir,
    resume=None,
    z_dim: int | None = None,
    train_cfg: TrainConfig | None = None,
) -> Path:
    """Train on a GIFS dataset; writes ``checkpoint.gick`` and ``train_log.tsv`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = read_dataset(dataset_path)
    grid = cfg.grid_spec
    if (ds.ny, ds.nx) != grid.shape:
        raise ShapeError(f"dataset grid {ds.ny}x{ds.nx} does not match config grid {grid.ny}x{grid.nx}")
    if ds.normalization is None:
        raise ShapeError("dataset carries no normalization statistics (empty dataset?)")
    net_cfg = cfg.network_config(z_dim)
    train_cfg = train_cfg or cfg.train
    norm = ds.normalization
    data = norm.normalize(torch.from_numpy(ds.samples))

    networks = None
    optimizers = None
    start = 0
    if resume is not None:
        ckpt = read_checkpoint(resume)
        loaded = networks_from_checkpoint(ckpt)
        ck_net = loaded.generator.cfg
        if (ck_net.ny, ck_net.nx) != grid.shape:
            raise ShapeError(f"checkpoint grid {ck_net.ny}x{ck_net.nx} does not match dataset grid {grid.ny}x{grid.nx}")
        if ck_net != net_cfg:
            raise ShapeError("checkpoint network configuration differs from the requested one")
        networks = (loaded.generator, loaded.discriminator)
        optimizers = make_optimizers(*networks, train_cfg)
        restore_optimizers(ckpt, *optimizers)
        start = int(ckpt.meta["iteration"])
        norm = loaded.normalization
        data = norm.normalize(torch.from_numpy(ds.samples))

    ckpt_path = out_dir / CHECKPOINT_NAME

    def save(result, iteration):
        meta = checkpoint_meta(net_cfg, train_cfg, norm, iteration, cfg)
        write_checkpoint(ckpt_path, checkpoint_from_training(meta, result.generator, result.discriminator, result.opt_g, result.opt_d))

    def callback(iteration, result):
        if cfg.checkpoint_every and iteration % cfg.checkpoint_every == 0:
            save(result, iteration)

    try:
        result = train(
            data,
            train_cfg,
            net_cfg,
            grid,
            cfg.boundary,
            norm,
            networks=networks,
            optimizers=optimizers,
            start_iteration=start,
            callback=callback,
            log_every=1000,
        )
    except DivergenceError as exc:
        # the last periodic checkpoint is left untouched
        write_table(out_dir / "divergence.tsv", [exc.diagnostics])
        raise
    save(result, result.iteration)
    write_table(out_dir / "train_log.tsv", result.log, ["iteration", "d_loss", "d_fake", "d_real", "gp", "g_loss", "g_adv", "L_r", "L_b"])
    atomic_write_text(out_dir / "config.yaml", dump_config(cfg))
    return ckpt_path


# -- eval-uncond ------------------------------------------------------------


def spectrum_rows(gen_fields, ref_fields, k: int, prior_total: float | None) -> list[dict]:
    gen = dataset_spectrum(gen_fields, k) if len(gen_fields) >= 2 else None
    ref = dataset_spectrum(ref_fields, k) if ref_fields is not None and len(ref_fields) >= 2 else None
    rows = []
    for i in range(k):
        row = {"index": i + 1}
        for tag, rep in (("generated", gen), ("training", ref)):
            if rep is None:
                continue
            row[f"{tag}_eigenvalue"] = float(rep.eigenvalues[i])
            row[f"{tag}_cumfrac_sample_trace"] = float(rep.retained_energy_curve[i])
            if prior_total is not None:
                row[f"{tag}_cumfrac_prior_total"] = float(rep.relative_curve(prior_total)[i])
        rows.append(row)
    return rows


def cmd_eval_uncond(cfg: ExperimentConfig, checkpoint, out_dir, n: int | None = None, dataset_path=None, basis: KLBasis | None = None) -> dict:
    model = load_model(checkpoint)
    n = cfg.evaluation.n_samples if n is None else n
    samples = sample_generator(model.generator, n, cfg.evaluation.seed, model.normalization)
    ref = read_dataset(dataset_path).samples.astype(np.float64) if dataset_path is not None else None
    return evaluate_samples(cfg, samples, out_dir, ref, basis)


def evaluate_samples(cfg: ExperimentConfig, samples: np.ndarray, out_dir, ref: np.ndarray | None = None, basis: KLBasis | None = None) -> dict:
    """Spectra, solver consistency and physics residual tables for physical-unit samples."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid_spec
    n = len(samples)
    basis = basis or build_basis(cfg)
    prior_total = float(np.sum(basis.eigenvalues))
    k_lnk = min(100, grid.size)
    k_h = min(40, grid.size)
    lnk_rows = spectrum_rows(samples[:, LNK], None if ref is None else ref[:, LNK], k_lnk, prior_total)
    h_rows = spectrum_rows(samples[:, HEAD], None if ref is None else ref[:, HEAD], k_h, None)
    if lnk_rows and len(lnk_rows[0]) > 1:
        write_table(out_dir / "spectrum_lnK.tsv", lnk_rows)
    if h_rows and len(h_rows[0]) > 1:
        write_table(out_dir / "spectrum_h.tsv", h_rows)

    cons = consistency_check(samples, cfg.boundary, grid, None, cfg.solver)
    kernels = SobelKernels.for_grid(grid)
    t = torch.from_numpy(np.ascontiguousarray(samples, dtype=np.float64))
    lr = residual_loss_per_sample(t, kernels).numpy()
    lb = boundary_loss_per_sample(t, cfg.boundary).numpy()
    rows = [
        {
            "sample": s,
            "rmse_h": float(cons.rmse[s]),
            "ssim_h": float(cons.ssim[s]),
            "solver_failed": int(cons.failed[s]),
            "L_r": float(lr[s]),
            "L_b": float(lb[s]),
        }
        for s in range(n)
    ]
    write_table(out_dir / "consistency.tsv", rows, ["sample", "rmse_h", "ssim_h", "solver_failed", "L_r", "L_b"])
    for s in range(min(n, 4)):
        for c, name in enumerate(("lnK", "h", "F1", "F2")):
            write_pgm(out_dir / f"sample{s}_{name}.pgm", samples[s, c])
    summary = {
        "n": n,
        "mean_rmse_h": cons.mean_rmse,
        "mean_ssim_h": cons.mean_ssim,
        "solver_failures": int(cons.failed.sum()),
        "mean_L_r": float(lr.mean()) if n else float("nan"),
        "mean_L_b": float(lb.mean()) if n else float("nan"),
    }
    atomic_write_text(out_dir / "summary.json", canonical_json(summary))
    return summary


# -- inpaint ----------------------------------------------------------------


def held_out_truths(cfg: ExperimentConfig, basis: KLBasis, count: int | None = None) -> np.ndarray:
    """Fresh KL draws (seeds ``truth.seed + t``) solved for h and fluxes."""
    count = cfg.truth.count if count is None else count
    return generate_samples(cfg, basis, count, cfg.truth.seed)


def run_cases(
    model: LatentModel,
    truths: np.ndarray,
    cases,
    inpaint_cfg: InpaintConfig,
    measurement_seed: int,
    out_dir: Path | None = None,
) -> tuple[list[dict], list[dict]]:
    """Inpaint every (truth, case); returns per-(truth, case) rows and per-case summary rows.

    For each truth one measurement draw of the largest requested counts is
    made and every case takes a prefix of it, so cases are nested. The same
    latent initializations are reused across cases of one truth.
    """
    max_k = max(c[0] for c in cases)
    max_h = max(c[1] for c in cases)
    detail = []
    for t, truth in enumerate(truths):
        full = sample_measurements(truth, max_k, max_h, measurement_seed + t)
        if out_dir is not None:
            write_measurements(full, out_dir / f"truth{t}_measurements.txt")
        for ci, (n_k, n_h) in enumerate(cases):
            meas = full.subset(n_k, n_h)
            res = inpaint(model, meas, dataclasses.replace(inpaint_cfg, seed=inpaint_cfg.seed + t))
            ok = ~res.failed
            per_rmse = np.array([rmse(s[LNK], truth[LNK]) for s in res.samples[ok]])
            per_r2 = np.array([r_squared(truth[LNK], s[LNK]) for s in res.samples[ok]])
            detail.append(
                {
                    "truth": t,
                    "case": ci + 1,
                    "N_K": n_k,
                    "N_h": n_h,
                    "restarts_ok": int(ok.sum()),
                    "rmse_mean": float(per_rmse.mean()),
                    "rmse_std": float(per_rmse.std()),
                    "r2_mean": float(per_r2.mean()),
                    "r2_std": float(per_r2.std()),
                    "meanfield_rmse": rmse(res.mean[LNK], truth[LNK]),
                    "meanfield_r2": r_squared(truth[LNK], res.mean[LNK]),
                    "meanfield_rmse_h": rmse(res.mean[HEAD], truth[HEAD]),
                    "_per_rmse": per_rmse,
                    "_per_r2": per_r2,
                }
            )
            if out_dir is not None and t == 0:
                write_pgm(out_dir / f"truth0_case{ci + 1}_lnK_mean.pgm", res.mean[LNK])
                write_pgm(out_dir / f"truth0_case{ci + 1}_h_mean.pgm", res.mean[HEAD])
    summary = []
    for ci, (n_k, n_h) in enumerate(cases):
        rows = [r for r in detail if r["case"] == ci + 1]
        all_rmse = np.concatenate([r["_per_rmse"] for r in rows])
        all_r2 = np.concatenate([r["_per_r2"] for r in rows])
        summary.append(
            {
                "case": ci + 1,
                "N_K": n_k,
                "N_h": n_h,
                "runs": int(all_rmse.size),
                "rmse_mean": float(all_rmse.mean()),
                "rmse_std": float(all_rmse.std()),
                "r2_mean": float(all_r2.mean()),
                "r2_std": float(all_r2.std()),
                "meanfield_rmse_mean": float(np.mean([r["meanfield_rmse"] for r in rows])),
                "meanfield_r2_mean": float(np.mean([r["meanfield_r2"] for r in rows])),
            }
        )
    for r in detail:
        r.pop("_per_rmse")
        r.pop("_per_r2")
    return detail, summary


def cmd_inpaint(cfg: ExperimentConfig, checkpoint, out_dir, cases=None, truths: np.ndarray | None = None, basis: KLBasis | None = None) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cases = tuple(cases or cfg.cases)
    for n_k, n_h in cases:
        if n_k + n_h == 0:
            raise ConfigError("a case needs at least one measurement")
    loaded = load_model(checkpoint)
    model = LatentModel.from_networks(loaded.generator, loaded.discriminator, loaded.normalization)
    if truths is None:
        truths = held_out_truths(cfg, basis or build_basis(cfg))
    for t, truth in enumerate(truths):
        write_pgm(out_dir / f"truth{t}_lnK.pgm", truth[LNK])
    detail, summary = run_cases(model, truths, cases, cfg.inpaint, cfg.truth.seed + 1_000_003, out_dir)
    write_table(out_dir / "inpaint_runs.tsv", detail)
    write_table(out_dir / "inpaint_cases.tsv", summary)
    return summary


# -- zdim-study -------------------------------------------------------------


def energy_rows(basis: KLBasis, dims) -> list[dict]:
    rows = []
    for k in dims:
        if 1 <= k <= basis.truncation:
            rows.append(
                {
                    "z_dim": k,
                    "energy_truncated_total": retained_energy(basis, k, "truncated_total"),
                    "energy_full_trace": retained_energy(basis, k, "full_trace"),
                }
            )
        else:
            rows.append({"z_dim": k, "energy_truncated_total": float("nan"), "energy_full_trace": float("nan")})
    return rows


def cmd_zdim_study(cfg: ExperimentConfig, dataset_path, out_dir, basis: KLBasis | None = None, train_cfg: TrainConfig | None = None) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    basis = basis or build_basis(cfg)
    truths = held_out_truths(cfg, basis)
    rows = energy_rows(basis, cfg.zdim_study)
    for row, z_dim in zip(rows, cfg.zdim_study):
        run_dir = out_dir / f"zdim_{z_dim}"
        ckpt = cmd_train(cfg, dataset_path, run_dir, z_dim=z_dim, train_cfg=train_cfg)
        loaded = load_model(ckpt)
        model = LatentModel.from_networks(loaded.generator, loaded.discriminator, loaded.normalization)
        _, summary = run_cases(model, truths, [cfg.zdim_case], cfg.inpaint, cfg.truth.seed + 1_000_003)
        row.update({k: summary[0][k] for k in ("N_K", "N_h", "runs", "rmse_mean", "rmse_std", "r2_mean", "r2_std")})
    write_table(out_dir / "zdim_study.tsv", rows)
    return rows


# -- solve / spectrum -------------------------------------------------------


def cmd_solve(cfg: ExperimentConfig, out_dir, lnk=None, seed: int = 0) -> dict:
    """One-shot Darcy solve of a KL draw (or a supplied lnK field)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid_spec
    if lnk is None:
        basis = build_basis(cfg)
        lnk = sample_lnk(basis, cfg.covariance, sample_seed_z(seed, basis.truncation))
    sample = solve_sample(lnk, cfg.boundary, grid, None, cfg.solver)
    for c, name in enumerate(("lnK", "h", "F1", "F2")):
        write_pgm(out_dir / f"{name}.pgm", sample[c])
    np.save(out_dir / "sample.npy", sample)
    summary = {
        "h_min": float(sample[HEAD].min()),
        "h_max": float(sample[HEAD].max()),
        "mean_F1": float(sample[2].mean()),
    }
    atomic_write_text(out_dir / "summary.json", canonical_json(summary))
    return summary


def cmd_spectrum(cfg: ExperimentConfig, out_dir, dataset_path=None, basis: KLBasis | None = None) -> dict:
    """Analytic KL energy table and, when a dataset is given, its lnK / h spectra."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    basis = basis or build_basis(cfg)
    energy = energy_rows(basis, cfg.zdim_study)
    write_table(out_dir / "kl_energy.tsv", energy)
    result = {
        "kl_truncation": basis.truncation,
        "energy_full_trace_at_truncation": retained_energy(basis, basis.truncation, "full_trace"),
        "table": energy,
    }
    if dataset_path is not None:
        ds = read_dataset(dataset_path).samples.astype(np.float64)
        prior_total = float(np.sum(basis.eigenvalues))
        k_lnk = min(100, ds.shape[2] * ds.shape[3])
        rows = spectrum_rows(ds[:, LNK], None, k_lnk, prior_total)
        write_table(out_dir / "dataset_spectrum_lnK.tsv", rows)
        rows_h = spectrum_rows(ds[:, HEAD], None, min(40, k_lnk), None)
        write_table(out_dir / "dataset_spectrum_h.tsv", rows_h)
        result["lnK_top_fraction_sample_trace"] = rows[-1]["generated_cumfrac_sample_trace"]
        result["h_top40_fraction_sample_trace"] = rows_h[-1]["generated_cumfrac_sample_trace"]
    atomic_write_text(out_dir / "spectrum_summary.json", canonical_json(result))
    return result
