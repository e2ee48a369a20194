"""Command line interface: ``introvae <command> [--config FILE] [--key value ...]``.

Every run-config key is accepted as a flag (``latent_dim`` -> ``--latent-dim``).
Exit codes: 0 success, 1 configuration error, 2 runtime abort, 3 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch

from . import metrics as M
from .config import RunConfig, field_type, load_run_config, parse_list
from .data import list_folder, load_images, make_grid, save_png
from .errors import CheckpointError, ConfigError, IntroVAEError, TrainingAborted
from .networks import decode, latent_interpolate, reconstruct
from .theory import lemma_fuzz, saddle_suite, verify_saddle
from .training import build_dataset, fit, load_checkpoint, read_log

log = logging.getLogger("introvae")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3
COMMANDS = ("train", "sample", "reconstruct", "interpolate", "eval", "sweep", "verify-theory")
METRICS = ("pair_diversity", "rmse", "frechet_score", "nearest_neighbors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="introvae", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value run config file")
    parser.add_argument("-q", "--quiet", action="store_true")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        names = [flag, "--m"] if f.name == "margin" else [flag]
        if field_type(f.name) is bool:
            parser.add_argument(*names, dest=f.name, nargs="?", const="true", default=None)
        else:
            parser.add_argument(*names, dest=f.name, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    try:
        cfg = load_run_config(args.config, overrides)
        handler = _HANDLERS[args.command]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAborted, CheckpointError, OSError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except IntroVAEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(cfg: RunConfig, out: Path) -> None:
    try:
        cfg = cfg.resolved()
    except ConfigError:
        pass
    cfg.write(out / "config.txt")


def _require_checkpoint(cfg: RunConfig):
    if not cfg.checkpoint:
        raise ConfigError("--checkpoint is required for this command")
    state, _ = load_checkpoint(cfg.checkpoint)
    state.encoder.eval()
    state.generator.eval()
    return state


def _dtype(state):
    return next(state.encoder.parameters()).dtype


# ---------------------------------------------------------------------------
# train


def cmd_train(cfg: RunConfig) -> int:
    if cfg.dataset != "synthetic" and not Path(cfg.dataset).is_dir():
        raise ConfigError(f"dataset folder not found: {cfg.dataset}")
    out = _out_dir(cfg)

    def progress(trace):
        if trace.step % 100 == 0:
            r = trace.report
            log.info("step %d [%s] l_ae=%.3f kl_real=%.3f kl_rec=%.3f kl_sample=%.3f",
                     trace.step, trace.phase, r.l_ae, r.kl_real, r.kl_rec, r.kl_sample)

    result = fit(cfg, resume=cfg.checkpoint or None, progress=progress)
    if cfg.plot:
        plot_loss_curve(result.curve_path, out / "loss_curve.png", cfg.resolved().margin)
    log.info("finished at step %d; logs in %s", result.state.step, out)
    if result.pretrain_kl is not None:
        log.info("trailing pre-training kl_real %.3f (choose m a little above this)", result.pretrain_kl)
    return EXIT_OK


def plot_loss_curve(curve_csv, png_path, margin=None) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_log(curve_csv)
    steps = [r["step"] for r in rows]
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax0.plot(steps, [r["l_ae"] for r in rows], lw=0.8, label="L_AE")
    ax0.set_yscale("log")
    ax0.legend()
    for key in ("kl_real", "kl_rec", "kl_sample"):
        ax1.plot(steps, [r[key] for r in rows], lw=0.8, label=key)
    if margin is not None:
        ax1.axhline(margin, color="k", ls="--", lw=0.8, label="m")
    ax1.set_xlabel("step")
    ax1.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)


# ---------------------------------------------------------------------------
# sample / reconstruct / interpolate


def generate_samples(state, n: int, seed: int) -> torch.Tensor:
    g = torch.Generator().manual_seed(int(seed))
    z = torch.randn(n, state.net_config.latent_dim, generator=g, dtype=_dtype(state))
    with torch.no_grad():
        return decode(state.generator, z).clamp(0.0, 1.0)


def cmd_sample(cfg: RunConfig) -> int:
    if cfg.n <= 0:
        raise ConfigError("--n must be positive")
    state = _require_checkpoint(cfg)
    out = _out_dir(cfg)
    _echo(cfg, out)
    imgs = generate_samples(state, cfg.n, cfg.seed)
    for i, img in enumerate(imgs):
        save_png(img, out / f"sample_{i:05d}.png")
    save_png(make_grid(imgs[:16]), out / "grid.png")
    log.info("wrote %d samples to %s", cfg.n, out)
    return EXIT_OK


def _load_inputs(folder, resolution):
    paths, images = load_images(list_folder(folder), resolution)
    if not paths:
        raise ConfigError(f"no readable images in {folder}")
    return paths, images


def cmd_reconstruct(cfg: RunConfig) -> int:
    if not cfg.input:
        raise ConfigError("--input folder is required")
    state = _require_checkpoint(cfg)
    out = _out_dir(cfg)
    _echo(cfg, out)
    paths, images = _load_inputs(cfg.input, state.net_config.resolution)
    recs = reconstruct(state.encoder, state.generator, images.to(_dtype(state))).clamp(0.0, 1.0)
    for p, x, r in zip(paths, images, recs):
        save_png(x, out / f"{p.stem}_original.png")
        save_png(r, out / f"{p.stem}_reconstruction.png")
    value = M.rmse(images, recs)
    M.write_report([M.MetricRow("rmse", "reconstruction", value, len(paths), cfg.seed)], out / "report.csv")
    print(f"rmse {value:.6f} over {len(paths)} images")
    return EXIT_OK


def cmd_interpolate(cfg: RunConfig) -> int:
    if not cfg.image_a or not cfg.image_b:
        raise ConfigError("--image-a and --image-b are required")
    if cfg.steps < 2:
        raise ConfigError("--steps must be at least 2")
    state = _require_checkpoint(cfg)
    out = _out_dir(cfg)
    _echo(cfg, out)
    paths, images = load_images([Path(cfg.image_a), Path(cfg.image_b)], state.net_config.resolution)
    if len(paths) != 2:
        raise ConfigError("could not read both interpolation endpoints")
    images = images.to(_dtype(state))
    frames = latent_interpolate(state.encoder, state.generator, images[0], images[1], cfg.steps).clamp(0.0, 1.0)
    for i, f in enumerate(frames):
        save_png(f, out / f"frame_{i:03d}.png")
    save_png(make_grid(frames, ncol=cfg.steps), out / "strip.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval / sweep


def evaluate(state, dataset, names, seed: int, n_pairs: int, n_eval: int = 0, k: int = 5, sample_path=None):
    """Compute the requested metrics; returns a list of MetricRow."""
    unknown = [n for n in names if n not in METRICS]
    if unknown:
        raise ConfigError(f"unknown metric(s) {unknown}; choose from {list(METRICS)}")
    test = dataset.split("test").images
    if len(test) == 0:
        test = dataset.images
    n = n_eval or max(len(test), 2)
    samples = generate_samples(state, n, seed).to(torch.float32)
    if sample_path is not None:
        np.save(sample_path, samples.numpy())
    rows = []
    for name in names:
        if name == "pair_diversity":
            rows.append(M.MetricRow(name, "samples", M.pair_diversity(samples, n_pairs, seed), n_pairs, seed))
        elif name == "rmse":
            recs = reconstruct(state.encoder, state.generator, test.to(_dtype(state))).clamp(0.0, 1.0)
            rows.append(M.MetricRow(name, "test_reconstruction", M.rmse(test, recs), len(test), seed))
        elif name == "frechet_score":
            value = M.frechet_score(M.pixel_features(test), M.pixel_features(samples))
            rows.append(M.MetricRow(name, "pixel_features_test_vs_samples", value, min(len(test), n), seed))
        elif name == "nearest_neighbors":
            train = dataset.split("train").images
            kk = min(k, len(train))
            first = [M.nearest_neighbors_l1(s, train, kk)[1][0] for s in samples[: min(16, n)]]
            per_pixel = float(np.mean(first)) / samples[0].numel()
            rows.append(M.MetricRow(name, "mean_top1_l1_per_pixel", per_pixel, len(first), seed))
    return rows


def cmd_eval(cfg: RunConfig) -> int:
    names = [s.strip() for s in cfg.metrics.split(",") if s.strip()]
    unknown = [n for n in names if n not in METRICS]
    if unknown or not names:
        raise ConfigError(f"unknown or empty metric list {names}; choose from {list(METRICS)}")
    state = _require_checkpoint(cfg)
    out = _out_dir(cfg)
    _echo(cfg, out)
    if cfg.resolution != state.net_config.resolution:
        raise ConfigError(f"--resolution {cfg.resolution} does not match checkpoint {state.net_config.resolution}")
    dataset = build_dataset(cfg)
    rows = evaluate(state, dataset, names, cfg.seed, cfg.n_pairs, cfg.n_eval, cfg.k, out / "eval_samples.npy")
    M.write_report(rows, out / "report.csv")
    for r in rows:
        print(f"{r.metric:18s} {r.name:34s} {r.value:.6f}")
    return EXIT_OK


SWEEP_COLUMNS = ["margin", "beta", "alpha", "rmse", "ms_ssim", "steps"]


def run_sweep_cell(cfg: RunConfig, margin: float, beta: float, dataset=None) -> dict:
    import dataclasses

    cell_out = Path(cfg.out) / f"m{margin:g}_b{beta:g}"
    cell_cfg = dataclasses.replace(cfg, margin=margin, beta=beta, out=str(cell_out), checkpoint="")
    dataset = dataset if dataset is not None else build_dataset(cell_cfg)
    result = fit(cell_cfg, dataset=dataset)
    rows = evaluate(result.state, dataset, ["rmse", "pair_diversity"], cfg.seed, cfg.n_pairs, cfg.n_eval)
    vals = {r.metric: r.value for r in rows}
    return {"margin": margin, "beta": beta, "alpha": cell_cfg.resolved().alpha, "rmse": vals["rmse"],
            "ms_ssim": vals["pair_diversity"], "steps": result.state.step}


def cmd_sweep(cfg: RunConfig) -> int:
    import csv

    margins = parse_list(cfg.sweep_margins, float)
    betas = parse_list(cfg.sweep_betas, float)
    if not margins or not betas:
        raise ConfigError("--sweep-margins and --sweep-betas must both list at least one value")
    out = _out_dir(cfg)
    _echo(cfg, out)
    dataset = build_dataset(cfg)
    table = [run_sweep_cell(cfg, m, b, dataset) for m in margins for b in betas]
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for row in table:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    for row in table:
        print(f"m={row['margin']:<8g} beta={row['beta']:<8g} rmse={row['rmse']:.5f} ms-ssim={row['ms_ssim']:.5f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify-theory


def cmd_verify_theory(cfg: RunConfig) -> int:
    margin = 1.0 if cfg.margin is None else cfg.margin
    if not margin > 0:
        raise ConfigError("margin must be positive")
    fuzz = lemma_fuzz(cfg.verify_trials, seed=cfg.seed)
    suite = saddle_suite(cfg.verify_games, cfg.verify_trials, cfg.tolerance, cfg.seed)
    report = verify_saddle(np.full(2, 0.5), margin, cfg.tolerance, gamma=margin / 2,
                           n_trials=cfg.verify_trials, seed=cfg.seed)
    print(report.to_text())
    print()
    print(f"lemma fuzz: {fuzz['disagreements']} disagreements in {fuzz['cases']} cases")
    print(f"saddle games: max |V - m| = {suite['max_abs_v_minus_m']:.3g} over {suite['games']} games")
    print(f"perturbations: min (V - m) = {suite['min_v_minus_m']:.3g} over {suite['perturbations']} energies")
    print()
    csv_text = report.to_csv()
    print(csv_text, end="")
    if cfg.out:
        out = _out_dir(cfg)
        (out / "saddle_report.csv").write_text(csv_text)
        _echo(cfg, out)
    ok = fuzz["disagreements"] == 0 and suite["passed"] and report.is_saddle
    print("verify-theory:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


_HANDLERS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "reconstruct": cmd_reconstruct,
    "interpolate": cmd_interpolate,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "verify-theory": cmd_verify_theory,
}


if __name__ == "__main__":
    sys.exit(main())
