"""Introspective training loop.

One adversarial step, in order:

1. ``Z = Enc(X)``, ``z = mu + sigma * eps``, ``Z_p ~ N(0, I)``
2. ``X_r = Dec(z)``, ``X_p = Dec(Z_p)``, ``L_AE = mse_recon(X, X_r)``
3. encoder pass on detached ``X_r``, ``X_p``; encoder loss; Adam on encoder only
4. fresh encoder pass (updated weights) on ``X_r``, ``X_p``; generator loss;
   Adam on generator only

Pre-training is the same step with ``alpha = 0``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import torch

from .config import HyperParams, NetConfig, RunConfig
from .errors import CheckpointError, ConfigError, InvalidInputError, PhaseError, TrainingAborted
from .losses import LossReport, hinge, kl_divergence, loss_encoder, loss_generator, mse_recon, reparameterize
from .networks import Encoder, Generator, build_encoder, build_generator, decode, encode

log = logging.getLogger(__name__)

PRETRAIN, ADVERSARIAL = "pretrain", "adversarial"
LOG_COLUMNS = ["step", "phase", "l_ae", "kl_real", "kl_rec", "kl_sample", "l_encoder", "l_generator", "millis"]
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, module: torch.nn.Module) -> "AdamState":
        return cls(
            {n: torch.zeros_like(p) for n, p in module.named_parameters()},
            {n: torch.zeros_like(p) for n, p in module.named_parameters()},
            0,
        )

    def clone(self) -> "AdamState":
        return AdamState(
            {k: v.clone() for k, v in self.exp_avg.items()},
            {k: v.clone() for k, v in self.exp_avg_sq.items()},
            self.t,
        )


@torch.no_grad()
def adam_update(params, grads, exp_avg, exp_avg_sq, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step, in place.

    ``params``, ``grads``, ``exp_avg`` and ``exp_avg_sq`` are parallel
    sequences of tensors; ``t`` is the 1-based step index after this update.
    A ``None`` gradient is treated as zero.
    """
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, exp_avg, exp_avg_sq):
        if g is None:
            g = torch.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} does not match parameter {tuple(p.shape)}")
        m.mul_(beta1).add_(g, alpha=1.0 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
        denom = (v / bc2).sqrt_().add_(eps)
        p.addcdiv_(m, denom, value=-lr / bc1)


def _apply_adam(module: torch.nn.Module, grads, opt: AdamState, hp: HyperParams):
    names = [n for n, _ in module.named_parameters()]
    params = [p for _, p in module.named_parameters()]
    opt.t += 1
    adam_update(
        params, grads,
        [opt.exp_avg[n] for n in names], [opt.exp_avg_sq[n] for n in names],
        opt.t, hp.lr, hp.adam_beta1, hp.adam_beta2, hp.adam_eps,
    )


# ---------------------------------------------------------------------------
# state


@dataclass
class TrainState:
    encoder: Encoder
    generator: Generator
    enc_opt: AdamState
    gen_opt: AdamState
    hp: HyperParams
    rng: torch.Generator
    step: int = 0
    epoch: int = 0
    batch_in_epoch: int = 0
    phase: str = PRETRAIN

    @property
    def net_config(self) -> NetConfig:
        return self.encoder.cfg


def init_state(cfg: NetConfig, hp: HyperParams, seed: int = 0, dtype=torch.float32, phase=PRETRAIN) -> TrainState:
    enc = build_encoder(cfg, seed=2 * seed, dtype=dtype)
    gen = build_generator(cfg, seed=2 * seed + 1, dtype=dtype)
    return TrainState(
        encoder=enc,
        generator=gen,
        enc_opt=AdamState.zeros_like(enc),
        gen_opt=AdamState.zeros_like(gen),
        hp=hp,
        rng=torch.Generator().manual_seed(int(seed) + 0x1A7E),
        phase=phase,
    )


@dataclass
class StepTrace:
    step: int
    phase: str
    report: LossReport
    hinge_rec: float
    hinge_sample: float
    kl_rec_gen: float
    kl_sample_gen: float
    millis: float

    def row(self) -> list:
        r = self.report
        return [self.step, self.phase, r.l_ae, r.kl_real, r.kl_rec, r.kl_sample, r.l_encoder, r.l_generator,
                round(self.millis, 3)]


# ---------------------------------------------------------------------------
# steps


def draw_noise(state: TrainState, batch_size: int):
    """Reparameterization noise and prior samples for one step, from the state's RNG."""
    dtype = next(state.encoder.parameters()).dtype
    m = state.net_config.latent_dim
    eps = torch.randn(batch_size, m, generator=state.rng, dtype=dtype)
    z_p = torch.randn(batch_size, m, generator=state.rng, dtype=dtype)
    return eps, z_p


def forward_encoder_objective(enc, gen, x, eps, z_p, hp: HyperParams):
    """Forward pass up to the encoder loss. Returns a dict of the intermediate tensors."""
    stats = encode(enc, x)
    z = reparameterize(stats, noise=eps)
    x_r = decode(gen, z)
    x_p = decode(gen, z_p)
    l_ae = mse_recon(x, x_r)
    kl_real = kl_divergence(stats, reduce=True)
    # ng(.): the encoder loss must not reach the generator through X_r, X_p
    stats_r = encode(enc, x_r.detach())
    stats_pp = encode(enc, x_p.detach())
    kl_rec = kl_divergence(stats_r, reduce=True)
    kl_sample = kl_divergence(stats_pp, reduce=True)
    l_adv = kl_real + hp.alpha * (hinge(hp.margin, kl_rec) + hinge(hp.margin, kl_sample))
    l_enc = loss_encoder(kl_real, kl_rec, kl_sample, l_ae, hp)
    return dict(stats=stats, z=z, x_r=x_r, x_p=x_p, l_ae=l_ae, kl_real=kl_real, stats_r=stats_r,
                stats_pp=stats_pp, kl_rec=kl_rec, kl_sample=kl_sample, l_adv=l_adv, l_enc=l_enc)


def _finite(*values) -> bool:
    return all(math.isfinite(float(v.detach()) if isinstance(v, torch.Tensor) else float(v)) for v in values)


def _all_finite(tensors) -> bool:
    return all(bool(torch.isfinite(t).all()) for t in tensors if t is not None)


def _step(state: TrainState, batch: torch.Tensor, hp: HyperParams) -> StepTrace:
    t0 = time.perf_counter()
    enc, gen = state.encoder, state.generator
    batch = batch.to(next(enc.parameters()).dtype)
    rng_before = state.rng.get_state()
    eps, z_p = draw_noise(state, batch.shape[0])

    try:
        f = forward_encoder_objective(enc, gen, batch, eps, z_p, hp)
    except InvalidInputError as exc:
        state.rng.set_state(rng_before)
        raise TrainingAborted(f"non-finite encoder output at step {state.step}: {exc}") from exc
    if not _finite(f["l_enc"], f["l_ae"], f["kl_real"], f["kl_rec"], f["kl_sample"]):
        state.rng.set_state(rng_before)
        raise TrainingAborted(f"non-finite encoder loss at step {state.step}", trace=_scalars(f))
    enc_grads = torch.autograd.grad(f["l_enc"], list(enc.parameters()), retain_graph=True)
    if not _all_finite(enc_grads):
        state.rng.set_state(rng_before)
        raise TrainingAborted(f"non-finite encoder gradient at step {state.step}", trace=_scalars(f))

    enc_backup = {k: v.clone() for k, v in enc.state_dict().items()}
    opt_backup = state.enc_opt.clone()
    _apply_adam(enc, enc_grads, state.enc_opt, hp)

    # second pass through the freshly updated encoder
    try:
        kl_rec_g = kl_divergence(encode(enc, f["x_r"]), reduce=True)
        kl_sample_g = kl_divergence(encode(enc, f["x_p"]), reduce=True)
        l_gen = loss_generator(kl_rec_g, kl_sample_g, f["l_ae"], hp)
    except InvalidInputError:
        l_gen = torch.tensor(float("nan"))
    gen_grads = torch.autograd.grad(l_gen, list(gen.parameters())) if _finite(l_gen) else None
    if gen_grads is None or not _all_finite(gen_grads):
        enc.load_state_dict(enc_backup)
        state.enc_opt = opt_backup
        state.rng.set_state(rng_before)
        raise TrainingAborted(f"non-finite generator loss or gradient at step {state.step}", trace=_scalars(f))
    _apply_adam(gen, gen_grads, state.gen_opt, hp)

    state.step += 1
    report = LossReport(
        l_ae=float(f["l_ae"].detach()),
        kl_real=float(f["kl_real"].detach()),
        kl_rec=float(f["kl_rec"].detach()),
        kl_sample=float(f["kl_sample"].detach()),
        l_encoder=float(f["l_enc"].detach()),
        l_generator=float(l_gen.detach()),
    )
    return StepTrace(
        step=state.step,
        phase=state.phase,
        report=report,
        hinge_rec=float(hinge(hp.margin, f["kl_rec"].detach())),
        hinge_sample=float(hinge(hp.margin, f["kl_sample"].detach())),
        kl_rec_gen=float(kl_rec_g.detach()),
        kl_sample_gen=float(kl_sample_g.detach()),
        millis=(time.perf_counter() - t0) * 1000.0,
    )


def _scalars(f: dict) -> dict:
    return {k: float(v.detach()) for k, v in f.items() if isinstance(v, torch.Tensor) and v.dim() == 0}


def train_step(state: TrainState, batch: torch.Tensor):
    """One adversarial update of encoder then generator. Returns (state, trace)."""
    if state.phase != ADVERSARIAL:
        raise PhaseError(f"train_step called in phase {state.phase!r}")
    return state, _step(state, batch, state.hp)


def pretrain_step(state: TrainState, batch: torch.Tensor):
    """Plain VAE update (alpha forced to 0); both networks are still updated."""
    if state.phase != PRETRAIN:
        raise PhaseError(f"pretrain_step called in phase {state.phase!r}")
    return state, _step(state, batch, state.hp.replace(alpha=0.0))


# ---------------------------------------------------------------------------
# checkpoints


def state_to_dict(state: TrainState, extra: Optional[dict] = None) -> dict:
    def opt_dict(o: AdamState):
        return {"exp_avg": dict(o.exp_avg), "exp_avg_sq": dict(o.exp_avg_sq), "t": o.t}

    return {
        "version": CHECKPOINT_VERSION,
        "net_config": state.net_config.to_dict(),
        "hyperparams": asdict(state.hp),
        "dtype": str(next(state.encoder.parameters()).dtype).replace("torch.", ""),
        "encoder": state.encoder.state_dict(),
        "generator": state.generator.state_dict(),
        "enc_opt": opt_dict(state.enc_opt),
        "gen_opt": opt_dict(state.gen_opt),
        "rng_state": state.rng.get_state(),
        "step": state.step,
        "epoch": state.epoch,
        "batch_in_epoch": state.batch_in_epoch,
        "phase": state.phase,
        "extra": extra or {},
    }


def save_checkpoint(state: TrainState, path, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(state_to_dict(state, extra), tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Returns (TrainState, extra dict)."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        d = torch.load(path, map_location="cpu", weights_only=True)
        if d.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {d.get('version')}")
        nc = d["net_config"]
        cfg = NetConfig(**{**nc, "channels": tuple(nc["channels"])})
        hp = HyperParams(**d["hyperparams"])
        dtype = getattr(torch, d["dtype"])
        enc = Encoder(cfg).to(dtype)
        gen = Generator(cfg).to(dtype)
        enc.load_state_dict(d["encoder"])
        gen.load_state_dict(d["generator"])
        rng = torch.Generator()
        rng.set_state(d["rng_state"])
        state = TrainState(
            encoder=enc,
            generator=gen,
            enc_opt=AdamState(dict(d["enc_opt"]["exp_avg"]), dict(d["enc_opt"]["exp_avg_sq"]), int(d["enc_opt"]["t"])),
            gen_opt=AdamState(dict(d["gen_opt"]["exp_avg"]), dict(d["gen_opt"]["exp_avg_sq"]), int(d["gen_opt"]["t"])),
            hp=hp,
            rng=rng,
            step=int(d["step"]),
            epoch=int(d["epoch"]),
            batch_in_epoch=int(d["batch_in_epoch"]),
            phase=d["phase"],
        )
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
    return state, d.get("extra", {})


# ---------------------------------------------------------------------------
# fit


def epoch_seed(seed: int, epoch: int) -> int:
    return int(seed) * 1_000_003 + int(epoch)


def build_dataset(cfg: RunConfig):
    from .data import DatasetSpec, SyntheticSpec, generate_synthetic, load_folder

    splits = (cfg.train_frac, cfg.val_frac, cfg.test_frac)
    if cfg.dataset == "synthetic":
        spec = SyntheticSpec(cfg.n_images, cfg.resolution, cfg.synthetic_family, cfg.seed)
        return generate_synthetic(spec, splits)
    return load_folder(DatasetSpec(cfg.dataset, cfg.resolution, splits, cfg.seed))


@dataclass
class FitResult:
    state: TrainState
    out_dir: Path
    log_path: Path
    curve_path: Path
    checkpoints: list
    traces: list
    pretrain_kl: Optional[float] = None


def fit(cfg: RunConfig, dataset=None, resume: Optional[str] = None, progress=None) -> FitResult:
    """Run pre-training then adversarial epochs, logging every step.

    ``cfg.max_steps`` (if positive) caps the global step count. When
    ``resume`` names a checkpoint, training continues from it; the logs are
    appended so that the combined files equal an uninterrupted run.
    """
    cfg = cfg.resolved()
    hp = cfg.hyperparams()
    net_cfg = cfg.net_config()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    cfg.write(out / "config.txt")

    if dataset is None:
        dataset = build_dataset(cfg)
    train = dataset.split("train")
    if hp.batch_size > len(train):
        raise ConfigError(f"batch_size {hp.batch_size} exceeds training split size {len(train)}")
    steps_per_epoch = len(train) // hp.batch_size
    total_epochs = cfg.epochs_pretrain + cfg.epochs_adv

    if resume:
        state, _ = load_checkpoint(resume)
        if state.net_config != net_cfg:
            raise ConfigError("checkpoint network configuration does not match the run config")
        state.hp = hp
        _truncate_logs(out, state.step)
        mode = "a"
    else:
        first = PRETRAIN if cfg.epochs_pretrain > 0 else ADVERSARIAL
        state = init_state(net_cfg, hp, cfg.seed, phase=first)
        mode = "w"

    log_path, curve_path = out / "log.csv", out / "loss_curve.csv"
    checkpoints = sorted((out / "checkpoints").glob("step_*.pt"))
    traces = []
    fixed_z = torch.randn(16, net_cfg.latent_dim, generator=torch.Generator().manual_seed(cfg.seed + 77))

    def checkpoint():
        p = save_checkpoint(state, out / "checkpoints" / f"step_{state.step:07d}.pt")
        if p not in checkpoints:
            checkpoints.append(p)
        while len(checkpoints) > max(cfg.keep_checkpoints, 1):
            checkpoints.pop(0).unlink(missing_ok=True)

    with open(log_path, mode, newline="") as lf, open(curve_path, mode, newline="") as cf:
        log_w, curve_w = csv.writer(lf), csv.writer(cf)
        if mode == "w":
            log_w.writerow(LOG_COLUMNS)
            curve_w.writerow(LOG_COLUMNS[:-1])
        done = False
        while state.epoch < total_epochs and not done:
            phase = PRETRAIN if state.epoch < cfg.epochs_pretrain else ADVERSARIAL
            if phase != state.phase:
                state.phase = phase
            order = _epoch_batches(train, hp.batch_size, epoch_seed(cfg.seed, state.epoch))
            while state.batch_in_epoch < steps_per_epoch:
                if cfg.max_steps and state.step >= cfg.max_steps:
                    done = True
                    break
                batch = order[state.batch_in_epoch]
                try:
                    if state.phase == PRETRAIN:
                        _, trace = pretrain_step(state, batch)
                    else:
                        _, trace = train_step(state, batch)
                except TrainingAborted:
                    lf.flush()
                    cf.flush()
                    raise
                state.batch_in_epoch += 1
                if state.batch_in_epoch == steps_per_epoch:
                    state.epoch += 1
                    state.batch_in_epoch = 0
                traces.append(trace)
                log_w.writerow(trace.row())
                curve_w.writerow(trace.row()[:-1])
                if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                    lf.flush()
                    cf.flush()
                    checkpoint()
                if cfg.sample_every and state.step % cfg.sample_every == 0:
                    _write_sample_grid(state, fixed_z, out / "samples" / f"step_{state.step:07d}.png")
                if progress is not None:
                    progress(trace)
                if state.batch_in_epoch == 0:
                    break
            if cfg.max_steps and state.step >= cfg.max_steps:
                done = True
    checkpoint()

    pretrain_kl = _pretrain_kl_summary(curve_path, steps_per_epoch)
    summary = {
        "steps": state.step,
        "epoch": state.epoch,
        "phase": state.phase,
        "trailing_pretrain_kl_real": pretrain_kl,
        "suggested_margin": None if pretrain_kl is None else round(1.1 * pretrain_kl, 3),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return FitResult(state, out, log_path, curve_path, list(checkpoints), traces, pretrain_kl)


def _epoch_batches(subset, batch_size, seed):
    from .data import batches

    return list(batches(subset, batch_size, seed))


def _write_sample_grid(state: TrainState, z: torch.Tensor, path: Path):
    from .data import make_grid, save_png

    path.parent.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        imgs = decode(state.generator, z.to(next(state.generator.parameters()).dtype))
    save_png(make_grid(imgs.clamp(0, 1)), path)


def _truncate_logs(out: Path, step: int):
    """Drop log rows past ``step`` so a resumed run appends seamlessly."""
    for name in ("log.csv", "loss_curve.csv"):
        p = out / name
        if not p.exists():
            continue
        with open(p, newline="") as f:
            lines = f.read().splitlines(keepends=True)
        kept = lines[:1] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= step]
        with open(p, "w", newline="") as f:
            f.write("".join(kept))


def read_log(path) -> list:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        for k, v in r.items():
            if k == "phase":
                continue
            r[k] = int(v) if k == "step" else float(v)
    return rows


def _pretrain_kl_summary(curve_path: Path, window: int) -> Optional[float]:
    """Mean kl_real over the last pre-training epoch, the natural reference for choosing m."""
    rows = [r for r in read_log(curve_path) if r["phase"] == PRETRAIN]
    if not rows:
        return None
    tail = rows[-max(1, window):]
    return sum(r["kl_real"] for r in tail) / len(tail)
