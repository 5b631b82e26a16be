"""Two-stage optimization: supervised warm-up, then adversarial training.

Stage one trains the generator alone on the pixel loss (plus the gradient
branch's map loss when the branch is enabled), producing the checkpoint that
initializes stage two. Stage two alternates one discriminator update per
generator update for both discriminators, under Adam and a step-halving
learning-rate schedule shared by all optimizers.

Checkpoints carry the complete training state: parameters, optimizer
moments, step counters, sampler RNG state, and the resolved config, so a
resumed run reproduces an uninterrupted one bit for bit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import losses as L
from .arch import Generator, GeneratorConfig, build_generator
from .data import PairSampler, PairSamplerConfig
from .disc import DiscConfig, Discriminator, build_discriminator
from .gradops import gradient_map
from .losses import LossReport, LossWeights
from .nn import Checkpoint, Tensor, backward, load_checkpoint, save_checkpoint

# stable offsets from the root seed, one consumer each
SEED_GEN = 0
SEED_DISC_IMG = 1
SEED_DISC_GM = 2
SEED_PRETRAIN_SAMPLER = 3
SEED_ADV_SAMPLER = 4


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, dump_path: Optional[Path] = None):
        super().__init__(message)
        self.dump_path = dump_path


@dataclass
class Schedule:
    initial_lr: float = 1e-4
    decay_steps: tuple = (50_000, 100_000, 200_000, 300_000)
    factor: float = 0.5
    decay_divisor: int = 1

    def __post_init__(self):
        self.decay_steps = tuple(int(d) for d in self.decay_steps)
        if any(b <= a for a, b in zip(self.decay_steps, self.decay_steps[1:])):
            raise ValueError("decay_steps must be strictly increasing")
        if self.decay_divisor < 1:
            raise ValueError("decay_divisor must be >= 1")

    def effective_decay_steps(self) -> tuple:
        return tuple(max(1, d // self.decay_divisor) for d in self.decay_steps)

    def to_dict(self) -> dict:
        return {"initial_lr": self.initial_lr,
                "decay_steps": list(self.decay_steps),
                "factor": self.factor, "decay_divisor": self.decay_divisor}

    @staticmethod
    def from_dict(d: dict) -> "Schedule":
        return Schedule(**{**d, "decay_steps": tuple(d["decay_steps"])})


def schedule_lr(s: Schedule, step: int) -> float:
    """Learning rate at 0-based global step: halved at each boundary reached."""
    if step < 0:
        raise ValueError("step must be >= 0")
    halvings = sum(1 for d in s.effective_decay_steps() if d <= step)
    return s.initial_lr * (s.factor ** halvings)


class Adam(object):
    """Adam over a named parameter list; moments are checkpointable arrays."""

    def __init__(self, named_params, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.named_params = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.named_params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict:
        out = {}
        for name, _ in self.named_params:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict, t: int) -> None:
        for name, p in self.named_params:
            self.m[name] = np.asarray(arrays[f"m.{name}"]).astype(p.data.dtype).copy()
            self.v[name] = np.asarray(arrays[f"v.{name}"]).astype(p.data.dtype).copy()
        self.t = int(t)


def clip_gradients(named_params, max_norm: float) -> float:
    """Global-norm clip across the parameter set; returns the pre-clip norm."""
    total = 0.0
    for _, p in named_params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for _, p in named_params:
            if p.grad is not None:
                p.grad *= scale
    return norm


@dataclass
class TrainConfig:
    gen: GeneratorConfig = field(default_factory=GeneratorConfig)
    data: PairSamplerConfig = field(default_factory=lambda: PairSamplerConfig(hr_dir="data/hr"))
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: Schedule = field(default_factory=Schedule)
    gan_mode: str = "ragan"
    use_gradient_loss: bool = True
    perceptual: str = "random"  # "random" | "identity"
    extractor_seed: int = 7
    pretrain_steps: int = 2000
    total_steps: int = 1000
    seed: int = 0
    checkpoint_interval: int = 500
    disc_base_channels: int = 16
    disc_num_downsamples: int = 3
    dtype: str = "float64"
    clip_grad_norm: Optional[float] = None

    def __post_init__(self):
        if self.gan_mode not in L.GAN_MODES:
            raise ValueError(f"gan_mode must be one of {L.GAN_MODES}")
        if self.perceptual not in ("random", "identity"):
            raise ValueError("perceptual must be 'random' or 'identity'")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be 'float64' or 'float32'")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def effective_weights(self) -> LossWeights:
        """Ablation flags fold into the weight vector."""
        w = self.weights
        if not self.use_gradient_loss:
            w = dataclasses.replace(w, beta_gm=0.0, gamma_gm=0.0)
        if not self.gen.use_gradient_branch:
            w = dataclasses.replace(w, beta_gb=0.0)
        return w

    def pretrain_weights(self) -> LossWeights:
        """Warm-up objective: plain pixel loss plus the branch's map loss."""
        return LossWeights(beta_img=1.0, gamma_img=0.0, beta_gm=0.0,
                           gamma_gm=0.0,
                           beta_gb=self.weights.beta_gb if self.gen.use_gradient_branch else 0.0)

    def disc_config(self, in_channels: int) -> DiscConfig:
        return DiscConfig(in_channels=in_channels,
                          base_channels=self.disc_base_channels,
                          num_downsamples=self.disc_num_downsamples,
                          input_size=self.data.lr_patch * self.data.scale)

    def to_dict(self) -> dict:
        return {"gen": self.gen.to_dict(), "data": self.data.to_dict(),
                "weights": self.weights.to_dict(), "schedule": self.schedule.to_dict(),
                "gan_mode": self.gan_mode, "use_gradient_loss": self.use_gradient_loss,
                "perceptual": self.perceptual, "extractor_seed": self.extractor_seed,
                "pretrain_steps": self.pretrain_steps, "total_steps": self.total_steps,
                "seed": self.seed, "checkpoint_interval": self.checkpoint_interval,
                "disc_base_channels": self.disc_base_channels,
                "disc_num_downsamples": self.disc_num_downsamples,
                "dtype": self.dtype, "clip_grad_norm": self.clip_grad_norm}

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        d["gen"] = GeneratorConfig.from_dict(d["gen"])
        d["data"] = PairSamplerConfig(**d["data"])
        d["weights"] = LossWeights.from_dict(d["weights"])
        d["schedule"] = Schedule.from_dict(d["schedule"])
        return TrainConfig(**d)


def canonical_config_text(cfg: TrainConfig) -> str:
    """Flat, sorted key-value rendering of a resolved configuration."""
    def render(value):
        if value is None:
            return "none"
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, (list, tuple)):
            return ",".join(str(v) for v in value)
        return str(value)

    lines = []
    for section, obj in (("gen", cfg.gen), ("data", cfg.data),
                         ("loss", cfg.weights), ("sched", cfg.schedule)):
        for f in dataclasses.fields(obj):
            lines.append(f"{section}.{f.name} = {render(getattr(obj, f.name))}")
    for f in dataclasses.fields(TrainConfig):
        if f.name not in ("gen", "data", "weights", "schedule"):
            lines.append(f"train.{f.name} = {render(getattr(cfg, f.name))}")
    return "\n".join(sorted(lines)) + "\n"


def _echo_config(cfg: TrainConfig, run_dir: Optional[Path]) -> None:
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.txt").write_text(canonical_config_text(cfg))


ABLATIONS = ("full", "no-gb", "no-gl", "baseline")


def apply_ablation(cfg: TrainConfig, name: str) -> TrainConfig:
    """Flag combinations for the standard component study.

    full      both the gradient branch and the gradient-space losses
    no-gb     gradient losses on, branch removed (losses act on the output's map)
    no-gl     branch on (its map loss stays), gradient-space losses off
    baseline  neither: the plain perceptual-adversarial recipe
    """
    if name not in ABLATIONS:
        raise ValueError(f"ablation must be one of {ABLATIONS}, got {name!r}")
    branch = name in ("full", "no-gl")
    grad_loss = name in ("full", "no-gb")
    gen = dataclasses.replace(cfg.gen, use_gradient_branch=branch)
    return dataclasses.replace(cfg, gen=gen, use_gradient_loss=grad_loss)


# -- shared helpers -------------------------------------------------------------


def _make_extractor(cfg: TrainConfig):
    if cfg.perceptual == "identity":
        return L.IdentityExtractor()
    return L.RandomFeatureExtractor(seed=cfg.extractor_seed,
                                    in_channels=cfg.gen.img_channels,
                                    dtype=cfg.np_dtype)


def _check_finite(value: float, step: int, stage: str, batch, run_dir) -> None:
    if np.isfinite(value):
        return
    dump_path = None
    if run_dir is not None:
        dump_path = Path(run_dir) / f"diverged_{stage}_step{step}.npz"
        np.savez(dump_path, lr=batch[0], hr=batch[1])
    raise TrainingDiverged(
        f"non-finite loss ({value}) at {stage} step {step}"
        + (f"; offending batch dumped to {dump_path}" if dump_path else ""),
        dump_path)


class _LossLog:
    def __init__(self, path: Optional[Path]):
        self.path = Path(path) if path is not None else None
        self.reports: list[LossReport] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a")
        else:
            self._fh = None

    def append(self, report: LossReport) -> None:
        self.reports.append(report)
        if self._fh is not None:
            self._fh.write(report.to_json_line() + "\n")
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()


def _gen_arrays(gen: Generator) -> dict:
    # copies: checkpoints must stay frozen while training keeps mutating
    return {f"gen.{n}": p.data.copy() for n, p in gen.named_parameters()}


def _opt_arrays(opt: Adam, prefix: str) -> dict:
    return {f"{prefix}.{k}": v.copy() for k, v in opt.state_arrays().items()}


# -- stage one: supervised warm-up ----------------------------------------------


def pretrain(cfg: TrainConfig, run_dir=None) -> tuple[Checkpoint, list[LossReport]]:
    """Train the generator alone; returns the warm-up checkpoint and loss log."""
    run_dir = Path(run_dir) if run_dir is not None else None
    _echo_config(cfg, run_dir)
    dtype = cfg.np_dtype
    gen = build_generator(cfg.gen, cfg.seed + SEED_GEN, dtype=dtype)
    opt = Adam(list(gen.named_parameters()))
    sampler = PairSampler(dataclasses.replace(
        cfg.data, seed=cfg.seed + SEED_PRETRAIN_SAMPLER))
    weights = cfg.pretrain_weights()
    log = _LossLog(run_dir / "pretrain_log.jsonl" if run_dir else None)

    try:
        for step in range(1, cfg.pretrain_steps + 1):
            lr_np, hr_np = sampler.next_batch()
            lr_t = Tensor(lr_np.astype(dtype))
            hr_t = Tensor(hr_np.astype(dtype))
            out = gen(lr_t)
            parts = {"pix_img": L.pixel_loss(out.sr_image, hr_t)}
            if out.sr_gradient is not None:
                parts["pix_gb"] = L.gradient_branch_loss(out.sr_gradient, hr_t)
            total = L.total_generator_loss(parts, weights)
            _check_finite(total.item(), step, "pretrain", (lr_np, hr_np), run_dir)
            gen.zero_grad()
            backward(total)
            if cfg.clip_grad_norm:
                clip_gradients(opt.named_params, cfg.clip_grad_norm)
            lr_value = schedule_lr(cfg.schedule, step - 1)
            opt.step(lr_value)

            report = LossReport(step=step, lr=lr_value,
                                pix_img=parts["pix_img"].item(),
                                pix_gb=parts["pix_gb"].item() if "pix_gb" in parts else 0.0)
            report.total_g = report.weighted_total(weights)
            log.append(report)
    finally:
        log.close()

    ckpt = Checkpoint(step=cfg.pretrain_steps,
                      meta={"stage": "pretrain",
                            "gen_config": cfg.gen.to_dict(),
                            "train_config": cfg.to_dict()},
                      arrays=_gen_arrays(gen))
    if run_dir is not None:
        save_checkpoint(run_dir / "pretrain.ckpt", ckpt.arrays, ckpt.step, ckpt.meta)
    return ckpt, log.reports


# -- stage two: adversarial training ---------------------------------------------


def adversarial_train(cfg: TrainConfig, init: Checkpoint,
                      run_dir=None) -> Iterator[Checkpoint]:
    """Alternating G/D optimization from an init checkpoint; yields checkpoints.

    A checkpoint is yielded every ``checkpoint_interval`` steps and at the
    final step. Passing a mid-run checkpoint (stage adversarial) resumes it.
    """
    run_dir = Path(run_dir) if run_dir is not None else None
    _echo_config(cfg, run_dir)
    dtype = cfg.np_dtype
    weights = cfg.effective_weights()
    use_d_img = weights.gamma_img > 0
    use_d_gm = weights.gamma_gm > 0
    need_pix_gm = weights.beta_gm > 0 or use_d_gm

    gen = build_generator(cfg.gen, cfg.seed + SEED_GEN, dtype=dtype)
    if init.meta.get("gen_config") != cfg.gen.to_dict():
        raise ValueError("checkpoint/config mismatch: generator architecture "
                         f"{init.meta.get('gen_config')} != {cfg.gen.to_dict()}")
    gen.load_param_tree(init.with_prefix("gen"))
    opt_gen = Adam(list(gen.named_parameters()))

    d_img = d_gm = None
    opt_d_img = opt_d_gm = None
    if use_d_img:
        d_img = build_discriminator(cfg.disc_config(cfg.gen.img_channels),
                                    cfg.seed + SEED_DISC_IMG, dtype=dtype)
        opt_d_img = Adam(list(d_img.named_parameters()))
    if use_d_gm:
        d_gm = build_discriminator(cfg.disc_config(cfg.gen.img_channels),
                                   cfg.seed + SEED_DISC_GM, dtype=dtype)
        opt_d_gm = Adam(list(d_gm.named_parameters()))

    sampler = PairSampler(dataclasses.replace(
        cfg.data, seed=cfg.seed + SEED_ADV_SAMPLER))
    extractor = _make_extractor(cfg)

    start_step = 0
    if init.meta.get("stage") == "adversarial":
        start_step = init.step
        if d_img is not None:
            d_img.load_param_tree(init.with_prefix("disc_img"))
            opt_d_img.load_state_arrays(init.with_prefix("opt_disc_img"),
                                        init.meta["opt_steps"]["disc_img"])
        if d_gm is not None:
            d_gm.load_param_tree(init.with_prefix("disc_grad"))
            opt_d_gm.load_state_arrays(init.with_prefix("opt_disc_grad"),
                                       init.meta["opt_steps"]["disc_grad"])
        opt_gen.load_state_arrays(init.with_prefix("opt_gen"),
                                  init.meta["opt_steps"]["gen"])
        sampler.set_state(init.meta["sampler_state"])

    def snapshot(step: int) -> Checkpoint:
        arrays = dict(_gen_arrays(gen))
        arrays.update(_opt_arrays(opt_gen, "opt_gen"))
        opt_steps = {"gen": opt_gen.t}
        if d_img is not None:
            arrays.update({f"disc_img.{n}": p.data.copy()
                           for n, p in d_img.named_parameters()})
            arrays.update(_opt_arrays(opt_d_img, "opt_disc_img"))
            opt_steps["disc_img"] = opt_d_img.t
        if d_gm is not None:
            arrays.update({f"disc_grad.{n}": p.data.copy()
                           for n, p in d_gm.named_parameters()})
            arrays.update(_opt_arrays(opt_d_gm, "opt_disc_grad"))
            opt_steps["disc_grad"] = opt_d_gm.t
        meta = {"stage": "adversarial", "gen_config": cfg.gen.to_dict(),
                "train_config": cfg.to_dict(), "opt_steps": opt_steps,
                "sampler_state": sampler.get_state()}
        ckpt = Checkpoint(step=step, meta=meta, arrays=arrays)
        if run_dir is not None:
            save_checkpoint(run_dir / f"ckpt_{step:07d}.ckpt",
                            arrays, step, meta)
        return ckpt

    log = _LossLog(run_dir / "train_log.jsonl" if run_dir else None)
    try:
        for step in range(start_step + 1, cfg.total_steps + 1):
            lr_np, hr_np = sampler.next_batch()
            lr_t = Tensor(lr_np.astype(dtype))
            hr_t = Tensor(hr_np.astype(dtype))
            out = gen(lr_t)
            sr = out.sr_image

            parts = {"pix_img": L.pixel_loss(sr, hr_t),
                     "perceptual": L.perceptual_loss(sr, hr_t, extractor)}
            dis_img_loss = dis_gm_loss = None
            if d_img is not None:
                real = d_img(hr_t)
                fake_det = d_img(sr.detach())
                dis_img_loss = L.gan_d_loss(real, fake_det, cfg.gan_mode)
                parts["adv_img"] = L.gan_g_loss(real, d_img(sr), cfg.gan_mode)
            if d_gm is not None:
                pix_gm, adv_gm, dis_gm_loss = L.gradient_losses(
                    sr, hr_t, d_gm, cfg.gan_mode)
                parts["pix_gm"] = pix_gm
                parts["adv_gm"] = adv_gm
            elif need_pix_gm:
                parts["pix_gm"] = L.pixel_loss(gradient_map(sr),
                                               gradient_map(hr_t.detach()))
            if out.sr_gradient is not None:
                parts["pix_gb"] = L.gradient_branch_loss(out.sr_gradient, hr_t)

            total = L.total_generator_loss(parts, weights)
            _check_finite(total.item(), step, "adversarial", (lr_np, hr_np), run_dir)
            for loss_t, name in ((dis_img_loss, "dis_img"), (dis_gm_loss, "dis_gm")):
                if loss_t is not None:
                    _check_finite(loss_t.item(), step, name, (lr_np, hr_np), run_dir)

            # all backward passes happen before any parameter moves, so the
            # recorded graphs stay consistent with the forward they came from
            gen.zero_grad()
            backward(total)
            if d_img is not None:
                d_img.zero_grad()  # discard gradients leaked from the G loss
                backward(dis_img_loss)
            if d_gm is not None:
                d_gm.zero_grad()
                backward(dis_gm_loss)

            if cfg.clip_grad_norm:
                clip_gradients(opt_gen.named_params, cfg.clip_grad_norm)
            lr_value = schedule_lr(cfg.schedule, step - 1)
            if opt_d_img is not None:
                opt_d_img.step(lr_value)
            if opt_d_gm is not None:
                opt_d_gm.step(lr_value)
            opt_gen.step(lr_value)

            report = LossReport(
                step=step, lr=lr_value,
                pix_img=parts["pix_img"].item(),
                perceptual=parts["perceptual"].item(),
                adv_img=parts["adv_img"].item() if "adv_img" in parts else 0.0,
                pix_gm=parts["pix_gm"].item() if "pix_gm" in parts else 0.0,
                adv_gm=parts["adv_gm"].item() if "adv_gm" in parts else 0.0,
                pix_gb=parts["pix_gb"].item() if "pix_gb" in parts else 0.0,
                dis_img=dis_img_loss.item() if dis_img_loss is not None else 0.0,
                dis_gm=dis_gm_loss.item() if dis_gm_loss is not None else 0.0)
            report.total_g = report.weighted_total(weights)
            log.append(report)

            if step % cfg.checkpoint_interval == 0 or step == cfg.total_steps:
                yield snapshot(step)
    finally:
        log.close()
