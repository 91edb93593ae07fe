"""Composite-loss training, deterministic prediction and gradient checking."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch.nn import functional as F

from ..dataset import TrialSet
from ..errors import ConfigError, ValidationError, VisemeDecodeError
from .model import ModelConfig, VisemeDecoder
from .schedule import DiffusionSchedule, forward_diffuse, make_schedule

log = logging.getLogger(__name__)


class TrainingDiverged(VisemeDecodeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    T: int = 100
    beta_lo: float = 1e-4
    beta_hi: float = 0.02
    lr: float = 0.01
    batch_size: int = 64
    epochs: int = 10
    w_ddpm: float = 1.0
    w_ae: float = 1.0
    w_cls: float = 1.0
    seed: int = 0
    precision: str = "float32"
    optimizer: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    arch: dict = field(default_factory=dict)

    def __post_init__(self):
        # JSON turns tuples into lists; keep one canonical form so round trips compare equal
        arch = {k: tuple(v) if isinstance(v, list) else v for k, v in dict(self.arch).items()}
        object.__setattr__(self, "arch", arch)
        for name in ("lr", "batch_size", "epochs"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("w_ddpm", "w_ae", "w_cls", "momentum", "weight_decay", "clip_norm"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        make_schedule(self.T, self.beta_lo, self.beta_hi)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def dtype(self):
        return torch.float64 if self.precision == "float64" else torch.float32

    def schedule(self) -> DiffusionSchedule:
        return make_schedule(self.T, self.beta_lo, self.beta_hi)

    def model_config(self, in_channels: int, length: int) -> ModelConfig:
        try:
            return ModelConfig(in_channels=in_channels, length=length, **self.arch)
        except TypeError as exc:
            raise ConfigError(f"bad architecture options: {exc}") from None


def apply_model(model: VisemeDecoder, x0, t, eps, sched: DiffusionSchedule):
    """(ddpm_out, recon, latent, logits) for clean trials ``x0`` noised to step ``t``."""
    x0 = torch.as_tensor(x0)
    eps = torch.as_tensor(eps, dtype=x0.dtype)
    t = torch.as_tensor(t, dtype=torch.long)
    if t.dim() == 0:
        t = t.expand(x0.shape[0])
    x_t = forward_diffuse(x0, t, eps, sched)
    return model(x0, x_t, t)


def sample_noise(x0: torch.Tensor, sched: DiffusionSchedule, gen: torch.Generator):
    t = torch.randint(1, sched.T + 1, (x0.shape[0],), generator=gen)
    eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
    return t, eps


def loss_terms(model, x0, labels, t, eps, sched, cfg: TrainConfig):
    ddpm_out, recon, _, logits = apply_model(model, x0, t, eps, sched)
    parts = {
        "ddpm": F.mse_loss(ddpm_out, x0),
        "ae": F.mse_loss(recon, x0),
        "cls": F.cross_entropy(logits, torch.as_tensor(labels, dtype=torch.long)),
    }
    total = cfg.w_ddpm * parts["ddpm"] + cfg.w_ae * parts["ae"] + cfg.w_cls * parts["cls"]
    return total, parts


def loss(model, batch, sched, cfg: TrainConfig, gen: torch.Generator | None = None):
    """Weighted sum of denoiser MSE, autoencoder MSE and cross-entropy.

    ``batch`` is ``(x0, labels)``; steps and noise come from ``gen``.
    """
    x0, labels = batch
    x0 = torch.as_tensor(x0, dtype=next(model.parameters()).dtype)
    if gen is None:
        gen = torch.Generator().manual_seed(cfg.seed)
    t, eps = sample_noise(x0, sched, gen)
    return loss_terms(model, x0, labels, t, eps, sched, cfg)


def build_model(cfg: TrainConfig, in_channels: int, length: int) -> VisemeDecoder:
    torch.manual_seed(cfg.seed)
    return VisemeDecoder(cfg.model_config(in_channels, length)).to(cfg.dtype)


def _optimizer(model, cfg):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    return torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum,
                           weight_decay=cfg.weight_decay)


def train_arrays(x, y, cfg: TrainConfig, model: VisemeDecoder | None = None, progress=None):
    """Train on arrays ``x`` (n, channels, L) and labels ``y``.

    Returns the model and a history dict with per-step totals and per-epoch
    component means. ``progress(epoch, stats)`` is called after every epoch.
    """
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValidationError("cannot train on an empty dataset")
    if model is None:
        model = build_model(cfg, x.shape[1], x.shape[2])
    sched = cfg.schedule()
    opt = _optimizer(model, cfg)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    order_rng = np.random.default_rng(cfg.seed + 2)
    xt = torch.tensor(x, dtype=cfg.dtype)
    yt = torch.as_tensor(y)
    history = {"step_total": [], "epochs": []}
    model.train()
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(x))
        sums = {"total": 0.0, "ddpm": 0.0, "ae": 0.0, "cls": 0.0}
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = torch.as_tensor(order[start:start + cfg.batch_size])
            xb, yb = xt[idx], yt[idx]
            t, eps = sample_noise(xb, sched, gen)
            total, parts = loss_terms(model, xb, yb, t, eps, sched, cfg)
            if not torch.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {len(history['step_total'])}: "
                    + ", ".join(f"{k}={v.item():.4g}" for k, v in parts.items())
                )
            opt.zero_grad(set_to_none=True)
            total.backward()
            if cfg.clip_norm:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
            opt.step()
            n = len(idx)
            history["step_total"].append(total.item())
            sums["total"] += total.item() * n
            for k, v in parts.items():
                sums[k] += v.item() * n
        stats = {k: v / len(x) for k, v in sums.items()}
        stats["epoch"] = epoch
        history["epochs"].append(stats)
        log.info("epoch %d: %s", epoch, stats)
        if progress is not None:
            progress(epoch, stats)
    model.eval()
    return model, history


def train(dataset: TrialSet, cfg: TrainConfig, progress=None):
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    return train_arrays(dataset.data, dataset.labels, cfg, progress=progress)


@torch.no_grad()
def predict(model: VisemeDecoder, trials, batch_size: int = 256) -> np.ndarray:
    """Logits for each trial, evaluated at the least-noised step (t=1, eps=0).

    The classifier branch reads only the clean input, so this equals the
    logits of a full forward pass at that step.
    """
    model.eval()
    x = np.asarray(trials)
    if x.ndim == 2:
        x = x[None]
    dtype = next(model.parameters()).dtype
    out = []
    for start in range(0, len(x), batch_size):
        xb = torch.tensor(x[start:start + batch_size], dtype=dtype)
        logits, _ = model.classify(xb)
        out.append(logits.double().numpy())
    if not out:
        return np.zeros((0, model.cfg.n_classes))
    return np.concatenate(out)


def top_k(logits, k: int) -> np.ndarray:
    """Class ids of the k largest logits per row; ties go to the lower id."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if not 1 <= k <= logits.shape[1]:
        raise ValidationError(f"k must be in 1..{logits.shape[1]}, got {k}")
    return np.argsort(-logits, axis=1, kind="stable")[:, :k]


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# --- gradient checking --------------------------------------------------------

def _rel_err(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def check_gradients(fn, params, fraction=0.01, h=1e-5, min_count=20, seed=0, floor=1e-8) -> dict:
    """Compare autograd against central differences of scalar ``fn()``.

    ``params`` are float64 leaf tensors with ``requires_grad``; a random
    ``fraction`` of their entries (at least ``min_count``) is probed.
    """
    params = list(params)
    for p in params:
        if p.dtype != torch.float64:
            raise ValidationError("gradient checks need float64 tensors")
        p.grad = None
    value = fn()
    grads = torch.autograd.grad(value, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    count = min(total, max(min_count, int(math.ceil(fraction * total))))
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(total, size=count, replace=False))
    offsets = np.cumsum([0] + sizes)
    worst, errors = 0.0, []
    with torch.no_grad():
        for flat in picks:
            which = int(np.searchsorted(offsets, flat, side="right") - 1)
            p = params[which].view(-1)
            j = int(flat - offsets[which])
            orig = p[j].item()
            p[j] = orig + h
            up = fn().item()
            p[j] = orig - h
            down = fn().item()
            p[j] = orig
            numeric = (up - down) / (2 * h)
            analytic = grads[which].reshape(-1)[j].item()
            err = _rel_err(analytic, numeric, floor)
            errors.append(err)
            worst = max(worst, err)
    return {"max_rel_err": worst, "n_checked": count, "n_params": total, "errors": errors}


def grad_check(model: VisemeDecoder, batch, sched: DiffusionSchedule | None = None,
               cfg: TrainConfig | None = None, fraction=0.01, h=1e-5, seed=0) -> dict:
    """Autograd vs central differences for the full composite loss (float64).

    Steps and noise are drawn once and frozen so the loss is a deterministic
    function of the parameters.
    """
    cfg = cfg or TrainConfig(seed=seed)
    sched = sched or cfg.schedule()
    model = model.double()
    x0 = torch.as_tensor(np.asarray(batch[0]), dtype=torch.float64)
    labels = torch.as_tensor(np.asarray(batch[1]), dtype=torch.long)
    gen = torch.Generator().manual_seed(seed)
    t, eps = sample_noise(x0, sched, gen)

    def fn():
        return loss_terms(model, x0, labels, t, eps, sched, cfg)[0]

    params = [p for p in model.parameters() if p.requires_grad]
    return check_gradients(fn, params, fraction=fraction, h=h, seed=seed)
