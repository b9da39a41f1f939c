"""Mini-batch Adam training with seeded, reproducible shuffling."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from . import losses as losses_mod
from . import model as model_mod
from .model import ModelConfig, ModelParameters, PARAM_NAMES
from .autodiff import Tape
from .losses import LossConfig
from .rng import Xoshiro256StarStar


@dataclass
class TrainConfig:
    lr: float = 0.001
    epochs: int = 240
    batch_size: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr < 0.0:
            raise ValueError("lr must be >= 0")


class NonFiniteLossError(RuntimeError):
    """Raised when a video produces a NaN/Inf loss; names the video."""


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParameters) -> "AdamState":
        return cls(
            m={n: np.zeros_like(a) for n, a in params.as_dict().items()},
            v={n: np.zeros_like(a) for n, a in params.as_dict().items()},
        )


def adam_step(
    params: ModelParameters,
    grads: Dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> None:
    """One bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    for name in PARAM_NAMES:
        g = grads[name]
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = state.m[name] / (1.0 - cfg.beta1**t)
        v_hat = state.v[name] / (1.0 - cfg.beta2**t)
        getattr(params, name)[...] -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def video_loss(video, params: ModelParameters, model_cfg: ModelConfig, loss_cfg: LossConfig):
    """Forward one video and return (loss Var, bound params, term values)."""
    tape = Tape()
    bound = model_mod.bind_parameters(params, tape)
    out = model_mod.forward(video.features, bound, model_cfg)
    target = losses_mod.one_hot(video.activity, model_cfg.n_activities)
    lp = losses_mod.activity_loss(out.proto_probs, target)
    lg = losses_mod.activity_loss(out.visual_probs, target)
    ls = losses_mod.tmse_loss(out.affinity, loss_cfg.truncation)
    loss = losses_mod.total_loss(lp, lg, ls, loss_cfg)
    terms = (float(lp.value), float(lg.value), float(ls.value))
    return tape, loss, bound, terms


@dataclass
class TrainResult:
    params: ModelParameters
    trace: list  # one dict per epoch: epoch, loss, loss_p, loss_g, loss_smooth
    rng_digest: str


def train(
    corpus: Sequence,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    init: ModelParameters | None = None,
) -> TrainResult:
    """Optimize the model on `corpus` (FeatureSequence-like objects).

    Videos are shuffled every epoch with a seeded Fisher-Yates, grouped
    into batches, forwarded individually (lengths vary), and the batch's
    mean gradients feed one Adam step.
    """
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    for video in corpus:
        if not 1 <= video.activity <= model_cfg.n_activities:
            raise ValueError(
                f"video {video.video_id!r} activity {video.activity} outside "
                f"[1, {model_cfg.n_activities}]"
            )

    params = init.copy() if init is not None else model_mod.init_parameters(
        model_cfg, train_cfg.seed
    )
    params.validate(model_cfg)
    state = AdamState.zeros_like(params)
    shuffler = Xoshiro256StarStar(train_cfg.seed)
    order = list(range(len(corpus)))
    trace = []

    for epoch in range(train_cfg.epochs):
        shuffler.shuffle(order)
        epoch_terms = np.zeros(4)
        for start in range(0, len(order), train_cfg.batch_size):
            batch = order[start : start + train_cfg.batch_size]
            grads = {n: np.zeros_like(a) for n, a in params.as_dict().items()}
            for idx in batch:
                video = corpus[idx]
                tape, loss, bound, terms = video_loss(video, params, model_cfg, loss_cfg)
                if not np.isfinite(loss.value):
                    raise NonFiniteLossError(
                        f"non-finite loss on video {video.video_id!r} at epoch {epoch}"
                    )
                tape.backward(loss)
                for name in PARAM_NAMES:
                    grads[name] += bound[name].grad
                epoch_terms += (float(loss.value), *terms)
            for name in PARAM_NAMES:
                grads[name] /= len(batch)
            adam_step(params, grads, state, train_cfg)
        epoch_terms /= len(order)
        trace.append(
            {
                "epoch": epoch,
                "loss": epoch_terms[0],
                "loss_p": epoch_terms[1],
                "loss_g": epoch_terms[2],
                "loss_smooth": epoch_terms[3],
            }
        )

    return TrainResult(params=params, trace=trace, rng_digest=shuffler.state_digest())
