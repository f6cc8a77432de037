"""Deep-supervision loss, AdamW, the halving schedule, and the training loop.

The loop is deterministic given (seed, config, dataset): shuffling and
augmentation draw from one generator seeded by the config, and every numeric
step is pure numpy.
"""

import dataclasses
import json
import os

import numpy as np

from . import tensor as T
from .blocks import save_model
from .config import AugmentConfig, TrainConfig
from .data import augment
from .errors import NumericsError, ShapeError
from .metrics import dice_iou

CHECKPOINT_NAME = "model_best.ckpt"
LOG_NAME = "train_log.jsonl"


def seg_loss(maps, target, head_weights=None):
    """Per-map binary cross-entropy plus soft dice, weighted sum over maps.

    The dice term per image is 1 - (2<p, g> + 1) / (<p, 1> + <g, 1> + 1)
    with p = sigmoid(logits), averaged over the batch; the +1 smoothing
    keeps empty masks well behaved.
    """
    if not maps:
        raise ShapeError("seg_loss needs at least one logit map")
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 3:
        target = target[:, None]
    weights = tuple(head_weights) if head_weights is not None else (1.0,) * len(maps)
    if len(weights) < len(maps):
        raise ShapeError(f"{len(maps)} maps but only {len(weights)} head weights")
    gt = T.as_tensor(target)
    n_pix = float(target.shape[2] * target.shape[3])
    total = None
    for logits, weight in zip(maps, weights):
        if logits.shape != target.shape:
            raise ShapeError(f"logit map shape {logits.shape} does not match target {target.shape}")
        bce = T.bce_with_logits_mean(logits, gt)
        probs = T.sigmoid(logits)
        inter = T.scale(T.reduce(T.mul(probs, gt), "mean", "spatial"), n_pix)
        p_sum = T.scale(T.reduce(probs, "mean", "spatial"), n_pix)
        g_sum = T.scale(T.reduce(gt, "mean", "spatial"), n_pix)
        ratio = T.div(T.add_const(T.scale(inter, 2.0), 1.0),
                      T.add_const(T.add(p_sum, g_sum), 1.0))
        overlap = T.mean_all(ratio)
        term = T.add(bce, T.add_const(T.scale(overlap, -1.0), 1.0))
        total = T.scale(term, weight) if total is None else T.add(total, T.scale(term, weight))
    return total


def lr_at(epoch: int, lr0: float = 1e-4, half_period: int = 50) -> float:
    """Initial rate halved every `half_period` epochs."""
    return lr0 * 0.5 ** (epoch // half_period)


@dataclasses.dataclass
class OptimState:
    """AdamW accumulators, one slot per parameter name."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2


def optim_state_for(params: dict, weight_decay: float = 1e-2) -> OptimState:
    zeros = {name: np.zeros_like(p.data) for name, p in params.items()}
    return OptimState(m=zeros, v={k: v.copy() for k, v in zeros.items()}, weight_decay=weight_decay)


def adamw_step(params: dict, grads: dict, state: OptimState, lr: float) -> None:
    """Decoupled weight decay, then the bias-corrected Adam update, in place."""
    state.step += 1
    b1c = 1.0 - state.beta1 ** state.step
    b2c = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            raise ShapeError(f"missing gradient for parameter {name}")
        if grad.shape != param.data.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match parameter {name} {param.data.shape}")
        if state.weight_decay:
            param.data *= 1.0 - lr * state.weight_decay
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * grad
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * grad * grad
        param.data -= lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if max_norm is not None and norm > max_norm > 0:
        factor = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * factor
    return norm


def predict_probs(model, images: np.ndarray) -> np.ndarray:
    """Sigmoid of the final logit map, no tape recorded."""
    maps = model(T.as_tensor(np.asarray(images, dtype=np.float64)), train=False)
    logits = maps[0].data
    return 1.0 / (1.0 + np.exp(-logits))


def evaluate_mdice(model, samples, batch_size: int = 8, threshold: float = 0.5) -> float:
    scores = []
    for start in range(0, len(samples), batch_size):
        batch = samples[start:start + batch_size]
        probs = predict_probs(model, np.stack([s.image for s in batch]))
        for sample, prob in zip(batch, probs):
            dice, _ = dice_iou(prob[0], sample.mask, threshold)
            scores.append(dice)
    return float(np.mean(scores))


def train_loop(model, train_samples, val_samples, cfg: TrainConfig,
               augment_cfg: AugmentConfig = None, out_dir: str = None,
               on_epoch=None) -> dict:
    """Shuffled mini-batch AdamW training with deep supervision.

    Logs one JSONL record per epoch and keeps the checkpoint with the best
    validation mDice. Returns the history plus artifact paths.
    """
    cfg.validate()
    if not train_samples:
        raise ShapeError("train split is empty")
    params = model.param_dict()
    state = optim_state_for(params, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    log_path = ckpt_path = None
    log_handle = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, LOG_NAME)
        ckpt_path = os.path.join(out_dir, CHECKPOINT_NAME)
        log_handle = open(log_path, "w")
    history = []
    best_val = -1.0
    steps = 0
    try:
        for epoch in range(cfg.epochs):
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
            lr = lr_at(epoch, cfg.lr, cfg.lr_half_period)
            order = rng.permutation(len(train_samples))
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                if cfg.max_steps is not None and steps >= cfg.max_steps:
                    break
                batch = [train_samples[i] for i in order[start:start + cfg.batch_size]]
                if augment_cfg is not None:
                    batch = [augment(s, augment_cfg, rng) for s in batch]
                images = np.stack([s.image for s in batch])
                masks = np.stack([s.mask for s in batch])[:, None]
                with T.record() as tape:
                    maps = model(T.as_tensor(images), train=True)
                    loss = seg_loss(maps, masks, cfg.head_weights[:len(maps)])
                    value = loss.item()
                    if not np.isfinite(value):
                        culprit = tape.first_nonfinite_op()
                        raise NumericsError(
                            f"non-finite loss at step {steps}; first non-finite op: {culprit}"
                        )
                    grads = tape.backward(loss, params.values())
                clip_gradients(grads, cfg.grad_clip)
                adamw_step(params, grads, state, lr)
                losses.append(value)
                steps += 1
            if not losses:
                break
            record = {
                "epoch": epoch,
                "lr": lr,
                "mean_loss": float(np.mean(losses)),
                "train_mdice": evaluate_mdice(model, train_samples, cfg.batch_size),
                "val_mdice": evaluate_mdice(model, val_samples, cfg.batch_size) if val_samples else None,
            }
            history.append(record)
            if log_handle is not None:
                log_handle.write(json.dumps(record) + "\n")
                log_handle.flush()
            if on_epoch is not None:
                on_epoch(record)
            selector = record["val_mdice"] if record["val_mdice"] is not None else record["train_mdice"]
            if selector > best_val:
                best_val = selector
                if ckpt_path is not None:
                    save_model(model, ckpt_path, {"epoch": epoch, "val_mdice": selector})
    finally:
        if log_handle is not None:
            log_handle.close()
    return {
        "history": history,
        "steps": steps,
        "best_val_mdice": best_val,
        "checkpoint_path": ckpt_path,
        "log_path": log_path,
    }
