"""Scikit-learn style facade over model construction, training, and inference.

CrossScanSegmenter(...).fit(X, y) trains on (n, 3, S, S) images and (n, S, S)
binary masks; predict returns binary masks, predict_proba probability maps.
Hyperparameters mirror the config dataclasses one-to-one so get_params /
set_params / clone behave as usual.
"""

import os
import tempfile

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .blocks import CrossScanNet, load_model
from .config import AugmentConfig, ModelConfig, TrainConfig
from .data import Sample
from .errors import ShapeError
from .metrics import dice_iou
from .train import predict_probs, train_loop
from .validation import validate_image_batch, validate_mask_batch


class CrossScanSegmenter(BaseEstimator):
    """Binary lesion segmenter with a fit/predict interface."""

    def __init__(self, input_size=64, channels=(8, 16, 32, 64), state_size=4,
                 shuffle_groups=2, attention_reduction=4, use_cmd=True,
                 use_msa=True, use_fd=True, attention="gab", epochs=10,
                 batch_size=8, lr=5e-3, lr_half_period=4, weight_decay=1e-2,
                 grad_clip=5.0, max_steps=None, augment=True,
                 validation_fraction=0.2, threshold=0.5, seed=0):
        self.input_size = input_size
        self.channels = channels
        self.state_size = state_size
        self.shuffle_groups = shuffle_groups
        self.attention_reduction = attention_reduction
        self.use_cmd = use_cmd
        self.use_msa = use_msa
        self.use_fd = use_fd
        self.attention = attention
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_half_period = lr_half_period
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.max_steps = max_steps
        self.augment = augment
        self.validation_fraction = validation_fraction
        self.threshold = threshold
        self.seed = seed

    def _configs(self):
        model = ModelConfig(
            input_size=self.input_size, channels=tuple(self.channels),
            state_size=self.state_size, shuffle_groups=self.shuffle_groups,
            attention_reduction=self.attention_reduction, use_cmd=self.use_cmd,
            use_msa=self.use_msa, use_fd=self.use_fd, attention=self.attention,
        ).validate()
        train = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            lr_half_period=self.lr_half_period, weight_decay=self.weight_decay,
            grad_clip=self.grad_clip, seed=self.seed, max_steps=self.max_steps,
        ).validate()
        return model, train

    def fit(self, X, y):
        """Train on images X (n, 3, S, S) and binary masks y (n, S, S)."""
        model_cfg, train_cfg = self._configs()
        X = validate_image_batch(X, model_cfg.input_size)
        y = validate_mask_batch(y, X.shape[0], X.shape[2:])
        samples = [Sample(image=img, mask=msk, id=f"fit_{i:04d}")
                   for i, (img, msk) in enumerate(zip(X, y))]
        if not 0 <= self.validation_fraction < 1:
            raise ShapeError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction}")
        n_val = int(round(len(samples) * self.validation_fraction))
        n_val = min(n_val, len(samples) - 1)
        train_split = samples[:len(samples) - n_val]
        val_split = samples[len(samples) - n_val:]
        aug = AugmentConfig(flip_prob=0.5, rotation_degrees=0.0,
                            brightness=0.1, contrast=0.1) if self.augment else None
        model = CrossScanNet(model_cfg, seed=self.seed)
        with tempfile.TemporaryDirectory() as scratch:
            out = train_loop(model, train_split, val_split, train_cfg, aug, out_dir=scratch)
            ckpt = out["checkpoint_path"]
            if ckpt and os.path.exists(ckpt):
                model, _ = load_model(ckpt)
        self.model_ = model
        self.history_ = out["history"]
        self.n_features_in_ = 3 * model_cfg.input_size ** 2
        return self

    def predict_proba(self, X):
        """Per-pixel foreground probabilities, shape (n, H, W)."""
        check_is_fitted(self, "model_")
        X = validate_image_batch(X, self.input_size)
        chunks = [predict_probs(self.model_, X[i:i + self.batch_size])[:, 0]
                  for i in range(0, X.shape[0], self.batch_size)]
        return np.concatenate(chunks, axis=0)

    def predict(self, X):
        """Binary masks at the configured threshold, shape (n, H, W)."""
        return (self.predict_proba(X) >= self.threshold).astype(np.float64)

    def score(self, X, y):
        """Mean per-image dice of predictions against binary masks y."""
        probs = self.predict_proba(X)
        y = validate_mask_batch(y, probs.shape[0], probs.shape[1:])
        return float(np.mean([dice_iou(p, g, self.threshold)[0] for p, g in zip(probs, y)]))
