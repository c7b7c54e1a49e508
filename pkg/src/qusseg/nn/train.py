"""Mini-batch training with Dice loss, plateau LR drops and early stopping."""
from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError
from ..metrics import dice, threshold
from . import layers as L
from .optim import TrainConfig, adam_step
from .unet import AttentionUNet, NetworkConfig

log = logging.getLogger(__name__)


@dataclass
class PlateauSchedule:
    """Learning-rate drops and stopping driven by a validation score (higher is better).

    Improvement is checked every ``patience`` epochs; a check that finds no
    improvement since the previous ``patience`` epochs multiplies the rate by
    ``factor``. Training stops once ``stop_after`` epochs pass without
    improvement. Epoch 0 is the score of the untrained model.
    """
    lr: float
    factor: float = 0.5
    patience: int = 4
    stop_after: int = 20
    best: float = -np.inf
    best_epoch: int = 0
    drops: list = field(default_factory=list)

    def update(self, epoch, score):
        """Record ``score`` for ``epoch``; returns ``(improved, stop)``."""
        improved = score > self.best
        if improved:
            self.best, self.best_epoch = score, epoch
        if epoch - self.best_epoch >= self.stop_after:
            return improved, True
        if epoch > 0 and epoch % self.patience == 0 and epoch - self.best_epoch >= self.patience:
            self.lr *= self.factor
            self.drops.append(epoch)
        return improved, False


def _stack(pairs, dtype):
    images = np.stack([np.asarray(p[0], dtype=dtype) for p in pairs])[:, None]
    masks = np.stack([np.asarray(p[1], dtype=dtype) for p in pairs])[:, None]
    return images, masks


def predict(net: AttentionUNet, images, batch_size=16):
    """Sigmoid probabilities for ``(N, H, W)`` or ``(N, 1, H, W)`` inputs, inference mode."""
    x = np.asarray(images)
    if x.ndim == 3:
        x = x[:, None]
    dtype = next(iter(net.params.values())).dtype
    outs = [net.forward(x[i:i + batch_size].astype(dtype), training=False)
            for i in range(0, len(x), batch_size)]
    return np.concatenate(outs)[:, 0]


def validation_dice(net, images, masks, batch_size=16):
    probs = predict(net, images, batch_size)
    return float(np.mean([dice(threshold(p), m[0] if m.ndim == 3 else m) for p, m in zip(probs, masks)]))


def train(train_set, val_set, net_cfg: NetworkConfig, cfg: TrainConfig, net: AttentionUNet | None = None,
          dtype=np.float32):
    """Train an attention U-Net and return ``(best_net, history)``.

    ``train_set`` and ``val_set`` are sequences of ``(image, mask)`` rasters
    sized ``net_cfg.input_hw``. ``history`` holds one dict per epoch with
    ``epoch, train_loss, val_dice, lr`` (the rate used during that epoch).
    The returned network carries the parameters with the best validation
    Dice, including the untrained initial state.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ParameterError("training and validation sets must be non-empty")
    x_train, y_train = _stack(train_set, dtype)
    x_val, y_val = _stack(val_set, dtype)
    if net is None:
        net = AttentionUNet(net_cfg, rng=np.random.default_rng(cfg.rng_seed), dtype=dtype)
    rng = np.random.default_rng([cfg.rng_seed, 1])
    sched = PlateauSchedule(cfg.lr, cfg.lr_drop_factor, cfg.lr_patience_epochs, cfg.early_stop_epochs)
    sched.update(0, validation_dice(net, x_val, y_val, cfg.batch_size))
    best = (copy.deepcopy(net.params), copy.deepcopy(net.buffers))
    frozen_buffers = {k: v.copy() for k, v in net.buffers.items() if cfg.is_frozen(k)}
    adam_state = {}
    t = 0
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        lr = sched.lr
        order = rng.permutation(len(x_train))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            pred = net.forward(x_train[idx], training=True)
            loss, cache = L.dice_loss_forward(pred, y_train[idx])
            grads = net.backward(L.dice_loss_backward(cache).astype(dtype))
            t += 1
            adam_step(net.params, grads, adam_state, t, cfg, lr=lr)
            net.buffers.update({k: v.copy() for k, v in frozen_buffers.items()})
            losses.append(loss)
        score = validation_dice(net, x_val, y_val, cfg.batch_size)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_dice": score, "lr": lr})
        improved, stop = sched.update(epoch, score)
        log.info("epoch %d loss %.4f val dice %.4f lr %.3g", epoch, history[-1]["train_loss"], score, lr)
        if improved:
            best = (copy.deepcopy(net.params), copy.deepcopy(net.buffers))
        if stop:
            break
    best_net = AttentionUNet(net_cfg, best[0], best[1])
    return best_net, history


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_dice", "lr"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_dice"]), repr(row["lr"])])
