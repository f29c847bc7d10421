"""Training loop: PK batches, augmentation, summed branch losses and Adam."""

import logging

import numpy as np

from .autodiff.tensor import Tape
from .data import augment_train, generate_dataset, pk_sample, read_dataset, split_query_gallery
from .model import LOSS_COLUMNS, DynReIDModel

log = logging.getLogger(__name__)


class Adam:
    def __init__(self, named_params, lr=3.5e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(t.data) for _, t in self.params]
        self.v = [np.zeros_like(t.data) for _, t in self.params]

    def named_state(self):
        for (name, _), m, v in zip(self.params, self.m, self.v):
            yield name, (m, v)

    def zero_grad(self):
        for _, t in self.params:
            t.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        c1 = 1 - self.b1 ** self.step_count
        c2 = 1 - self.b2 ** self.step_count
        for (_, t), m, v in zip(self.params, self.m, self.v):
            if t.grad is None:
                continue
            g = t.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def load_samples(cfg):
    return read_dataset(cfg.dataset) if cfg.dataset else generate_dataset(cfg.synth_spec())


def training_split(cfg, samples):
    if cfg.train_split == "all":
        return list(samples)
    _, gallery = split_query_gallery(samples)
    return gallery


def train(cfg, samples, on_epoch=None):
    """Train from scratch; returns ``(model, optimizer, history)``.

    ``history`` holds one dict per epoch with the mean of each loss
    component over the epoch's steps and the learning rate used.
    """
    cfg.validate()
    train_set = training_split(cfg, samples)
    ids = sorted({s.id for s in train_set})
    num_ids = max(ids) + 1
    image_shape = train_set[0].image.shape
    model = DynReIDModel(cfg, num_ids, image_shape)
    opt = Adam(model.named_parameters(), lr=cfg.base_lr)
    steps = cfg.steps_per_epoch or max(1, len(train_set) // (cfg.P * cfg.K))
    history = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        sums = {}
        for step in range(steps):
            rng = np.random.default_rng([cfg.seed, epoch, step])
            batch = pk_sample(train_set, cfg.P, cfg.K, rng)
            images = np.stack([augment_train(s.image, rng, cfg.pad, cfg.flip_prob) for s in batch]).astype(np.float64)
            labels = np.array([s.id for s in batch])
            with Tape() as tape:
                total, parts = model.losses(images, labels)
            opt.zero_grad()
            tape.backward(total)
            opt.step(lr)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + float(v.data)
            sums["total"] = sums.get("total", 0.0) + float(total.data)
        row = {"epoch": epoch, "lr": lr}
        row.update({k: v / steps for k, v in sums.items()})
        history.append(row)
        log.info("epoch %d lr %.2e loss %.4f", epoch, lr, row["total"])
        if on_epoch is not None:
            on_epoch(row)
    return model, opt, history


def history_csv(history):
    cols = ("epoch", "total", *LOSS_COLUMNS, "lr")
    lines = [",".join(cols)]
    for row in history:
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append("" if v is None else (str(v) if c == "epoch" else repr(float(v))))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
