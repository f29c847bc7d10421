"""Training configuration and its key=value file format."""

import dataclasses
from dataclasses import dataclass

from .backbone import BackboneConfig
from .data import SynthSpec
from .errors import ConfigInvalid

BRANCHES = ("global", "self", "mutual")


@dataclass
class TrainConfig:
    # dims
    widths: tuple = (16, 32, 64)
    strides: tuple = (2, 2, 2)
    c_o: int = 64
    c_self: int = 32
    c_m: int = 16
    squeeze: int = 4
    # losses
    margin: float = 0.3
    smoothing: float = 0.1
    # schedule
    base_lr: float = 3.5e-3
    lr_decay: float = 0.1
    decay_epochs: tuple = (10, 20)
    epochs: int = 30
    steps_per_epoch: int = 0  # 0: len(train set) // (P * K)
    # batch and augmentation
    P: int = 4
    K: int = 4
    pad: int = 2
    flip_prob: float = 0.5
    # branches and evaluation
    branches: tuple = BRANCHES
    fusion_weights: tuple = (1.0, 1.0, 1.0)
    train_split: str = "gallery"
    seed: int = 0
    # data: a DYRD path, or the synthetic spec below when empty
    dataset: str = ""
    num_ids: int = 8
    imgs_per_id: int = 20
    num_cams: int = 3
    height: int = 32
    width: int = 16
    noise: float = 0.15
    data_seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(v) for v in self.widths)
        self.strides = tuple(int(v) for v in self.strides)
        self.decay_epochs = tuple(int(v) for v in self.decay_epochs)
        self.fusion_weights = tuple(float(v) for v in self.fusion_weights)
        self.branches = tuple(b for b in BRANCHES if b in self.branches)

    def validate(self):
        if not self.branches:
            raise ConfigInvalid("at least one branch must be enabled")
        if self.K < 2:
            raise ConfigInvalid("K must be >= 2: triplet mining needs a positive per anchor")
        if self.P < 2:
            raise ConfigInvalid("P must be >= 2: triplet mining needs a negative per anchor")
        de = self.decay_epochs
        if any(b <= a for a, b in zip(de, de[1:])) or any(e >= self.epochs or e < 0 for e in de):
            raise ConfigInvalid("decay epochs must be strictly increasing and below the epoch count")
        if self.widths[-1] != self.c_o:
            raise ConfigInvalid(f"final backbone width {self.widths[-1]} != c_o {self.c_o}")
        if self.c_o % self.squeeze:
            raise ConfigInvalid(f"squeeze {self.squeeze} must divide c_o {self.c_o}")
        if len(self.fusion_weights) != 3 or any(w < 0 for w in self.fusion_weights):
            raise ConfigInvalid("fusion_weights needs three nonnegative values")
        if self.train_split not in ("gallery", "all"):
            raise ConfigInvalid("train_split must be 'gallery' or 'all'")
        if self.epochs < 1 or self.base_lr <= 0:
            raise ConfigInvalid("epochs and base_lr must be positive")
        try:
            BackboneConfig(self.widths, self.strides, (3, self.height, self.width))
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from exc
        return self

    def backbone_config(self, image_shape=None):
        return BackboneConfig(self.widths, self.strides, image_shape or (3, self.height, self.width))

    def synth_spec(self):
        return SynthSpec(self.num_ids, self.imgs_per_id, self.num_cams, self.height, self.width,
                         self.noise, self.data_seed)

    def lr_at(self, epoch):
        return self.base_lr * self.lr_decay ** sum(1 for e in self.decay_epochs if epoch >= e)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        defaults = cls()
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigInvalid(f"line {lineno}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in fields:
                raise ConfigInvalid(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(getattr(defaults, key), val, key)
        return cls(**values)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def _coerce(default, text, key):
    if key == "branches":
        return parse_branches(text)
    try:
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            conv = float if default and isinstance(default[0], float) else int
            return tuple(conv(t) for t in items)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigInvalid(f"bad value for {key}: {text!r}") from exc


def parse_branches(text):
    items = tuple(t.strip() for t in text.split(",") if t.strip())
    unknown = set(items) - set(BRANCHES)
    if unknown:
        raise ConfigInvalid(f"unknown branch(es) {sorted(unknown)}")
    return items
