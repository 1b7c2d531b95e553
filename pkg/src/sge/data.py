"""Synthetic localized-pattern classification data.

Each single-channel image holds one class-defining glyph at a random
position, a few distractors (fragments of randomly chosen class glyphs with
part of their ink removed) and i.i.d. Gaussian noise. The class evidence is confined to a
small region while the rest of the image is clutter, which is the regime
where spatially selective gating should pay off.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

_GLYPHS = {
    "plus": ["..#..",
             "..#..",
             "#####",
             "..#..",
             "..#.."],
    "cross": ["#...#",
              ".#.#.",
              "..#..",
              ".#.#.",
              "#...#"],
    "ring": ["#####",
             "#...#",
             "#...#",
             "#...#",
             "#####"],
    "bars": ["#####",
             ".....",
             "#####",
             ".....",
             "#####"],
    "tee": ["#####",
            "..#..",
            "..#..",
            "..#..",
            "..#.."],
    "ell": ["#....",
            "#....",
            "#....",
            "#....",
            "#####"],
}


def glyph(name) -> np.ndarray:
    return np.array([[ch == "#" for ch in row] for row in _GLYPHS[name]], dtype=np.float64)


def class_templates(num_classes):
    names = list(_GLYPHS)
    if num_classes > len(names):
        raise ValueError(f"at most {len(names)} classes are available, got {num_classes}")
    return [glyph(n) for n in names[:num_classes]]


@dataclass(frozen=True)
class DatasetConfig:
    num_classes: int = 4
    image_size: int = 16
    noise: float = 0.5
    clutter: int = 3
    fragment_keep: float = 0.5
    gain_range: tuple = (1.0, 1.0)
    train_size: int = 4000
    test_size: int = 1000
    seed: int = 0


@dataclass
class SyntheticDataset:
    images: np.ndarray  # (N, 1, S, S) float32
    labels: np.ndarray  # (N,) int64
    config: DatasetConfig

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return SyntheticDataset(self.images[idx], self.labels[idx], self.config)


def _render(rng, n, cfg: DatasetConfig, templates):
    s = cfg.image_size
    k = templates[0].shape[0]
    images = rng.standard_normal((n, 1, s, s)) * cfg.noise
    labels = rng.integers(0, cfg.num_classes, size=n)
    for i in range(n):
        for _ in range(cfg.clutter):
            source = templates[rng.integers(0, len(templates))]
            patch = source * (rng.random((k, k)) < cfg.fragment_keep)
            r, c = rng.integers(0, s - k + 1, size=2)
            images[i, 0, r:r + k, c:c + k] += patch
        r, c = rng.integers(0, s - k + 1, size=2)
        images[i, 0, r:r + k, c:c + k] += templates[labels[i]]
    lo, hi = cfg.gain_range
    images *= np.exp(rng.uniform(np.log(lo), np.log(hi), size=(n, 1, 1, 1)))
    return images.astype(np.float32), labels.astype(np.int64)


def make_datasets(config: DatasetConfig = DatasetConfig()):
    """Train and test splits, fully determined by ``config.seed``."""
    templates = class_templates(config.num_classes)
    train_rng, test_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2))
    train = SyntheticDataset(*_render(train_rng, config.train_size, config, templates), config)
    test = SyntheticDataset(*_render(test_rng, config.test_size, config, templates), config)
    return train, test


def config_dict(config: DatasetConfig):
    return asdict(config)
