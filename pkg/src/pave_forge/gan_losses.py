"""CycleGAN objective terms evaluated on finite batches.

Expectations become batch means. Discriminator scores are clamped to
``[EPS, 1 - EPS]`` before taking logs so saturated scores stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-7
DEFAULT_LAMBDA_CYC = 10.0


@dataclass(frozen=True)
class ScoreBatch:
    real_scores: np.ndarray
    fake_scores: np.ndarray

    def __post_init__(self):
        for name in ("real_scores", "fake_scores"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if arr.size == 0:
                raise ValueError(f"{name} is empty")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains NaN or Inf")
            object.__setattr__(self, name, np.clip(arr, EPS, 1.0 - EPS))


@dataclass(frozen=True)
class CyclePair:
    original: np.ndarray
    reconstructed: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.original, dtype=np.float64)
        b = np.asarray(self.reconstructed, dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
        object.__setattr__(self, "original", a)
        object.__setattr__(self, "reconstructed", b)


def adversarial_loss(batch: ScoreBatch) -> float:
    """``mean(log D(real)) + mean(log(1 - D(fake)))``.

    The mirrored mapping uses the same function with the other
    discriminator's scores.
    """
    return float(np.mean(np.log(batch.real_scores)) + np.mean(np.log1p(-batch.fake_scores)))


def cycle_consistency_loss(forward: CyclePair, backward: CyclePair) -> float:
    """Sum of the per-element mean L1 reconstruction errors of both cycles."""
    return float(np.mean(np.abs(forward.reconstructed - forward.original))
                 + np.mean(np.abs(backward.reconstructed - backward.original)))


def total_cyclegan_objective(adv_a: float, adv_b: float, cyc: float,
                             lambda_cyc: float = DEFAULT_LAMBDA_CYC) -> float:
    if lambda_cyc < 0:
        raise ValueError("lambda_cyc must be >= 0")
    return adv_a + adv_b + lambda_cyc * cyc


def parse_score_file(text: str) -> ScoreBatch:
    """Read ``[real]`` / ``[fake]`` sections holding one float per line."""
    sections: dict[str, list[float]] = {"real": [], "fake": []}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current not in sections:
                raise ValueError(f"line {lineno}: unknown section [{current}]")
            continue
        if current is None:
            raise ValueError(f"line {lineno}: score outside a [real]/[fake] section")
        try:
            sections[current].append(float(line))
        except ValueError:
            raise ValueError(f"line {lineno}: not a number: {line!r}") from None
    return ScoreBatch(np.array(sections["real"]), np.array(sections["fake"]))
