"""Grid-world data containers: ground-truth labels and probabilistic belief maps.

The region of interest (ROI) is a rectangular cell grid.  Every cell carries a
binary class label (1 = valuable, 0 = valueless) plus an optional no-fly flag
for building cells.  Each UAV, and the centralized trainer, maintains a belief
map holding the per-cell probability that the cell is valuable.  Beliefs are
stored in log-odds form so that repeated independent sensor updates reduce to
additions and certainty (p = 0 or 1) is absorbing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit, xlogy

# Evidence increment cap: expit(+/-40) rounds to exactly 1.0/0.0 in float64,
# so a capped increment from a perfect sensor still saturates the posterior.
MAX_LOG_ODDS_DELTA = 40.0


class ConfigurationError(ValueError):
    """Raised when a grid, episode, or run configuration is invalid."""


@dataclass
class GroundTruthGrid:
    """Binary valuable/valueless cell grid defining the ROI.

    ``cells[y, x]`` is the class label, ``mask[y, x]`` flags no-fly cells.
    Cells under the mask are forced to the valueless class: building areas are
    sampled as valueless even if the source image marked them otherwise.
    """

    cells: np.ndarray
    mask: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int8)
        if self.cells.ndim != 2:
            raise ConfigurationError("cells must be a 2-D array")
        if self.mask is None:
            self.mask = np.zeros_like(self.cells, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.cells.shape:
            raise ConfigurationError(
                f"mask shape {self.mask.shape} != cells shape {self.cells.shape}"
            )
        if not np.isin(self.cells, (0, 1)).all():
            raise ConfigurationError("cell labels must be 0 or 1")
        self.cells = np.where(self.mask, 0, self.cells).astype(np.int8)
        if not self.cells.any():
            raise ConfigurationError("ground truth must contain a valuable cell")

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height


@dataclass
class BeliefGrid:
    """Per-cell probability that the cell is valuable, stored as log-odds."""

    log_odds: np.ndarray

    @classmethod
    def uniform(cls, height: int, width: int) -> "BeliefGrid":
        """Maximum-uncertainty prior: probability 0.5 everywhere."""
        return cls(log_odds=np.zeros((height, width), dtype=np.float64))

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "BeliefGrid":
        probs = np.asarray(probs, dtype=np.float64)
        if probs.min() < 0.0 or probs.max() > 1.0:
            raise ValueError("belief probabilities must lie in [0, 1]")
        return cls(log_odds=logit(probs))

    @property
    def probs(self) -> np.ndarray:
        return expit(self.log_odds)

    @property
    def shape(self) -> tuple[int, int]:
        return self.log_odds.shape

    def copy(self) -> "BeliefGrid":
        return BeliefGrid(log_odds=self.log_odds.copy())


def evidence_log_odds(accuracy: float) -> float:
    """Log-likelihood-ratio magnitude of one observation at the given accuracy.

    Capped so a perfect sensor (accuracy 1) contributes a finite increment
    that still saturates the posterior in float64.
    """
    if not 0.5 < accuracy <= 1.0:
        raise ValueError(f"sensor accuracy must lie in (0.5, 1], got {accuracy}")
    if accuracy == 1.0:
        return MAX_LOG_ODDS_DELTA
    return min(float(np.log(accuracy / (1.0 - accuracy))), MAX_LOG_ODDS_DELTA)


def binary_entropy(p: np.ndarray) -> np.ndarray:
    """Elementwise binary Shannon entropy in bits, with 0*log(0) == 0."""
    p = np.asarray(p, dtype=np.float64)
    return -(xlogy(p, p) + xlogy(1.0 - p, 1.0 - p)) / np.log(2.0)


def entropy(belief: BeliefGrid) -> float:
    """Normalized Shannon entropy of a belief map, in [0, 1].

    Sum of per-cell binary entropies divided by the cell count, so a uniform
    0.5 map scores exactly 1 and a fully resolved map scores 0.
    """
    return float(binary_entropy(belief.probs).sum() / belief.log_odds.size)
