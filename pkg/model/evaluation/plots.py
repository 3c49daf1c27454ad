import logging
from pathlib import Path
from typing import TYPE_CHECKING, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

if TYPE_CHECKING:
    from model.compression.evolution import EvolutionLog

logger = logging.getLogger(__name__)


def plot_evolution(log: "EvolutionLog", path: Union[str, Path]) -> Path:
    """Best, mean and min fitness per generation."""
    if not len(log):
        raise ValueError("evolution log is empty")
    frame = log.to_frame()
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(frame["generation"], frame["best_fitness"], label="best")
    ax.plot(frame["generation"], frame["mean_fitness"], label="mean")
    ax.plot(frame["generation"], frame["min_fitness"], label="min", linestyle="--")
    ax.set_xlabel("Generation")
    ax.set_ylabel("Fitness")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(target)
    plt.close(fig)
    logger.info(f"Saved evolution plot to {target}")
    return target
