import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

logger = logging.getLogger(__name__)


def plot_loss_curve(frame: pd.DataFrame, path: str | Path, title: str = "training loss") -> Path:
    """Total loss per iteration plus one line per length group."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(frame["iteration"], frame["total"], label="total", linewidth=1.5)
    for column in sorted(c for c in frame.columns if c.startswith("loss_len_")):
        ax.plot(frame["iteration"], frame[column], label=column.removeprefix("loss_"), linewidth=0.8, alpha=0.7)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info(f"Wrote loss curve to {path}")
    return path


def plot_heatmap(matrix: pd.DataFrame, path: str | Path, title: str) -> Path:
    """Heatmap of a (cfg_scale x steps) matrix with annotated cells."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(1.2 * len(matrix.columns) + 2, 0.8 * len(matrix.index) + 2))
    image = ax.imshow(matrix.to_numpy(dtype=float), cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(matrix.columns)), [str(c) for c in matrix.columns])
    ax.set_yticks(range(len(matrix.index)), [str(i) for i in matrix.index])
    ax.set_xlabel(matrix.columns.name or "steps")
    ax.set_ylabel(matrix.index.name or "cfg_scale")
    for (row, col), value in pd.DataFrame(matrix.to_numpy(dtype=float)).stack().items():
        ax.text(col, row, f"{value:.3f}", ha="center", va="center", color="white", fontsize=8)
    fig.colorbar(image, ax=ax)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info(f"Wrote heatmap to {path}")
    return path
