"""Static SVG charts for training history and predictions."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Fixed hash salt and no date stamp keep the SVG bytes reproducible.
_RC = {"svg.hashsalt": "irnet", "svg.fonttype": "none"}
_META = {"Date": None, "Creator": "irnet"}


def loss_plot(history, path):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        (line,) = ax.plot(history.epoch, history.train_loss, marker="o", color="tab:blue", label="train loss (MSE)")
        line.set_gid("train-loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("train loss")
        ax2 = ax.twinx()
        ax2.plot(history.epoch, history.val_rmspe_p1, color="tab:orange", label="val RMSPE@1 (%)")
        ax2.set_ylabel("validation RMSPE, p=1 (%)")
        fig.legend(loc="upper right")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=_META)
        plt.close(fig)


def scatter_plot(report: dict, path, horizon: int = 1):
    """Predicted vs true speed, plus the per-sample error, for one horizon."""
    y = report["y_true"][horizon - 1]
    y_hat = report["y_pred"][horizon - 1]
    with plt.rc_context(_RC):
        fig, (ax, ax_err) = plt.subplots(1, 2, figsize=(9, 4))
        ax.scatter(y, y_hat, s=10)
        lo, hi = min(min(y), min(y_hat)), max(max(y), max(y_hat))
        ax.plot([lo, hi], [lo, hi], color="grey", linestyle="--", linewidth=1)
        ax.set_xlabel("true speed (mph)")
        ax.set_ylabel("predicted speed (mph)")
        ax.set_title(f"horizon {horizon}")
        ax_err.plot([b - a for a, b in zip(y, y_hat)], linewidth=1)
        ax_err.axhline(0.0, color="grey", linewidth=1)
        ax_err.set_xlabel("sample")
        ax_err.set_ylabel("predicted - true (mph)")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=_META)
        plt.close(fig)
