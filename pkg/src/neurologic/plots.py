"""Report figures.  Every function writes one PNG and returns its path."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {"font.size": 9, "axes.spines.top": False, "axes.spines.right": False,
          "figure.dpi": 100}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # no Software/date chunks so identical runs give identical files
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def training_curves(history: list[dict], path) -> Path:
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3))
        step = np.arange(1, len(history) + 1)
        for key, style in (("L_cls", "-o"), ("L_reg", "-s")):
            ax1.plot(step, [h[key] for h in history], style, ms=3, label=key)
        ax1.set_yscale("log")
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("loss")
        ax1.legend(frameon=False)
        vals = [np.nan if h.get("val_mAP") is None else h["val_mAP"] for h in history]
        ax2.plot(step, vals, "-o", ms=3, color="C2")
        n_late = sum(h["phase"] == "late" for h in history)
        if 0 < n_late < len(history):
            ax2.axvline(n_late + 0.5, color="0.6", lw=0.8, ls="--")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("validation mAP")
        return _save(fig, path)


def per_activity_ap(names: list[str], ap: list[float | None], path, title: str = "") -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 0.45 * len(names) + 1), 3))
        vals = [np.nan if a is None else a for a in ap]
        ax.bar(np.arange(len(names)), vals, color="C0")
        ax.set_xticks(np.arange(len(names)))
        ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
        ax.set_ylim(0, 1)
        ax.set_ylabel("AP")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def judge_histogram(judged: np.ndarray, path, random_judged: np.ndarray | None = None) -> Path:
    """Distribution of judged truth probabilities with the (0.2, 0.8) band shaded."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        bins = np.linspace(0, 1, 41)
        ax.hist(judged, bins=bins, color="C0", alpha=0.8, label="test events")
        if random_judged is not None:
            ax.hist(random_judged, bins=bins, color="C1", alpha=0.5, label="random vectors")
            ax.legend(frameon=False)
        ax.axvspan(0.2, 0.8, color="0.9", zorder=0)
        ax.set_xlabel("judged truth probability")
        ax.set_ylabel("events")
        return _save(fig, path)


def expression_table(accuracy: dict[str, float], path, reference: dict[str, float] | None = None) -> Path:
    with plt.rc_context(_STYLE):
        labels = list(accuracy)
        y = np.arange(len(labels))
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.barh(y, [accuracy[k] for k in labels], color="C0", height=0.6, label="measured")
        if reference:
            ax.plot([reference.get(k, np.nan) for k in labels], y, "k|", ms=10, label="reference")
            ax.legend(frameon=False, loc="lower right")
        ax.set_yticks(y)
        ax.set_yticklabels(labels)
        ax.invert_yaxis()
        ax.set_xlim(0, 1)
        ax.set_xlabel("accuracy")
        return _save(fig, path)


def noise_curve(mr: list[float], mAP: list[float], path) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(mr, mAP, "-o", ms=4)
        ax.set_xscale("symlog", linthresh=0.005)
        ax.set_xlabel("noise rate mr")
        ax.set_ylabel("mAP")
        return _save(fig, path)


def search_curve(ks: list[int], mAP: list[float], path, baseline: float | None = None) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(ks, mAP, "-o", ms=4, label="rule search")
        if baseline is not None:
            ax.axhline(baseline, color="0.5", ls="--", lw=0.8, label="trained rule base")
            ax.legend(frameon=False)
        ax.set_xscale("log")
        ax.set_xlabel("searched rules K")
        ax.set_ylabel("mAP")
        return _save(fig, path)


def label_counts(names: list[str], counts: np.ndarray, path) -> Path:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 0.45 * len(names) + 1), 3))
        ax.bar(np.arange(len(names)), counts, color="C3")
        ax.set_xticks(np.arange(len(names)))
        ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
        ax.set_ylabel("positives")
        return _save(fig, path)
