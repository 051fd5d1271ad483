"""Matplotlib figures for CLI reports. Rendered headless (Agg) straight to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_distortion_curve(curve, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(curve.x, curve.y, lw=1.2)
    ax.set_xlabel("input")
    ax.set_ylabel("output")
    ax.set_title(f"{curve.stage} @ {curve.freq:.1f} Hz, loop area {curve.area:.3g}")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_frequency_response(resp, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogx(resp.freqs, resp.db)
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel("magnitude (dB)")
    ax.set_title(f"{resp.stage} linear response")
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path)


def plot_eval_report(report, path) -> Path:
    names = [c.name for c in report.conditions]
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
    axes[0].bar(names, [c.mae for c in report.conditions])
    axes[0].set_title("MAE")
    axes[1].bar(names, [c.mrstft for c in report.conditions], color="tab:orange")
    axes[1].set_title("MR-STFT")
    for ax in axes:
        ax.tick_params(axis="x", rotation=45)
    fig.suptitle(f"{report.arch} on {report.split}")
    return _save(fig, path)


def plot_training_history(history, path) -> Path:
    ep = [r.epoch for r in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(ep, [r.train_loss for r in history], label="train")
    ax.plot(ep, [r.val_loss for r in history], label="validation")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MAE + MR-STFT")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_ladder(rows, path) -> Path:
    """rows: (name, arch, seen_mae, seen_mrstft, unseen_mae, unseen_mrstft, ops, params, seconds)."""
    names = [r[0] for r in rows]
    idx = range(len(rows))
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.5))
    axes[0].bar([i - 0.2 for i in idx], [r[2] for r in rows], 0.4, label="seen")
    axes[0].bar([i + 0.2 for i in idx], [r[4] for r in rows], 0.4, label="unseen")
    axes[0].set_title("MAE")
    axes[0].legend()
    axes[1].bar([i - 0.2 for i in idx], [r[3] for r in rows], 0.4, label="seen")
    axes[1].bar([i + 0.2 for i in idx], [r[5] for r in rows], 0.4, label="unseen")
    axes[1].set_title("MR-STFT")
    axes[2].bar(list(idx), [r[6] for r in rows], color="tab:gray")
    axes[2].set_yscale("log")
    axes[2].set_title("ops / sample")
    for ax in axes:
        ax.set_xticks(list(idx))
        ax.set_xticklabels(names)
    return _save(fig, path)
