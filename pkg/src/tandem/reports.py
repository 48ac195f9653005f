"""Figure rendering for experiment artifacts.

Every renderer takes already-computed data and writes one PNG. Figures are
deterministic: the Agg backend draws off-screen and the PNG metadata that
would normally record the producing library is stripped, so reruns of the
same experiment yield byte-identical images.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 120
_PNG_METADATA = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=DPI, metadata=_PNG_METADATA)
    plt.close(fig)


def render_loss_curves(history, path):
    """Pretraining loss components per epoch."""
    epochs = [row["epoch"] for row in history]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for key in ("total", "recon", "align", "lrs"):
        if any(key in row for row in history):
            ax.plot(epochs, [row[key] for row in history], label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def render_finetune_history(history, path):
    """Fine-tuning train loss and validation metric, phases marked."""
    steps = np.arange(1, len(history) + 1)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.0, 5.0), sharex=True)
    ax1.plot(steps, [row["train_loss"] for row in history])
    ax1.set_ylabel("train loss")
    ax2.plot(steps, [row["val_metric"] for row in history])
    ax2.set_ylabel("validation metric")
    ax2.set_xlabel("epoch (both phases)")
    phases = [row["phase"] for row in history]
    for i in range(1, len(phases)):
        if phases[i] != phases[i - 1]:
            for ax in (ax1, ax2):
                ax.axvline(i + 0.5, color="gray", linestyle="--", linewidth=1)
    fig.tight_layout()
    _save(fig, path)


def render_profile_curves(curve, path):
    """Fraction-of-datasets performance profiles per method."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for j, method in enumerate(curve.methods):
        ax.step(curve.taus, curve.fractions[:, j], where="post", label=method)
    ax.set_xlabel("factor of best")
    ax.set_ylabel("fraction of datasets")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def render_spectra(report, path):
    """Mean magnitude spectra of the raw and gate-masked views."""
    freqs = np.arange(report.spectrum_original.size)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(freqs, report.spectrum_original, label="original")
    ax.plot(freqs, report.spectrum_nn, label="neural gate")
    ax.plot(freqs, report.spectrum_osdt, label="tree gate")
    ax.set_xlabel("frequency index")
    ax.set_ylabel("mean magnitude")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def render_variant_bars(names, values, metric_name, path):
    """Metric per model variant as a bar chart."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.bar(np.arange(len(names)), values, color="tab:blue")
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel(metric_name)
    fig.tight_layout()
    _save(fig, path)
