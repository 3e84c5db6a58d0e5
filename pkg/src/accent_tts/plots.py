"""SVG renderings of loss curves, pitch contours and confusion matrices."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import BANDS, FINE_LEVELS  # noqa: E402

# fixed ids and no timestamp so repeated renders are byte-identical
matplotlib.rcParams["svg.hashsalt"] = "accent-tts"
_SVG_META = {"Date": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def loss_curves(history, path, keys=("l_final", "l_mel", "l_dur", "l_p_pitch", "l_p_energy", "l_cc")):
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = [h["step"] for h in history]
    for k in keys:
        ax.plot(steps, [max(h[k], 1e-12) for h in history], label=k, linewidth=1)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    _save(fig, path)


def pitch_contours(tracks, path, frame_shift=0.0125):
    """``tracks`` maps a label to a frame-level pitch array (0 = unvoiced)."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for label, p in tracks.items():
        p = np.asarray(p, dtype=np.float64)
        t = np.arange(p.size) * frame_shift
        ax.plot(t, np.where(p > 0, p, np.nan), label=label, linewidth=1.2)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("F0 (Hz)")
    ax.legend(fontsize=8)
    _save(fig, path)


def confusion_heatmap(matrix, path, fine=False, title=None):
    m = np.asarray(matrix, dtype=np.float64)
    labels = [f"{v:.1f}" for v in FINE_LEVELS] if fine else list(BANDS)
    rows = m.sum(axis=1, keepdims=True)
    frac = np.divide(m, rows, out=np.zeros_like(m), where=rows > 0)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(frac, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(labels)), labels, fontsize=8)
    ax.set_yticks(range(len(labels)), labels, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("intended")
    if title:
        ax.set_title(title)
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            ax.text(j, i, int(m[i, j]), ha="center", va="center", fontsize=7,
                    color="white" if frac[i, j] > 0.5 else "black")
    fig.colorbar(im, ax=ax, fraction=0.046)
    _save(fig, path)
