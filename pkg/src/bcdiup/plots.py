"""Report figures rendered alongside the delimited outputs.

Every CLI report path writes its CSV and a PNG next to it; these helpers
hold all the matplotlib code so the pipeline modules stay plot-free.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _log_view(img, floor=1e-9):
    a = np.asarray(img, dtype=float)
    peak = a.max() if a.size else 1.0
    if peak <= 0:
        peak = 1.0
    return np.log10(np.maximum(a / peak, floor))


def save_design_table_figure(rows, path):
    """Heatmaps of the constraint count M and distance multiplier f."""
    pbfs = sorted({r.pbf for r in rows})
    poss = sorted({r.positions for r in rows})
    M = np.zeros((len(poss), len(pbfs)))
    F = np.zeros_like(M)
    below = np.zeros_like(M, dtype=bool)
    sat = np.zeros_like(M, dtype=bool)
    for r in rows:
        i, j = poss.index(r.positions), pbfs.index(r.pbf)
        M[i, j] = r.n_constraints
        F[i, j] = r.multiplier
        below[i, j] = r.below_threshold
        sat[i, j] = r.saturated
    fig, axes = plt.subplots(1, 2, figsize=(9, 4.2))
    for ax, data, title in ((axes[0], M, "unique constraints M"),
                            (axes[1], F, "distance multiplier f")):
        im = ax.imshow(data, origin="lower", aspect="auto", cmap="viridis")
        ax.set_xticks(range(len(pbfs)), [str(p) for p in pbfs])
        ax.set_yticks(range(len(poss)), [str(p) for p in poss])
        ax.set_xlabel("pixel binning factor")
        ax.set_ylabel("detector positions")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, shrink=0.85)
        for i in range(len(poss)):
            for j in range(len(pbfs)):
                if below[i, j]:
                    ax.plot(j, i, "rx", ms=6)
                elif sat[i, j]:
                    ax.plot(j, i, "w.", ms=4)
    fig.suptitle("x = below feasibility threshold, dot = saturated offsets")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_srtf_summary_figure(per_slice, path):
    """Per-slice SRTF mean with a +/- sigma band."""
    ks = [r[0] for r in per_slice]
    mu = np.array([r[1] for r in per_slice])
    sd = np.array([r[2] for r in per_slice])
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.fill_between(ks, mu - sd, mu + sd, alpha=0.3, label="mean +/- std")
    ax.plot(ks, mu, lw=1.5, label="mean")
    ax.axhline(1.0, color="k", ls="--", lw=0.8)
    ax.set_xlabel("slice index")
    ax.set_ylabel("SRTF")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_sweep_figure(rows, path):
    """SRTF mean vs position count, one curve per (PBF, slice kind)."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    kinds = sorted({(r.pbf, r.slice_kind) for r in rows})
    for pbf, kind in kinds:
        pts = sorted(
            (r.positions, r.mu, r.sigma) for r in rows
            if r.pbf == pbf and r.slice_kind == kind
        )
        xs = [p[0] for p in pts]
        mu = np.array([p[1] for p in pts])
        sd = np.array([p[2] for p in pts])
        line, = ax.plot(xs, mu, marker="o", ms=3, label=f"PBF {pbf} {kind}")
        ax.fill_between(xs, mu - sd, mu + sd, alpha=0.15, color=line.get_color())
    ax.axhline(1.0, color="k", ls="--", lw=0.8)
    ax.set_xlabel("detector positions")
    ax.set_ylabel("SRTF mean")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_slice_comparison_figure(truth_slice, recovered_slice, path):
    """Log-scale truth vs recovery, the usual side-by-side comparison view."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    for ax, img, title in ((axes[0], truth_slice, "ground truth"),
                           (axes[1], recovered_slice, "recovered")):
        im = ax.imshow(_log_view(img), cmap="magma", vmin=-9, vmax=0)
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, shrink=0.8, label="log10 relative intensity")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_error_history_figure(errors, path):
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.semilogy(np.arange(1, len(errors) + 1), errors, lw=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("Fourier modulus error")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_reconstruction_figure(obj, truth, path):
    """Central cuts of reconstructed and true magnitude and phase."""
    mid = obj.shape[2] // 2
    panels = [
        (np.abs(truth[:, :, mid]), "true magnitude"),
        (np.angle(truth[:, :, mid]) * (np.abs(truth[:, :, mid]) > 0), "true phase"),
        (np.abs(obj[:, :, mid]), "reconstructed magnitude"),
        (np.angle(obj[:, :, mid]) * (np.abs(obj[:, :, mid]) > 0.5 * np.abs(obj).max()),
         "reconstructed phase"),
    ]
    fig, axes = plt.subplots(2, 2, figsize=(7.5, 7))
    for ax, (img, title) in zip(axes.ravel(), panels):
        im = ax.imshow(img, cmap="twilight" if "phase" in title else "viridis")
        ax.set_title(title, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
