"""Figure rendering for trajectories, cost comparisons, and root loci.

Figures are written next to the delimited output so a run leaves both a
machine-readable record and something to look at.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _mark_segments(ax, starts):
    for s in starts[1:]:
        ax.axvline(s, color="0.75", lw=0.8, ls="--", zorder=0)


def plot_trajectory(traj, path) -> str:
    """Four-panel overview: frequency, filtered powers, PCC quantities,
    and the running generation cost."""
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    (ax_f, ax_p), (ax_v, ax_c) = axes

    for i in range(traj.n):
        ax_f.plot(traj.t, traj.f[:, i], lw=1.0, label=f"DG {i+1}")
        ax_p.plot(traj.t, traj.p_f[:, i], lw=1.0, label=f"DG {i+1}")
    ax_f.set_ylabel("frequency [Hz]")
    ax_f.legend(fontsize=8)
    ax_p.set_ylabel("filtered active power [W]")

    ax_v.plot(traj.t, traj.v_pcc, lw=1.0, color="tab:blue", label="|V_pcc| [V]")
    ax_v.set_ylabel("|V_pcc| [V]", color="tab:blue")
    ax_i = ax_v.twinx()
    ax_i.plot(traj.t, traj.current, lw=1.0, color="tab:red", label="|I| [A]")
    ax_i.set_ylabel("|I| [A]", color="tab:red")

    ax_c.plot(traj.t, traj.tagc, lw=1.0, color="tab:green")
    ax_c.set_ylabel("total generation cost")

    for ax in (ax_f, ax_p, ax_v, ax_c):
        _mark_segments(ax, traj.segment_starts)
    ax_v.set_xlabel("time [s]")
    ax_c.set_xlabel("time [s]")
    fig.suptitle(f"scheme: {traj.scheme}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def plot_compare(traj_a, traj_b, path) -> str:
    """Generation cost of both schemes on one axis."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(traj_a.t, traj_a.tagc, lw=1.2, label=traj_a.scheme)
    ax.plot(traj_b.t, traj_b.tagc, lw=1.2, label=traj_b.scheme)
    _mark_segments(ax, traj_a.segment_starts)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("total generation cost")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def plot_root_locus(locus, path) -> str:
    """Eigenvalue loci in the complex plane, shaded by sweep position."""
    fig, ax = plt.subplots(figsize=(7, 5.5))
    m = locus.eigenvalues.shape[1]
    cmap = plt.get_cmap("viridis")
    denom = max(len(locus.values) - 1, 1)
    for k, row in enumerate(locus.eigenvalues):
        color = cmap(k / denom)
        ax.plot(row.real, row.imag, ".", ms=4, color=color)
    for j in range(m):
        col = locus.eigenvalues[:, j]
        ax.plot(col.real, col.imag, "-", lw=0.5, color="0.6", zorder=0)
    ax.axvline(0.0, color="k", lw=0.8)
    ax.set_xlabel("Re(lambda) [rad/s]")
    ax.set_ylabel("Im(lambda) [rad/s]")
    ax.set_title(f"sweep: {locus.parameter}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)
