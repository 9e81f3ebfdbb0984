"""Static figures written next to CSV outputs (non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps the PNG bytes reproducible
_META = {"Software": None, "Creation Time": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_loss_history(history, path, monitor=None, title="training loss"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(np.arange(len(history)), history, lw=0.8, label="batch loss")
    if monitor:
        it, val = zip(*monitor)
        ax.semilogy(it, val, "o-", ms=3, label="monitor")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    _save(fig, path)


def plot_contours(curves, path, half_size=None, title="zero-level curves"):
    fig, ax = plt.subplots(figsize=(5, 5))
    for c in curves:
        ax.plot(c[:, 0], c[:, 1], "k-", lw=1)
    if half_size:
        ax.set_xlim(-half_size, half_size)
        ax.set_ylim(-half_size, half_size)
    ax.set_aspect("equal")
    ax.set_title(title)
    _save(fig, path)


def plot_density_slice(values, extent, path, title="density slice"):
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(values.T, origin="lower", extent=extent, cmap="viridis")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    _save(fig, path)


def plot_trajectory(traj, path, events=()):
    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(projection="3d")
    r = traj.y[:, :3]
    ax.plot(r[:, 0], r[:, 1], r[:, 2], lw=0.7)
    for e in events:
        ax.scatter(*e.r_event, c="r" if e.kind == "shadow_entry" else "g", s=8)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_zlabel("z")
    _save(fig, path)


def plot_mesh(mesh, path, title="mesh"):
    fig = plt.figure(figsize=(5, 5))
    ax = fig.add_subplot(projection="3d")
    if not mesh.is_empty():
        v = mesh.vertices
        ax.plot_trisurf(v[:, 0], v[:, 1], v[:, 2], triangles=mesh.faces, lw=0.1, alpha=0.8)
    ax.set_title(title)
    _save(fig, path)
