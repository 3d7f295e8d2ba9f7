"""Static figures of solver traces, one PNG per repetition."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_runs", "plot_experiment"]

MODE_STYLE = {
    "nonoise": {"color": "tab:blue", "label": "no noise"},
    "classic": {"color": "tab:orange", "label": "noisy, classic ratio"},
    "relaxed": {"color": "tab:green", "label": "noisy, relaxed ratio"},
}

PANELS = (
    ("f_true", "objective f(x_k)", False),
    ("feas_true", "feasibility ||c(x_k)||", True),
    ("opt_true", "optimality ||A^T lam - g||", True),
    ("step_norm", "step length ||x_{k+1} - x_k||", True),
)


def _positive(values):
    values = np.asarray(values, dtype=float)
    return np.where(values > 0.0, values, np.nan)


def plot_runs(runs, path, title="", f_star=None, noise_level=None):
    """
    Draw the four trace panels for a mapping ``mode -> trace`` and save to ``path``.
    """
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    for ax, (col, label, log) in zip(axes.ravel(), PANELS):
        for mode, trace in runs.items():
            style = MODE_STYLE.get(mode, {"label": mode})
            it = [r.iter for r in trace]
            y = [getattr(r, col) for r in trace]
            if log:
                ax.semilogy(it, _positive(y), lw=1.2, **style)
            else:
                ax.plot(it, y, lw=1.2, **style)
        if col == "f_true" and f_star is not None:
            ax.axhline(f_star, color="k", ls=":", lw=0.8)
        if log and noise_level:
            ax.axhline(noise_level, color="gray", ls="--", lw=0.8)
        ax.set_title(label, fontsize=10)
    for ax in axes[1]:
        ax.set_xlabel("iteration")
    axes[0, 0].legend(fontsize=8, frameon=False)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_experiment(results, out, tag, problem=None, noise=None):
    """One figure per repetition, superimposing the modes it contains."""
    by_rep = {}
    for res in results:
        by_rep.setdefault(res.summary.rep, {})[res.summary.mode] = res.trace
    paths = []
    for rep, runs in sorted(by_rep.items()):
        name = results[0].summary.problem
        level = None if noise is None else max(noise.eps_f, noise.eps_c) or None
        paths.append(plot_runs(
            runs, out / f"{tag}_rep{rep:02d}.png", title=f"{name}, repetition {rep}",
            f_star=None if problem is None else problem.f_star, noise_level=level,
        ))
    return paths
