"""Report figures, written as PNG files next to the delimited outputs.

Uses the non-interactive Agg backend and strips PNG metadata so reruns
produce identical bytes.
"""
from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image, ImageDraw  # noqa: E402

golden_mean = (np.sqrt(5) - 1.0) / 2.0
fig_width = 4.5

params = {
    'axes.labelsize': 10,
    'font.size': 9,
    'font.family': 'DejaVu Sans',
    'legend.fontsize': 8,
    'xtick.labelsize': 8,
    'ytick.labelsize': 8,
    'figure.figsize': [fig_width, fig_width * golden_mean],
    'figure.dpi': 100,
    'savefig.dpi': 150,
    'lines.linewidth': 1.2,
    'lines.markersize': 4,
    'axes.spines.top': False,
    'axes.spines.right': False,
    'svg.hashsalt': 'memtrack',
}

LEVEL_COLORS = {'low': '#4eb3d3', 'medium': '#2b8cbe', 'high': '#08589e', 'builtin': '#7bccc4'}
PRECISION_COLOR = '#d95f02'
RECALL_COLOR = '#1b9e77'


@contextmanager
def style():
    with matplotlib.rc_context(params):
        yield


def save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format='png', metadata={'Software': None})
    plt.close(fig)
    return path


def plot_stage_metrics(report, path):
    """Precision and recall after each pipeline stage."""
    with style():
        fig, ax = plt.subplots()
        names = [s.stage for s in report.stages]
        x = np.arange(len(names))
        ax.plot(x, [s.precision for s in report.stages], 'o-', color=PRECISION_COLOR,
                label='precision')
        ax.plot(x, [s.recall for s in report.stages], 's-', color=RECALL_COLOR, label='recall')
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=30, ha='right')
        ax.set_ylim(0, 1.05)
        ax.set_ylabel('score')
        ax.legend(frameon=False)
        fig.tight_layout()
        return save(fig, path)


def plot_calibration(result, path):
    """Precision/recall against confidence threshold, one panel per level.

    Dashed line: max-precision threshold; dotted line: max-F1 threshold.
    """
    levels = list(result.curves)
    with style():
        fig, axes = plt.subplots(1, len(levels), figsize=(3.2 * len(levels), 2.8),
                                 squeeze=False, sharey=True)
        for ax, lv in zip(axes[0], levels):
            c = result.curves[lv]
            ax.plot(c.thresholds, c.precision, color=PRECISION_COLOR, label='precision')
            ax.plot(c.thresholds, c.recall, color=RECALL_COLOR, label='recall')
            ax.axvline(result.chosen['max_precision'][lv], color='k', ls='--', lw=0.8)
            ax.axvline(result.chosen['max_f1'][lv], color='k', ls=':', lw=0.8)
            ax.set_title(lv.value)
            ax.set_xlabel('confidence threshold')
            ax.set_xlim(0, 1)
            ax.set_ylim(0, 1.05)
        axes[0][0].set_ylabel('score')
        axes[0][0].legend(frameon=False, loc='lower left')
        fig.tight_layout()
        return save(fig, path)


def plot_track_length_sweep(rows, lengths, path):
    with style():
        fig, ax = plt.subplots()
        ax.plot(lengths, [r.precision for r in rows], 'o-', color=PRECISION_COLOR, label='precision')
        ax.plot(lengths, [r.recall for r in rows], 's-', color=RECALL_COLOR, label='recall')
        ax.set_xlabel('minimum track length (frames)')
        ax.set_ylabel('score')
        ax.set_ylim(0, 1.05)
        ax.legend(frameon=False)
        fig.tight_layout()
        return save(fig, path)


def plot_speed_comparison(speeds, path):
    """Bar chart of population mean speed with SEM error bars."""
    with style():
        fig, ax = plt.subplots(figsize=(3.0, 3.0))
        keys = list(speeds)
        means = [speeds[k].mean for k in keys]
        sems = [speeds[k].sem for k in keys]
        ax.bar(keys, means, yerr=sems, capsize=4, color=['#4575b4', '#d6604d'][:len(keys)])
        ax.set_ylabel('mean speed (um/s)')
        for i, k in enumerate(keys):
            ax.text(i, 0, f'N={speeds[k].n}', ha='center', va='bottom', fontsize=7, color='w')
        fig.tight_layout()
        return save(fig, path)


def plot_diffusivity(curves, path, bounds=None):
    """D(tau) curves on a log axis with the motility class boundaries."""
    with style():
        fig, ax = plt.subplots()
        for c in curves:
            ax.plot(c.lags, c.values, lw=0.6, alpha=0.6)
        if bounds:
            for b in bounds:
                ax.axhline(b, color='0.5', ls='--', lw=0.6)
        ax.set_yscale('log')
        ax.set_xlabel('lag (s)')
        ax.set_ylabel('D (um^2/s)')
        fig.tight_layout()
        return save(fig, path)


def draw_overlays(frames, tracks, directory, pattern='overlay_%05d.png'):
    """Write RGB copies of `frames` with track boxes and ids drawn on them.

    Detected states are drawn in green, interpolated states in orange.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    by_frame = {}
    for tr in tracks:
        for s in tr.states:
            by_frame.setdefault(s.frame_idx, []).append((tr.id, s))
    for t, frame in enumerate(frames):
        img = Image.fromarray(np.asarray(frame)).convert('RGB')
        draw = ImageDraw.Draw(img)
        for tid, s in by_frame.get(t, []):
            color = (255, 160, 0) if s.interpolated else (0, 220, 0)
            draw.rectangle([s.cx - s.w / 2, s.cy - s.h / 2, s.cx + s.w / 2, s.cy + s.h / 2],
                           outline=color)
            draw.text((s.cx - s.w / 2, s.cy - s.h / 2 - 10), str(tid), fill=color)
        img.save(directory / (pattern % t))
