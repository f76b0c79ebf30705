"""Static SVG figures from the CSV artifacts.

Rendering uses the non-interactive SVG backend with a fixed id salt and no
date stamp, so the same CSV always produces the same file.
"""

import csv
import io
import os

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import SchemaMismatch  # noqa: E402
from .io_utils import atomic_write_bytes  # noqa: E402

SCHEMAS = {
    "rmse_vs_snr": ("sweep_value", "method", "rmse_deg"),
    "rmse_vs_snapshots": ("sweep_value", "method", "rmse_deg"),
    "accuracy_vs_size": ("size", "series", "accuracy"),
    "selection_histogram": ("index", "method", "percent"),
    "array_layout": ("m", "x", "y"),
}
KINDS = tuple(SCHEMAS)


def read_csv(path, kind):
    if kind not in SCHEMAS:
        raise SchemaMismatch(f"unknown plot kind {kind!r}; expected one of {KINDS}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaMismatch(f"{path} is empty")
    header, body = rows[0], [r for r in rows[1:] if r]
    missing = [c for c in SCHEMAS[kind] if c not in header]
    if missing:
        raise SchemaMismatch(f"{path} lacks columns {missing} needed for {kind}")
    if not body:
        raise SchemaMismatch(f"{path} has no data rows")
    cols = {name: [r[i] for r in body] for i, name in enumerate(header)}
    return cols


def _floats(values, name):
    try:
        return [float(v) for v in values]
    except ValueError as exc:
        raise SchemaMismatch(f"column {name} is not numeric: {exc}") from exc


def _series(cols, key, x, y):
    groups = {}
    for k, a, b in zip(cols[key], _floats(cols[x], x), _floats(cols[y], y)):
        groups.setdefault(k, []).append((a, b))
    return {k: sorted(v) for k, v in groups.items()}


def _figure(cols, kind):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if kind in ("rmse_vs_snr", "rmse_vs_snapshots"):
        for name, pts in _series(cols, "method", "sweep_value", "rmse_deg").items():
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
        ax.set_yscale("log")
        ax.set_ylabel("RMSE (deg)")
        if kind == "rmse_vs_snr":
            ax.set_xlabel("SNR (dB)")
        else:
            ax.set_xscale("log")
            ax.set_xlabel("snapshots")
        ax.legend()
    elif kind == "accuracy_vs_size":
        for name, pts in _series(cols, "series", "size", "accuracy").items():
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="s", label=name)
        ax.set_xlabel("size")
        ax.set_ylabel("accuracy (%)")
        ax.legend()
    elif kind == "selection_histogram":
        groups = _series(cols, "method", "index", "percent")
        width = 0.8 / max(len(groups), 1)
        for n, (name, pts) in enumerate(groups.items()):
            ax.bar([p[0] + n * width for p in pts], [p[1] for p in pts], width=width, label=name)
        ax.set_xlabel("sensor index")
        ax.set_ylabel("appearance (%)")
        ax.legend()
    else:
        x, y = _floats(cols["x"], "x"), _floats(cols["y"], "y")
        (line,) = ax.plot(x, y, linestyle="none", marker="o")
        line.set_gid("sensors")
        for m, a, b in zip(cols["m"], x, y):
            ax.annotate(m, (a, b), textcoords="offset points", xytext=(4, 4), fontsize=7)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return fig


def emit_plot(csv_path, kind, out_path=None):
    """Render ``csv_path`` as ``kind``; returns the SVG path written."""
    cols = read_csv(csv_path, kind)
    if out_path is None:
        out_path = os.path.splitext(os.fspath(csv_path))[0] + f".{kind}.svg"
    with plt.rc_context({"svg.hashsalt": "sparse-doa", "svg.fonttype": "none"}):
        fig = _figure(cols, kind)
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    atomic_write_bytes(out_path, buf.getvalue())
    return out_path
