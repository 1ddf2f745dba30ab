"""Report generation: convergence series, threshold scans, gain tables, SVG.

Every CSV written here re-parses losslessly through the matching reader in
this module. Floats are serialized with repr(), which round-trips exactly.
"""

import numpy as np

from .errors import ConfigError
from .evaluation import CellResult

METRICS_COLUMNS = (
    "step",
    "agent",
    "mean_reward",
    "mean_power",
    "yaw_rms",
    "sd_power",
    "gain_pct",
    "sigma",
)

CELL_COLUMNS = (
    "tp",
    "hs",
    "angle_deg",
    "mode",
    "episodes",
    "sd_mean_power",
    "rl_mean_power",
    "gain_pct",
    "gain_std",
    "yaw_rms_sd",
    "yaw_rms_rl",
    "yaw_reduction_pct",
    "rl_power_var",
    "sd_power_var",
)

GAIN_TABLE_METRICS = (
    "sd_mean_power",
    "rl_mean_power",
    "gain_pct",
    "gain_std",
    "yaw_rms_sd",
    "yaw_rms_rl",
    "yaw_reduction_pct",
)

VARIANCE_TABLE_METRICS = ("rl_power_var", "sd_power_var")


def _fmt(value):
    return repr(float(value))


# -- training metrics ------------------------------------------------------------


def read_metrics_csv(path):
    """Parse a training metrics log; typed rows, schema checked by name."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read metrics file {path}: {exc}") from exc
    if not lines:
        raise ConfigError(f"metrics file {path} is empty")
    header = lines[0].split(",")
    for name in METRICS_COLUMNS:
        if name not in header:
            raise ConfigError(f"metrics file {path}: missing column '{name}'")
    idx = {name: header.index(name) for name in METRICS_COLUMNS}
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise ConfigError(
                f"metrics file {path}: line {lineno} has {len(parts)} fields,"
                f" expected {len(header)}"
            )
        try:
            row = {name: float(parts[i]) for name, i in idx.items()}
            row["step"] = int(parts[idx["step"]])
            row["agent"] = int(parts[idx["agent"]])
        except ValueError as exc:
            raise ConfigError(
                f"metrics file {path}: line {lineno}: {exc}"
            ) from exc
        rows.append(row)
    return rows


def team_gain_series(rows):
    """(env_steps, eval_gain) where gain compares summed RL vs SD power."""
    by_step = {}
    order = []
    for row in rows:
        step = row["step"]
        if step not in by_step:
            by_step[step] = []
            order.append(step)
        by_step[step].append(row)
    steps, gains = [], []
    for step in sorted(order):
        group = by_step[step]
        rl = sum(r["mean_power"] for r in group)
        sd = sum(r["sd_power"] for r in group)
        gains.append(100.0 * (rl - sd) / abs(sd) if sd else 0.0)
        steps.append(step)
    return np.array(steps, dtype=int), np.array(gains, dtype=float)


def align_series(series):
    """Intersect the step axes of several (steps, gains) series."""
    if not series:
        raise ConfigError("no metrics series to align")
    common = None
    for steps, _ in series.values():
        cur = set(int(s) for s in steps)
        common = cur if common is None else common & cur
    if not common:
        raise ConfigError("metrics logs share no common env_steps")
    axis = np.array(sorted(common), dtype=int)
    aligned = {}
    for name, (steps, gains) in series.items():
        lookup = {int(s): g for s, g in zip(steps, gains)}
        aligned[name] = np.array([lookup[s] for s in axis])
    return axis, aligned


def steps_to_threshold(steps, gains, threshold):
    """First env_steps at which gain reaches the threshold, else None."""
    for s, g in zip(steps, gains):
        if g >= threshold:
            return int(s)
    return None


def write_convergence_csv(path, steps, gains_by_variant):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("env_steps," + ",".join(gains_by_variant) + "\n")
        for i, step in enumerate(steps):
            vals = ",".join(_fmt(gains_by_variant[v][i]) for v in gains_by_variant)
            fh.write(f"{int(step)},{vals}\n")


def read_convergence_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    if not header or header[0] != "env_steps":
        raise ConfigError(f"{path}: expected env_steps as first column")
    variants = header[1:]
    steps, cols = [], {v: [] for v in variants}
    for line in lines[1:]:
        parts = line.split(",")
        steps.append(int(parts[0]))
        for v, raw in zip(variants, parts[1:]):
            cols[v].append(float(raw))
    return np.array(steps, dtype=int), {v: np.array(c) for v, c in cols.items()}


def write_threshold_csv(path, threshold, results):
    """results: variant -> env_steps or None for never reached."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("variant,threshold_pct,env_steps\n")
        for name, steps in results.items():
            cell = "not reached" if steps is None else str(int(steps))
            fh.write(f"{name},{_fmt(threshold)},{cell}\n")


def read_threshold_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if lines[0] != "variant,threshold_pct,env_steps":
        raise ConfigError(f"{path}: unexpected header {lines[0]!r}")
    out = {}
    threshold = None
    for line in lines[1:]:
        name, thr, cell = line.split(",")
        threshold = float(thr)
        out[name] = None if cell == "not reached" else int(cell)
    return threshold, out


# -- evaluation tables -----------------------------------------------------------


def write_cells_csv(path, cells):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CELL_COLUMNS) + "\n")
        for c in cells:
            vals = []
            for name in CELL_COLUMNS:
                v = getattr(c, name)
                if name == "mode":
                    vals.append(v)
                elif name == "episodes":
                    vals.append(str(int(v)))
                else:
                    vals.append(_fmt(v))
            fh.write(",".join(vals) + "\n")


def read_cells_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    for name in CELL_COLUMNS:
        if name not in header:
            raise ConfigError(f"cell table {path}: missing column '{name}'")
    idx = {name: header.index(name) for name in CELL_COLUMNS}
    cells = []
    for line in lines[1:]:
        parts = line.split(",")
        kwargs = {}
        for name in CELL_COLUMNS:
            raw = parts[idx[name]]
            if name == "mode":
                kwargs[name] = raw
            elif name == "episodes":
                kwargs[name] = int(raw)
            else:
                kwargs[name] = float(raw)
        cells.append(CellResult(**kwargs))
    return cells


def _tp_columns(cells):
    tps = [c.tp for c in cells]
    if len(set(tps)) != len(tps):
        raise ConfigError("duplicate Tp values in evaluation cells")
    return sorted(cells, key=lambda c: c.tp)


def _write_metric_table(path, cells, metrics):
    """Rows are metrics, columns one per Tp plus a final arithmetic Avg."""
    ordered = _tp_columns(cells)
    headers = [f"Tp{_fmt(c.tp)}" for c in ordered]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("metric," + ",".join(headers) + ",Avg\n")
        for name in metrics:
            vals = [getattr(c, name) for c in ordered]
            avg = float(np.mean(vals))
            fh.write(name + "," + ",".join(_fmt(v) for v in vals)
                     + f",{_fmt(avg)}\n")


def write_gain_table_csv(path, cells):
    _write_metric_table(path, cells, GAIN_TABLE_METRICS)


def write_variance_table_csv(path, cells):
    _write_metric_table(path, cells, VARIANCE_TABLE_METRICS)


def read_metric_table_csv(path):
    """Returns (tp_values, {metric: (per-tp values, avg)})."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    if header[0] != "metric" or header[-1] != "Avg":
        raise ConfigError(f"{path}: unexpected table header")
    tps = [float(h[2:]) for h in header[1:-1]]
    table = {}
    for line in lines[1:]:
        parts = line.split(",")
        table[parts[0]] = (np.array([float(x) for x in parts[1:-1]]),
                           float(parts[-1]))
    return tps, table


# -- standalone vector graphics ---------------------------------------------------

_PALETTE = ("#1f6fb2", "#d1495b", "#3f8f4f", "#8f6fb2", "#b2851f", "#4f8f8f")

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 70, 20, 30, 50


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = np.ceil(lo / step) * step
    vals = []
    v = first
    while v <= hi + 1e-9 * step:
        vals.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return vals


def _tick_label(v):
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:g}"


def write_convergence_svg(path, steps, gains_by_variant, threshold=None,
                          title="evaluation gain vs environment steps"):
    """Self-contained SVG line chart, no external libraries or assets."""
    xs = np.asarray(steps, dtype=float)
    all_y = np.concatenate([np.asarray(g, float) for g in gains_by_variant.values()])
    ylo = float(min(all_y.min(), 0.0 if threshold is None else min(0.0, threshold)))
    yhi = float(max(all_y.max(), 0.0 if threshold is None else threshold))
    if yhi == ylo:
        yhi = ylo + 1.0
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = float(xs.min()), float(xs.max())
    if xhi == xlo:
        xhi = xlo + 1.0

    def px(x):
        return _ML + (x - xlo) / (xhi - xlo) * (_W - _ML - _MR)

    def py(y):
        return _H - _MB - (y - ylo) / (yhi - ylo) * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="18" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{title}</text>',
    ]
    axis = 'stroke="#333" stroke-width="1"'
    grid = 'stroke="#ddd" stroke-width="0.5"'
    parts.append(f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" '
                 f'y2="{_H - _MB}" {axis}/>')
    parts.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" {axis}/>')
    for v in _ticks(xlo, xhi):
        x = px(v)
        parts.append(f'<line x1="{x:.1f}" y1="{_MT}" x2="{x:.1f}" '
                     f'y2="{_H - _MB}" {grid}/>')
        parts.append(f'<text x="{x:.1f}" y="{_H - _MB + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{_tick_label(v)}</text>')
    for v in _ticks(ylo, yhi):
        y = py(v)
        parts.append(f'<line x1="{_ML}" y1="{y:.1f}" x2="{_W - _MR}" '
                     f'y2="{y:.1f}" {grid}/>')
        parts.append(f'<text x="{_ML - 6}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{_tick_label(v)}</text>')
    parts.append(f'<text x="{(_ML + _W - _MR) / 2:.1f}" y="{_H - 10}" '
                 f'text-anchor="middle" font-family="sans-serif" font-size="12">'
                 f'environment steps</text>')
    parts.append(f'<text x="16" y="{(_MT + _H - _MB) / 2:.1f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 16 {(_MT + _H - _MB) / 2:.1f})">'
                 f'gain over SD baseline (%)</text>')
    if threshold is not None:
        y = py(threshold)
        parts.append(f'<line x1="{_ML}" y1="{y:.1f}" x2="{_W - _MR}" y2="{y:.1f}" '
                     f'stroke="#888" stroke-width="1" stroke-dasharray="6,4"/>')
        parts.append(f'<text x="{_W - _MR - 4}" y="{y - 5:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10" fill="#666">'
                     f'threshold {_tick_label(threshold)}%</text>')
    leg_y = _MT + 8
    for i, (name, gains) in enumerate(gains_by_variant.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, gains))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.7"/>')
        parts.append(f'<line x1="{_ML + 10}" y1="{leg_y:.1f}" x2="{_ML + 34}" '
                     f'y2="{leg_y:.1f}" stroke="{color}" stroke-width="1.7"/>')
        parts.append(f'<text x="{_ML + 40}" y="{leg_y + 4:.1f}" '
                     f'font-family="sans-serif" font-size="11">{name}</text>')
        leg_y += 16
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
