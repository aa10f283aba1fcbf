"""Report bundle: SVG figures from the metric tables plus the hash manifest."""
import hashlib
import json
import logging
import math
from pathlib import Path

import numpy as np
from jinja2 import Environment, FileSystemLoader

from activations.model import StackedDeviation
from exceptions import MissingInputs, SchemaError
from landscape.model import LandscapeCurve
from report.layout import OutputLayout
from report.model import Manifest, TOOL_VERSION
from report.tables import read_table
from settings import settings
from utils.model_utilities import write_atomic, write_model_json

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).parent / 'templates'
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")

PRODUCERS = {
    "runs": "train",
    "landscape": "landscape",
    "pca": "pca",
    "ccbh": "interp",
    "imbh": "interp",
    "spectra": "spectra",
    "activations": "activations",
    "predictions": "predict",
}
FIGURE_TABLES = ("runs", "landscape", "ccbh", "imbh", "activations")

templates = Environment(loader=FileSystemLoader(TEMPLATE_DIR), autoescape=True,
                        trim_blocks=True, lstrip_blocks=True, keep_trailing_newline=True)


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _label(value: float) -> str:
    if not math.isfinite(value):
        return "inf" if value > 0 else "nan"
    return f"{value:.3g}"


def read_payload(path: Path) -> dict:
    """JSON artifact written by a metric command: ``{config_hash, seed, ...}``."""
    return json.loads(path.read_text(encoding='utf-8'))


# ----------------------------------------------------------------- line panels

def _polyline(xs, ys, x_range, y_range, width, height) -> str:
    (x0, x1), (y0, y1) = x_range, y_range
    points = []
    for x, y in zip(xs, ys):
        px = (x - x0) / (x1 - x0) * width
        py = height - (y - y0) / (y1 - y0) * height
        points.append(f"{_fmt(px)},{_fmt(py)}")
    return " ".join(points)


def render_landscape(curves: dict[str, dict[str, LandscapeCurve]], title: str) -> str:
    """One panel per method, one centred-mean line with a +-sigma band per size."""
    panel_w, panel_h, margin = 220, 160, 50
    methods = list(curves)
    sizes = list(dict.fromkeys(size for per_size in curves.values() for size in per_size))
    colors = {size: PALETTE[i % len(PALETTE)] for i, size in enumerate(sizes)}
    panels = []
    for index, method in enumerate(methods):
        finite = [(size, curve) for size, curve in curves[method].items() if not curve.diverged]
        for size, curve in curves[method].items():
            if curve.diverged:
                logger.warning(f"skipping diverged landscape {method}/{size}")
        panel = dict(title=method, x=margin + index * (panel_w + margin), y=50, series=[],
                     x_min="", x_max="", y_min="", y_max="")
        if finite:
            alphas = finite[0][1].grid.alphas
            bands = []
            for size, curve in finite:
                mean = curve.centered_mean
                sigma = np.sqrt(np.asarray(curve.variance))
                bands.append((size, mean, sigma))
            low = min(float(np.min(mean - sigma)) for _, mean, sigma in bands)
            high = max(float(np.max(mean + sigma)) for _, mean, sigma in bands)
            if high <= low:
                high = low + 1.0
            x_range = (float(alphas[0]), float(alphas[-1]))
            for size, mean, sigma in bands:
                upper = _polyline(alphas, mean + sigma, x_range, (low, high), panel_w, panel_h)
                lower = _polyline(alphas[::-1], (mean - sigma)[::-1], x_range, (low, high),
                                  panel_w, panel_h)
                panel["series"].append(dict(
                    color=colors[size], band=f"{upper} {lower}",
                    points=_polyline(alphas, mean, x_range, (low, high), panel_w, panel_h)))
            panel.update(x_min=_label(x_range[0]), x_max=_label(x_range[1]),
                         y_min=_label(low), y_max=_label(high))
        panels.append(panel)
    width = margin + len(methods) * (panel_w + margin)
    legend = [dict(x=margin + i * 90, color=colors[size], label=size) for i, size in enumerate(sizes)]
    return templates.get_template("line_panels.svg.j2").render(
        title=title, width=width, height=panel_h + 110, panel_w=panel_w, panel_h=panel_h,
        panels=panels, legend=legend)


# -------------------------------------------------------------------- heatmaps

def _shade(value: float, low: float, high: float) -> tuple[str, str]:
    if not math.isfinite(value):
        return "#bbbbbb", "#000000"
    t = 0.0 if high <= low else (value - low) / (high - low)
    t = min(max(t, 0.0), 1.0)
    red = round(255 - t * (255 - 180))
    green = round(255 - t * (255 - 4))
    blue = round(255 - t * (255 - 38))
    return f"#{red:02x}{green:02x}{blue:02x}", "#ffffff" if t > 0.6 else "#000000"


def heatmap_block(title: str, row_labels: list[str], col_labels: list[str],
                  values: list[list[float]]) -> dict:
    finite = [v for row in values for v in row if math.isfinite(v)]
    low, high = (min(finite), max(finite)) if finite else (0.0, 1.0)
    return dict(title=title, row_labels=row_labels, col_labels=col_labels,
                values=values, low=low, high=high)


def render_heatmaps(blocks: list[dict], title: str) -> str:
    cell_w, cell_h, left, gap = 48, 20, 130, 50
    y = 50
    placed = []
    width = 0
    for block in blocks:
        rows = []
        for i, label in enumerate(block["row_labels"]):
            cells = []
            for j, value in enumerate(block["values"][i]):
                color, ink = _shade(value, block["low"], block["high"])
                cells.append(dict(x=j * cell_w, color=color, ink=ink, text=_label(value)))
            rows.append(dict(y=i * cell_h, label=label, cells=cells))
        grid_h = len(rows) * cell_h
        columns = [dict(x=j * cell_w + cell_w / 2, text=text)
                   for j, text in enumerate(block["col_labels"])]
        placed.append(dict(title=block["title"], x=left, y=y, rows=rows, columns=columns,
                           grid_h=grid_h))
        width = max(width, left + len(columns) * cell_w + 20)
        y += grid_h + gap
    return templates.get_template("heatmap.svg.j2").render(
        title=title, width=max(width, 300), height=y, blocks=placed,
        cell_w=cell_w, cell_h=cell_h)


# ------------------------------------------------------------------------ bars

def render_bars(groups: dict[str, dict[str, float]], title: str) -> str:
    bar_w, bar_h, gap = 26, 140, 40
    x = 40
    placed = []
    peak = max((v for bars in groups.values() for v in bars.values() if math.isfinite(v)),
               default=1.0) or 1.0
    for name, bars in groups.items():
        items = []
        for i, (label, value) in enumerate(bars.items()):
            height = 0.0 if not math.isfinite(value) else max(value, 0.0) / peak * bar_h
            items.append(dict(x=i * (bar_w + 6), y=_fmt(bar_h - height),
                              text_y=_fmt(bar_h - height - 3), w=bar_w,
                              h=_fmt(height), color=PALETTE[i % len(PALETTE)],
                              text=_label(value), label=label[:6]))
        group_w = max(len(items), 1) * (bar_w + 6)
        placed.append(dict(title=name, x=x, y=50, bars=items, group_w=group_w))
        x += group_w + gap
    return templates.get_template("bars.svg.j2").render(
        title=title, width=x, height=bar_h + 90, groups=placed, bar_h=bar_h)


# ----------------------------------------------------------- figure assembly

def _tables(layout: OutputLayout, names) -> dict[str, tuple[dict, list[dict]]]:
    return {name: read_table(layout.table(name)) for name in names
            if layout.table(name).is_file()}


def _landscape_figure(layout: OutputLayout, rows: list[dict]) -> str:
    final: dict[tuple[str, str], tuple[int, int]] = {}
    for row in rows:
        key = (row["method"], row["size"])
        candidate = (int(row["seed"]), int(row["step"]))
        best = final.get(key)
        if best is None or (candidate[0], -candidate[1]) < (best[0], -best[1]):
            final[key] = candidate
    curves: dict[str, dict[str, LandscapeCurve]] = {}
    for (method, size), (seed, step) in final.items():
        payload = read_payload(layout.curve("landscape", size, f"{method}-s{seed}", step))
        curves.setdefault(method, {})[size] = LandscapeCurve.model_validate(payload["curve"])
    return render_landscape(curves, "1-D loss landscape at the final checkpoint")


def _grid(rows: list[dict], row_key, value: str) -> tuple[list[str], list[str], list[list[float]]]:
    steps = sorted({int(row["step"]) for row in rows})
    labels = list(dict.fromkeys(row_key(row) for row in rows))
    cells = {(row_key(row), int(row["step"])): float(row[value]) for row in rows}
    values = [[cells.get((label, step), math.nan) for step in steps] for label in labels]
    return labels, [str(step) for step in steps], values


def _first_seed(rows: list[dict]) -> list[dict]:
    if not rows:
        return rows
    seed = min(int(row["seed"]) for row in rows)
    return [row for row in rows if int(row["seed"]) == seed]


def _barrier_figure(ccbh_rows: list[dict], imbh_rows: list[dict]) -> str:
    blocks = []
    ccbh_rows, imbh_rows = _first_seed(ccbh_rows), _first_seed(imbh_rows)
    for size in dict.fromkeys(row["size"] for row in ccbh_rows + imbh_rows):
        sized = [row for row in ccbh_rows if row["size"] == size]
        if sized:
            blocks.append(heatmap_block(f"CCBH ({size})",
                                        *_grid(sized, lambda r: r["method"], "barrier")))
        sized = [row for row in imbh_rows if row["size"] == size]
        if sized:
            blocks.append(heatmap_block(f"IMBH ({size})",
                                        *_grid(sized, lambda r: f"{r['method_a']}|{r['method_b']}",
                                               "barrier")))
    return render_heatmaps(blocks, "Barrier heights by checkpoint step")


def _activation_figures(layout: OutputLayout) -> tuple[str, str]:
    payload = read_payload(layout.stacked)
    stacked = [StackedDeviation.model_validate(item) for item in payload["deviations"]]
    if stacked:
        seed = min(item.seed for item in stacked)
        stacked = [item for item in stacked if item.seed == seed]
    blocks = []
    bars: dict[str, dict[str, float]] = {}
    for size in dict.fromkeys(item.size for item in stacked):
        sized = [item for item in stacked if item.size == size]
        final = max(item.step for item in sized)
        for method in dict.fromkeys(item.method for item in sized):
            own = sorted((item for item in sized if item.method == method), key=lambda i: i.step)
            layers = len(own[0].per_layer)
            values = [[item.per_layer[layer] for item in own] for layer in range(layers)]
            blocks.append(heatmap_block(f"{method} ({size})",
                                        [f"layer {layer}" for layer in range(layers)],
                                        [str(item.step) for item in own], values))
            bars.setdefault(size, {})[method] = next(
                (item.last_layer for item in own if item.step == final), math.nan)
    heatmap = render_heatmaps(blocks, "Stacked activation deviation from the reference run")
    return heatmap, render_bars(bars, "Last-layer stacked deviation at the final checkpoint")


def _require(layout: OutputLayout, names) -> None:
    missing = [name for name in names if not layout.table(name).is_file()]
    if "activations" in names and not layout.stacked.is_file():
        missing.append("activations")
    if missing:
        missing = list(dict.fromkeys(missing))
        raise MissingInputs([f"{layout.relative(layout.table(name))} (from `{PRODUCERS[name]}`)"
                             for name in missing],
                            command=PRODUCERS[missing[0]])


def build_report(output_dir: Path | str, partial: bool = False) -> Manifest:
    """Validates every metric table, renders the figures and writes the manifest.

    With ``partial`` only figures whose inputs exist are drawn; otherwise a
    missing input raises.

    Raises:
        MissingInputs: names each missing file and the command producing it
        SchemaError: a table fails validation or disagrees on the config hash
    """
    layout = OutputLayout(output_dir)
    _require(layout, ("runs",) if partial else FIGURE_TABLES)
    tables = _tables(layout, PRODUCERS)
    meta = tables["runs"][0]
    stale = sorted(name for name, (header, _) in tables.items()
                   if header["config_hash"] != meta["config_hash"])
    if stale:
        raise SchemaError({"msg": "tables come from a different config", "tables": stale,
                           "config_hash": meta["config_hash"]})

    figures = {}
    if "landscape" in tables:
        figures["landscape.svg"] = _landscape_figure(layout, tables["landscape"][1])
    if "ccbh" in tables or "imbh" in tables:
        figures["barriers.svg"] = _barrier_figure(tables.get("ccbh", ({}, []))[1],
                                                  tables.get("imbh", ({}, []))[1])
    if layout.stacked.is_file():
        figures["activations.svg"], figures["deviation.svg"] = _activation_figures(layout)
    for name, svg in figures.items():
        write_atomic(layout.plots / name, svg.encode('utf-8'))
        logger.info(f"rendered {name}")
    return write_manifest(layout, meta["config_hash"], int(meta["seed"]))


# -------------------------------------------------------------------- manifest

def _digest(path: Path) -> str:
    sha = hashlib.sha256()
    with path.open('rb') as stream:
        for block in iter(lambda: stream.read(1 << 20), b""):
            sha.update(block)
    return sha.hexdigest()


def _tracked(layout: OutputLayout) -> list[Path]:
    skipped = {settings.database_name, layout.manifest.name}
    return sorted((path for path in layout.root.rglob("*")
                   if path.is_file() and path.name not in skipped
                   and not path.name.startswith(".")
                   and not path.name.startswith(settings.database_name)),
                  key=lambda path: layout.relative(path))


def build_manifest(layout: OutputLayout, config_hash: str, seed: int) -> Manifest:
    return Manifest(tool_version=TOOL_VERSION, config_hash=config_hash, seed=seed,
                    files={layout.relative(path): _digest(path) for path in _tracked(layout)})


def write_manifest(layout: OutputLayout, config_hash: str, seed: int) -> Manifest:
    manifest = build_manifest(layout, config_hash, seed)
    write_model_json(manifest, layout.manifest)
    logger.info(f"manifest lists {len(manifest.files)} files")
    return manifest


def verify(output_dir: Path | str) -> Manifest:
    """Re-hashes every file listed in the manifest and re-checks table headers.

    Raises:
        MissingInputs: no manifest (run ``report`` first)
        SchemaError: changed, missing or unlisted files, or a foreign config hash
    """
    layout = OutputLayout(output_dir)
    if not layout.manifest.is_file():
        raise MissingInputs([layout.relative(layout.manifest)], command="report")
    manifest = Manifest.model_validate_json(layout.manifest.read_text(encoding='utf-8'))
    current = build_manifest(layout, manifest.config_hash, manifest.seed).files
    problems = {
        "changed": sorted(name for name in manifest.files
                          if name in current and current[name] != manifest.files[name]),
        "missing": sorted(name for name in manifest.files if name not in current),
        "unlisted": sorted(name for name in current if name not in manifest.files),
    }
    foreign = []
    for name in PRODUCERS:
        if layout.table(name).is_file():
            header, _ = read_table(layout.table(name))
            if header["config_hash"] != manifest.config_hash or int(header["seed"]) != manifest.seed:
                foreign.append(layout.relative(layout.table(name)))
    if foreign:
        problems["foreign"] = foreign
    problems = {key: value for key, value in problems.items() if value}
    if problems:
        raise SchemaError({"msg": "manifest verification failed", **problems})
    logger.info(f"verified {len(manifest.files)} files")
    return manifest
