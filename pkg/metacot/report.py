"""
Emisión de reportes como acciones IO.

Nada aquí escribe al construirse: cada función devuelve un ``IO`` que la
CLI ejecuta una sola vez. Los textos son deterministas (claves ordenadas,
columnas fijas, flotantes con ``repr``) para que dos corridas iguales
produzcan los mismos bytes.
"""

import csv
import io
import math
import os
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Tuple

from core.io_monad import IO, io_write_json, io_write_text

from .experiment import SWEEP_COLUMNS, PipelineReport, SweepResult, to_json_value

Series = Mapping[str, Sequence[Tuple[float, float]]]

_PALETTE = ('#1f77b4', '#d62728', '#2ca02c', '#9467bd', '#ff7f0e', '#8c564b')


def _cell(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else ''
    return str(value)


def csv_text(rows: Iterable[Mapping[str, Any]], columns: Sequence[str]) -> str:
    """Filas a CSV con encabezado fijo; columnas ausentes quedan vacías."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buffer.getvalue()


def io_write_csv(path: str, rows: Iterable[Mapping[str, Any]], columns: Sequence[str]) -> IO[str]:
    return IO(lambda: csv_text(rows, columns)).bind(lambda text: io_write_text(path, text))


# GRÁFICOS SVG

def _scale(values: List[float], log: bool, low: float, high: float):
    data = [math.log10(v) for v in values] if log else list(values)
    lo, hi = min(data), max(data)
    span = hi - lo or 1.0

    def project(v: float) -> float:
        t = ((math.log10(v) if log else v) - lo) / span
        return low + t * (high - low)

    return project, lo, hi


def svg_line_chart(
    series: Series,
    title: str,
    x_label: str,
    y_label: str,
    log_x: bool = True,
    log_y: bool = True,
    width: int = 560,
    height: int = 380,
) -> str:
    """
    Gráfico de líneas autocontenido. Los puntos no positivos se descartan
    en ejes logarítmicos; una serie vacía deja sólo los ejes.
    """
    def keep(point):
        x, y = point
        if x is None or y is None:
            return False
        return (not log_x or x > 0) and (not log_y or y > 0)

    clean = {name: sorted(filter(keep, points)) for name, points in series.items()}
    xs = [x for points in clean.values() for x, _ in points] or [1.0, 10.0]
    ys = [y for points in clean.values() for _, y in points] or [1.0, 10.0]
    left, right, top, bottom = 70, width - 150, 40, height - 50
    px, x_lo, x_hi = _scale(xs, log_x, left, right)
    py, y_lo, y_hi = _scale(ys, log_y, bottom, top)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{_escape(title)}</text>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{bottom}" x2="{left}" y2="{top}" stroke="black"/>',
        f'<text x="{(left + right) / 2:.1f}" y="{height - 12}" text-anchor="middle">{_escape(x_label)}</text>',
        f'<text x="16" y="{(top + bottom) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(top + bottom) / 2:.1f})">{_escape(y_label)}</text>',
    ]
    for value, position, axis in ((x_lo, left, 'x'), (x_hi, right, 'x'), (y_lo, bottom, 'y'), (y_hi, top, 'y')):
        label = _tick(value, log_x if axis == 'x' else log_y)
        if axis == 'x':
            parts.append(f'<text x="{position}" y="{bottom + 16}" text-anchor="middle">{label}</text>')
        else:
            parts.append(f'<text x="{left - 6}" y="{position + 4}" text-anchor="end">{label}</text>')
    for i, (name, points) in enumerate(sorted(clean.items())):
        color = _PALETTE[i % len(_PALETTE)]
        coords = ' '.join(f'{px(x):.2f},{py(y):.2f}' for x, y in points)
        if len(points) > 1:
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        for x, y in points:
            parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="{color}"/>')
        legend_y = top + 16 * i
        parts.append(f'<rect x="{right + 12}" y="{legend_y - 9}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{right + 28}" y="{legend_y}">{_escape(name)}</text>')
    parts.append('</svg>')
    return '\n'.join(parts) + '\n'


def _tick(value: float, log: bool) -> str:
    return f'{10 ** value:.3g}' if log else f'{value:.3g}'


def _escape(text: str) -> str:
    return text.replace('&', '&amp;').replace('<', '&lt;').replace('>', '&gt;')


def sweep_charts(result: SweepResult) -> Dict[str, str]:
    """Un gráfico por eje barrido: tiempos base, guiado y destilado."""
    charts = {}
    rows = list(result.rows)
    for axis, fixed, label in (('epsilon', ('K', 'M'), '1/epsilon'), ('K', ('M', 'epsilon'), 'K'),
                               ('M', ('K', 'epsilon'), 'M')):
        if len({r[axis] for r in rows}) < 2:
            continue
        series: Dict[str, List[Tuple[float, float]]] = {}
        for row in rows:
            x = 1.0 / row[axis] if axis == 'epsilon' else float(row[axis])
            tag = ', '.join(f'{f}={row[f]:g}' for f in fixed)
            for kind in ('base', 'guided', 'distilled'):
                value = row[f'{kind}_mean']
                if value is not None:
                    series.setdefault(f'{kind} ({tag})', []).append((x, value))
        charts[f'hitting_vs_{axis}.svg'] = svg_line_chart(series, f'hitting time vs {label}', label, 'steps')
    return charts


# ESCRITURA

def io_write_pipeline(out_dir: str, report: PipelineReport, fmt: str = 'json') -> IO[List[str]]:
    """pipeline.json siempre; con ``fmt='csv'`` además una fila por etapa."""
    actions = [io_write_json(os.path.join(out_dir, 'pipeline.json'), report.to_dict())]
    if fmt == 'csv':
        rows = [{'stage': s.name, 'status': s.status, 'error': s.error} for s in report.stages]
        actions.append(io_write_csv(os.path.join(out_dir, 'pipeline.csv'), rows, ('stage', 'status', 'error')))
    return IO.sequence(actions)


def io_write_sweep(out_dir: str, result: SweepResult, charts: bool = True) -> IO[List[str]]:
    """sweep.csv con columnas fijas, sweep.json con pendientes y los SVG."""
    actions = [
        io_write_csv(os.path.join(out_dir, 'sweep.csv'), result.rows, SWEEP_COLUMNS),
        io_write_json(os.path.join(out_dir, 'sweep.json'), result.to_dict()),
    ]
    if charts:
        actions += [io_write_text(os.path.join(out_dir, name), svg) for name, svg in sorted(sweep_charts(result).items())]
    return IO.sequence(actions)


def io_write_payload(path: str, payload: Any) -> IO[str]:
    """Escribe un resultado de subcomando como JSON estable."""
    return io_write_json(path, to_json_value(payload))
