"""Static SVG renders of run results.

Hand-rolled SVG (rects, lines, text) so plotting needs no extra
dependency; the outputs are small standalone files any browser renders.
"""

from .errors import DataError
from .metrics import lower_median

_FONT = 'font-family="monospace" font-size="12"'


def _esc(text) -> str:
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def confusion_svg(percent, labels) -> str:
    """Heatmap of an integer percent confusion matrix; rows are true labels."""
    n = len(percent)
    if n == 0 or any(len(row) != n for row in percent):
        raise DataError("confusion_svg needs a non-empty square matrix")
    if len(labels) != n:
        raise DataError(f"need {n} labels, got {len(labels)}")
    cell, left, top = 46, 86, 56
    width, height = left + n * cell + 20, top + n * cell + 46
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + n * cell / 2}" y="20" text-anchor="middle" {_FONT}>'
        "predicted participant</text>",
        f'<text x="16" y="{top + n * cell / 2}" text-anchor="middle" {_FONT} '
        f'transform="rotate(-90 16 {top + n * cell / 2})">true participant</text>',
    ]
    for i, row in enumerate(percent):
        y = top + i * cell
        parts.append(
            f'<text x="{left - 8}" y="{y + cell / 2 + 4}" text-anchor="end" {_FONT}>'
            f"{_esc(labels[i])}</text>"
        )
        for j, value in enumerate(row):
            x = left + j * cell
            v = max(0, min(100, int(value)))
            # white through mid blue; dark cells get white text
            shade = 255 - round(1.8 * v)
            fill = f"rgb({shade},{shade},255)"
            color = "white" if v > 55 else "black"
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{fill}" stroke="#888"/>'
            )
            parts.append(
                f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                f'fill="{color}" {_FONT}>{v}</text>'
            )
    for j in range(n):
        x = left + j * cell
        parts.append(
            f'<text x="{x + cell / 2}" y="{top - 8}" text-anchor="middle" {_FONT}>'
            f"{_esc(labels[j])}</text>"
        )
    parts.append("</svg>")
    return "\n".join(parts)


def _hinges(values):
    """(min, lower hinge, median, upper hinge, max) with inclusive halves."""
    vals = sorted(float(v) for v in values)
    n = len(vals)
    med = lower_median(vals)
    lower = vals[: (n + 1) // 2]
    upper = vals[n // 2 :]
    return vals[0], lower_median(lower), med, lower_median(upper), vals[-1]


def boxplot_svg(per_target) -> str:
    """Box plot of per-target fold accuracies [0, 1]; absent targets stay blank."""
    n = len(per_target)
    if n == 0:
        raise DataError("boxplot_svg needs at least one target")
    slot, left, top, plot_h = 52, 56, 24, 220
    width, height = left + n * slot + 16, top + plot_h + 44
    ax_y = lambda v: top + (1.0 - v) * plot_h
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = ax_y(tick)
        parts.append(
            f'<line x1="{left}" y1="{y}" x2="{left + n * slot}" y2="{y}" stroke="#ddd"/>'
        )
        parts.append(
            f'<text x="{left - 6}" y="{y + 4}" text-anchor="end" {_FONT}>{tick:.2f}</text>'
        )
    for t, entry in enumerate(per_target):
        cx = left + t * slot + slot / 2
        parts.append(
            f'<text x="{cx}" y="{top + plot_h + 20}" text-anchor="middle" {_FONT}>{t}</text>'
        )
        values = entry.get("values", [])
        if not values:
            parts.append(
                f'<text x="{cx}" y="{ax_y(0.5)}" text-anchor="middle" fill="#999" '
                f"{_FONT}>n/a</text>"
            )
            continue
        lo, q1, med, q3, hi = _hinges(values)
        half = slot * 0.3
        parts.append(
            f'<line x1="{cx}" y1="{ax_y(lo)}" x2="{cx}" y2="{ax_y(hi)}" stroke="black"/>'
        )
        parts.append(
            f'<rect x="{cx - half}" y="{ax_y(q3)}" width="{2 * half}" '
            f'height="{max(1.0, ax_y(q1) - ax_y(q3))}" fill="#cfd8ff" stroke="black"/>'
        )
        parts.append(
            f'<line x1="{cx - half}" y1="{ax_y(med)}" x2="{cx + half}" y2="{ax_y(med)}" '
            'stroke="black" stroke-width="2"/>'
        )
    parts.append(
        f'<text x="{left + n * slot / 2}" y="{height - 6}" text-anchor="middle" {_FONT}>'
        "target</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts)
