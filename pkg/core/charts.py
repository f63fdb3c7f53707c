"""Offscreen line chart of actual vs predicted prices (PNG)."""
from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CHART_W, CHART_H = 1200.0, 500.0
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70.0, 20.0, 36.0, 40.0
ACTUAL_COLOR = "#1f77b4"
PREDICTED_COLOR = "#ff7f0e"
GRID_COLOR = (200, 200, 200, 120)


def _ensure_app():
    # QtGui painting needs a QGuiApplication; offscreen avoids a display server
    os.environ.setdefault("QT_QPA_PLATFORM", "offscreen")
    from PySide6.QtGui import QGuiApplication

    app = QGuiApplication.instance()
    if app is None:
        app = QGuiApplication(["charts"])
    return app


def _polyline(values: np.ndarray, lo: float, hi: float, plot):
    from PySide6.QtCore import QPointF
    from PySide6.QtGui import QPainterPath

    n = len(values)
    span = (hi - lo) or 1.0
    step = plot.width() / max(n - 1, 1)
    path = QPainterPath()
    for i, value in enumerate(values):
        point = QPointF(plot.left() + i * step, plot.bottom() - (value - lo) / span * plot.height())
        if i == 0:
            path.moveTo(point)
        else:
            path.lineTo(point)
    return path


def render_chart(
    actual: Sequence[float],
    predicted: Sequence[float],
    path: str | Path,
    title: str = "",
) -> Path:
    """Draw both series on a shared y axis and save as PNG. Raises on failure."""
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if len(actual) == 0 or len(actual) != len(predicted):
        raise ValueError(f"cannot chart {len(actual)} actual vs {len(predicted)} predicted values")

    _ensure_app()
    from PySide6.QtCore import QRectF, Qt
    from PySide6.QtGui import QColor, QFont, QImage, QPainter, QPen

    image = QImage(int(CHART_W), int(CHART_H), QImage.Format_ARGB32)
    image.fill(QColor("white"))
    plot = QRectF(MARGIN_L, MARGIN_T, CHART_W - MARGIN_L - MARGIN_R, CHART_H - MARGIN_T - MARGIN_B)
    lo = float(min(actual.min(), predicted.min()))
    hi = float(max(actual.max(), predicted.max()))

    p = QPainter(image)
    try:
        p.setRenderHint(QPainter.Antialiasing)
        p.setRenderHint(QPainter.TextAntialiasing)
        p.setFont(QFont("Sans", 9))

        grid = QPen(QColor(*GRID_COLOR), 1, Qt.DashLine)
        for k in range(5):
            y = plot.bottom() - k * plot.height() / 4
            p.setPen(grid)
            p.drawLine(int(plot.left()), int(y), int(plot.right()), int(y))
            p.setPen(QPen(Qt.black))
            p.drawText(QRectF(0, y - 8, MARGIN_L - 6, 16), Qt.AlignRight | Qt.AlignVCenter, f"{lo + k * (hi - lo) / 4:.2f}")
        p.setPen(QPen(Qt.black, 1.2))
        p.drawRect(plot)

        p.setBrush(Qt.NoBrush)
        for values, color in ((actual, ACTUAL_COLOR), (predicted, PREDICTED_COLOR)):
            p.setPen(QPen(QColor(color), 1.4))
            p.drawPath(_polyline(values, lo, hi, plot))

        p.setPen(QPen(Qt.black))
        p.drawText(QRectF(MARGIN_L, 6, plot.width(), 22), Qt.AlignLeft | Qt.AlignVCenter, title)
        for offset, (label, color) in enumerate((("actual", ACTUAL_COLOR), ("predicted", PREDICTED_COLOR))):
            x = plot.right() - 190 + offset * 100
            p.setPen(QPen(QColor(color), 3))
            p.drawLine(int(x), 17, int(x + 20), 17)
            p.setPen(QPen(Qt.black))
            p.drawText(QRectF(x + 26, 8, 70, 18), Qt.AlignLeft | Qt.AlignVCenter, label)
        p.drawText(QRectF(plot.left(), plot.bottom() + 8, plot.width(), 20), Qt.AlignHCenter, f"test step (n = {len(actual)})")
    finally:
        p.end()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not image.save(str(path), "PNG"):
        raise OSError(f"could not write {path}")
    return path


def try_render_chart(actual, predicted, path: str | Path, title: str = "") -> Optional[Path]:
    """Best-effort wrapper: failures are logged, never raised."""
    try:
        return render_chart(actual, predicted, path, title)
    except Exception as exc:  # noqa: BLE001
        logger.warning("chart not written (%s: %s)", type(exc).__name__, exc)
        return None
