"""
报告输出：纯文本表、CSV 文件、对比网格图
"""

import csv
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np
from PIL import Image

from .image_io import to_uint8


logger = logging.getLogger('ReportWriter')

DEFAULT_GUTTER = 4
GUTTER_COLOR = (255, 255, 255)


def _format_cell(value: Any) -> str:
    if value is None:
        return '-'
    if isinstance(value, bool):
        return 'yes' if value else 'no'
    if isinstance(value, float):
        return f"{value:.4f}" if abs(value) >= 1e-3 or value == 0 else f"{value:.3e}"
    return str(value)


def format_table(rows: Sequence[Dict[str, Any]], columns: Sequence[str], title: Optional[str] = None) -> str:
    """定宽纯文本表，缺失值显示为 '-'"""
    cells = [[_format_cell(row.get(column)) for column in columns] for row in rows]
    widths = [max([len(column)] + [len(line[i]) for line in cells]) for i, column in enumerate(columns)]
    lines = []
    if title:
        lines.append(title)
    lines.append('  '.join(column.rjust(width) for column, width in zip(columns, widths)))
    lines.append('  '.join('-' * width for width in widths))
    for line in cells:
        lines.append('  '.join(cell.rjust(width) for cell, width in zip(line, widths)))
    return '\n'.join(lines) + '\n'


def write_text(text: str, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding='utf-8')
    return path


def write_csv(rows: Sequence[Dict[str, Any]], columns: Sequence[str], path,
              header: Optional[Dict[str, Any]] = None) -> Path:
    """
    写CSV；header 中的键值对以 '# key=value' 注释行写在表头之前（记录种子和后端）
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        for key, value in (header or {}).items():
            f.write(f"# {key}={value}\n")
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(['' if row.get(column) is None else row.get(column) for column in columns])
    logger.info(f"CSV已写入: {path}")
    return path


def grid_size(rows: int, cols: int, tile: int, gutter: int = DEFAULT_GUTTER):
    """网格图尺寸 (宽, 高) = (cols×(tile+gutter), rows×(tile+gutter))"""
    return cols * (tile + gutter), rows * (tile + gutter)


def _fit_tile(img, tile: int) -> Image.Image:
    image = Image.fromarray(to_uint8(img))
    if image.size != (tile, tile):
        image = image.resize((tile, tile), Image.Resampling.BICUBIC)
    return image


def compose_grid(rows: Sequence[Sequence[Any]], tile: int = 256, gutter: int = DEFAULT_GUTTER) -> Image.Image:
    """
    对比网格图：每行一个纹理（参考 | 基线 | 本方法），缺失的格子留白

    Args:
        rows: 每行若干 H×W×3 图像，None 表示空格
        tile: 每格边长，图像按需缩放
        gutter: 每格右侧和下方的间隔
    """
    if not rows:
        raise ValueError("网格至少需要一行")
    cols = max(len(row) for row in rows)
    canvas = Image.new('RGB', grid_size(len(rows), cols, tile, gutter), GUTTER_COLOR)
    for r, row in enumerate(rows):
        for c, img in enumerate(row):
            if img is None:
                continue
            canvas.paste(_fit_tile(img, tile), (c * (tile + gutter), r * (tile + gutter)))
    return canvas


def save_grid(rows: Sequence[Sequence[Any]], path, tile: int = 256, gutter: int = DEFAULT_GUTTER) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    compose_grid(rows, tile, gutter).save(path, format='PNG')
    logger.info(f"对比网格图已写入: {path}")
    return path


def mean_std_cell(values: Sequence[float]) -> str:
    """'均值 ± 标准差' 单元格"""
    array = np.asarray(values, dtype=np.float64)
    return f"{array.mean():.2f} ± {array.std():.2f}"
