"""
图像读写

读取 8 位 PNG / JPEG 为 H×W×3 float32 张量（取值[0,1]），输出一律为无损 PNG
"""

from pathlib import Path
from typing import List

import numpy as np
import torch
from PIL import Image

from core.errors import InvalidArgumentError


IMAGE_SUFFIXES = ('.png', '.jpg', '.jpeg')


def load_image(path) -> torch.Tensor:
    """
    读取图像，转换为RGB

    Raises:
        FileNotFoundError: 文件不存在
        InvalidArgumentError: 不支持的格式
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"图像文件不存在: {path}")
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise InvalidArgumentError(f"不支持的图像格式: {path.suffix}")
    with Image.open(path) as image:
        array = np.asarray(image.convert('RGB'), dtype=np.float32) / 255.0
    return torch.from_numpy(array.copy())


def to_uint8(img) -> np.ndarray:
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
    array = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(array * 255.0).astype(np.uint8)


def save_image(img, path) -> Path:
    """保存为PNG，父目录不存在时自动创建"""
    path = Path(path)
    if path.suffix.lower() != '.png':
        path = path.with_suffix('.png')
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path, format='PNG')
    return path


def list_images(directory) -> List[Path]:
    """目录下的图像文件，按文件名排序"""
    directory = Path(directory)
    if not directory.is_dir():
        return []
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
