"""
颜色统计嵌入后端

不依赖网络权重的轻量嵌入：逐通道均值、标准差、分位数和梯度能量
适合快速的桌面验证和测试
"""

from typing import Any, Dict, Sequence

import numpy as np

from ..base_processor import BaseEmbeddingProcessor


class ColorStatisticsProcessor(BaseEmbeddingProcessor):
    """颜色统计嵌入"""

    QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)

    def __init__(self, config: Dict[str, Any] = None):
        super().__init__('color_stats', config)
        self.quantiles = tuple(self.config.get('quantiles', self.QUANTILES))

    def _describe(self, image: np.ndarray) -> np.ndarray:
        pixels = image.reshape(-1, 3)
        grad_y = np.diff(image, axis=0)
        grad_x = np.diff(image, axis=1)
        energy = np.concatenate([
            np.sqrt((grad_y ** 2).reshape(-1, 3).mean(axis=0)),
            np.sqrt((grad_x ** 2).reshape(-1, 3).mean(axis=0)),
        ])
        return np.concatenate([
            pixels.mean(axis=0),
            pixels.std(axis=0),
            np.quantile(pixels, self.quantiles, axis=0).reshape(-1),
            energy,
        ])

    def embed(self, images: Sequence[np.ndarray]) -> np.ndarray:
        vectors = np.stack([self._describe(np.asarray(img, dtype=np.float64)) for img in images])
        self.update_stats(len(images))
        return vectors

    def get_processor_info(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'version': '1',
            'dimension': 3 * (2 + len(self.quantiles)) + 6,
        }
