"""
特征距离感知后端

LPIPS风格的距离但不使用学习的线性层：
逐层对通道向量做单位化，求空间平均的平方差，再对层取平均
"""

from typing import Any, Dict

import numpy as np
import torch

from ..base_processor import BasePerceptualProcessor


class FeatureDistanceProcessor(BasePerceptualProcessor):
    """基于VGG19特征的感知距离"""

    def __init__(self, extractor, config: Dict[str, Any] = None):
        """
        Args:
            extractor: core.feature_extractor.FeatureExtractor 实例
            config: 可选 layers（默认使用提取器的高度切片层）
        """
        super().__init__('feature_distance', config)
        self.extractor = extractor
        self.layers = list(self.config.get('layers', extractor.height_layers))

    @staticmethod
    def _unit(features: torch.Tensor) -> torch.Tensor:
        return features / (features.norm(dim=-1, keepdim=True) + 1e-10)

    def distance(self, image_a: np.ndarray, image_b: np.ndarray) -> float:
        with torch.no_grad():
            stack_a = self.extractor.extract(torch.as_tensor(np.asarray(image_a), dtype=torch.float32))
            stack_b = self.extractor.extract(torch.as_tensor(np.asarray(image_b), dtype=torch.float32))
            per_layer = [
                ((self._unit(stack_a.get(tag)) - self._unit(stack_b.get(tag))) ** 2).sum(dim=-1).mean()
                for tag in self.layers
            ]
        self.update_stats(2)
        return float(torch.stack(per_layer).mean())

    def get_processor_info(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'version': self.extractor.weights_checksum[:12],
            'layers': self.layers,
        }
