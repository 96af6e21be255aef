"""
VGG19特征统计嵌入后端

复用合成用的特征提取器，取指定层激活的空间均值和标准差作为嵌入
"""

from typing import Any, Dict, Sequence

import numpy as np
import torch

from ..base_processor import BaseEmbeddingProcessor


class VGGEmbeddingProcessor(BaseEmbeddingProcessor):
    """VGG19层统计嵌入"""

    def __init__(self, extractor, config: Dict[str, Any] = None):
        """
        Args:
            extractor: core.feature_extractor.FeatureExtractor 实例
            config: 可选 layer（默认取提取器最深的选中层）
        """
        super().__init__('vgg', config)
        self.extractor = extractor
        self.layer = self.config.get('layer', extractor.layer_tags[-1])
        if self.layer not in extractor.layer_tags:
            self.logger.error(f"提取器未选中层 {self.layer}")
            self.available = False

    def embed(self, images: Sequence[np.ndarray]) -> np.ndarray:
        vectors = []
        with torch.no_grad():
            for img in images:
                features = self.extractor.extract(torch.as_tensor(np.asarray(img), dtype=torch.float32))
                layer = features.get(self.layer).reshape(-1, features.get(self.layer).shape[-1])
                vectors.append(torch.cat([layer.mean(dim=0), layer.std(dim=0)]).cpu().double().numpy())
        self.update_stats(len(images))
        return np.stack(vectors)

    def get_processor_info(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'version': self.extractor.weights_checksum[:12],
            'layer': self.layer,
        }
