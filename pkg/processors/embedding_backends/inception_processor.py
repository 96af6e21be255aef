"""
Inception-v3 嵌入后端（默认的FID/KID嵌入网络）

取全局池化后的2048维特征，权重从本地文件加载：
显式 weights_path -> SLICETEX_WEIGHTS_DIR/inception_v3.pth
"""

import os
from pathlib import Path
from typing import Any, Dict, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

try:
    import torchvision
    TORCHVISION_AVAILABLE = True
except ImportError:
    TORCHVISION_AVAILABLE = False

from core.feature_extractor import IMAGENET_MEAN, IMAGENET_STD, WEIGHTS_DIR_ENV, file_sha256

from ..base_processor import BaseEmbeddingProcessor


INCEPTION_WEIGHTS_FILE = 'inception_v3.pth'
INCEPTION_INPUT_SIZE = 299


class InceptionEmbeddingProcessor(BaseEmbeddingProcessor):
    """Inception-v3 池化特征嵌入"""

    def __init__(self, config: Dict[str, Any] = None):
        super().__init__('inception', config)
        self.weights_path = self.config.get('weights_path')
        self.batch_size = self.config.get('batch_size', 16)
        self.device = torch.device(self.config.get('device', 'cpu'))
        self.model = None
        self.checksum = 'unloaded'

    def _resolve_weights(self) -> Path:
        if self.weights_path:
            return Path(self.weights_path)
        return Path(os.environ.get(WEIGHTS_DIR_ENV, '.')) / INCEPTION_WEIGHTS_FILE

    def initialize(self) -> bool:
        if not TORCHVISION_AVAILABLE:
            self.logger.error("torchvision未安装，请运行: pip install torchvision")
            self.available = False
            return False

        path = self._resolve_weights()
        if not path.is_file():
            self.logger.warning(f"Inception权重不存在: {path}")
            self.available = False
            return False

        try:
            # 预训练权重期望 [-1,1] 输入，transform_input 把 ImageNet 归一化的输入换算过去
            model = torchvision.models.inception_v3(weights=None, aux_logits=True, transform_input=True,
                                                    init_weights=False)
            model.load_state_dict(torch.load(path, map_location='cpu', weights_only=True))
            model.fc = nn.Identity()
            self.model = model.to(self.device).eval()
            self.checksum = file_sha256(path)[:12]
            self.logger.info(f"Inception嵌入后端初始化成功: {path}")
            return True
        except Exception as e:
            self.logger.error(f"Inception权重加载失败: {e}")
            self.available = False
            return False

    def _prepare(self, images: Sequence[np.ndarray]) -> torch.Tensor:
        batch = torch.stack([
            torch.as_tensor(np.asarray(img), dtype=torch.float32).permute(2, 0, 1) for img in images
        ]).to(self.device)
        batch = F.interpolate(batch, size=(INCEPTION_INPUT_SIZE, INCEPTION_INPUT_SIZE),
                              mode='bilinear', align_corners=False)
        mean = torch.tensor(IMAGENET_MEAN, device=self.device).view(1, 3, 1, 1)
        std = torch.tensor(IMAGENET_STD, device=self.device).view(1, 3, 1, 1)
        return (batch - mean) / std

    def embed(self, images: Sequence[np.ndarray]) -> np.ndarray:
        if self.model is None:
            raise RuntimeError("Inception嵌入后端未初始化")
        outputs = []
        with torch.no_grad():
            for start in range(0, len(images), self.batch_size):
                chunk = images[start:start + self.batch_size]
                outputs.append(self.model(self._prepare(chunk)).cpu().double().numpy())
        self.update_stats(len(images))
        return np.concatenate(outputs, axis=0)

    def get_processor_info(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'version': self.checksum,
            'dimension': 2048,
        }
