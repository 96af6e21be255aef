"""
LPIPS感知距离后端

需要安装 lpips 包；未安装时后端标记为不可用，其余指标不受影响
"""

from typing import Any, Dict

import numpy as np
import torch

try:
    import lpips
    LPIPS_AVAILABLE = True
except ImportError:
    LPIPS_AVAILABLE = False

from ..base_processor import BasePerceptualProcessor


class LPIPSProcessor(BasePerceptualProcessor):
    """LPIPS 感知距离"""

    def __init__(self, config: Dict[str, Any] = None):
        super().__init__('lpips', config)
        self.net = self.config.get('net', 'alex')
        self.device = torch.device(self.config.get('device', 'cpu'))
        self.model = None

    def initialize(self) -> bool:
        if not LPIPS_AVAILABLE:
            self.logger.error("lpips库未安装，请运行: pip install lpips")
            self.available = False
            return False
        try:
            self.model = lpips.LPIPS(net=self.net, verbose=False).to(self.device).eval()
            self.logger.info(f"LPIPS后端初始化成功，网络: {self.net}")
            return True
        except Exception as e:
            self.logger.error(f"LPIPS初始化失败: {e}")
            self.available = False
            return False

    def _to_input(self, image: np.ndarray) -> torch.Tensor:
        # LPIPS 要求输入范围 [-1, 1]
        tensor = torch.as_tensor(np.asarray(image), dtype=torch.float32).permute(2, 0, 1)
        return (tensor * 2 - 1).unsqueeze(0).to(self.device)

    def distance(self, image_a: np.ndarray, image_b: np.ndarray) -> float:
        if self.model is None:
            raise RuntimeError("LPIPS后端未初始化")
        with torch.no_grad():
            value = self.model(self._to_input(image_a), self._to_input(image_b))
        self.update_stats(2)
        return max(float(value.item()), 0.0)

    def get_processor_info(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'version': getattr(lpips, '__version__', 'unknown') if LPIPS_AVAILABLE else 'missing',
            'net': self.net,
        }
