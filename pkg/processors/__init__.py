"""
SliceTex 指标后端模块

- 基础后端接口与管理器
- 嵌入后端：inception / vgg / color_stats
- 感知距离后端：lpips / feature_distance
"""

from typing import Any, Dict, Iterable, Optional

from .base_processor import (
    BaseEmbeddingProcessor,
    BasePerceptualProcessor,
    BaseProcessor,
    ProcessorManager,
)
from .embedding_backends import (
    ColorStatisticsProcessor,
    InceptionEmbeddingProcessor,
    VGGEmbeddingProcessor,
)
from .perceptual_backends import FeatureDistanceProcessor, LPIPSProcessor

__version__ = "1.0.0"


def create_default_manager(config: Optional[Dict[str, Any]] = None, extractor=None,
                           names: Optional[Iterable[str]] = None) -> ProcessorManager:
    """
    注册可用后端

    初始化失败的后端（缺少权重或依赖）不会注册，查找时返回None

    Args:
        config: 全局配置字典，读取 device / inception_weights_path
        extractor: 特征提取器，提供时注册 vgg 和 feature_distance 后端
        names: 只注册这些后端，为空时注册全部
    """
    config = config or {}
    device = config.get('device', 'cpu')
    if device == 'auto':
        device = 'cpu'
    wanted = set(names) if names is not None else None

    factories = {
        'color_stats': lambda: ColorStatisticsProcessor(),
        'inception': lambda: InceptionEmbeddingProcessor({
            'device': device,
            'weights_path': config.get('inception_weights_path'),
        }),
        'lpips': lambda: LPIPSProcessor({'device': device}),
    }
    if extractor is not None:
        factories['vgg'] = lambda: VGGEmbeddingProcessor(extractor)
        factories['feature_distance'] = lambda: FeatureDistanceProcessor(extractor)

    manager = ProcessorManager()
    for name, factory in factories.items():
        if wanted is None or name in wanted:
            manager.register_processor(factory())
    return manager


__all__ = [
    "BaseProcessor",
    "BaseEmbeddingProcessor",
    "BasePerceptualProcessor",
    "ProcessorManager",
    "ColorStatisticsProcessor",
    "InceptionEmbeddingProcessor",
    "VGGEmbeddingProcessor",
    "FeatureDistanceProcessor",
    "LPIPSProcessor",
    "create_default_manager",
]
