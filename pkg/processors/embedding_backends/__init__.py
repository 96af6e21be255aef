"""
嵌入后端模块初始化文件
"""

from .color_statistics_processor import ColorStatisticsProcessor
from .inception_processor import InceptionEmbeddingProcessor
from .vgg_processor import VGGEmbeddingProcessor

__all__ = [
    'ColorStatisticsProcessor',
    'InceptionEmbeddingProcessor',
    'VGGEmbeddingProcessor'
]
