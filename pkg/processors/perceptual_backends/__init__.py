"""
感知距离后端模块初始化文件
"""

from .feature_distance_processor import FeatureDistanceProcessor
from .lpips_processor import LPIPSProcessor

__all__ = [
    'FeatureDistanceProcessor',
    'LPIPSProcessor'
]
