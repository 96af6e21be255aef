"""
指标后端处理器接口

所有嵌入后端和感知距离后端都应该继承这里的基类，由 ProcessorManager 统一注册和查找
"""

from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Sequence
import logging

import numpy as np


class BaseProcessor(ABC):
    """指标后端抽象类"""

    # 后端类型：embedding 或 perceptual
    kind = 'base'

    def __init__(self, name: str, config: Optional[Dict[str, Any]] = None):
        """
        初始化处理器

        Args:
            name: 后端名称
            config: 后端配置字典
        """
        self.name = name
        self.config = config or {}
        self.logger = logging.getLogger(f"processor.{name}")
        self.available = True
        self.stats = {
            'images_processed': 0,
            'calls': 0,
        }

    @abstractmethod
    def get_processor_info(self) -> Dict[str, Any]:
        """
        获取后端信息（标识、版本、维度等），会写入报告

        Returns:
            包含后端信息的字典
        """
        pass

    @property
    def identifier(self) -> str:
        info = self.get_processor_info()
        return f"{self.name}:{info.get('version', 'unknown')}"

    def get_stats(self) -> Dict[str, Any]:
        """获取后端统计信息"""
        return {
            'name': self.name,
            'kind': self.kind,
            'available': self.available,
            'stats': self.stats.copy()
        }

    def update_stats(self, images: int):
        self.stats['calls'] += 1
        self.stats['images_processed'] += images

    def initialize(self) -> bool:
        """
        初始化后端资源（加载网络权重等）

        Returns:
            初始化是否成功
        """
        return True


class BaseEmbeddingProcessor(BaseProcessor):
    """图像嵌入后端：一组图像 -> n×d 嵌入矩阵"""

    kind = 'embedding'

    @abstractmethod
    def embed(self, images: Sequence[np.ndarray]) -> np.ndarray:
        """
        计算图像嵌入

        Args:
            images: H×W×3 图像列表，取值[0,1]

        Returns:
            n×d 嵌入矩阵
        """
        pass


class BasePerceptualProcessor(BaseProcessor):
    """感知距离后端：两张同尺寸图像 -> 非负距离"""

    kind = 'perceptual'

    @abstractmethod
    def distance(self, image_a: np.ndarray, image_b: np.ndarray) -> float:
        """相同图像距离为0"""
        pass


class ProcessorManager:
    """后端管理器"""

    def __init__(self):
        self.processors: Dict[str, BaseProcessor] = {}
        self.logger = logging.getLogger("processor_manager")

    def register_processor(self, processor: BaseProcessor) -> bool:
        """
        注册后端

        Args:
            processor: 后端实例

        Returns:
            注册是否成功
        """
        try:
            if not isinstance(processor, BaseProcessor):
                raise ValueError("后端必须继承BaseProcessor类")

            if not processor.initialize():
                raise ValueError(f"后端 {processor.name} 初始化失败")

            self.processors[processor.name] = processor
            self.logger.info(f"后端 {processor.name} 注册成功")
            return True

        except Exception as e:
            self.logger.error(f"注册后端失败: {e}")
            return False

    def get(self, processor_name: str, kind: Optional[str] = None) -> Optional[BaseProcessor]:
        """按名称查找可用的后端，找不到返回None"""
        processor = self.processors.get(processor_name)
        if processor is None or not processor.available:
            return None
        if kind is not None and processor.kind != kind:
            return None
        return processor

    def list_processors(self, kind: Optional[str] = None) -> List[str]:
        return [name for name, p in self.processors.items() if kind is None or p.kind == kind]

    def get_all_stats(self) -> Dict[str, Any]:
        """获取所有后端的统计信息"""
        return {
            'total_processors': len(self.processors),
            'available_processors': len([p for p in self.processors.values() if p.available]),
            'processors': [p.get_stats() for p in self.processors.values()]
        }
