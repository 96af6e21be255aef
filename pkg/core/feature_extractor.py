"""
VGG19特征提取器

负责加载冻结的VGG19卷积主干、图像预处理、按层选择策略提取激活
- 通道切片层：前12个卷积（第1~4个卷积块）
- 高度切片层：每个卷积块的前两个卷积（共10层）
激活取ReLU之后的输出，标签形如 relu3_2
"""

import hashlib
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from torch import nn

try:
    import torchvision
    TORCHVISION_AVAILABLE = True
except ImportError:
    TORCHVISION_AVAILABLE = False

from .errors import ConfigError, FeatureDisabledError, InvalidArgumentError
from .sw_loss import FeatureStack


WEIGHTS_DIR_ENV = 'SLICETEX_WEIGHTS_DIR'
DEFAULT_WEIGHTS_FILE = 'vgg19_features.pth'

# torchvision 预训练权重对应的 ImageNet 统计量
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# VGG19 每个卷积块的卷积数和通道数
VGG19_BLOCKS = ((2, 64), (2, 128), (4, 256), (4, 512), (4, 512))


def _build_layer_table() -> Dict[str, Tuple[int, int]]:
    """标签 -> (卷积块编号, 通道数)，按网络深度排列"""
    table = {}
    for block, (convs, channels) in enumerate(VGG19_BLOCKS, start=1):
        for index in range(1, convs + 1):
            table[f"relu{block}_{index}"] = (block, channels)
    return table


VGG19_LAYERS = _build_layer_table()
VGG19_TAGS = list(VGG19_LAYERS)

DEFAULT_CHANNEL_LAYERS = VGG19_TAGS[:12]
DEFAULT_HEIGHT_LAYERS = [f"relu{block}_{index}" for block in range(1, 6) for index in (1, 2)]


@dataclass
class LayerSelection:
    """层选择策略"""
    channel_layers: List[str] = field(default_factory=lambda: list(DEFAULT_CHANNEL_LAYERS))
    height_layers: List[str] = field(default_factory=lambda: list(DEFAULT_HEIGHT_LAYERS))

    def validate(self):
        if not self.channel_layers:
            raise ConfigError("通道切片层列表不能为空")
        if not self.height_layers:
            raise ConfigError("高度切片层列表不能为空")
        for tag in self.channel_layers + self.height_layers:
            if tag not in VGG19_LAYERS:
                raise ConfigError(f"主干网络中不存在层: {tag}")

    @property
    def all_layers(self) -> List[str]:
        """两组层的并集，按网络深度排序"""
        selected = set(self.channel_layers) | set(self.height_layers)
        return [tag for tag in VGG19_TAGS if tag in selected]


def layer_stride(tag: str) -> int:
    """该层之前累计的池化步长"""
    block, _ = VGG19_LAYERS[tag]
    return 2 ** (block - 1)


def expected_layer_shape(tag: str, height: int, width: int) -> Tuple[int, int, int]:
    """按步长表推算该层的 H×W×N"""
    if tag not in VGG19_LAYERS:
        raise ConfigError(f"主干网络中不存在层: {tag}")
    stride = layer_stride(tag)
    return height // stride, width // stride, VGG19_LAYERS[tag][1]


def resolve_weights_path(weights_path: Optional[str] = None) -> Path:
    """
    解析权重文件路径：显式路径 -> SLICETEX_WEIGHTS_DIR 目录下的默认文件

    Raises:
        FileNotFoundError: 文件不存在
    """
    if weights_path:
        path = Path(weights_path)
    else:
        weights_dir = os.environ.get(WEIGHTS_DIR_ENV)
        if not weights_dir:
            raise FileNotFoundError(f"未指定权重文件，且环境变量 {WEIGHTS_DIR_ENV} 未设置")
        path = Path(weights_dir) / DEFAULT_WEIGHTS_FILE
    if not path.is_file():
        raise FileNotFoundError(f"权重文件不存在: {path}")
    return path


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def build_vgg19_features() -> nn.Sequential:
    """构建未加载权重的VGG19卷积部分，ReLU改为非原地以便收集激活"""
    if not TORCHVISION_AVAILABLE:
        raise FeatureDisabledError("torchvision未安装，请运行: pip install torchvision")
    features = torchvision.models.vgg19(weights=None).features
    for index, module in enumerate(features):
        if isinstance(module, nn.ReLU):
            features[index] = nn.ReLU(inplace=False)
    return features


def _normalize_state_dict(state) -> Dict[str, torch.Tensor]:
    if isinstance(state, dict) and 'state_dict' in state:
        state = state['state_dict']
    if not isinstance(state, dict):
        raise ConfigError("权重文件内容不是 state_dict")
    normalized = {}
    for key, value in state.items():
        if key.startswith('features.'):
            key = key[len('features.'):]
        # 只保留卷积部分，分类头忽略
        if key.split('.')[0].isdigit():
            normalized[key] = value
    return normalized


class FeatureExtractor:
    """冻结的VGG19特征提取器"""

    def __init__(self, network: nn.Sequential, selection: LayerSelection,
                 weights_checksum: str, device: str = 'cpu', backbone: str = 'vgg19'):
        """
        初始化特征提取器

        Args:
            network: 已加载权重的VGG19卷积序列
            selection: 层选择策略
            weights_checksum: 权重文件sha256
            device: 计算设备
            backbone: 主干网络标识
        """
        self.logger = logging.getLogger('FeatureExtractor')
        self.backbone = backbone
        self.weights_checksum = weights_checksum
        self.selection = selection
        self.device = torch.device(device)
        self.network = network.to(self.device).eval()
        for parameter in self.network.parameters():
            parameter.requires_grad_(False)

        self.mean = torch.tensor(IMAGENET_MEAN, device=self.device).view(1, 3, 1, 1)
        self.std = torch.tensor(IMAGENET_STD, device=self.device).view(1, 3, 1, 1)

        self.layer_tags = selection.all_layers
        self._module_index = self._index_relu_modules()
        self._last_index = max(self._module_index[tag] for tag in self.layer_tags)

        self.stats = {'extractions': 0, 'clamped_pixels': 0}
        self._stats_lock = threading.Lock()

        self.logger.info(
            f"特征提取器就绪: {backbone}, 通道层 {len(selection.channel_layers)} 个, "
            f"高度层 {len(selection.height_layers)} 个, 设备 {self.device}"
        )

    def _index_relu_modules(self) -> Dict[str, int]:
        """ReLU模块在序列中的位置 -> 标签"""
        indices = {}
        block, conv = 1, 0
        for index, module in enumerate(self.network):
            if isinstance(module, nn.Conv2d):
                conv += 1
            elif isinstance(module, nn.ReLU):
                indices[f"relu{block}_{conv}"] = index
            elif isinstance(module, nn.MaxPool2d):
                block, conv = block + 1, 0
        return indices

    @property
    def channel_layers(self) -> List[str]:
        return list(self.selection.channel_layers)

    @property
    def height_layers(self) -> List[str]:
        return list(self.selection.height_layers)

    def _count(self, key: str, amount: int = 1):
        with self._stats_lock:
            self.stats[key] += amount

    def preprocess(self, img) -> torch.Tensor:
        """
        图像预处理：越界像素截断到[0,1]并计数，然后按ImageNet统计量标准化

        Args:
            img: H×W×3 图像，取值[0,1]

        Returns:
            1×3×H×W 主干网络输入
        """
        if not isinstance(img, torch.Tensor):
            img = torch.as_tensor(np.asarray(img))
        if img.dim() != 3 or img.shape[2] != 3:
            raise InvalidArgumentError(f"图像必须是 H×W×3，实际形状 {tuple(img.shape)}")
        img = img.to(device=self.device, dtype=torch.float32)
        out_of_range = int(((img < 0) | (img > 1)).sum())
        if out_of_range:
            self._count('clamped_pixels', out_of_range)
            self.logger.warning(f"{out_of_range} 个像素值超出[0,1]，已截断")
            img = img.clamp(0, 1)
        x = img.permute(2, 0, 1).unsqueeze(0)
        return ((x - self.mean) / self.std).contiguous()

    def deprocess(self, x: torch.Tensor) -> torch.Tensor:
        """预处理的逆变换，返回 H×W×3（不截断）"""
        img = x * self.std + self.mean
        return img.squeeze(0).permute(1, 2, 0).contiguous()

    def check_input_size(self, height: int, width: int):
        """每个选中层的空间尺寸都必须不小于2"""
        for tag in self.layer_tags:
            layer_h, layer_w, _ = expected_layer_shape(tag, height, width)
            if layer_h < 2 or layer_w < 2:
                raise InvalidArgumentError(
                    f"输入 {height}×{width} 过小: 层 {tag} 的空间尺寸为 {layer_h}×{layer_w}"
                )

    def extract_preprocessed(self, x: torch.Tensor) -> FeatureStack:
        """对已预处理的 1×3×H×W 输入提取特征（对 x 可微）"""
        self.check_input_size(x.shape[2], x.shape[3])
        wanted = {self._module_index[tag]: tag for tag in self.layer_tags}
        layers = []
        out = x
        for index, module in enumerate(self.network):
            if index > self._last_index:
                break
            out = module(out)
            if index in wanted:
                layers.append((wanted[index], out[0].permute(1, 2, 0)))
        self._count('extractions')
        return FeatureStack(layers)

    def extract(self, img) -> FeatureStack:
        """Extract(I)：预处理后提取选中层特征"""
        return self.extract_preprocessed(self.preprocess(img))

    def describe(self) -> Dict:
        return {
            'backbone': self.backbone,
            'weights_checksum': self.weights_checksum,
            'channel_layers': self.channel_layers,
            'height_layers': self.height_layers,
            'strides': {tag: layer_stride(tag) for tag in self.layer_tags},
            'device': str(self.device),
        }


def load_extractor(weights_path: Optional[str] = None, selection: Optional[LayerSelection] = None,
                   expected_sha256: Optional[str] = None, device: str = 'cpu') -> FeatureExtractor:
    """
    加载特征提取器，架构不匹配时立即失败

    Args:
        weights_path: 权重文件路径，为空时使用 SLICETEX_WEIGHTS_DIR
        selection: 层选择策略，默认使用标准层表
        expected_sha256: 期望的权重校验和
        device: 计算设备，'auto' 表示有GPU时使用GPU

    Raises:
        FileNotFoundError: 权重文件不存在
        ConfigError: 校验和或架构不匹配、层标签不存在
    """
    logger = logging.getLogger('FeatureExtractor')
    selection = selection or LayerSelection()
    selection.validate()

    path = resolve_weights_path(weights_path)
    checksum = file_sha256(path)
    if expected_sha256 and checksum != expected_sha256.lower():
        raise ConfigError(f"权重校验和不匹配: 期望 {expected_sha256}，实际 {checksum}")

    try:
        state = torch.load(path, map_location='cpu', weights_only=True)
    except Exception as e:
        raise ConfigError(f"无法读取权重文件 {path}: {e}") from e

    network = build_vgg19_features()
    try:
        network.load_state_dict(_normalize_state_dict(state), strict=True)
    except RuntimeError as e:
        raise ConfigError(f"权重与VGG19架构不匹配: {e}") from e

    if device == 'auto':
        device = 'cuda' if torch.cuda.is_available() else 'cpu'
    logger.info(f"已加载权重 {path} (sha256={checksum[:12]}...)")
    return FeatureExtractor(network, selection, checksum, device=device)
