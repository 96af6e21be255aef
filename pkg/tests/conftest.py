"""
测试公共夹具

随机初始化的VGG19卷积权重写入临时文件，提取器和合成测试无需下载预训练权重
"""

import os
import sys

import pytest
import torch

# 添加项目路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.feature_extractor import LayerSelection, load_extractor


# 只到第二个卷积块，合成相关测试用它保持速度
LIGHT_LAYERS = ['relu1_1', 'relu2_1']


def smooth_texture(size=64, seed=0):
    """带横向条纹的平滑彩色纹理，取值[0,1]"""
    generator = torch.Generator().manual_seed(seed)
    ys = torch.arange(size, dtype=torch.float32).view(size, 1, 1)
    xs = torch.arange(size, dtype=torch.float32).view(1, size, 1)
    phase = torch.rand((1, 1, 3), generator=generator) * 6.28
    stripes = 0.5 + 0.3 * torch.sin(ys * 0.4 + phase) + 0.1 * torch.cos(xs * 0.2 + phase)
    noise = 0.05 * torch.randn((size, size, 3), generator=generator)
    return (stripes + noise).clamp(0, 1)


@pytest.fixture(scope="session")
def vgg_weights(tmp_path_factory):
    """随机初始化的VGG19卷积部分 state_dict"""
    torchvision = pytest.importorskip("torchvision")
    torch.manual_seed(0)
    features = torchvision.models.vgg19(weights=None).features
    path = tmp_path_factory.mktemp("weights") / "vgg19_features.pth"
    torch.save(features.state_dict(), path)
    return path


@pytest.fixture(scope="session")
def extractor(vgg_weights):
    """默认层选择的提取器"""
    return load_extractor(str(vgg_weights))


@pytest.fixture(scope="session")
def light_extractor(vgg_weights):
    selection = LayerSelection(channel_layers=list(LIGHT_LAYERS), height_layers=list(LIGHT_LAYERS))
    return load_extractor(str(vgg_weights), selection=selection)


@pytest.fixture
def make_texture():
    return smooth_texture


@pytest.fixture
def light_config_file(tmp_path):
    """只用前两个卷积块、单步优化的配置文件"""
    path = tmp_path / "light.conf"
    path.write_text(
        "\n".join([
            "iterations = 1",
            "scales = 0",
            "seed = 7",
            f"channel_layers = {', '.join(LIGHT_LAYERS)}",
            f"height_layers = {', '.join(LIGHT_LAYERS)}",
            "crop_count = 8",
            "crop_size = 32",
            "embedding_backend = color_stats",
            "perceptual_backend = feature_distance",
            f"log_file = {tmp_path / 'test.log'}",
        ]) + "\n",
        encoding="utf-8",
    )
    return path
