#!/usr/bin/env python3
"""
特征提取器测试
"""

import pytest
import torch

from core.errors import ConfigError, InvalidArgumentError
from core.feature_extractor import (
    DEFAULT_CHANNEL_LAYERS,
    DEFAULT_HEIGHT_LAYERS,
    IMAGENET_MEAN,
    WEIGHTS_DIR_ENV,
    LayerSelection,
    expected_layer_shape,
    file_sha256,
    layer_stride,
    load_extractor,
    resolve_weights_path,
)


def test_default_layer_tables():
    """通道项12层，高度项每个卷积块前两层共10层"""
    assert len(DEFAULT_CHANNEL_LAYERS) == 12
    assert DEFAULT_CHANNEL_LAYERS[0] == 'relu1_1'
    assert DEFAULT_CHANNEL_LAYERS[-1] == 'relu4_4'
    assert len(DEFAULT_HEIGHT_LAYERS) == 10
    assert DEFAULT_HEIGHT_LAYERS[-2:] == ['relu5_1', 'relu5_2']


def test_layer_strides_and_shapes():
    assert layer_stride('relu1_1') == 1
    assert layer_stride('relu3_4') == 4
    assert layer_stride('relu5_2') == 16
    assert expected_layer_shape('relu4_1', 256, 128) == (32, 16, 512)
    with pytest.raises(ConfigError):
        expected_layer_shape('relu9_9', 64, 64)


def test_layer_selection_validation():
    with pytest.raises(ConfigError):
        LayerSelection(channel_layers=['relu1_1', 'conv1_1']).validate()
    with pytest.raises(ConfigError):
        LayerSelection(channel_layers=[]).validate()
    selection = LayerSelection(channel_layers=['relu2_1', 'relu1_1'], height_layers=['relu1_1'])
    assert selection.all_layers == ['relu1_1', 'relu2_1']


def test_missing_weights_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_extractor(str(tmp_path / 'missing.pth'))


def test_weights_resolved_from_environment(vgg_weights, monkeypatch):
    monkeypatch.setenv(WEIGHTS_DIR_ENV, str(vgg_weights.parent))
    assert resolve_weights_path() == vgg_weights
    monkeypatch.delenv(WEIGHTS_DIR_ENV)
    with pytest.raises(FileNotFoundError):
        resolve_weights_path()


def test_unknown_layer_tag_rejected(vgg_weights):
    selection = LayerSelection(channel_layers=['relu6_1'])
    with pytest.raises(ConfigError):
        load_extractor(str(vgg_weights), selection=selection)


def test_checksum_mismatch(vgg_weights):
    with pytest.raises(ConfigError):
        load_extractor(str(vgg_weights), expected_sha256='0' * 64)
    # 正确的校验和可以加载
    ex = load_extractor(str(vgg_weights), expected_sha256=file_sha256(vgg_weights),
                        selection=LayerSelection(['relu1_1'], ['relu1_1']))
    assert ex.weights_checksum == file_sha256(vgg_weights)


def test_architecture_mismatch(vgg_weights, tmp_path):
    """缺少最后一个卷积层的权重应立即失败"""
    state = torch.load(vgg_weights, weights_only=True)
    state.pop('34.weight')
    broken = tmp_path / 'broken.pth'
    torch.save(state, broken)
    with pytest.raises(ConfigError):
        load_extractor(str(broken))


def test_prefixed_state_dict_accepted(vgg_weights, tmp_path):
    """完整模型的 features.* 键和分类头都能处理"""
    state = torch.load(vgg_weights, weights_only=True)
    full = {f'features.{key}': value for key, value in state.items()}
    full['classifier.0.weight'] = torch.zeros(2, 2)
    path = tmp_path / 'full.pth'
    torch.save({'state_dict': full}, path)
    ex = load_extractor(str(path), selection=LayerSelection(['relu1_1'], ['relu1_1']))
    assert ex.layer_tags == ['relu1_1']


def test_extract_shapes(extractor):
    img = torch.rand(256, 256, 3, generator=torch.Generator().manual_seed(0))
    stack = extractor.extract(img)
    assert stack.tags == extractor.layer_tags
    assert tuple(stack.get('relu1_1').shape) == (256, 256, 64)
    assert tuple(stack.get('relu4_1').shape) == (32, 32, 512)
    assert tuple(stack.get('relu5_2').shape) == (16, 16, 512)
    for tag, features in stack:
        assert tuple(features.shape) == expected_layer_shape(tag, 256, 256)
        # ReLU之后
        assert float(features.min()) >= 0


def test_extract_deterministic(light_extractor):
    img = torch.rand(32, 32, 3, generator=torch.Generator().manual_seed(1))
    first = light_extractor.extract(img)
    second = light_extractor.extract(img)
    for (tag, a), (_, b) in zip(first, second):
        assert torch.equal(a, b), tag


def test_preprocess_mean_image_is_zero(light_extractor):
    img = torch.tensor(IMAGENET_MEAN).view(1, 1, 3).expand(4, 4, 3)
    x = light_extractor.preprocess(img)
    assert x.shape == (1, 3, 4, 4)
    assert float(x.abs().max()) < 1e-6


def test_deprocess_round_trip(light_extractor):
    img = torch.rand(8, 8, 3, generator=torch.Generator().manual_seed(2))
    restored = light_extractor.deprocess(light_extractor.preprocess(img))
    assert torch.allclose(restored, img, atol=1e-6)


def test_out_of_range_pixels_clamped_and_counted(light_extractor):
    before = light_extractor.stats['clamped_pixels']
    img = torch.full((4, 4, 3), 0.5)
    img[0, 0, 0] = 1.5
    img[1, 1, 2] = -0.2
    x = light_extractor.preprocess(img)
    assert light_extractor.stats['clamped_pixels'] - before == 2
    assert float(light_extractor.deprocess(x).max()) <= 1.0 + 1e-6


def test_preprocess_rejects_bad_shape(light_extractor):
    with pytest.raises(InvalidArgumentError):
        light_extractor.preprocess(torch.zeros(4, 4))
    with pytest.raises(InvalidArgumentError):
        light_extractor.preprocess(torch.zeros(4, 4, 4))


def test_input_too_small_names_layer(extractor):
    """16×16 输入在 relu5_1 处只剩 1×1"""
    with pytest.raises(InvalidArgumentError, match='relu5_1'):
        extractor.extract(torch.rand(16, 16, 3))


def test_describe(light_extractor, vgg_weights):
    info = light_extractor.describe()
    assert info['backbone'] == 'vgg19'
    assert info['weights_checksum'] == file_sha256(vgg_weights)
    assert info['strides'] == {'relu1_1': 1, 'relu2_1': 2}
