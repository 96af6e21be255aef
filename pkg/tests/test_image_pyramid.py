#!/usr/bin/env python3
"""
图像金字塔测试
"""

import pytest
import torch

from core.errors import InvalidArgumentError
from core.image_pyramid import build_reference_pyramid, downsample, upsample


def _ramp(size=64):
    """缓变的线性斜坡，下采样再上采样后应基本还原"""
    ys = torch.linspace(0.2, 0.8, size).view(size, 1, 1)
    xs = torch.linspace(0.1, 0.6, size).view(1, size, 1)
    return (0.5 * ys + 0.5 * xs).expand(size, size, 3).contiguous()


def test_downsample_then_upsample_ramp():
    img = _ramp()
    restored = upsample(downsample(img, 2), 2)
    assert restored.shape == img.shape
    assert float((restored - img).abs().max()) < 0.05


def test_constant_image_stays_constant():
    img = torch.full((32, 32, 3), 0.3)
    assert torch.allclose(downsample(img, 4), torch.full((8, 8, 3), 0.3), atol=1e-5)
    assert torch.allclose(upsample(img, 2), torch.full((64, 64, 3), 0.3), atol=1e-5)


def test_downsample_sizes():
    img = torch.rand(256, 256, 3)
    assert tuple(downsample(img, 4).shape) == (64, 64, 3)
    assert torch.equal(downsample(img, 1), img)


def test_output_within_unit_range():
    """双三次插值会过冲，结果必须截断"""
    img = torch.zeros(32, 32, 3)
    img[::2] = 1.0
    out = downsample(img, 2)
    assert float(out.min()) >= 0 and float(out.max()) <= 1


@pytest.mark.parametrize("factor", [3, 6, 0])
def test_downsample_rejects_non_power_of_two(factor):
    with pytest.raises(InvalidArgumentError):
        downsample(torch.rand(48, 48, 3), factor)


def test_downsample_rejects_indivisible():
    with pytest.raises(InvalidArgumentError):
        downsample(torch.rand(30, 32, 3), 4)


def test_upsample_only_factor_two():
    with pytest.raises(InvalidArgumentError):
        upsample(torch.rand(8, 8, 3), 3)


def test_rejects_bad_shape():
    with pytest.raises(InvalidArgumentError):
        downsample(torch.rand(8, 8), 2)


def test_reference_pyramid():
    pyramid = build_reference_pyramid(torch.rand(64, 64, 3), 2)
    assert [tuple(level.shape[:2]) for level in pyramid] == [(64, 64), (32, 32), (16, 16)]
