"""
图像金字塔：双三次（抗混叠）下采样与双线性2倍上采样

图像为 H×W×3 张量，输出统一截断到[0,1]
"""

from typing import List

import torch
import torch.nn.functional as F

from .errors import InvalidArgumentError


def _check_image(img: torch.Tensor):
    if img.dim() != 3 or img.shape[2] != 3:
        raise InvalidArgumentError(f"图像必须是 H×W×3，实际形状 {tuple(img.shape)}")


def _is_power_of_two(value: int) -> bool:
    return value >= 1 and (value & (value - 1)) == 0


def downsample(img: torch.Tensor, factor: int) -> torch.Tensor:
    """
    双三次抗混叠下采样

    Args:
        img: H×W×3 图像
        factor: 2的幂，需整除两个维度
    """
    _check_image(img)
    if not isinstance(factor, int) or not _is_power_of_two(factor):
        raise InvalidArgumentError(f"下采样倍数必须是2的幂: {factor}")
    height, width = img.shape[0], img.shape[1]
    if height % factor or width % factor:
        raise InvalidArgumentError(f"{height}×{width} 不能被 {factor} 整除")
    if factor == 1:
        return img.clamp(0, 1)
    x = img.permute(2, 0, 1).unsqueeze(0)
    x = F.interpolate(x, size=(height // factor, width // factor), mode='bicubic',
                      align_corners=False, antialias=True)
    return x[0].permute(1, 2, 0).clamp(0, 1)


def upsample(img: torch.Tensor, factor: int = 2) -> torch.Tensor:
    """双线性上采样，多尺度流程中固定为2倍"""
    _check_image(img)
    if factor != 2:
        raise InvalidArgumentError(f"只支持2倍上采样: {factor}")
    height, width = img.shape[0], img.shape[1]
    x = img.permute(2, 0, 1).unsqueeze(0)
    x = F.interpolate(x, size=(height * 2, width * 2), mode='bilinear', align_corners=False)
    return x[0].permute(1, 2, 0).clamp(0, 1)


def build_reference_pyramid(ref: torch.Tensor, scales: int) -> List[torch.Tensor]:
    """第 i 层为参考图像下采样 2^i 倍，i = 0..scales"""
    return [downsample(ref, 2 ** level) for level in range(scales + 1)]
