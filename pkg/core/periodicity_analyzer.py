"""
周期性与复制诊断

- 归一化自相关的离原点峰值：检测 K=2 时出现的重复平铺
- 与参考图像的最大循环互相关：检测逐像素复制参考图像的输出
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError
from .texture_metrics import as_image_array


logger = logging.getLogger('PeriodicityAnalyzer')

DEFAULT_THRESHOLD = 0.5
# 方差低于该值视为常数图像
VARIANCE_FLOOR = 1e-12


@dataclass
class PeriodicityPeak:
    offset: Tuple[int, int]
    correlation: float


@dataclass
class PeriodicityReport:
    """自相关峰值报告，常数图像标记为 degenerate 且不含峰值"""
    size: Tuple[int, int]
    threshold: float
    peaks: List[PeriodicityPeak] = field(default_factory=list)
    degenerate: bool = False

    @property
    def offsets(self) -> List[Tuple[int, int]]:
        return [peak.offset for peak in self.peaks]

    @property
    def is_periodic(self) -> bool:
        return bool(self.peaks)

    @property
    def max_correlation(self) -> float:
        return max((peak.correlation for peak in self.peaks), default=0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'size': list(self.size),
            'threshold': self.threshold,
            'degenerate': self.degenerate,
            'peaks': [{'offset': list(p.offset), 'correlation': p.correlation} for p in self.peaks],
        }


def _grayscale(img) -> np.ndarray:
    return as_image_array(img).mean(axis=2)


def _fold_offset(dy: int, dx: int, height: int, width: int) -> Tuple[int, int]:
    """循环偏移折叠到 (-H/2, H/2] × (-W/2, W/2]，并取 d 与 -d 中的规范代表"""
    def fold(value, period):
        value %= period
        return value - period if value > period // 2 else value

    dy, dx = fold(dy, height), fold(dx, width)
    mirrored = (fold(-dy, height), fold(-dx, width))
    return max((dy, dx), mirrored)


def autocorrelation(img) -> Optional[np.ndarray]:
    """去均值灰度图像的循环自相关，按零偏移归一化；常数图像返回None"""
    gray = _grayscale(img)
    centered = gray - gray.mean()
    if centered.var() < VARIANCE_FLOOR:
        return None
    spectrum = np.fft.fft2(centered)
    correlation = np.real(np.fft.ifft2(spectrum * np.conj(spectrum)))
    return correlation / correlation[0, 0]


def periodicity_diagnostic(img, threshold: float = DEFAULT_THRESHOLD,
                           neighborhood: int = 3, max_peaks: int = 16) -> PeriodicityReport:
    """
    归一化自相关中高于阈值的局部极大值（排除原点）

    Args:
        img: H×W×3 图像
        threshold: 相关系数阈值
        neighborhood: 局部极大值的窗口大小（循环边界）
        max_peaks: 最多报告的峰值数，按相关系数降序

    Returns:
        PeriodicityReport
    """
    if not 0 < threshold <= 1:
        raise InvalidArgumentError(f"阈值必须在 (0, 1] 内: {threshold}")
    gray = _grayscale(img)
    height, width = gray.shape
    report = PeriodicityReport(size=(height, width), threshold=threshold)

    correlation = autocorrelation(img)
    if correlation is None:
        report.degenerate = True
        logger.warning("常数图像，无法计算周期性")
        return report

    local_max = ndimage.maximum_filter(correlation, size=neighborhood, mode='wrap')
    candidates = (correlation >= local_max) & (correlation > threshold)
    candidates[0, 0] = False

    best: Dict[Tuple[int, int], float] = {}
    for dy, dx in zip(*np.nonzero(candidates)):
        offset = _fold_offset(int(dy), int(dx), height, width)
        if offset == (0, 0):
            continue
        value = float(correlation[dy, dx])
        best[offset] = max(value, best.get(offset, value))

    ordered = sorted(best.items(), key=lambda item: (-item[1], item[0]))[:max_peaks]
    report.peaks = [PeriodicityPeak(offset=offset, correlation=value) for offset, value in ordered]
    if report.peaks:
        logger.info(f"检测到 {len(report.peaks)} 个周期峰值，最大相关 {report.max_correlation:.3f}")
    return report


def replica_score(ref, syn) -> float:
    """
    合成图像与参考图像的最大归一化循环互相关

    接近1表示输出是参考图像（或其平移）的复制；任一图像为常数时返回0
    """
    ref_gray, syn_gray = _grayscale(ref), _grayscale(syn)
    if ref_gray.shape != syn_gray.shape:
        raise InvalidArgumentError(f"图像尺寸不一致: {ref_gray.shape} vs {syn_gray.shape}")
    ref_centered = ref_gray - ref_gray.mean()
    syn_centered = syn_gray - syn_gray.mean()
    norm = np.sqrt((ref_centered ** 2).sum() * (syn_centered ** 2).sum())
    if norm < VARIANCE_FLOOR:
        return 0.0
    cross = np.real(np.fft.ifft2(np.fft.fft2(syn_centered) * np.conj(np.fft.fft2(ref_centered))))
    return float(cross.max() / norm)
