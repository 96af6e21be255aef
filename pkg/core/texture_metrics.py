"""
纹理质量指标

- 裁剪协议：64个 128×128 随机裁剪，真值模式下参考图像的两组裁剪使用不同种子
- Fréchet 距离（FID / c-FID）与无偏 KID（KID / c-KID）
- 感知距离（LPIPS 或特征距离后端）
所有嵌入和感知网络都通过 processors 中的可插拔后端提供
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import torch
from scipy import linalg

from .errors import FeatureDisabledError, InvalidArgumentError, NumericalError


logger = logging.getLogger('TextureMetrics')

# 协方差平方根的特征值下限，低于该值视为0
EIGENVALUE_FLOOR = 1e-10
METRIC_NAMES = ('fid', 'kid')


def as_image_array(img) -> np.ndarray:
    """张量或数组 -> float64 H×W×3 数组"""
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
    array = np.asarray(img, dtype=np.float64)
    if array.ndim != 3 or array.shape[2] != 3:
        raise InvalidArgumentError(f"图像必须是 H×W×3，实际形状 {array.shape}")
    return array


@dataclass
class CropProtocol:
    """裁剪协议"""
    crop_count: int = 64
    crop_size: int = 128
    seed: int = 0
    ground_truth: bool = False

    def validate(self):
        if self.crop_count < 2:
            raise InvalidArgumentError(f"裁剪数量至少为2: {self.crop_count}")
        if self.crop_size < 1:
            raise InvalidArgumentError(f"裁剪尺寸必须为正: {self.crop_size}")

    @property
    def reference_seed(self) -> int:
        return self.seed

    @property
    def synthesis_seed(self) -> int:
        """真值模式下第二组参考裁剪的种子，与第一组不同"""
        return self.seed + 1 if self.ground_truth else self.seed

    def to_dict(self) -> Dict[str, Any]:
        return {
            'crop_count': self.crop_count,
            'crop_size': self.crop_size,
            'seed': self.seed,
            'ground_truth': self.ground_truth,
            'seeds': [self.reference_seed, self.synthesis_seed],
        }


def extract_crops(img, proto: CropProtocol, seed: Optional[int] = None) -> List[np.ndarray]:
    """
    在均匀随机的合法偏移处取 crop_count 个轴对齐裁剪

    Args:
        img: H×W×3 图像
        proto: 裁剪协议
        seed: 覆盖协议中的种子

    Raises:
        InvalidArgumentError: 图像小于裁剪尺寸
    """
    proto.validate()
    array = as_image_array(img)
    height, width = array.shape[:2]
    size = proto.crop_size
    if height < size or width < size:
        raise InvalidArgumentError(f"图像 {height}×{width} 小于裁剪尺寸 {size}")

    rng = np.random.default_rng(proto.seed if seed is None else seed)
    tops = rng.integers(0, height - size + 1, size=proto.crop_count)
    lefts = rng.integers(0, width - size + 1, size=proto.crop_count)
    return [array[top:top + size, left:left + size].copy() for top, left in zip(tops, lefts)]


@dataclass
class EmbeddingSet:
    """嵌入集合：n×d 矩阵与后端标识"""
    vectors: np.ndarray
    backend: str = 'unknown'

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim == 1:
            vectors = vectors[:, None]
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise InvalidArgumentError(f"嵌入必须是非空的 n×d 矩阵，实际形状 {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise NumericalError(f"嵌入包含非有限值 (后端 {self.backend})")
        self.vectors = vectors

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def mean(self) -> np.ndarray:
        return self.vectors.mean(axis=0)

    def covariance(self) -> np.ndarray:
        return np.atleast_2d(np.cov(self.vectors, rowvar=False))


def _require_backend(backend, kind: str):
    if backend is None or not getattr(backend, 'available', False):
        name = getattr(backend, 'name', kind)
        raise FeatureDisabledError(f"{kind} 后端不可用: {name}")


def embed_images(images: Sequence, backend) -> EmbeddingSet:
    """用嵌入后端计算一组图像的 EmbeddingSet"""
    _require_backend(backend, 'embedding')
    arrays = [as_image_array(img) for img in images]
    return EmbeddingSet(backend.embed(arrays), backend.identifier)


def _check_pair(a: EmbeddingSet, b: EmbeddingSet, minimum: int):
    if a.dim != b.dim:
        raise InvalidArgumentError(f"嵌入维度不一致: {a.dim} vs {b.dim}")
    if a.count < minimum or b.count < minimum:
        raise InvalidArgumentError(f"每组至少需要 {minimum} 个样本: {a.count}, {b.count}")


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = linalg.eigh((matrix + matrix.T) / 2)
    values = np.where(values < EIGENVALUE_FLOOR, 0.0, values)
    return (vectors * np.sqrt(values)) @ vectors.T


def frechet_distance(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """
    高斯拟合之间的 Fréchet 距离

    ‖μA−μB‖² + tr(ΣA + ΣB − 2(ΣA ΣB)^{1/2})，其中
    tr((ΣA ΣB)^{1/2}) 由对称矩阵 sqrt(ΣA)·ΣB·sqrt(ΣA) 的特征值求得

    Raises:
        InvalidArgumentError: 维度不一致或样本少于2
        NumericalError: 结果非有限，附带条件数诊断
    """
    _check_pair(a, b, 2)
    with np.errstate(over='ignore', invalid='ignore'):
        mean_diff = a.mean() - b.mean()
        cov_a, cov_b = a.covariance(), b.covariance()

    def fail(reason: str):
        finite = np.all(np.isfinite(cov_a)) and np.all(np.isfinite(cov_b))
        return NumericalError(
            f"Fréchet距离非有限: {reason}",
            diagnostics={
                'cond_a': float(np.linalg.cond(cov_a)) if finite else float('inf'),
                'cond_b': float(np.linalg.cond(cov_b)) if finite else float('inf'),
                'count_a': a.count,
                'count_b': b.count,
            },
        )

    if not (np.all(np.isfinite(cov_a)) and np.all(np.isfinite(cov_b)) and np.all(np.isfinite(mean_diff))):
        raise fail("均值或协方差溢出")

    try:
        root_a = _psd_sqrt(cov_a)
        product = root_a @ cov_b @ root_a
        values = linalg.eigh((product + product.T) / 2, eigvals_only=True)
    except (ValueError, linalg.LinAlgError) as e:
        raise fail(str(e)) from e
    values = np.where(values < EIGENVALUE_FLOOR, 0.0, values)
    trace_root = float(np.sqrt(values).sum())

    distance = float(mean_diff @ mean_diff + np.trace(cov_a) + np.trace(cov_b) - 2 * trace_root)
    if not np.isfinite(distance):
        raise fail("结果非有限")
    return max(distance, 0.0)


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """k(x, y) = (x·y/d + 1)^3"""
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def kid(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """
    无偏 MMD² 估计（排除对角项），可以为负

    Raises:
        InvalidArgumentError: 任一组样本少于2
    """
    _check_pair(a, b, 2)
    m, n = a.count, b.count
    k_aa = polynomial_kernel(a.vectors, a.vectors)
    k_bb = polynomial_kernel(b.vectors, b.vectors)
    k_ab = polynomial_kernel(a.vectors, b.vectors)
    term_aa = (k_aa.sum() - np.trace(k_aa)) / (m * (m - 1))
    term_bb = (k_bb.sum() - np.trace(k_bb)) / (n * (n - 1))
    return float(term_aa + term_bb - 2 * k_ab.mean())


METRICS = {
    'fid': frechet_distance,
    'kid': kid,
}


def crop_embeddings(ref, syn, proto: CropProtocol, backend):
    """
    参考与合成图像的裁剪嵌入；真值模式下两组都取自参考图像

    Returns:
        (参考裁剪嵌入, 对比裁剪嵌入)
    """
    other = ref if proto.ground_truth else syn
    ref_crops = extract_crops(ref, proto, proto.reference_seed)
    other_crops = extract_crops(other, proto, proto.synthesis_seed)
    return embed_images(ref_crops, backend), embed_images(other_crops, backend)


def crop_metric(ref, syn, proto: CropProtocol, which: str, backend) -> float:
    """c-FID / c-KID"""
    if which not in METRICS:
        raise InvalidArgumentError(f"未知指标: {which}，可选 {list(METRICS)}")
    ref_set, syn_set = crop_embeddings(ref, syn, proto, backend)
    return METRICS[which](ref_set, syn_set)


def perceptual_score(ref, syn, backend) -> float:
    """
    感知距离，相同图像为0

    Raises:
        FeatureDisabledError: 后端缺失或不可用
        InvalidArgumentError: 尺寸不一致
    """
    _require_backend(backend, 'perceptual')
    ref_array, syn_array = as_image_array(ref), as_image_array(syn)
    if ref_array.shape != syn_array.shape:
        raise InvalidArgumentError(f"图像尺寸不一致: {ref_array.shape} vs {syn_array.shape}")
    if np.array_equal(ref_array, syn_array):
        return 0.0
    return max(float(backend.distance(ref_array, syn_array)), 0.0)


def whole_image_metrics(refs: Sequence, syns: Sequence, backend) -> Dict[str, float]:
    """整图集合层面的 FID / KID（每组至少2张图像）"""
    ref_set = embed_images(refs, backend)
    syn_set = embed_images(syns, backend)
    return {'fid': frechet_distance(ref_set, syn_set), 'kid': kid(ref_set, syn_set)}


@dataclass
class MetricRow:
    """单个纹理的指标行，不可用的指标为None"""
    name: str
    lpips: Optional[float] = None
    fid: Optional[float] = None
    c_fid: Optional[float] = None
    kid: Optional[float] = None
    c_kid: Optional[float] = None
    replica: Optional[float] = None

    def as_dict(self) -> Dict[str, Any]:
        return {
            'texture': self.name,
            'LPIPS': self.lpips,
            'FID': self.fid,
            'c-FID': self.c_fid,
            'KID': self.kid,
            'c-KID': self.c_kid,
            'replica': self.replica,
        }


REPORT_COLUMNS = ('texture', 'LPIPS', 'FID', 'c-FID', 'KID', 'c-KID', 'replica')


@dataclass
class MetricReport:
    """逐纹理指标与汇总行，记录裁剪种子和后端标识"""
    rows: List[MetricRow] = field(default_factory=list)
    protocol: Optional[CropProtocol] = None
    backends: Dict[str, str] = field(default_factory=dict)
    set_level: Dict[str, Optional[float]] = field(default_factory=dict)
    skipped: List[str] = field(default_factory=list)

    def add_row(self, row: MetricRow):
        self.rows.append(row)

    def aggregate(self) -> MetricRow:
        """逐列平均；FID / KID 使用整图集合层面的值"""
        def mean_of(attr):
            values = [getattr(row, attr) for row in self.rows if getattr(row, attr) is not None]
            return float(np.mean(values)) if values else None

        return MetricRow(
            name='mean',
            lpips=mean_of('lpips'),
            fid=self.set_level.get('fid'),
            c_fid=mean_of('c_fid'),
            kid=self.set_level.get('kid'),
            c_kid=mean_of('c_kid'),
            replica=mean_of('replica'),
        )

    def table_rows(self) -> List[Dict[str, Any]]:
        return [row.as_dict() for row in self.rows] + [self.aggregate().as_dict()]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rows': self.table_rows(),
            'protocol': self.protocol.to_dict() if self.protocol else None,
            'backends': dict(self.backends),
            'skipped': list(self.skipped),
        }


def score_pair(name: str, ref, syn, proto: CropProtocol, embedding_backend,
               perceptual_backend=None, replica_fn=None) -> MetricRow:
    """
    计算一对图像的 LPIPS / c-FID / c-KID

    感知后端不可用时 LPIPS 记为None，其余指标照常计算
    """
    row = MetricRow(name=name)
    try:
        row.lpips = perceptual_score(ref, syn, perceptual_backend)
    except FeatureDisabledError as e:
        logger.warning(f"{name}: 跳过感知距离 ({e})")

    ref_set, syn_set = crop_embeddings(ref, syn, proto, embedding_backend)
    row.c_fid = frechet_distance(ref_set, syn_set)
    row.c_kid = kid(ref_set, syn_set)
    if replica_fn is not None:
        row.replica = float(replica_fn(ref, syn))
    logger.info(f"{name}: c-FID={row.c_fid:.4f}, c-KID={row.c_kid:.5f}")
    return row
