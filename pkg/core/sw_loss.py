"""
切片Wasserstein损失

特征张量统一使用 H×W×N 布局：
- 通道切片：每个像素的 N 维特征向量投影到 S^{N-1} 上的随机方向
- 高度切片：每个 (w, n) 列上的 H 维向量投影到 S^{H-1} 上的随机方向
- 宽度切片：实验性，对称地沿 W 轴切片，默认权重为0

所有函数都是输入和显式传入的随机源的纯函数，可并发调用（每个调用方持有自己的 Generator）
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import torch

from .errors import InvalidArgumentError


# 每种切片对应的投影轴（H×W×N 布局）
TERM_AXES = {'channel': 2, 'height': 0, 'width': 1}


@dataclass
class FeatureStack:
    """按网络深度排列的逐层特征，每层为 (标签, H×W×N 张量)"""
    layers: List[Tuple[str, torch.Tensor]]

    def __post_init__(self):
        tags = [tag for tag, _ in self.layers]
        if len(set(tags)) != len(tags):
            raise InvalidArgumentError(f"层标签重复: {tags}")
        for tag, tensor in self.layers:
            if tensor.dim() != 3:
                raise InvalidArgumentError(
                    f"层 {tag} 的特征必须是 H×W×N 三维张量，实际形状 {tuple(tensor.shape)}"
                )

    @property
    def tags(self) -> List[str]:
        return [tag for tag, _ in self.layers]

    def get(self, tag: str) -> torch.Tensor:
        for layer_tag, tensor in self.layers:
            if layer_tag == tag:
                return tensor
        raise KeyError(tag)

    def detach(self) -> 'FeatureStack':
        return FeatureStack([(tag, tensor.detach()) for tag, tensor in self.layers])

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(tensor).all()) for _, tensor in self.layers)

    def __iter__(self) -> Iterator[Tuple[str, torch.Tensor]]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class DirectionSet:
    """count×dim 的单位向量矩阵"""
    vectors: torch.Tensor

    def __post_init__(self):
        if self.vectors.dim() != 2:
            raise InvalidArgumentError(f"方向矩阵必须是二维，实际形状 {tuple(self.vectors.shape)}")

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class ProjectionBatch:
    """count×samples 投影值，每行对应一个方向"""
    values: torch.Tensor

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def samples(self) -> int:
        return self.values.shape[1]


@dataclass
class LossWeights:
    """逐层损失权重，未使用的层权重为0"""
    channel_weights: Dict[str, float] = field(default_factory=dict)
    height_weights: Dict[str, float] = field(default_factory=dict)
    width_weights: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for term, weights in self.as_terms().items():
            for tag, value in weights.items():
                if value < 0:
                    raise InvalidArgumentError(f"{term} 权重必须非负: {tag}={value}")

    @classmethod
    def uniform(cls, channel_layers: Sequence[str], height_layers: Sequence[str] = (),
                width_layers: Sequence[str] = ()) -> 'LossWeights':
        """选中层权重为1，其余为0"""
        return cls(
            channel_weights={tag: 1.0 for tag in channel_layers},
            height_weights={tag: 1.0 for tag in height_layers},
            width_weights={tag: 1.0 for tag in width_layers},
        )

    def as_terms(self) -> Dict[str, Dict[str, float]]:
        return {
            'channel': self.channel_weights,
            'height': self.height_weights,
            'width': self.width_weights,
        }

    def active_layers(self, term: str) -> List[str]:
        return [tag for tag, value in self.as_terms()[term].items() if value > 0]

    def without_height(self) -> 'LossWeights':
        """去掉高度项，即原始SW损失"""
        return LossWeights(dict(self.channel_weights), {}, dict(self.width_weights))


@dataclass
class SliceDirections:
    """一次冻结的方向抽样，按切片类型和层标签索引"""
    channel: Dict[str, DirectionSet] = field(default_factory=dict)
    height: Dict[str, DirectionSet] = field(default_factory=dict)
    width: Dict[str, DirectionSet] = field(default_factory=dict)

    def for_term(self, term: str) -> Dict[str, DirectionSet]:
        return getattr(self, term)


def sample_directions(count: int, dim: int, generator: Optional[torch.Generator] = None,
                      dtype: torch.dtype = torch.float32,
                      device: Optional[torch.device] = None) -> DirectionSet:
    """
    在 S^{dim-1} 上均匀抽取 count 个方向（各向同性高斯归一化）

    Args:
        count: 方向数量
        dim: 方向维度
        generator: CPU随机源，固定状态下结果确定
        dtype: 输出精度
        device: 输出设备

    Returns:
        DirectionSet
    """
    if not isinstance(count, int) or count < 1:
        raise InvalidArgumentError(f"方向数量必须为正整数: {count}")
    if not isinstance(dim, int) or dim < 1:
        raise InvalidArgumentError(f"方向维度必须为正整数: {dim}")

    vectors = torch.randn((count, dim), generator=generator, dtype=dtype)
    vectors = vectors / vectors.norm(dim=1, keepdim=True)
    if device is not None:
        vectors = vectors.to(device)
    return DirectionSet(vectors)


def _check_features(features: torch.Tensor):
    if features.dim() != 3:
        raise InvalidArgumentError(f"特征必须是 H×W×N 三维张量，实际形状 {tuple(features.shape)}")


def _project(samples: torch.Tensor, dirs: DirectionSet) -> ProjectionBatch:
    # samples: S×D，每行一个待投影向量
    vectors = dirs.vectors.to(dtype=samples.dtype, device=samples.device)
    return ProjectionBatch(vectors @ samples.contiguous().T)


def project_channelwise(features: torch.Tensor, dirs: DirectionSet) -> ProjectionBatch:
    """
    通道切片投影：values[d][m] = <F_m, V_d>，m 按行优先光栅顺序遍历 H·W 个像素
    """
    _check_features(features)
    height, width, channels = features.shape
    if dirs.dim != channels:
        raise InvalidArgumentError(f"方向维度 {dirs.dim} 与通道数 {channels} 不一致")
    return _project(features.reshape(height * width, channels), dirs)


def project_heightwise(features: torch.Tensor, dirs: DirectionSet) -> ProjectionBatch:
    """
    高度切片投影：把特征看作 H 个 W×N 切片，对每个列索引 n 取各切片第 n 个元素组成 H 维向量后投影

    等价于把高度轴换到最后后做通道切片投影
    """
    _check_features(features)
    height = features.shape[0]
    if dirs.dim != height:
        raise InvalidArgumentError(f"方向维度 {dirs.dim} 与特征高度 {height} 不一致")
    return project_channelwise(features.permute(1, 2, 0), dirs)


def project_widthwise(features: torch.Tensor, dirs: DirectionSet) -> ProjectionBatch:
    """宽度切片投影（实验性）：对每个 (h, n) 取 W 维向量"""
    _check_features(features)
    width = features.shape[1]
    if dirs.dim != width:
        raise InvalidArgumentError(f"方向维度 {dirs.dim} 与特征宽度 {width} 不一致")
    return project_channelwise(features.permute(0, 2, 1), dirs)


PROJECTORS = {
    'channel': project_channelwise,
    'height': project_heightwise,
    'width': project_widthwise,
}


def _resample_sorted(sorted_rows: torch.Tensor, length: int) -> torch.Tensor:
    """把已排序的行按分位数线性插值到指定长度"""
    current = sorted_rows.shape[-1]
    if current == length:
        return sorted_rows
    positions = torch.linspace(0, current - 1, length,
                               dtype=sorted_rows.dtype, device=sorted_rows.device)
    lower = positions.floor().long()
    upper = torch.clamp(lower + 1, max=current - 1)
    frac = positions - lower.to(positions.dtype)
    return sorted_rows[..., lower] * (1 - frac) + sorted_rows[..., upper] * frac


def _match_lengths(sorted_a: torch.Tensor, sorted_b: torch.Tensor,
                   interpolate: bool) -> Tuple[torch.Tensor, torch.Tensor]:
    len_a, len_b = sorted_a.shape[-1], sorted_b.shape[-1]
    if len_a == len_b:
        return sorted_a, sorted_b
    if not interpolate:
        raise InvalidArgumentError(f"样本数不一致: {len_a} != {len_b}（可开启分位数插值模式）")
    target = max(len_a, len_b)
    return _resample_sorted(sorted_a, target), _resample_sorted(sorted_b, target)


def sw1d(p, q, interpolate: bool = False) -> torch.Tensor:
    """
    一维切片损失：(1/len)·||sort(p) - sort(q)||²

    Args:
        p: 一维投影值
        q: 一维投影值，默认要求与 p 等长
        interpolate: 长度不一致时把较短的排序向量线性重采样到较长的长度

    Returns:
        非负标量张量（对 p、q 可微）
    """
    p = torch.as_tensor(p)
    q = torch.as_tensor(q)
    if not p.is_floating_point():
        p = p.to(torch.float64)
    if not q.is_floating_point():
        q = q.to(torch.float64)
    if p.dim() != 1 or q.dim() != 1:
        raise InvalidArgumentError("sw1d 只接受一维向量")
    if p.numel() < 1 or q.numel() < 1:
        raise InvalidArgumentError("sw1d 的输入不能为空")
    sorted_p = torch.sort(p, stable=True).values
    sorted_q = torch.sort(q, stable=True).values
    sorted_p, sorted_q = _match_lengths(sorted_p, sorted_q, interpolate)
    return ((sorted_p - sorted_q) ** 2).mean()


def layer_loss(batch_a: ProjectionBatch, batch_b: ProjectionBatch,
               interpolate: bool = False) -> torch.Tensor:
    """
    单层切片Wasserstein距离的蒙特卡洛估计：对匹配的方向行求 sw1d 后取平均
    """
    if batch_a.count != batch_b.count:
        raise InvalidArgumentError(f"方向数量不一致: {batch_a.count} != {batch_b.count}")
    sorted_a = torch.sort(batch_a.values, dim=1, stable=True).values
    sorted_b = torch.sort(batch_b.values, dim=1, stable=True).values
    sorted_a, sorted_b = _match_lengths(sorted_a, sorted_b, interpolate)
    return ((sorted_a - sorted_b) ** 2).mean(dim=1).mean()


def _check_stacks(stack_a: FeatureStack, stack_b: FeatureStack, term: str, interpolate: bool):
    if stack_a.tags != stack_b.tags:
        raise InvalidArgumentError(f"层标签不一致: {stack_a.tags} != {stack_b.tags}")
    axis = TERM_AXES[term]
    for (tag, feat_a), (_, feat_b) in zip(stack_a, stack_b):
        if feat_a.shape[axis] != feat_b.shape[axis]:
            raise InvalidArgumentError(
                f"层 {tag} 的{term}切片维度不一致: {tuple(feat_a.shape)} vs {tuple(feat_b.shape)}"
            )
        if not interpolate and feat_a.shape != feat_b.shape:
            raise InvalidArgumentError(
                f"层 {tag} 形状不一致: {tuple(feat_a.shape)} vs {tuple(feat_b.shape)}"
            )


def _zero_like_stack(stack: FeatureStack) -> torch.Tensor:
    # 保持与计算图相连，全零权重时反向传播仍然可用
    if not len(stack):
        return torch.zeros(())
    return stack.layers[0][1].sum() * 0.0


def _term_loss(term: str, stack_a: FeatureStack, stack_b: FeatureStack, weights: LossWeights,
               generator: Optional[torch.Generator], count: Optional[int],
               directions: Optional[Dict[str, DirectionSet]], interpolate: bool) -> torch.Tensor:
    _check_stacks(stack_a, stack_b, term, interpolate)
    term_weights = weights.as_terms()[term]
    projector = PROJECTORS[term]
    axis = TERM_AXES[term]

    total = _zero_like_stack(stack_a)
    for tag, feat_a in stack_a:
        weight = term_weights.get(tag, 0.0)
        if weight == 0:
            continue
        if directions is not None and tag in directions:
            dirs = directions[tag]
        else:
            dim = feat_a.shape[axis]
            dirs = sample_directions(count or dim, dim, generator,
                                     dtype=feat_a.dtype, device=feat_a.device)
        feat_b = stack_b.get(tag)
        total = total + weight * layer_loss(projector(feat_a, dirs), projector(feat_b, dirs),
                                            interpolate)
    return total


def channel_slice_loss(stack_a: FeatureStack, stack_b: FeatureStack, weights: LossWeights,
                       generator: Optional[torch.Generator] = None, count: Optional[int] = None,
                       directions: Optional[Dict[str, DirectionSet]] = None,
                       interpolate: bool = False) -> torch.Tensor:
    """
    通道切片损失：Σ_ℓ w_ℓ · layer_loss，默认每层 N_ℓ 个新抽取的方向

    Args:
        stack_a: 待优化图像的特征
        stack_b: 参考图像的特征
        weights: 逐层权重
        generator: 随机源
        count: 覆盖每层方向数量
        directions: 预先抽取的方向（按层标签），存在时不再抽样
        interpolate: 允许样本数不一致
    """
    return _term_loss('channel', stack_a, stack_b, weights, generator, count, directions, interpolate)


def height_slice_loss(stack_a: FeatureStack, stack_b: FeatureStack, weights: LossWeights,
                      generator: Optional[torch.Generator] = None, count: Optional[int] = None,
                      directions: Optional[Dict[str, DirectionSet]] = None,
                      interpolate: bool = False) -> torch.Tensor:
    """高度切片损失：Σ_ℓ w_ℓ · layer_loss，默认每层 H_ℓ 个方向"""
    return _term_loss('height', stack_a, stack_b, weights, generator, count, directions, interpolate)


def width_slice_loss(stack_a: FeatureStack, stack_b: FeatureStack, weights: LossWeights,
                     generator: Optional[torch.Generator] = None, count: Optional[int] = None,
                     directions: Optional[Dict[str, DirectionSet]] = None,
                     interpolate: bool = False) -> torch.Tensor:
    """宽度切片损失（实验性），默认每层 W_ℓ 个方向"""
    return _term_loss('width', stack_a, stack_b, weights, generator, count, directions, interpolate)


def draw_slice_directions(stack: FeatureStack, weights: LossWeights,
                          generator: Optional[torch.Generator] = None,
                          channel_count: Optional[int] = None,
                          height_count: Optional[int] = None) -> SliceDirections:
    """
    为所有启用的切片项抽取一组方向，用于在多次损失评估间冻结同一组方向

    宽度项与高度项共用 height_count 覆盖值
    """
    drawn = SliceDirections()
    counts = {'channel': channel_count, 'height': height_count, 'width': height_count}
    for term in ('channel', 'height', 'width'):
        active = set(weights.active_layers(term))
        target = drawn.for_term(term)
        for tag, features in stack:
            if tag not in active:
                continue
            dim = features.shape[TERM_AXES[term]]
            target[tag] = sample_directions(counts[term] or dim, dim, generator,
                                            dtype=features.dtype, device=features.device)
    return drawn


def slicing_loss(stack_a: FeatureStack, stack_b: FeatureStack, weights: LossWeights,
                 generator: Optional[torch.Generator] = None,
                 channel_count: Optional[int] = None, height_count: Optional[int] = None,
                 directions: Optional[SliceDirections] = None,
                 interpolate: bool = False) -> torch.Tensor:
    """
    组合切片损失 = 通道切片损失 + 高度切片损失（+ 启用时的宽度切片损失）

    各项独立抽取方向；传入 directions 时使用冻结的方向。结果对 stack_a 的激活可微
    """
    loss = channel_slice_loss(
        stack_a, stack_b, weights, generator, channel_count,
        directions.channel if directions is not None else None, interpolate,
    )
    loss = loss + height_slice_loss(
        stack_a, stack_b, weights, generator, height_count,
        directions.height if directions is not None else None, interpolate,
    )
    if weights.active_layers('width'):
        loss = loss + width_slice_loss(
            stack_a, stack_b, weights, generator, height_count,
            directions.width if directions is not None else None, interpolate,
        )
    return loss
