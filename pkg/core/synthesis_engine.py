"""
纹理合成引擎

- 单尺度：以白噪声为优化变量，用L-BFGS最小化切片损失
- 多尺度：参考图像下采样 2^K 倍开始，由粗到细逐级优化并2倍上采样

优化在预处理（标准化）空间中进行，只在输出时截断到[0,1]
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import torch

from .errors import InvalidArgumentError, NumericalError
from .feature_extractor import (
    DEFAULT_CHANNEL_LAYERS,
    DEFAULT_HEIGHT_LAYERS,
    FeatureExtractor,
)
from .image_pyramid import build_reference_pyramid, upsample
from .sw_loss import LossWeights, SliceDirections, draw_slice_directions, slicing_loss


logger = logging.getLogger('SynthesisEngine')

UPSAMPLE_MODE = 'bilinear'
DOWNSAMPLE_MODE = 'bicubic'
ABLATION_SLICE_COUNTS = (16, 64, 256)
# 参考图像为常数时噪声的最小标准差
MIN_NOISE_STD = 0.01
REPLICA_RISK_SCALES = 2


@dataclass
class SynthesisConfig:
    """优化超参数"""
    scales: int = 1
    iterations: int = 100
    learning_rate: float = 1.0
    lbfgs_max_iter: int = 1
    history_size: int = 100
    line_search: str = 'strong_wolfe'
    channel_layers: List[str] = field(default_factory=lambda: list(DEFAULT_CHANNEL_LAYERS))
    height_layers: List[str] = field(default_factory=lambda: list(DEFAULT_HEIGHT_LAYERS))
    use_height_loss: bool = True
    use_width_loss: bool = False
    slice_override: Optional[int] = None
    channel_slice_count: Optional[int] = None
    resample_directions: bool = True
    cache_reference_features: bool = True
    interpolate_mismatched: bool = False
    seed: int = 0

    @property
    def upsample_mode(self) -> str:
        return UPSAMPLE_MODE

    @property
    def downsample_mode(self) -> str:
        return DOWNSAMPLE_MODE

    def validate(self):
        if self.scales < 0:
            raise InvalidArgumentError(f"尺度数 K 不能为负: {self.scales}")
        if self.iterations < 0:
            raise InvalidArgumentError(f"迭代次数 M 不能为负: {self.iterations}")
        if self.learning_rate <= 0:
            raise InvalidArgumentError(f"学习率必须为正: {self.learning_rate}")
        if self.lbfgs_max_iter < 1 or self.history_size < 1:
            raise InvalidArgumentError("lbfgs_max_iter 和 history_size 必须为正")
        if self.line_search not in ('strong_wolfe', 'none'):
            raise InvalidArgumentError(f"未知的线搜索方式: {self.line_search}")
        for name in ('slice_override', 'channel_slice_count'):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise InvalidArgumentError(f"{name} 必须为正整数: {value}")

    def loss_weights(self) -> LossWeights:
        """选中层权重为1；关闭高度项即为原始SW损失"""
        height = self.height_layers if self.use_height_loss else []
        width = self.height_layers if self.use_width_loss else []
        return LossWeights.uniform(self.channel_layers, height, width)

    def check_reference(self, height: int, width: int):
        factor = 2 ** self.scales
        if height % factor or width % factor:
            raise InvalidArgumentError(
                f"参考图像 {height}×{width} 不能被 2^{self.scales}={factor} 整除"
            )


@dataclass
class ScaleTrace:
    """单个尺度的优化记录"""
    scale_index: int
    level: int
    size: Tuple[int, int]
    losses: List[float] = field(default_factory=list)
    elapsed: List[float] = field(default_factory=list)
    final_loss: Optional[float] = None
    wall_clock: float = 0.0
    image: Optional[torch.Tensor] = None

    @property
    def initial_loss(self) -> Optional[float]:
        return self.losses[0] if self.losses else None


@dataclass
class SynthesisTrace:
    """逐尺度的损失、耗时和中间结果"""
    segments: List[ScaleTrace] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def extend(self, other: 'SynthesisTrace'):
        self.segments.extend(other.segments)
        self.notes.extend(other.notes)

    @property
    def sizes(self) -> List[Tuple[int, int]]:
        return [segment.size for segment in self.segments]

    @property
    def total_seconds(self) -> float:
        return sum(segment.wall_clock for segment in self.segments)

    def rows(self) -> List[Dict]:
        rows = []
        for segment in self.segments:
            for iteration, (loss, elapsed) in enumerate(zip(segment.losses, segment.elapsed)):
                rows.append({
                    'iteration': iteration,
                    'scale': segment.scale_index,
                    'loss': loss,
                    'elapsed_seconds': elapsed,
                })
        return rows

    def to_table(self) -> str:
        """纯文本表：iteration, scale, loss, elapsed-seconds"""
        lines = [f"{'iteration':>9}  {'scale':>5}  {'loss':>14}  {'elapsed_seconds':>15}"]
        for row in self.rows():
            lines.append(
                f"{row['iteration']:>9d}  {row['scale']:>5d}  {row['loss']:>14.6e}  "
                f"{row['elapsed_seconds']:>15.3f}"
            )
        return '\n'.join(lines) + '\n'


def make_generator(seed: int) -> torch.Generator:
    """所有随机性来自同一个主种子"""
    generator = torch.Generator(device='cpu')
    generator.manual_seed(int(seed))
    return generator


def _check_image(img: torch.Tensor, name: str):
    if img.dim() != 3 or img.shape[2] != 3:
        raise InvalidArgumentError(f"{name} 必须是 H×W×3，实际形状 {tuple(img.shape)}")


def init_noise(ref: torch.Tensor, generator: Optional[torch.Generator] = None,
               size: Optional[Tuple[int, int]] = None) -> torch.Tensor:
    """
    与参考图像逐通道均值/标准差匹配的高斯白噪声，截断到[0,1]

    Args:
        ref: 参考图像
        generator: 随机源
        size: 目标尺寸，默认与参考图像相同
    """
    _check_image(ref, '参考图像')
    height, width = size or (ref.shape[0], ref.shape[1])
    ref = ref.detach().to(torch.float32).cpu()
    mean = ref.mean(dim=(0, 1))
    std = ref.std(dim=(0, 1), unbiased=False).clamp(min=MIN_NOISE_STD)
    noise = torch.randn((height, width, 3), generator=generator, dtype=torch.float32)
    return (noise * std + mean).clamp(0, 1)


def _build_optimizer(variable: torch.Tensor, cfg: SynthesisConfig) -> torch.optim.LBFGS:
    return torch.optim.LBFGS(
        [variable],
        lr=cfg.learning_rate,
        max_iter=cfg.lbfgs_max_iter,
        history_size=cfg.history_size,
        line_search_fn=None if cfg.line_search == 'none' else cfg.line_search,
    )


def synthesize_single_scale(ref: torch.Tensor, init: torch.Tensor, ex: FeatureExtractor,
                            cfg: SynthesisConfig, generator: Optional[torch.Generator] = None,
                            scale_index: int = 0, level: int = 0) -> Tuple[torch.Tensor, SynthesisTrace]:
    """
    单尺度合成：M 步L-BFGS最小化 slicing_loss(Extract(当前), Extract(参考))

    每个优化步内所有闭包评估使用同一组方向，步与步之间重新抽样
    （resample_directions=False 时整个过程共用一组方向）

    Args:
        ref: 参考图像 H×W×3
        init: 初始图像，默认模式下与参考图像同尺寸
        ex: 特征提取器
        cfg: 合成配置
        generator: 随机源，为空时由 cfg.seed 创建
        scale_index: 多尺度流程中的尺度序号
        level: 该尺度相对参考图像的下采样指数

    Returns:
        (截断到[0,1]的合成图像, 优化轨迹)
    """
    _check_image(ref, '参考图像')
    _check_image(init, '初始图像')
    cfg.validate()
    if ref.shape != init.shape and not cfg.interpolate_mismatched:
        raise InvalidArgumentError(f"参考图像 {tuple(ref.shape)} 与初始图像 {tuple(init.shape)} 尺寸不一致")

    generator = generator if generator is not None else make_generator(cfg.seed)
    segment = ScaleTrace(scale_index=scale_index, level=level,
                         size=(int(init.shape[0]), int(init.shape[1])))
    trace = SynthesisTrace(segments=[segment])

    if cfg.iterations == 0:
        segment.image = init.detach().clone()
        return segment.image, trace

    weights = cfg.loss_weights()
    ex.check_input_size(ref.shape[0], ref.shape[1])
    ex.check_input_size(init.shape[0], init.shape[1])

    ref_x = ex.preprocess(ref)
    with torch.no_grad():
        ref_features = ex.extract_preprocessed(ref_x).detach()

    def reference_features():
        if cfg.cache_reference_features:
            return ref_features
        with torch.no_grad():
            return ex.extract_preprocessed(ref_x).detach()

    # L-BFGS 需要连续内存的参数
    x = ex.preprocess(init).detach().clone(memory_format=torch.contiguous_format).requires_grad_(True)
    optimizer = _build_optimizer(x, cfg)

    fixed_directions = None
    if not cfg.resample_directions:
        fixed_directions = draw_slice_directions(ref_features, weights, generator,
                                                 cfg.channel_slice_count, cfg.slice_override)

    logger.info(f"尺度 {scale_index} 开始: {segment.size[0]}×{segment.size[1]}, M={cfg.iterations}")
    start = time.perf_counter()
    directions: Optional[SliceDirections] = None

    for iteration in range(cfg.iterations):
        directions = fixed_directions or draw_slice_directions(
            ref_features, weights, generator, cfg.channel_slice_count, cfg.slice_override
        )

        def closure():
            optimizer.zero_grad()
            loss = slicing_loss(ex.extract_preprocessed(x), reference_features(), weights,
                                directions=directions, interpolate=cfg.interpolate_mismatched)
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"尺度 {scale_index} 第 {iteration} 步损失非有限: {loss.item()}",
                    diagnostics={'scale': scale_index, 'iteration': iteration},
                )
            loss.backward()
            return loss

        try:
            loss = optimizer.step(closure)
        except NumericalError as e:
            segment.wall_clock = time.perf_counter() - start
            e.trace = trace
            logger.error(f"优化中止: {e}")
            raise

        segment.losses.append(loss.item())
        segment.elapsed.append(time.perf_counter() - start)
        logger.debug(f"尺度 {scale_index} 第 {iteration} 步: loss={segment.losses[-1]:.6e}")

    with torch.no_grad():
        final = slicing_loss(ex.extract_preprocessed(x), reference_features(), weights,
                             directions=directions, interpolate=cfg.interpolate_mismatched)
    segment.final_loss = float(final)
    segment.wall_clock = time.perf_counter() - start

    output = ex.deprocess(x.detach()).clamp(0, 1).cpu()
    segment.image = output
    logger.info(
        f"尺度 {scale_index} 完成: 初始损失 {segment.initial_loss:.4e} -> 最终损失 "
        f"{segment.final_loss:.4e}, 用时 {segment.wall_clock:.1f}s"
    )
    return output, trace


def synthesize_multiscale(ref: torch.Tensor, ex: FeatureExtractor, cfg: SynthesisConfig,
                          generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, SynthesisTrace]:
    """
    多尺度合成：从下采样 2^K 倍的白噪声开始，逐级优化并2倍上采样，最后一级不再上采样

    Returns:
        (与参考图像同尺寸的合成图像, 包含 K+1 段的轨迹)
    """
    _check_image(ref, '参考图像')
    cfg.validate()
    height, width = int(ref.shape[0]), int(ref.shape[1])
    cfg.check_reference(height, width)
    factor = 2 ** cfg.scales
    ex.check_input_size(height // factor, width // factor)

    generator = generator if generator is not None else make_generator(cfg.seed)
    pyramid = build_reference_pyramid(ref, cfg.scales)
    trace = SynthesisTrace()
    if cfg.scales >= REPLICA_RISK_SCALES:
        note = f"K={cfg.scales} 时可能出现复制参考图像的重复纹理"
        trace.notes.append(note)
        logger.warning(note)

    current = init_noise(pyramid[cfg.scales], generator)
    for scale_index in range(cfg.scales + 1):
        level = cfg.scales - scale_index
        current, scale_trace = synthesize_single_scale(
            pyramid[level], current, ex, cfg, generator, scale_index=scale_index, level=level
        )
        trace.extend(scale_trace)
        if scale_index < cfg.scales:
            current = upsample(current, 2)
    return current, trace
