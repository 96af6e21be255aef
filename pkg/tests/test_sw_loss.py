#!/usr/bin/env python3
"""
切片Wasserstein损失测试

- 投影的手算结果和轴置换等价
- sw1d 与排列穷举 / 排序的一维最优传输结果一致
- 梯度与中心差分一致（排序不变的点）
- 高度项能区分通道项无法区分的行结构
"""

import itertools
import math

import numpy as np
import pytest
import torch

from core.errors import InvalidArgumentError
from core.sw_loss import (
    DirectionSet,
    FeatureStack,
    LossWeights,
    ProjectionBatch,
    channel_slice_loss,
    draw_slice_directions,
    height_slice_loss,
    layer_loss,
    project_channelwise,
    project_heightwise,
    project_widthwise,
    sample_directions,
    slicing_loss,
    sw1d,
    width_slice_loss,
)


def _stack(tensor, tag='relu1_1'):
    return FeatureStack([(tag, tensor)])


def _brute_force_w2(p, q):
    """所有排列中的最小平均平方代价"""
    n = len(p)
    perms = np.array(list(itertools.permutations(range(n))))
    costs = ((p[None, :] - q[perms]) ** 2).mean(axis=1)
    return costs.min()


# ---------------------------------------------------------------- 方向抽样

def test_sample_directions_one_dimensional():
    """1维方向只能是 ±1"""
    dirs = sample_directions(1, 1, torch.Generator().manual_seed(3))
    assert dirs.count == 1 and dirs.dim == 1
    assert abs(abs(float(dirs.vectors[0, 0])) - 1.0) == 0.0


def test_sample_directions_unit_norm():
    dirs = sample_directions(64, 64, torch.Generator().manual_seed(0))
    norms = dirs.vectors.norm(dim=1)
    assert torch.all((norms - 1).abs() < 1e-6)


def test_sample_directions_isotropic():
    """蒙特卡洛检查各向同性：均值向量接近0"""
    dirs = sample_directions(10000, 2, torch.Generator().manual_seed(1), dtype=torch.float64)
    assert float(dirs.vectors.mean(dim=0).norm()) < 0.05


def test_sample_directions_deterministic():
    a = sample_directions(8, 5, torch.Generator().manual_seed(11))
    b = sample_directions(8, 5, torch.Generator().manual_seed(11))
    assert torch.equal(a.vectors, b.vectors)


@pytest.mark.parametrize("count,dim", [(0, 3), (3, 0), (0, 0)])
def test_sample_directions_rejects_zero(count, dim):
    with pytest.raises(InvalidArgumentError):
        sample_directions(count, dim)


# ---------------------------------------------------------------- 投影

def test_project_channelwise_zeros():
    dirs = sample_directions(4, 3, torch.Generator().manual_seed(0))
    batch = project_channelwise(torch.zeros(2, 2, 3), dirs)
    assert batch.count == 4 and batch.samples == 4
    assert torch.all(batch.values == 0)


def test_project_channelwise_hand_dot_product():
    features = torch.tensor([[[3.0, 4.0]]], dtype=torch.float64)
    dirs = DirectionSet(torch.tensor([[0.6, 0.8]], dtype=torch.float64))
    assert float(project_channelwise(features, dirs).values[0, 0]) == pytest.approx(5.0, abs=1e-12)


def test_project_channelwise_basis_reproduces_channels():
    features = torch.randn(4, 4, 8, generator=torch.Generator().manual_seed(2))
    batch = project_channelwise(features, DirectionSet(torch.eye(8)))
    for channel in range(8):
        assert torch.allclose(batch.values[channel], features[:, :, channel].reshape(-1))


def test_project_channelwise_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        project_channelwise(torch.zeros(2, 2, 3), DirectionSet(torch.ones(1, 4) / 2))


def test_project_heightwise_zeros_and_basis():
    dirs = sample_directions(2, 3, torch.Generator().manual_seed(0))
    assert torch.all(project_heightwise(torch.zeros(3, 2, 2), dirs).values == 0)

    features = torch.tensor([[[1.5]], [[-2.0]]])
    batch = project_heightwise(features, DirectionSet(torch.tensor([[1.0, 0.0]])))
    assert batch.samples == 1
    assert float(batch.values[0, 0]) == 1.5


def test_project_heightwise_equals_permuted_channelwise():
    """高度切片 = 高度轴换到最后后的通道切片，逐元素相等"""
    generator = torch.Generator().manual_seed(4)
    features = torch.randn(4, 3, 2, generator=generator)
    dirs = sample_directions(5, 4, generator)
    height = project_heightwise(features, dirs)
    channel = project_channelwise(features.permute(1, 2, 0).contiguous(), dirs)
    assert height.samples == 3 * 2
    assert torch.equal(height.values, channel.values)


def test_project_heightwise_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        project_heightwise(torch.zeros(3, 2, 2), DirectionSet(torch.ones(1, 2) / math.sqrt(2)))


def test_project_widthwise_samples():
    features = torch.randn(4, 3, 2, generator=torch.Generator().manual_seed(5))
    dirs = sample_directions(6, 3, torch.Generator().manual_seed(5))
    batch = project_widthwise(features, dirs)
    assert batch.count == 6 and batch.samples == 4 * 2


# ---------------------------------------------------------------- sw1d

def test_sw1d_identity_and_hand_value():
    p = torch.tensor([0.3, -1.2, 4.0], dtype=torch.float64)
    assert float(sw1d(p, p)) == 0.0
    assert float(sw1d([0.0, 1.0], [1.0, 2.0])) == pytest.approx(1.0, abs=1e-12)
    # 整数输入同样可用
    assert float(sw1d([0, 1], [2, 1])) == pytest.approx(1.0, abs=1e-12)


def test_sw1d_symmetric_and_multiset_zero():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = rng.normal(size=10)
        q = rng.normal(size=10)
        assert float(sw1d(p, q)) == pytest.approx(float(sw1d(q, p)), abs=1e-14)
        assert float(sw1d(p, q)) > 0
        assert float(sw1d(p, rng.permutation(p))) == 0.0


def test_sw1d_matches_permutation_brute_force():
    """n ≤ 7 时与穷举所有匹配的最优传输一致"""
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        p = rng.normal(size=n)
        q = rng.normal(size=n) * 2 + 0.5
        assert abs(float(sw1d(p, q)) - _brute_force_w2(p, q)) < 1e-10


def test_sw1d_matches_sorting_oracle():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(1, 65))
        p = rng.standard_cauchy(size=n).clip(-50, 50)
        q = rng.normal(size=n)
        oracle = float(np.mean((np.sort(p) - np.sort(q)) ** 2))
        assert abs(float(sw1d(p, q)) - oracle) < 1e-10 * max(1.0, oracle)


def test_sw1d_length_mismatch():
    with pytest.raises(InvalidArgumentError):
        sw1d([0.0, 1.0], [0.0, 0.5, 1.0])


def test_sw1d_quantile_interpolation():
    """较短的排序向量按分位数线性重采样"""
    assert float(sw1d([1.0, 0.0], [0.0, 0.5, 1.0], interpolate=True)) == pytest.approx(0.0, abs=1e-12)
    assert float(sw1d([0.0, 1.0], [1.0, 1.5, 2.0], interpolate=True)) == pytest.approx(1.0, abs=1e-12)


def test_sw1d_rejects_empty():
    with pytest.raises(InvalidArgumentError):
        sw1d([], [])


# ---------------------------------------------------------------- layer_loss

def test_layer_loss_identity_and_single_row():
    values = torch.randn(3, 10, generator=torch.Generator().manual_seed(6), dtype=torch.float64)
    batch = ProjectionBatch(values)
    assert float(layer_loss(batch, batch)) == 0.0

    other = ProjectionBatch(values[:1] * 2 + 1)
    assert float(layer_loss(ProjectionBatch(values[:1]), other)) == pytest.approx(
        float(sw1d(values[0], values[0] * 2 + 1)), abs=1e-14
    )


def test_layer_loss_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        layer_loss(ProjectionBatch(torch.zeros(2, 5)), ProjectionBatch(torch.zeros(3, 5)))
    with pytest.raises(InvalidArgumentError):
        layer_loss(ProjectionBatch(torch.zeros(2, 5)), ProjectionBatch(torch.zeros(2, 6)))


def test_layer_loss_dense_directions_match_independent_sweep():
    """二维点云：4096个均匀方向的 layer_loss 与独立的角度扫描积分相对误差 < 1%"""
    rng = np.random.default_rng(7)
    cloud_a = rng.normal(size=(200, 2))
    cloud_b = rng.normal(size=(200, 2)) * np.array([2.0, 0.5]) + np.array([0.5, -1.0])

    angles = torch.arange(4096, dtype=torch.float64) * (2 * math.pi / 4096)
    dirs = DirectionSet(torch.stack([torch.cos(angles), torch.sin(angles)], dim=1))
    features_a = torch.from_numpy(cloud_a).view(1, 200, 2)
    features_b = torch.from_numpy(cloud_b).view(1, 200, 2)
    estimate = float(layer_loss(project_channelwise(features_a, dirs), project_channelwise(features_b, dirs)))

    # 中点规则扫描 [0, π)，方向 d 与 -d 的损失相同
    sweep = (np.arange(10000) + 0.5) * (np.pi / 10000)
    oracle = np.mean([
        np.mean((np.sort(cloud_a @ [np.cos(t), np.sin(t)]) - np.sort(cloud_b @ [np.cos(t), np.sin(t)])) ** 2)
        for t in sweep
    ])
    assert abs(estimate - oracle) / oracle < 0.01


def test_layer_loss_pitie_identity_property():
    """多重集相等时1000个方向上损失为0，不相等（独立抽样或扰动一个点）时损失为正"""
    rng = np.random.default_rng(8)
    generator = torch.Generator().manual_seed(8)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        d = int(rng.integers(1, 5))
        points = rng.normal(size=(n, d))
        shuffled = points[rng.permutation(n)]
        dirs = sample_directions(1000, d, generator, dtype=torch.float64)

        def loss(a, b):
            return float(layer_loss(
                project_channelwise(torch.from_numpy(a).view(1, n, d), dirs),
                project_channelwise(torch.from_numpy(b).view(1, n, d), dirs),
            ))

        assert loss(points, shuffled) < 1e-20
        other = rng.normal(size=(n, d))
        assert loss(points, other) > 1e-12

        moved = shuffled.copy()
        moved[0] += 0.1 + rng.random(d)
        assert loss(points, moved) > 0


def test_layer_loss_monte_carlo_rate():
    """方向抽样的标准误差按 1/√count 递减"""
    generator = torch.Generator().manual_seed(9)
    features_a = torch.randn(1, 300, 6, generator=generator, dtype=torch.float64)
    features_b = torch.randn(1, 300, 6, generator=generator, dtype=torch.float64) * 1.5 + 0.3
    counts = [16, 64, 256, 1024]
    stds = []
    for count in counts:
        draws = []
        for _ in range(60):
            dirs = sample_directions(count, 6, generator, dtype=torch.float64)
            draws.append(float(layer_loss(project_channelwise(features_a, dirs),
                                          project_channelwise(features_b, dirs))))
        stds.append(np.std(draws))
    slope = np.polyfit(np.log(counts), np.log(stds), 1)[0]
    assert -0.65 < slope < -0.35


# ---------------------------------------------------------------- 多层损失

def test_channel_slice_loss_identity_and_zero_weights():
    generator = torch.Generator().manual_seed(10)
    a = FeatureStack([('relu1_1', torch.rand(4, 4, 3, generator=generator)),
                      ('relu2_1', torch.rand(2, 2, 5, generator=generator))])
    b = FeatureStack([('relu1_1', torch.rand(4, 4, 3, generator=generator)),
                      ('relu2_1', torch.rand(2, 2, 5, generator=generator))])
    weights = LossWeights.uniform(a.tags, a.tags)
    assert float(channel_slice_loss(a, a, weights, generator)) == 0.0
    assert float(channel_slice_loss(a, b, LossWeights.uniform([], a.tags), generator)) == 0.0
    assert float(channel_slice_loss(a, b, weights, generator)) > 0


def test_channel_slice_loss_single_layer_equals_layer_loss():
    generator = torch.Generator().manual_seed(12)
    fa = torch.randn(3, 3, 4, generator=generator, dtype=torch.float64)
    fb = torch.randn(3, 3, 4, generator=generator, dtype=torch.float64)
    dirs = sample_directions(4, 4, generator, dtype=torch.float64)
    weights = LossWeights.uniform(['relu1_1'])
    loss = channel_slice_loss(_stack(fa), _stack(fb), weights, directions={'relu1_1': dirs})
    expected = layer_loss(project_channelwise(fa, dirs), project_channelwise(fb, dirs))
    assert float(loss) == pytest.approx(float(expected), abs=1e-14)


def test_channel_slice_loss_default_direction_count():
    """通道项默认每层抽取 N_ℓ 个方向"""
    stack = _stack(torch.rand(3, 3, 7))
    drawn = draw_slice_directions(stack, LossWeights.uniform(['relu1_1'], ['relu1_1']),
                                  torch.Generator().manual_seed(0))
    assert drawn.channel['relu1_1'].count == 7
    assert drawn.height['relu1_1'].count == 3
    assert drawn.width == {}

    overridden = draw_slice_directions(stack, LossWeights.uniform(['relu1_1'], ['relu1_1']),
                                       torch.Generator().manual_seed(0), channel_count=16, height_count=64)
    assert overridden.channel['relu1_1'].count == 16
    assert overridden.height['relu1_1'].count == 64


def test_slice_loss_tag_and_shape_mismatch():
    a = _stack(torch.rand(4, 4, 3))
    with pytest.raises(InvalidArgumentError):
        channel_slice_loss(a, _stack(torch.rand(4, 4, 3), tag='relu2_1'), LossWeights.uniform(['relu1_1']))
    with pytest.raises(InvalidArgumentError):
        channel_slice_loss(a, _stack(torch.rand(4, 2, 3)), LossWeights.uniform(['relu1_1']))
    with pytest.raises(InvalidArgumentError):
        height_slice_loss(a, _stack(torch.rand(2, 8, 3)), LossWeights.uniform([], ['relu1_1']))


def test_height_slice_loss_hand_oracle():
    """2×1×1 手算：列 (1,2) 与 (3,5) 在方向 (0.6,0.8) 上的投影 2.2 和 5.8"""
    a = _stack(torch.tensor([[[1.0]], [[2.0]]], dtype=torch.float64))
    b = _stack(torch.tensor([[[3.0]], [[5.0]]], dtype=torch.float64))
    dirs = DirectionSet(torch.tensor([[0.6, 0.8]], dtype=torch.float64))
    loss = height_slice_loss(a, b, LossWeights.uniform([], ['relu1_1']), directions={'relu1_1': dirs})
    assert float(loss) == pytest.approx(3.6 ** 2, abs=1e-12)


def test_height_slice_loss_identity_and_zero_weights():
    generator = torch.Generator().manual_seed(13)
    a = _stack(torch.rand(4, 4, 3, generator=generator))
    b = _stack(torch.rand(4, 4, 3, generator=generator))
    assert float(height_slice_loss(a, a, LossWeights.uniform([], ['relu1_1']), generator)) == 0.0
    assert float(height_slice_loss(a, b, LossWeights.uniform(['relu1_1']), generator)) == 0.0


def test_height_term_separates_row_structure():
    """交换两行：通道项为0（像素多重集不变），高度项为正"""
    rows = torch.stack([torch.arange(6, dtype=torch.float64).view(3, 2),
                        10 + torch.arange(6, dtype=torch.float64).view(3, 2)])
    a = _stack(rows)
    b = _stack(rows.flip(0))
    weights = LossWeights.uniform(['relu1_1'], ['relu1_1'])
    directions = draw_slice_directions(a, weights, torch.Generator().manual_seed(14))
    channel = channel_slice_loss(a, b, weights, directions=directions.channel)
    height = height_slice_loss(a, b, weights, directions=directions.height)
    assert float(channel) < 1e-20
    assert float(height) > 0


def test_channel_loss_pixel_permutation_invariance():
    generator = torch.Generator().manual_seed(15)
    fa = torch.randn(4, 4, 5, generator=generator, dtype=torch.float64)
    fb = torch.randn(4, 4, 5, generator=generator, dtype=torch.float64)
    weights = LossWeights.uniform(['relu1_1'])
    directions = draw_slice_directions(_stack(fa), weights, generator).channel
    base = channel_slice_loss(_stack(fa), _stack(fb), weights, directions=directions)

    order = torch.randperm(16, generator=generator)
    shuffled_a = fa.reshape(16, 5)[order].reshape(4, 4, 5)
    shuffled_b = fb.reshape(16, 5)[order].reshape(4, 4, 5)
    both = channel_slice_loss(_stack(shuffled_a), _stack(shuffled_b), weights, directions=directions)
    one = channel_slice_loss(_stack(shuffled_a), _stack(fb), weights, directions=directions)
    assert float(both) == pytest.approx(float(base), abs=1e-12)
    assert float(one) == pytest.approx(float(base), abs=1e-12)


def test_slicing_loss_term_composition():
    generator = torch.Generator().manual_seed(16)
    a = _stack(torch.rand(4, 4, 3, generator=generator, dtype=torch.float64))
    b = _stack(torch.rand(4, 4, 3, generator=generator, dtype=torch.float64))
    weights = LossWeights.uniform(['relu1_1'], ['relu1_1'])
    directions = draw_slice_directions(a, weights, generator)

    total = slicing_loss(a, b, weights, directions=directions)
    channel = channel_slice_loss(a, b, weights, directions=directions.channel)
    height = height_slice_loss(a, b, weights, directions=directions.height)
    assert float(total) == pytest.approx(float(channel + height), abs=1e-12)
    # 去掉高度项即原始SW损失
    assert float(slicing_loss(a, b, weights.without_height(), directions=directions)) == pytest.approx(
        float(channel), abs=1e-12)
    # 去掉通道项只剩高度项
    height_only = LossWeights.uniform([], ['relu1_1'])
    assert float(slicing_loss(a, b, height_only, directions=directions)) == pytest.approx(
        float(height), abs=1e-12)


def test_slicing_loss_identity_random_stacks():
    generator = torch.Generator().manual_seed(17)
    for _ in range(20):
        stack = FeatureStack([('relu1_1', torch.rand(8, 8, 4, generator=generator)),
                              ('relu2_1', torch.rand(4, 4, 6, generator=generator))])
        weights = LossWeights.uniform(stack.tags, stack.tags)
        assert float(slicing_loss(stack, stack, weights, generator)) <= 1e-10


def test_width_term_disabled_by_default():
    generator = torch.Generator().manual_seed(18)
    a = _stack(torch.rand(4, 4, 3, generator=generator, dtype=torch.float64))
    b = _stack(torch.rand(4, 4, 3, generator=generator, dtype=torch.float64))
    assert float(width_slice_loss(a, b, LossWeights.uniform(['relu1_1'], ['relu1_1']), generator)) == 0.0

    weights = LossWeights.uniform(['relu1_1'], ['relu1_1'], ['relu1_1'])
    directions = draw_slice_directions(a, weights, generator)
    assert directions.width['relu1_1'].dim == 4
    with_width = slicing_loss(a, b, weights, directions=directions)
    without = slicing_loss(a, b, LossWeights.uniform(['relu1_1'], ['relu1_1']), directions=directions)
    assert float(with_width) > float(without)


def test_loss_weights_reject_negative():
    with pytest.raises(InvalidArgumentError):
        LossWeights(channel_weights={'relu1_1': -1.0})


def test_interpolated_stacks_allow_different_widths():
    generator = torch.Generator().manual_seed(19)
    a = _stack(torch.rand(4, 8, 3, generator=generator, dtype=torch.float64))
    b = _stack(torch.rand(4, 4, 3, generator=generator, dtype=torch.float64))
    weights = LossWeights.uniform(['relu1_1'], ['relu1_1'])
    with pytest.raises(InvalidArgumentError):
        slicing_loss(a, b, weights, generator)
    assert float(slicing_loss(a, b, weights, generator, interpolate=True)) >= 0


# ---------------------------------------------------------------- 梯度

def _projection_orders(features, directions):
    orders = [torch.argsort(project_channelwise(features, d).values, dim=1, stable=True)
              for d in directions.channel.values()]
    orders += [torch.argsort(project_heightwise(features, d).values, dim=1, stable=True)
               for d in directions.height.values()]
    return orders


def test_slicing_loss_gradient_matches_finite_differences():
    """排序不变的点上，解析梯度与步长1e-3的中心差分相对误差 < 1e-4"""
    generator = torch.Generator().manual_seed(20)
    weights = LossWeights.uniform(['relu1_1'], ['relu1_1'])
    step = 1e-3
    checked = 0
    for _ in range(100):
        fa = torch.randn(4, 4, 8, generator=generator, dtype=torch.float64)
        fb = torch.randn(4, 4, 8, generator=generator, dtype=torch.float64)
        stack_b = _stack(fb)
        directions = draw_slice_directions(_stack(fa), weights, generator)

        def loss_at(features):
            return float(slicing_loss(_stack(features), stack_b, weights, directions=directions))

        variable = fa.clone().requires_grad_(True)
        slicing_loss(_stack(variable), stack_b, weights, directions=directions).backward()
        gradient = variable.grad.reshape(-1)

        base_orders = _projection_orders(fa, directions)
        flat = fa.reshape(-1)
        for index in range(0, flat.numel(), 7):
            plus = flat.clone()
            plus[index] += step
            minus = flat.clone()
            minus[index] -= step
            plus, minus = plus.view(4, 4, 8), minus.view(4, 4, 8)
            # 跳过扰动改变排序的坐标
            if not all(torch.equal(o, p) and torch.equal(o, m) for o, p, m in zip(
                    base_orders, _projection_orders(plus, directions), _projection_orders(minus, directions))):
                continue
            numeric = (loss_at(plus) - loss_at(minus)) / (2 * step)
            analytic = float(gradient[index])
            scale = max(abs(analytic), abs(numeric), 1e-6)
            assert abs(analytic - numeric) / scale < 1e-4
            checked += 1
    assert checked > 500
