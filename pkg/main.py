#!/usr/bin/env python3
"""
SliceTex 纹理合成系统 - 主入口文件

功能特性：
1. 纹理合成 - 切片Wasserstein损失 + 高度切片项，支持多尺度由粗到细合成
2. 切片数消融 - 高度项 16/64/256/H_ℓ/关闭 五组，统计运行时间
3. 多尺度扫描 - K = 0, 1, 2 对比，附带周期性与复制诊断
4. 指标报告 - LPIPS / FID / c-FID / KID / c-KID 表格与对比网格图
5. 配置检查 - key = value 配置文件校验

退出码：0 成功，1 运行失败，2 用法错误
"""

import sys
import os
import argparse
import logging
from pathlib import Path

# 添加项目根目录到Python路径
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from core.config_manager import ConfigManager, check_configuration
from core.errors import UsageError
from core.experiment_runner import SWEEP_SCALES, ExperimentRunner
from utils.image_io import list_images


TEXTURE_DIR_ENV = 'SLICETEX_TEXTURE_DIR'
DEFAULT_CONFIG_FILE = 'config/slicetex.conf'
SLICE_CHOICES = ['16', '64', '256', 'auto']


def setup_logging(log_level="INFO", log_file="slicetex.log"):
    """设置日志系统"""
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file, delay=True),
            logging.StreamHandler(sys.stdout)
        ]
    )


def _display_config_issues(issues: dict):
    """显示配置问题"""
    print("\n=== 配置文件检查结果 ===")

    if issues['errors']:
        print("❌ 错误:")
        for error in issues['errors']:
            print(f"   - {error}")

    if issues['warnings']:
        print("⚠️  警告:")
        for warning in issues['warnings']:
            print(f"   - {warning}")

    if issues['recommendations']:
        print("💡 建议:")
        for rec in issues['recommendations']:
            print(f"   - {rec}")

    if not any([issues['errors'], issues['warnings'], issues['recommendations']]):
        print("✅ 配置文件检查通过，未发现问题")

    print()


def _nonnegative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"需要整数: {text}")
    if value < 0:
        raise argparse.ArgumentTypeError(f"不能为负: {text}")
    return value


def _positive_int(text: str) -> int:
    value = _nonnegative_int(text)
    if value == 0:
        raise argparse.ArgumentTypeError(f"必须为正: {text}")
    return value


def _parse_scales_list(text: str):
    try:
        values = [int(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"无效的尺度列表: {text}")
    if not values or any(value < 0 for value in values):
        raise argparse.ArgumentTypeError(f"无效的尺度列表: {text}")
    return values


def _collect_textures(args) -> list:
    """--refs 优先，其次 --texture-dir / SLICETEX_TEXTURE_DIR"""
    if args.refs:
        return list(args.refs)
    texture_dir = args.texture_dir or os.environ.get(TEXTURE_DIR_ENV)
    if not texture_dir:
        raise UsageError(f"请通过 --refs 或 --texture-dir（或环境变量 {TEXTURE_DIR_ENV}）提供纹理")
    textures = list_images(texture_dir)
    if not textures:
        raise UsageError(f"纹理目录中没有图像: {texture_dir}")
    return textures


def _build_config(args) -> ConfigManager:
    """配置文件合并到默认值之上，命令行参数再覆盖"""
    manager = ConfigManager(args.config)
    overrides = {
        'seed': args.seed,
        'iterations': args.iters,
        'scales': getattr(args, 'scales', None),
        'weights_path': args.weights_path,
        'jobs': args.jobs,
    }
    slices = getattr(args, 'slices', None)
    if slices is not None:
        manager.config['slice_override'] = None if slices == 'auto' else int(slices)
    if getattr(args, 'no_height_loss', False):
        overrides['use_height_loss'] = False
    if getattr(args, 'width_loss', False):
        overrides['use_width_loss'] = True
    manager.apply_overrides(overrides)
    return manager


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=None, help='配置文件路径（key = value 格式）')
    common.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        default='INFO', help='日志级别')
    common.add_argument('--seed', type=int, default=None, help='主随机种子，缺省时随机生成并记录')
    common.add_argument('--iters', type=_nonnegative_int, default=None, help='每个尺度的优化步数 M')
    common.add_argument('--weights-path', default=None, help='VGG19 权重文件路径')
    common.add_argument('--jobs', type=_positive_int, default=None, help='批处理并发数')

    parser = argparse.ArgumentParser(
        description="SliceTex 纹理合成系统",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
使用示例:
  %(prog)s synth --ref bricks.png --out out/bricks.png             # 默认 K=1
  %(prog)s synth --ref bricks.png --out out/sw.png --scales 0 --no-height-loss   # 原始SW损失
  %(prog)s synth --replay out/bricks.manifest.json                  # 按清单重放
  %(prog)s ablate-slices --texture-dir textures --out-dir out/ablation
  %(prog)s multiscale-sweep --refs a.png b.png --out-dir out/sweep
  %(prog)s report --dir results --out-dir out/report                # 指标表与对比网格图
  %(prog)s config-check --config config/slicetex.conf               # 检查配置文件
        """
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    synth = subparsers.add_parser('synth', parents=[common], help='合成一张纹理')
    synth.add_argument('--ref', help='参考纹理图像')
    synth.add_argument('--out', help='输出 PNG 路径')
    synth.add_argument('--scales', type=_nonnegative_int, default=None, help='多尺度层数 K')
    synth.add_argument('--slices', choices=SLICE_CHOICES, default=None,
                       help='高度项方向数，auto 表示 H_ℓ')
    synth.add_argument('--no-height-loss', action='store_true', help='关闭高度切片项（原始SW损失）')
    synth.add_argument('--width-loss', action='store_true', help='启用宽度切片项（实验功能）')
    synth.add_argument('--replay', default=None, help='按运行清单重放')

    ablate = subparsers.add_parser('ablate-slices', parents=[common], help='高度项切片数消融')
    ablate.add_argument('--refs', nargs='+', default=None, help='纹理图像列表')
    ablate.add_argument('--texture-dir', default=None, help='纹理目录')
    ablate.add_argument('--out-dir', required=True, help='输出目录')
    ablate.add_argument('--scales', type=_nonnegative_int, default=None, help='多尺度层数 K')
    ablate.add_argument('--runs', type=_positive_int, default=5, help='每组重复次数')

    sweep = subparsers.add_parser('multiscale-sweep', parents=[common], help='多尺度 K 扫描')
    sweep.add_argument('--refs', nargs='+', default=None, help='纹理图像列表')
    sweep.add_argument('--texture-dir', default=None, help='纹理目录')
    sweep.add_argument('--out-dir', required=True, help='输出目录')
    sweep.add_argument('--scales-list', type=_parse_scales_list,
                       default=list(SWEEP_SCALES), help='逗号分隔的 K 列表')
    sweep.add_argument('--metrics', action='store_true', help='同时计算 c-KID')

    report = subparsers.add_parser('report', parents=[common], help='指标报告与对比网格图')
    report.add_argument('--dir', required=True, help='包含 references/ synthesized/ [baseline/] 的目录')
    report.add_argument('--out-dir', required=True, help='输出目录')
    report.add_argument('--ground-truth', action='store_true', help='真值模式：参考图像两组不同种子的裁剪')
    report.add_argument('--tile', type=_positive_int, default=256, help='网格图每格边长')

    check = subparsers.add_parser('config-check', help='检查配置文件')
    check.add_argument('--config', default=DEFAULT_CONFIG_FILE, help='配置文件路径')
    check.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], default='INFO')

    return parser


def _cmd_synth(args, runner: ExperimentRunner) -> int:
    if args.replay:
        outcome = runner.replay(args.replay, args.out)
    else:
        if not args.ref or not args.out:
            raise UsageError("synth 需要 --ref 和 --out（或 --replay）")
        outcome = runner.run_synthesis(args.ref, args.out)
    print(f"✓ 合成完成: {outcome.image_path}")
    print(f"  轨迹: {outcome.trace_path}")
    print(f"  清单: {outcome.manifest_path}")
    for note in outcome.trace.notes:
        print(f"⚠️  {note}")
    return 0


def _cmd_ablate(args, runner: ExperimentRunner) -> int:
    textures = _collect_textures(args)
    result = runner.run_ablation(textures, args.out_dir, runs=args.runs)
    print(f"✓ 消融完成，共 {len(result.records)} 次运行，结果见 {args.out_dir}")
    return 0


def _cmd_sweep(args, runner: ExperimentRunner) -> int:
    textures = _collect_textures(args)
    rows = runner.run_multiscale_sweep(textures, args.out_dir, scales=args.scales_list,
                                       with_metrics=args.metrics)
    print(f"✓ 多尺度扫描完成，共 {len(rows)} 个结果，见 {args.out_dir}")
    return 0


def _cmd_report(args, runner: ExperimentRunner) -> int:
    directory = Path(args.dir)
    if not directory.is_dir():
        raise UsageError(f"目录不存在: {directory}")
    report = runner.run_report(directory, args.out_dir, ground_truth=args.ground_truth, tile=args.tile)
    print(f"✓ 报告完成: {len(report.rows)} 对图像，结果见 {args.out_dir}")
    if report.skipped:
        print(f"⚠️  跳过: {', '.join(report.skipped)}")
    return 0


COMMANDS = {
    'synth': _cmd_synth,
    'ablate-slices': _cmd_ablate,
    'multiscale-sweep': _cmd_sweep,
    'report': _cmd_report,
}


def main(argv=None):
    """主入口函数"""
    parser = _build_parser()
    args = parser.parse_args(argv)

    if args.command == 'config-check':
        setup_logging(args.log_level)
        print("检查配置文件...")
        issues = check_configuration(args.config)
        _display_config_issues(issues)
        return 1 if issues['errors'] else 0

    try:
        config_manager = _build_config(args)
        setup_logging(args.log_level, config_manager.get('log_file', 'slicetex.log'))
        runner = ExperimentRunner(config_manager)
        return COMMANDS[args.command](args, runner)

    except UsageError as e:
        print(f"用法错误: {e}")
        return 2
    except Exception as e:
        print(f"错误: {e}")
        logging.exception("程序执行异常")
        return 1


if __name__ == "__main__":
    sys.exit(main())
