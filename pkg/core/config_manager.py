"""
配置管理器

配置文件为纯文本 key = value 格式：
- '#' 开头的行和空行忽略
- 列表用逗号分隔
- 布尔值接受 true/false/yes/no/1/0
- slice_override / channel_slice_count 取 auto 表示按层维度（H_ℓ / N_ℓ）
文件中的值合并到内置默认值之上，命令行参数再覆盖文件中的值
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

from .errors import ConfigError
from .feature_extractor import DEFAULT_CHANNEL_LAYERS, DEFAULT_HEIGHT_LAYERS, VGG19_LAYERS
from .synthesis_engine import ABLATION_SLICE_COUNTS, SynthesisConfig
from .texture_metrics import CropProtocol


INT_KEYS = ('scales', 'iterations', 'lbfgs_max_iter', 'history_size', 'crop_count',
            'crop_size', 'crop_seed', 'jobs')
FLOAT_KEYS = ('learning_rate', 'periodicity_threshold')
BOOL_KEYS = ('use_height_loss', 'use_width_loss', 'resample_directions',
             'cache_reference_features', 'interpolate_mismatched')
LIST_KEYS = ('channel_layers', 'height_layers')
# 取 auto 时为None
AUTO_INT_KEYS = ('slice_override', 'channel_slice_count')
# 取 random 时为None，运行时生成并记录
SEED_KEYS = ('seed',)
# 空值为None
OPTIONAL_STR_KEYS = ('weights_path', 'weights_sha256', 'inception_weights_path')
STR_KEYS = ('device', 'embedding_backend', 'perceptual_backend', 'log_file')

TRUE_WORDS = ('true', 'yes', '1')
FALSE_WORDS = ('false', 'no', '0')

DEFAULT_CONFIG: Dict[str, Any] = {
    'scales': 1,
    'iterations': 100,
    'learning_rate': 1.0,
    'lbfgs_max_iter': 1,
    'history_size': 100,
    'seed': None,
    'channel_layers': list(DEFAULT_CHANNEL_LAYERS),
    'height_layers': list(DEFAULT_HEIGHT_LAYERS),
    'use_height_loss': True,
    'use_width_loss': False,
    'slice_override': None,
    'channel_slice_count': None,
    'resample_directions': True,
    'cache_reference_features': True,
    'interpolate_mismatched': False,
    'weights_path': None,
    'weights_sha256': None,
    'inception_weights_path': None,
    'device': 'cpu',
    'crop_count': 64,
    'crop_size': 128,
    'crop_seed': 0,
    'embedding_backend': 'inception',
    'perceptual_backend': 'lpips',
    'periodicity_threshold': 0.5,
    'jobs': 1,
    'log_file': 'slicetex.log',
}

KNOWN_KEYS = tuple(DEFAULT_CONFIG)


def default_config() -> Dict[str, Any]:
    config = dict(DEFAULT_CONFIG)
    for key in LIST_KEYS:
        config[key] = list(config[key])
    return config


def _parse_value(key: str, raw: str, line_number: int) -> Any:
    text = raw.strip()
    try:
        if key in INT_KEYS:
            return int(text)
        if key in FLOAT_KEYS:
            return float(text)
        if key in BOOL_KEYS:
            word = text.lower()
            if word in TRUE_WORDS:
                return True
            if word in FALSE_WORDS:
                return False
            raise ValueError(f"无法识别的布尔值 '{text}'")
        if key in LIST_KEYS:
            return [item.strip() for item in text.split(',') if item.strip()]
        if key in AUTO_INT_KEYS:
            return None if text.lower() in ('auto', '') else int(text)
        if key in SEED_KEYS:
            return None if text.lower() in ('random', '') else int(text)
        if key in OPTIONAL_STR_KEYS:
            return text or None
        return text
    except ValueError as e:
        raise ConfigError(f"第 {line_number} 行 {key} 的值无效: {e}") from e


def parse_config_text(text: str) -> Dict[str, Any]:
    """
    解析 key = value 文本，只返回文件中出现的键

    Raises:
        ConfigError: 语法错误、未知键或值无效
    """
    values: Dict[str, Any] = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        if '=' not in stripped:
            raise ConfigError(f"第 {line_number} 行缺少 '=': {stripped}")
        key, raw = stripped.split('=', 1)
        key = key.strip()
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"第 {line_number} 行未知配置项: {key}")
        values[key] = _parse_value(key, raw, line_number)
    return values


def _format_value(key: str, value: Any) -> str:
    if key in BOOL_KEYS:
        return 'true' if value else 'false'
    if key in LIST_KEYS:
        return ', '.join(value)
    if key in AUTO_INT_KEYS:
        return 'auto' if value is None else str(value)
    if key in SEED_KEYS:
        return 'random' if value is None else str(value)
    if value is None:
        return ''
    if key in FLOAT_KEYS:
        return repr(float(value))
    return str(value)


def serialize_config(config: Dict[str, Any]) -> str:
    """按默认键顺序输出 key = value 文本，可被 parse_config_text 原样读回"""
    lines = ['# SliceTex 配置文件']
    for key in KNOWN_KEYS:
        if key in config:
            lines.append(f"{key} = {_format_value(key, config[key])}".rstrip())
    return '\n'.join(lines) + '\n'


class ConfigManager:
    """加载、合并和保存配置"""

    def __init__(self, config_file: Optional[str] = None):
        """
        Args:
            config_file: 配置文件路径，为空时只使用内置默认值
        """
        self.logger = logging.getLogger('ConfigManager')
        self.config_file = config_file
        self.config = self._load_config()

    def _load_config(self) -> Dict[str, Any]:
        config = default_config()
        if not self.config_file:
            return config
        path = Path(self.config_file)
        if not path.is_file():
            raise ConfigError(f"配置文件不存在: {path}")
        # 合并默认配置
        config.update(parse_config_text(path.read_text(encoding='utf-8')))
        self.logger.info(f"已加载配置文件 {path}")
        return config

    def apply_overrides(self, overrides: Dict[str, Any]):
        """命令行参数覆盖文件中的值，值为None的项忽略"""
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in DEFAULT_CONFIG:
                raise ConfigError(f"未知配置项: {key}")
            self.config[key] = value

    def load_snapshot(self, snapshot: Dict[str, Any]):
        """用清单中的配置快照替换当前配置（未知键忽略）"""
        config = default_config()
        config.update({key: value for key, value in snapshot.items() if key in DEFAULT_CONFIG})
        self.config = config

    def get(self, key: str, default: Any = None) -> Any:
        return self.config.get(key, default)

    def save(self, path: str):
        Path(path).write_text(serialize_config(self.config), encoding='utf-8')
        self.logger.info(f"配置已保存到 {path}")

    def to_synthesis_config(self, seed: Optional[int] = None) -> SynthesisConfig:
        config = self.config
        resolved_seed = seed if seed is not None else config['seed']
        if resolved_seed is None:
            raise ConfigError("未确定随机种子")
        cfg = SynthesisConfig(
            scales=config['scales'],
            iterations=config['iterations'],
            learning_rate=config['learning_rate'],
            lbfgs_max_iter=config['lbfgs_max_iter'],
            history_size=config['history_size'],
            channel_layers=list(config['channel_layers']),
            height_layers=list(config['height_layers']),
            use_height_loss=config['use_height_loss'],
            use_width_loss=config['use_width_loss'],
            slice_override=config['slice_override'],
            channel_slice_count=config['channel_slice_count'],
            resample_directions=config['resample_directions'],
            cache_reference_features=config['cache_reference_features'],
            interpolate_mismatched=config['interpolate_mismatched'],
            seed=resolved_seed,
        )
        cfg.validate()
        return cfg

    def to_crop_protocol(self, ground_truth: bool = False) -> CropProtocol:
        proto = CropProtocol(
            crop_count=self.config['crop_count'],
            crop_size=self.config['crop_size'],
            seed=self.config['crop_seed'],
            ground_truth=ground_truth,
        )
        proto.validate()
        return proto


def check_configuration(config_file: str) -> Dict[str, List[str]]:
    """检查配置文件，返回错误、警告和建议"""
    issues = {
        'errors': [],
        'warnings': [],
        'recommendations': []
    }

    if not os.path.exists(config_file):
        issues['errors'].append(f"配置文件不存在: {config_file}")
        return issues

    try:
        config = ConfigManager(config_file).config
    except ConfigError as e:
        issues['errors'].append(str(e))
        return issues

    for tag in config['channel_layers'] + config['height_layers']:
        if tag not in VGG19_LAYERS:
            issues['errors'].append(f"主干网络中不存在层: {tag}")
    if not config['channel_layers'] or not config['height_layers']:
        issues['errors'].append("层列表不能为空")

    if config['scales'] < 0:
        issues['errors'].append(f"scales 不能为负: {config['scales']}")
    if config['iterations'] < 1:
        issues['warnings'].append(f"iterations = {config['iterations']}，不会进行优化")
    if config['learning_rate'] <= 0:
        issues['errors'].append(f"learning_rate 必须为正: {config['learning_rate']}")
    if config['crop_count'] < 2:
        issues['errors'].append(f"crop_count 至少为2: {config['crop_count']}")
    if config['jobs'] < 1:
        issues['errors'].append(f"jobs 必须为正: {config['jobs']}")

    weights_path = config['weights_path']
    if weights_path and not os.path.exists(weights_path):
        issues['warnings'].append(f"权重文件不存在: {weights_path}")
    if not weights_path and not os.environ.get('SLICETEX_WEIGHTS_DIR'):
        issues['warnings'].append("未配置 weights_path，且环境变量 SLICETEX_WEIGHTS_DIR 未设置")
    inception_path = config['inception_weights_path']
    if inception_path and not os.path.exists(inception_path):
        issues['warnings'].append(f"Inception权重文件不存在: {inception_path}")

    if config['scales'] >= 2:
        issues['warnings'].append(f"scales = {config['scales']} 时可能出现复制参考图像的重复纹理")
    if config['use_width_loss']:
        issues['warnings'].append("use_width_loss 为实验功能")

    # 生成建议
    if not config['use_height_loss']:
        issues['recommendations'].append("use_height_loss = false 即原始SW损失，建议启用高度切片项")
    if config['slice_override'] is not None and config['slice_override'] not in ABLATION_SLICE_COUNTS:
        issues['recommendations'].append(
            f"slice_override 建议取 auto 或 {', '.join(str(n) for n in ABLATION_SLICE_COUNTS)}"
        )
    if config['scales'] != 1:
        issues['recommendations'].append("scales = 1 通常得到最好的结果")
    if not config['weights_sha256']:
        issues['recommendations'].append("建议设置 weights_sha256 以校验权重文件")

    return issues
