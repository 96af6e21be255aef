"""
运行清单

记录一次运行的配置快照、种子、权重校验和、输出文件、优化轨迹和指标行，
足以在同一设备上重放得到相同的输出
"""

import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import psutil

from .errors import ConfigError


MANIFEST_VERSION = 1


def host_info() -> Dict[str, Any]:
    """运行环境信息"""
    memory = psutil.virtual_memory()
    info = {
        'platform': platform.platform(),
        'python': platform.python_version(),
        'cpu_count': psutil.cpu_count(logical=True),
        'memory_total_mb': round(memory.total / (1024 * 1024), 1),
    }
    try:
        import torch
        info['torch'] = torch.__version__
        info['cuda'] = torch.cuda.is_available()
    except ImportError:
        pass
    return info


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    backbone: Dict[str, Any] = field(default_factory=dict)
    backends: Dict[str, Any] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    traces: Dict[str, str] = field(default_factory=dict)
    metrics: List[Dict[str, Any]] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    host: Dict[str, Any] = field(default_factory=host_info)
    created_at: str = field(default_factory=lambda: datetime.now().isoformat(timespec='seconds'))
    version: int = MANIFEST_VERSION

    def add_output(self, name: str, path, trace_path=None):
        self.outputs[name] = str(path)
        if trace_path is not None:
            self.traces[name] = str(trace_path)

    def missing_files(self) -> List[str]:
        """清单中引用但不存在的文件（输入和输出）"""
        paths = list(self.outputs.values()) + list(self.traces.values()) + list(self.inputs.values())
        return [path for path in paths if not Path(path).exists()]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, ensure_ascii=False, indent=2)
        logging.getLogger('RunManifest').info(f"运行清单已保存: {path}")
        return path

    @classmethod
    def load(cls, path) -> 'RunManifest':
        """
        读取清单文件

        Raises:
            FileNotFoundError: 文件不存在
            ConfigError: 内容不是有效的清单
        """
        path = Path(path)
        with open(path, 'r', encoding='utf-8') as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"清单文件JSON格式错误: {e}") from e
        if not isinstance(data, dict) or 'command' not in data:
            raise ConfigError(f"不是有效的运行清单: {path}")
        if data.get('version', MANIFEST_VERSION) != MANIFEST_VERSION:
            raise ConfigError(f"不支持的清单版本: {data.get('version')}")
        known = {name for name in cls.__dataclass_fields__}
        return cls(**{key: value for key, value in data.items() if key in known})

    @property
    def master_seed(self) -> Optional[int]:
        return self.seeds.get('master')
