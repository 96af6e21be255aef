"""
实验编排

- synth：单张参考图像的（多尺度）合成，输出图像、轨迹表和运行清单
- ablation：高度项切片数消融 {16, 64, 256, auto, none}，每组重复5次，统计运行时间
- multiscale sweep：K ∈ {0, 1, 2} 扫描，附带周期性和复制诊断
- report：对 (参考, 合成) 图像对计算 LPIPS / FID / c-FID / KID / c-KID 并输出对比网格图
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from processors import create_default_manager
from utils.image_io import list_images, load_image, save_image
from utils.report_writer import format_table, mean_std_cell, save_grid, write_csv, write_text

from .config_manager import ConfigManager
from .errors import FeatureDisabledError, InvalidArgumentError, SliceTexError, UsageError
from .feature_extractor import FeatureExtractor, LayerSelection, load_extractor
from .periodicity_analyzer import periodicity_diagnostic, replica_score
from .run_manifest import RunManifest
from .synthesis_engine import (
    ABLATION_SLICE_COUNTS,
    SynthesisConfig,
    SynthesisTrace,
    make_generator,
    synthesize_multiscale,
)
from .texture_metrics import REPORT_COLUMNS, MetricReport, score_pair, whole_image_metrics


# 消融实验的各组：名称 -> (高度项切片数覆盖, 是否启用高度项)
ABLATION_ARMS: Dict[str, Tuple[Optional[int], bool]] = {
    **{str(count): (count, True) for count in ABLATION_SLICE_COUNTS},
    'auto': (None, True),
    'none': (None, False),
}
ABLATION_RUNS = 5
SWEEP_SCALES = (0, 1, 2)

REFERENCES_DIR = 'references'
SYNTHESIZED_DIR = 'synthesized'
BASELINE_DIR = 'baseline'


def random_seed() -> int:
    """未指定种子时生成一个随机种子，随后会写入清单"""
    return int(np.random.default_rng().integers(0, 2 ** 31 - 1))


@dataclass
class SynthesisOutcome:
    image: torch.Tensor
    trace: SynthesisTrace
    image_path: Path
    trace_path: Path
    manifest_path: Path
    manifest: RunManifest


@dataclass
class AblationRecord:
    texture: str
    arm: str
    run: int
    seed: int
    seconds: float
    final_loss: float

    def as_dict(self) -> Dict[str, Any]:
        return {
            'texture': self.texture,
            'arm': self.arm,
            'run': self.run,
            'seed': self.seed,
            'seconds': self.seconds,
            'final_loss': self.final_loss,
        }


@dataclass
class AblationResult:
    records: List[AblationRecord] = field(default_factory=list)

    @property
    def textures(self) -> List[str]:
        return list(dict.fromkeys(record.texture for record in self.records))

    def runtimes(self, arm: str, texture: str) -> List[float]:
        return [r.seconds for r in self.records if r.arm == arm and r.texture == texture]

    def mean_runtime(self, arm: str) -> float:
        values = [r.seconds for r in self.records if r.arm == arm]
        return float(np.mean(values)) if values else float('nan')

    def table_rows(self) -> List[Dict[str, Any]]:
        """每组一行，每个纹理一列，单元格为 均值 ± 标准差（秒）"""
        rows = []
        for arm in ABLATION_ARMS:
            row = {'slices': arm}
            for texture in self.textures:
                values = self.runtimes(arm, texture)
                row[texture] = mean_std_cell(values) if values else None
            rows.append(row)
        return rows


class ExperimentRunner:
    """实验编排器"""

    def __init__(self, config_manager: ConfigManager, extractor: Optional[FeatureExtractor] = None):
        """
        Args:
            config_manager: 已合并命令行覆盖的配置
            extractor: 可选的已加载特征提取器，为空时按配置懒加载
        """
        self.logger = logging.getLogger('ExperimentRunner')
        self.config_manager = config_manager
        self._extractor = extractor

    @property
    def config(self) -> Dict[str, Any]:
        return self.config_manager.config

    @property
    def jobs(self) -> int:
        return max(1, int(self.config.get('jobs', 1)))

    @property
    def extractor(self) -> FeatureExtractor:
        if self._extractor is None:
            selection = LayerSelection(
                channel_layers=list(self.config['channel_layers']),
                height_layers=list(self.config['height_layers']),
            )
            self._extractor = load_extractor(
                weights_path=self.config['weights_path'],
                selection=selection,
                expected_sha256=self.config['weights_sha256'],
                device=self.config['device'],
            )
        return self._extractor

    def resolve_seed(self, seed: Optional[int] = None) -> int:
        if seed is not None:
            return int(seed)
        if self.config.get('seed') is not None:
            return int(self.config['seed'])
        seed = random_seed()
        self.logger.info(f"未指定种子，使用随机种子 {seed}")
        return seed

    def _map(self, function, items: Sequence) -> List:
        if self.jobs == 1 or len(items) <= 1:
            return [function(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(function, items))

    def _base_manifest(self, command: str, seed: int) -> RunManifest:
        snapshot = dict(self.config)
        snapshot['seed'] = seed
        return RunManifest(
            command=command,
            config=snapshot,
            seeds={'master': seed},
            backbone=self.extractor.describe(),
        )

    def _diagnostics(self, ref: torch.Tensor, image: torch.Tensor) -> Dict[str, Any]:
        report = periodicity_diagnostic(image, threshold=self.config['periodicity_threshold'])
        diagnostics = {'periodicity': report.to_dict()}
        if tuple(ref.shape) == tuple(image.shape):
            diagnostics['replica_score'] = replica_score(ref, image)
        return diagnostics

    def synthesize(self, ref: torch.Tensor, cfg: SynthesisConfig) -> Tuple[torch.Tensor, SynthesisTrace]:
        return synthesize_multiscale(ref, self.extractor, cfg, make_generator(cfg.seed))

    def run_synthesis(self, ref_path, out_path, seed: Optional[int] = None) -> SynthesisOutcome:
        """
        合成一张纹理并写出图像、轨迹表和运行清单

        清单路径为 <out>.manifest.json，轨迹为 <out>.trace.txt
        """
        seed = self.resolve_seed(seed)
        cfg = self.config_manager.to_synthesis_config(seed)
        ref = load_image(ref_path)
        self.logger.info(f"开始合成: {ref_path}, K={cfg.scales}, M={cfg.iterations}, seed={seed}")

        image, trace = self.synthesize(ref, cfg)

        out_path = save_image(image, out_path)
        trace_path = write_text(trace.to_table(), out_path.with_suffix('.trace.txt'))
        manifest = self._base_manifest('synth', seed)
        manifest.inputs['reference'] = str(ref_path)
        manifest.add_output('image', out_path, trace_path)
        manifest.notes.extend(trace.notes)
        manifest.metrics.append({
            'name': out_path.stem,
            'sizes': [list(size) for size in trace.sizes],
            'final_losses': [segment.final_loss for segment in trace.segments],
            'seconds': trace.total_seconds,
            **self._diagnostics(ref, image),
        })
        manifest_path = manifest.save(out_path.with_suffix('.manifest.json'))
        self.logger.info(f"合成完成: {out_path} ({trace.total_seconds:.1f}s)")
        return SynthesisOutcome(image, trace, out_path, trace_path, manifest_path, manifest)

    def replay(self, manifest_path, out_path=None) -> SynthesisOutcome:
        """按清单中记录的配置和种子重新运行 synth"""
        manifest = RunManifest.load(manifest_path)
        if manifest.command != 'synth':
            raise UsageError(f"只能重放 synth 清单，实际为 {manifest.command}")
        reference = manifest.inputs.get('reference')
        if not reference:
            raise UsageError("清单中缺少参考图像路径")
        self.config_manager.load_snapshot(manifest.config)
        original = Path(manifest.outputs['image'])
        out_path = out_path or original.with_name(f"{original.stem}_replay.png")
        self.logger.info(f"重放清单 {manifest_path} -> {out_path}")
        return self.run_synthesis(reference, out_path, seed=manifest.master_seed)

    def run_ablation(self, ref_paths: Sequence, out_dir, seed: Optional[int] = None,
                     runs: int = ABLATION_RUNS) -> AblationResult:
        """
        切片数消融：每张图像、每组各运行 runs 次，第 r 次的种子为 master+r

        写出 ablation.txt（组 × 纹理的 均值 ± 标准差 运行时间）、ablation.csv 和清单
        计时的运行总是逐个执行，不受 jobs 影响
        """
        if not ref_paths:
            raise UsageError("未提供纹理图像")
        seed = self.resolve_seed(seed)
        out_dir = Path(out_dir)
        base_cfg = self.config_manager.to_synthesis_config(seed)
        manifest = self._base_manifest('ablate-slices', seed)

        def run_texture(ref_path) -> List[AblationRecord]:
            ref = load_image(ref_path)
            name = Path(ref_path).stem
            records = []
            for arm, (override, use_height) in ABLATION_ARMS.items():
                for run in range(runs):
                    cfg = replace(base_cfg, slice_override=override, use_height_loss=use_height,
                                  seed=seed + run)
                    start = time.perf_counter()
                    image, trace = self.synthesize(ref, cfg)
                    seconds = time.perf_counter() - start
                    records.append(AblationRecord(name, arm, run, cfg.seed, seconds,
                                                  trace.segments[-1].final_loss))
                    if run == 0:
                        manifest.add_output(f"{name}_{arm}", save_image(image, out_dir / f"{name}_{arm}.png"))
                    self.logger.info(f"{name} [{arm}] 第 {run + 1}/{runs} 次: {seconds:.1f}s")
            return records

        if self.jobs > 1:
            self.logger.info(f"消融计时按顺序运行，忽略 jobs = {self.jobs}")
        result = AblationResult()
        for ref_path in ref_paths:
            records = run_texture(ref_path)
            manifest.inputs[Path(ref_path).stem] = str(ref_path)
            result.records.extend(records)

        columns = ['slices'] + result.textures
        table_path = write_text(
            format_table(result.table_rows(), columns, title=f"运行时间（秒，{runs} 次均值 ± 标准差）"),
            out_dir / 'ablation.txt',
        )
        csv_path = write_csv([r.as_dict() for r in result.records],
                             ['texture', 'arm', 'run', 'seed', 'seconds', 'final_loss'],
                             out_dir / 'ablation.csv', header={'master_seed': seed, 'runs': runs})
        manifest.add_output('table', table_path)
        manifest.add_output('csv', csv_path)
        manifest.metrics = [r.as_dict() for r in result.records]
        manifest.save(out_dir / 'ablation.manifest.json')
        return result

    def run_multiscale_sweep(self, ref_paths: Sequence, out_dir, seed: Optional[int] = None,
                             scales: Sequence[int] = SWEEP_SCALES, with_metrics: bool = False) -> List[Dict[str, Any]]:
        """
        多尺度扫描：每张图像对每个 K 合成一次，记录轨迹、周期性和复制诊断

        尺寸不能被 2^K 整除的组合跳过并记录警告
        """
        if not ref_paths:
            raise UsageError("未提供纹理图像")
        seed = self.resolve_seed(seed)
        out_dir = Path(out_dir)
        base_cfg = self.config_manager.to_synthesis_config(seed)
        manifest = self._base_manifest('multiscale-sweep', seed)
        embedding = self._embedding_backend() if with_metrics else None
        proto = self.config_manager.to_crop_protocol() if with_metrics else None

        def run_texture(ref_path) -> List[Dict[str, Any]]:
            ref = load_image(ref_path)
            name = Path(ref_path).stem
            rows = []
            for k in scales:
                cfg = replace(base_cfg, scales=k)
                try:
                    image, trace = self.synthesize(ref, cfg)
                except InvalidArgumentError as e:
                    self.logger.warning(f"{name} K={k} 跳过: {e}")
                    continue
                image_path = save_image(image, out_dir / f"{name}_K{k}.png")
                trace_path = write_text(trace.to_table(), out_dir / f"{name}_K{k}.trace.txt")
                manifest.add_output(f"{name}_K{k}", image_path, trace_path)
                manifest.notes.extend(f"{name}: {note}" for note in trace.notes)
                diagnostics = self._diagnostics(ref, image)
                periodicity = diagnostics['periodicity']
                row = {
                    'texture': name,
                    'K': k,
                    'final_loss': trace.segments[-1].final_loss,
                    'seconds': trace.total_seconds,
                    'peaks': len(periodicity['peaks']),
                    'max_correlation': max((p['correlation'] for p in periodicity['peaks']), default=0.0),
                    'replica': diagnostics.get('replica_score'),
                    'c-KID': None,
                }
                if embedding is not None:
                    row['c-KID'] = score_pair(name, ref, image, proto, embedding).c_kid
                rows.append(row)
            return rows

        rows = []
        for ref_path, texture_rows in zip(ref_paths, self._map(run_texture, list(ref_paths))):
            manifest.inputs[Path(ref_path).stem] = str(ref_path)
            rows.extend(texture_rows)

        columns = ['texture', 'K', 'final_loss', 'seconds', 'peaks', 'max_correlation', 'replica', 'c-KID']
        manifest.add_output('table', write_text(format_table(rows, columns), out_dir / 'sweep.txt'))
        manifest.add_output('csv', write_csv(rows, columns, out_dir / 'sweep.csv', header={'master_seed': seed}))
        manifest.metrics = rows
        manifest.save(out_dir / 'sweep.manifest.json')
        return rows

    def _backend_manager(self):
        names = {self.config['embedding_backend'], self.config['perceptual_backend']}
        needs_extractor = {'vgg', 'feature_distance'} & names
        extractor = None
        if needs_extractor:
            try:
                extractor = self.extractor
            except (FileNotFoundError, SliceTexError) as e:
                self.logger.warning(f"特征提取器不可用，{sorted(needs_extractor)} 后端停用: {e}")
        return create_default_manager(self.config, extractor, names)

    def _embedding_backend(self, manager=None):
        manager = manager or self._backend_manager()
        name = self.config['embedding_backend']
        backend = manager.get(name, kind='embedding')
        if backend is None:
            raise FeatureDisabledError(f"嵌入后端不可用: {name}")
        return backend

    def run_report(self, directory, out_dir, ground_truth: bool = False,
                   tile: int = 256) -> MetricReport:
        """
        对目录中的 (参考, 合成) 图像对计算指标

        目录结构：references/、synthesized/、可选 baseline/，按文件名（不含扩展名）配对

        Raises:
            UsageError: 目录为空或缺少 references/
            InvalidArgumentError: 所有图像对都被跳过
        """
        directory, out_dir = Path(directory), Path(out_dir)
        references = {p.stem: p for p in list_images(directory / REFERENCES_DIR)}
        synthesized = {p.stem: p for p in list_images(directory / SYNTHESIZED_DIR)}
        baselines = {p.stem: p for p in list_images(directory / BASELINE_DIR)}
        if not references and not synthesized:
            raise UsageError(f"目录中没有可用的图像: {directory}")

        report = MetricReport(protocol=self.config_manager.to_crop_protocol(ground_truth))
        unmatched = sorted(set(references) ^ set(synthesized))
        for name in unmatched:
            self.logger.warning(f"未配对，跳过: {name}")
        report.skipped.extend(unmatched)

        manager = self._backend_manager()
        embedding = self._embedding_backend(manager)
        perceptual = manager.get(self.config['perceptual_backend'], kind='perceptual')
        if perceptual is None:
            self.logger.warning(f"感知后端不可用: {self.config['perceptual_backend']}，LPIPS 列留空")
        report.backends['embedding'] = embedding.identifier
        report.backends['perceptual'] = perceptual.identifier if perceptual else 'unavailable'

        def score(name):
            ref = load_image(references[name])
            syn = load_image(synthesized[name])
            if ref.shape != syn.shape:
                self.logger.warning(f"{name}: 尺寸不一致 {tuple(ref.shape)} vs {tuple(syn.shape)}，跳过")
                return name, None, None
            return name, score_pair(name, ref, syn, report.protocol, embedding, perceptual,
                                    replica_fn=replica_score), (ref, syn)

        grid_rows, refs, syns = [], [], []
        for name, row, images in self._map(score, sorted(set(references) & set(synthesized))):
            if row is None:
                report.skipped.append(name)
                continue
            report.add_row(row)
            refs.append(images[0])
            syns.append(images[1])
            baseline = load_image(baselines[name]) if name in baselines else None
            grid_rows.append([images[0], baseline, images[1]] if baselines else [images[0], images[1]])

        if not report.rows:
            raise InvalidArgumentError(f"所有图像对都被跳过: {report.skipped}")

        if len(refs) >= 2:
            report.set_level = whole_image_metrics(refs, syns, embedding)
        else:
            self.logger.warning("图像对少于2个，整图 FID / KID 留空")

        header = {
            'crop_count': report.protocol.crop_count,
            'crop_size': report.protocol.crop_size,
            'crop_seeds': '/'.join(str(s) for s in report.protocol.to_dict()['seeds']),
            'embedding_backend': report.backends['embedding'],
            'perceptual_backend': report.backends['perceptual'],
        }
        title = ', '.join(f"{key}={value}" for key, value in header.items())
        table_path = write_text(format_table(report.table_rows(), REPORT_COLUMNS, title=title),
                                out_dir / 'report.txt')
        csv_path = write_csv(report.table_rows(), REPORT_COLUMNS, out_dir / 'report.csv', header=header)
        grid_path = save_grid(grid_rows, out_dir / 'grid.png', tile=tile)

        manifest = RunManifest(command='report', config=dict(self.config),
                               seeds={'crop': report.protocol.seed})
        manifest.inputs['directory'] = str(directory)
        manifest.backends = manager.get_all_stats()
        for path in (table_path, csv_path, grid_path):
            manifest.add_output(path.name, path)
        manifest.metrics = report.table_rows()
        manifest.notes.extend(f"skipped: {name}" for name in report.skipped)
        manifest.save(out_dir / 'report.manifest.json')
        return report
