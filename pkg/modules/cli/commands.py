import argparse
import json
import logging
import os
import sys
import tempfile
import time
import traceback
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from utils.config import config_manager
from utils.errors import ConfigError, LabError, new_error_id
from utils.metrics import current_metrics, record_runtime, reset_metrics
from modules.geometry.geometry_manager import geometry_manager
from modules.dynamics.dynamics_manager import dynamics_manager
from modules.dynamics.models import HypothesisReport, PreservationReport
from modules.field.field_manager import PdeProblem, field_manager
from modules.monitor.models import MonitorSeries, TheoremVerdict
from modules.monitor.monitor_manager import monitor_manager
from modules.scenarios.catalog import catalog, get_scenario
from modules.cli.config_loader import apply_overrides, build_problem, dump_config, load_run, read_config_file
from modules.cli.models import RunConfig

logger = logging.getLogger(__name__)

FLOAT_FORMAT = config_manager.get('output', 'float_format', '%.17g')

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_ERROR = 2


def _atomic_write(path: str, writer):
    """先写临时文件再重命名"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix='.tmp_', dir=directory)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.info(f"已写出: {path}")


def write_csv(df: pd.DataFrame, path: str):
    _atomic_write(path, lambda tmp: df.to_csv(tmp, index=False, float_format=FLOAT_FORMAT))


def write_text(text: str, path: str):
    def writer(tmp):
        with open(tmp, 'w', encoding='utf-8') as f:
            f.write(text)
    _atomic_write(path, writer)


def write_json(data: Dict[str, Any], path: str):
    def writer(tmp):
        with open(tmp, 'w', encoding='utf-8') as f:
            f.write(json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n")
    _atomic_write(path, writer)


def hypothesis_frame(report: HypothesisReport) -> pd.DataFrame:
    """切锥检验样本表：t, v0.., excluded, verdict, q_last"""
    rows = []
    for smp in report.samples:
        row = {'t': smp.time}
        for i, value in enumerate(smp.point):
            row[f"v{i}"] = value
        row['excluded'] = int(smp.excluded_by_avoidance)
        row['verdict'] = smp.verdict.value.value if smp.verdict is not None else ''
        row['q_last'] = smp.verdict.evidence[-1] if smp.verdict is not None and smp.verdict.evidence else np.nan
        rows.append(row)
    return pd.DataFrame(rows)


def preservation_frame(report: PreservationReport) -> pd.DataFrame:
    rows = []
    for start, excursion in zip(report.starts, report.excursions):
        row = {f"v{i}": value for i, value in enumerate(start)}
        row['max_excursion'] = excursion
        rows.append(row)
    return pd.DataFrame(rows)


class Runner:
    """把一次 RunConfig 分派到几何、动力学、场与监控模块"""

    def __init__(self, config: RunConfig, problem: Optional[PdeProblem] = None, report_runtime: bool = False):
        self.config = config
        self.problem = problem or build_problem(config)
        self.report_runtime = report_runtime
        self.out_dir = config.output_dir

    def _path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def lipschitz(self) -> float:
        problem = self.problem
        return problem.field.estimate_lipschitz(problem.track.main, *problem.x_star)

    def hypothesis(self) -> HypothesisReport:
        s = self.config.sampling
        return dynamics_manager.check_ode_hypothesis(
            self.problem.track, self.problem.field, s.n_space_samples, s.n_time_samples,
            x_star=self.problem.x_star, epsilon_avoid=self.config.tolerances.epsilon_avoid,
            seed=s.seed, jitter=s.jitter,
        )

    def preservation(self) -> PreservationReport:
        s = self.config.sampling
        return dynamics_manager.check_ode_preservation(
            self.problem.track, self.problem.field, s.n_starts, s.ode_dt,
            x_star=self.problem.x_star, tol_ode=self.config.tolerances.tol_ode,
        )

    def tol_contain(self) -> float:
        tol = self.config.tolerances
        if tol.tol_contain is not None:
            return tol.tol_contain
        return tol.c_tol * (self.problem.grid.h ** 2 + self.problem.dt)

    def check_ode(self) -> int:
        hyp = self.hypothesis()
        pres = self.preservation()
        write_csv(hypothesis_frame(hyp), self._path('hypothesis.csv'))
        write_csv(preservation_frame(pres), self._path('preservation.csv'))
        summary = {
            'scenario': self.config.name,
            'holds_everywhere_tested': hyp.holds_everywhere_tested,
            'failures': len(hyp.failure_locus),
            'inconclusive': hyp.inconclusive,
            'max_excursion': pres.max_excursion,
            'first_exit': pres.first_exit.model_dump() if pres.first_exit else None,
            'first_entry': pres.first_entry.model_dump() if pres.first_entry else None,
        }
        write_json(summary, self._path('ode_report.json'))
        want = self.config.expected.hypothesis_ok
        return EXIT_OK if want is None or want == hyp.holds_everywhere_tested else EXIT_MISMATCH

    def simulate(self) -> MonitorSeries:
        final, series = field_manager.run_simulation(self.problem, record_every=self.config.record_every)
        write_csv(series.to_frame(), self._path('series.csv'))
        write_csv(final.to_frame(), self._path('final_section.csv'))
        return series

    def verify(self) -> int:
        started = time.perf_counter()
        C = self.lipschitz()
        hyp = self.hypothesis()
        write_csv(hypothesis_frame(hyp), self._path('hypothesis.csv'))
        tol = self.tol_contain()
        floor = self.config.tolerances.resolved_margin_floor()
        if self.config.ode_only:
            verdict = self._ode_only_verdict(hyp)
            max_f, min_margin = verdict.details['max_excursion'], None
        else:
            final, series = field_manager.run_simulation(self.problem, record_every=self.config.record_every)
            verdict = monitor_manager.theorem_verdict(hyp, series, tol, floor, C)
            for j, value in enumerate(series.f):
                if value > tol:
                    series.add_flag(j, 'exceeds_tol')
                if series.margins is not None and series.margins[j] < floor:
                    series.add_flag(j, 'margin_low')
            write_csv(series.to_frame(), self._path('series.csv'))
            write_csv(final.to_frame(), self._path('final_section.csv'))
            max_f, min_margin = series.max_f, series.min_margin
        matches = self.config.expected.compare(verdict.verdicts())
        matched = all(matches.values())
        elapsed = time.perf_counter() - started
        record_runtime(self.config.name, elapsed)
        report = {
            'scenario': self.config.name,
            'verdicts': verdict.verdicts(),
            'expected': {k: v for k, v in self.config.expected.model_dump().items() if v is not None},
            'matched': matched,
            'max_f': max_f,
            'min_margin': min_margin,
            'runtime_s': elapsed if self.report_runtime else None,
            'details': verdict.details,
        }
        write_json(report, self._path('report.json'))
        current_metrics().write(self._path('metrics.prom'))
        if matched:
            logger.info(f"场景 {self.config.name}: 判定与期望一致 {verdict.verdicts()}")
        else:
            logger.warning(f"场景 {self.config.name}: 判定与期望不一致 {matches}")
        return EXIT_OK if matched else EXIT_MISMATCH

    def _ode_only_verdict(self, hyp: HypothesisReport) -> TheoremVerdict:
        pres = self.preservation()
        write_csv(preservation_frame(pres), self._path('preservation.csv'))
        return TheoremVerdict(
            hypothesis_ok=hyp.holds_everywhere_tested,
            containment_ok=pres.max_excursion <= self.config.tolerances.tol_ode,
            avoidance_ok=pres.first_entry is None,
            gronwall_ok=True,
            details={'max_excursion': pres.max_excursion, 'ode_only': True},
        )


def _on_off(value: str) -> bool:
    if value not in ('on', 'off'):
        raise argparse.ArgumentTypeError("取值必须为 on 或 off")
    return value == 'on'


def _vector(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f"无法解析向量: {text!r}（用逗号分隔）")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='运行配置 JSON 文件')
    common.add_argument('--out', help='输出目录')
    common.add_argument('--record-every', type=int, help='每隔 N 步记录一次监控量')
    common.add_argument('--tol-contain', type=float, help='包含容差覆盖')
    common.add_argument('--seed', type=int, help='抽样随机种子')
    common.add_argument('--jitter', type=_on_off, help='样本位置抖动 on|off')
    common.add_argument('--log-level', help='日志级别')
    common.add_argument('--report-runtime', action='store_true', help='在 JSON 报告中写入运行时间')

    parser = argparse.ArgumentParser(prog='maxprinciple', description='时变凸集极大值原理数值实验室')
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('check-ode', parents=[common], help='ODE 切锥条件与保持性检验')
    cone = sub.add_parser('check-cone', parents=[common], help='单点时空切锥判定')
    cone.add_argument('--point', type=_vector, required=True, help='边界点 v，如 1,0')
    cone.add_argument('--time', type=float, required=True, help='时刻 t')
    cone.add_argument('--direction', type=_vector, help='方向 W，缺省为 F(x*, v, t)')
    sub.add_parser('simulate', parents=[common], help='运行 PDE 模拟并导出监控序列')
    sub.add_parser('verify', parents=[common], help='完整定理判定')
    scenario = sub.add_parser('scenario', help='内置场景')
    scenario_sub = scenario.add_subparsers(dest='action', required=True)
    scenario_sub.add_parser('list', parents=[common], help='列出场景')
    run = scenario_sub.add_parser('run', parents=[common], help='运行场景（名称或 all）')
    run.add_argument('name')
    export = scenario_sub.add_parser('export', parents=[common], help='导出场景配置 JSON')
    export.add_argument('name')
    return parser


def _overrides(args) -> Dict[str, Any]:
    return {
        'output_dir': args.out,
        'record_every': args.record_every,
        'tol_contain': args.tol_contain,
        'seed': args.seed,
        'jitter': args.jitter,
    }


def _load(args):
    if not args.config:
        raise ConfigError('--config', '缺少配置文件')
    text = read_config_file(args.config)
    try:
        config, problem = load_run(text)
    except ConfigError as e:
        raise ConfigError(f"{args.config}: {e.path}", e.reason)
    return apply_overrides(config, _overrides(args)), problem


def _run_scenarios(args) -> int:
    names = [s.name for s in catalog()] if args.name == 'all' else [args.name]
    code = EXIT_OK
    for name in names:
        try:
            config = get_scenario(name)
        except KeyError as e:
            raise ConfigError('scenario', str(e.args[0]))
        overrides = _overrides(args)
        base = overrides['output_dir'] or config.output_dir
        overrides['output_dir'] = os.path.join(base, name)
        config = apply_overrides(config, overrides)
        reset_metrics()
        result = Runner(config, report_runtime=args.report_runtime).verify()
        code = max(code, result)
    return code


def dispatch(args) -> int:
    if args.command == 'scenario':
        if args.action == 'list':
            for s in catalog():
                print(f"{s.name}\t{s.description}")
            return EXIT_OK
        if args.action == 'export':
            try:
                text = dump_config(get_scenario(args.name))
            except KeyError as e:
                raise ConfigError('scenario', str(e.args[0]))
            if args.out:
                path = os.path.join(args.out, f"{args.name}.json")
                write_text(text, path)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        return _run_scenarios(args)

    config, problem = _load(args)
    runner = Runner(config, problem, report_runtime=args.report_runtime)
    if args.command == 'check-ode':
        return runner.check_ode()
    if args.command == 'check-cone':
        problem = runner.problem
        W = args.direction
        if W is None:
            W = problem.field(np.asarray(args.point, dtype=float), args.time, *problem.x_star)
        verdict = geometry_manager.cone_member_spacetime(problem.track, args.point, args.time, W)
        data = verdict.model_dump(mode='json')
        write_json(data, runner._path('cone.json'))
        print(json.dumps(data, sort_keys=True, indent=2))
        return EXIT_OK
    if args.command == 'simulate':
        runner.simulate()
        current_metrics().write(runner._path('metrics.prom'))
        return EXIT_OK
    return runner.verify()


def main(argv: Optional[Sequence[str]] = None) -> int:
    """命令行入口，返回退出码：0 期望满足，1 判定不符，2 配置或运行错误"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_ERROR
    level = getattr(args, 'log_level', None) or config_manager.log_level()
    logging.getLogger().setLevel(getattr(logging, str(level).upper(), logging.INFO))
    reset_metrics()
    try:
        return dispatch(args)
    except ConfigError as e:
        logger.error(f"配置错误 [{e.error_id}]: {e.message}")
        sys.stderr.write(f"config error [{e.error_id}] {e.path}: {e.reason}\n")
        return EXIT_ERROR
    except LabError as e:
        logger.error(f"运行错误 [{e.error_id}]: {e.message}")
        sys.stderr.write(f"{e.kind} error [{e.error_id}]: {e.message}\n")
        return EXIT_ERROR
    except Exception as e:
        error_id = new_error_id()
        logger.error(f"未预期的异常 [{error_id}]: {e}")
        logger.error(traceback.format_exc())
        sys.stderr.write(f"internal error [{error_id}]: {e}\n")
        return EXIT_ERROR
