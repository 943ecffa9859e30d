import logging
import os
from typing import Dict, Optional

from prometheus_client import CollectorRegistry, Counter, Gauge, write_to_textfile

logger = logging.getLogger(__name__)


class RunMetrics:
    """一次运行的 Prometheus 指标集合

    每次 CLI 运行使用独立的 CollectorRegistry，结束时写成文本文件，
    不启动 HTTP 服务。
    """

    def __init__(self):
        self.registry = CollectorRegistry()
        self.pde_steps = Counter('maxprinciple_pde_steps_total', 'Total number of PDE time steps',
                                 registry=self.registry)
        self.ode_steps = Counter('maxprinciple_ode_steps_total', 'Total number of fiber ODE steps',
                                 registry=self.registry)
        self.cone_verdicts = Counter('maxprinciple_cone_verdicts_total', 'Space-time cone verdicts',
                                     ['verdict'], registry=self.registry)
        self.hypothesis_samples = Counter('maxprinciple_hypothesis_samples_total',
                                          'Boundary samples tested by the ODE hypothesis check',
                                          ['status'], registry=self.registry)
        self.max_f = Gauge('maxprinciple_max_sup_distance', 'Largest monitored sup-distance f(t)',
                           registry=self.registry)
        self.min_margin = Gauge('maxprinciple_min_avoidance_margin', 'Smallest monitored avoidance margin',
                                registry=self.registry)
        self.runtime = Gauge('maxprinciple_run_seconds', 'Wall-clock time of the run in seconds',
                             ['scenario'], registry=self.registry)

    def write(self, path: str):
        """写出指标文本文件"""
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        write_to_textfile(path, self.registry)
        logger.info(f"指标文件已写出: {path}")


# 当前运行的指标实例
_current = RunMetrics()


def current_metrics() -> RunMetrics:
    return _current


def reset_metrics() -> RunMetrics:
    """开始新的运行时重置指标"""
    global _current
    _current = RunMetrics()
    return _current


def record_cone_verdicts(counts: Dict[str, int]):
    """记录切锥判定计数

    Args:
        counts: 判定值 -> 次数
    """
    for verdict, count in counts.items():
        if count:
            _current.cone_verdicts.labels(verdict=verdict).inc(count)


def record_hypothesis_samples(tested: int, excluded: int):
    _current.hypothesis_samples.labels(status='tested').inc(tested)
    _current.hypothesis_samples.labels(status='excluded').inc(excluded)


def record_pde_steps(n: int):
    _current.pde_steps.inc(n)


def record_ode_steps(n: int):
    _current.ode_steps.inc(n)


def record_series(max_f: float, min_margin: Optional[float]):
    """记录监控序列的极值"""
    _current.max_f.set(max_f)
    if min_margin is not None:
        _current.min_margin.set(min_margin)


def record_runtime(scenario: str, seconds: float):
    _current.runtime.labels(scenario=scenario).set(seconds)
