import json
import logging
import os
from typing import Any, Dict, Tuple

from pydantic import ValidationError

from utils.errors import ConfigError
from modules.field.field_manager import PdeProblem
from modules.cli.models import RunConfig

logger = logging.getLogger(__name__)


def _error_path(loc) -> str:
    return ".".join(str(part) for part in loc) or "$"


def load_run(text: str) -> Tuple[RunConfig, PdeProblem]:
    """解析并组装运行配置

    Args:
        text: JSON 文本

    Returns:
        (RunConfig, PdeProblem)

    Raises:
        ConfigError: 带出错路径与原因
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("$", f"JSON 语法错误 (行 {e.lineno}, 列 {e.colno}): {e.msg}")
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(_error_path(first['loc']), first['msg'])
    return config, build_problem(config)


def build_problem(config: RunConfig) -> PdeProblem:
    """由 RunConfig 组装 PdeProblem，语义错误的路径加上 pde. 前缀"""
    try:
        return PdeProblem(config.pde)
    except ConfigError as e:
        raise ConfigError(f"pde.{e.path}", e.reason)


def parse_config(text: str) -> RunConfig:
    """解析 JSON 配置并完成全部校验（未知键、类型、CFL、初值与回避集包含）"""
    config, _ = load_run(text)
    return config


def read_config_file(path: str) -> str:
    if not os.path.exists(path):
        raise ConfigError(path, "配置文件不存在")
    with open(path, 'r', encoding='utf-8') as f:
        return f.read()


def dump_config(config: RunConfig) -> str:
    """序列化为 JSON（与 parse_config 互逆）"""
    return json.dumps(config.model_dump(mode="json"), indent=2, ensure_ascii=False, sort_keys=True) + "\n"


def apply_overrides(config: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    """应用命令行覆盖：output_dir、record_every、tol_contain、seed、jitter"""
    data = config.model_dump(mode="json")
    if overrides.get('output_dir') is not None:
        data['output_dir'] = overrides['output_dir']
    if overrides.get('record_every') is not None:
        data['record_every'] = overrides['record_every']
    if overrides.get('tol_contain') is not None:
        data['tolerances']['tol_contain'] = overrides['tol_contain']
    if overrides.get('seed') is not None:
        data['sampling']['seed'] = overrides['seed']
    if overrides.get('jitter') is not None:
        data['sampling']['jitter'] = overrides['jitter']
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(_error_path(first['loc']), first['msg'])
