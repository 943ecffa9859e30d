import functools
import logging
from typing import Sequence, Tuple

import numpy as np
import sympy as sp
from sympy.core.function import AppliedUndef
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

logger = logging.getLogger(__name__)

# 表达式中允许的函数与常数
ALLOWED_FUNCTIONS = {'sin': sp.sin, 'cos': sp.cos, 'exp': sp.exp}
_GLOBALS = {
    'Integer': sp.Integer,
    'Float': sp.Float,
    'Rational': sp.Rational,
    'Symbol': sp.Symbol,
    'Function': sp.Function,
    'pi': sp.pi,
    **ALLOWED_FUNCTIONS,
}
_TRANSFORMS = standard_transformations + (convert_xor,)


class CompiledExpression:
    """受限算术表达式：+ - * / ** 以及 sin、cos、exp，编译为 numpy 函数"""

    def __init__(self, text: str, variables: Sequence[str]):
        self.text = text
        self.variables: Tuple[str, ...] = tuple(variables)
        if '__' in text or ';' in text:
            raise ValueError(f"表达式包含非法字符: {text!r}")
        symbols = [sp.Symbol(name) for name in self.variables]
        local = {name: sym for name, sym in zip(self.variables, symbols)}
        try:
            expr = parse_expr(text, local_dict=local, global_dict=dict(_GLOBALS), transformations=_TRANSFORMS)
        except Exception as e:
            raise ValueError(f"无法解析表达式 {text!r}: {e}")
        if not isinstance(expr, sp.Expr):
            raise ValueError(f"表达式必须是实数算术表达式: {text!r}")
        unknown = {str(s) for s in expr.free_symbols} - set(self.variables)
        if unknown:
            raise ValueError(f"表达式 {text!r} 使用了未知变量 {sorted(unknown)}，可用: {list(self.variables)}")
        undefined = expr.atoms(AppliedUndef)
        if undefined:
            raise ValueError(f"表达式 {text!r} 使用了不支持的函数 {sorted(str(f.func) for f in undefined)}")
        self.expr = expr
        self._fn = sp.lambdify(symbols, expr, modules='numpy')

    def depends_on(self, name: str) -> bool:
        return sp.Symbol(name) in self.expr.free_symbols

    def __call__(self, **values) -> np.ndarray:
        """求值，未给出的变量取 0；结果按输入广播"""
        args = [np.asarray(values.get(name, 0.0), dtype=float) for name in self.variables]
        shape = np.broadcast(*args).shape if args else ()
        out = np.asarray(self._fn(*args), dtype=float)
        return np.array(np.broadcast_to(out, shape), dtype=float)


@functools.lru_cache(maxsize=256)
def compile_expression(text: str, variables: Tuple[str, ...]) -> CompiledExpression:
    """编译表达式（带缓存）

    Args:
        text: 表达式字符串
        variables: 允许出现的变量名

    Returns:
        CompiledExpression
    """
    compiled = CompiledExpression(text, variables)
    logger.debug(f"编译表达式: {text} -> {compiled.expr}")
    return compiled
