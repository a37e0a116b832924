"""Minimal arithmetic expressions for analytic problem inputs.

Grammar: numbers, the variables x y z t and the constant pi, operators
+ - * / ^ with parentheses, and the functions sin, cos, exp.  Parsed
through sympy after strict token validation, so gradients of vector
expressions come out exact, which the divergence-free projection needs.
"""

import re

import numpy as np
import sympy

from .errors import ConfigError

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?)|([A-Za-z_]+)|([-+*/^()]))")
_ALLOWED_NAMES = {"x", "y", "z", "t", "pi", "sin", "cos", "exp"}
_LOCALS = {
    "x": sympy.Symbol("x"), "y": sympy.Symbol("y"), "z": sympy.Symbol("z"),
    "t": sympy.Symbol("t"), "pi": sympy.pi,
    "sin": sympy.sin, "cos": sympy.cos, "exp": sympy.exp,
}


def parse_expression(text, dim):
    """Validate and parse one scalar expression; returns a sympy expr.

    Raises ConfigError on unknown names, stray characters, or use of a
    coordinate beyond the spatial dimension.
    """
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise ConfigError(
                "unexpected character {!r} in expression {!r}".format(
                    text[pos], text))
        if m.group(2) is not None and m.group(2) not in _ALLOWED_NAMES:
            raise ConfigError(
                "unknown name '{}' in expression {!r}".format(m.group(2), text))
        pos = m.end()
    if dim < 3 and re.search(r"\bz\b", text):
        raise ConfigError("variable z not available in {}D".format(dim))
    try:
        expr = sympy.sympify(text.replace("^", "**"), locals=dict(_LOCALS))
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError("could not parse expression {!r}: {}".format(text, exc))
    return expr


def parse_vector_expression(texts, dim):
    """Parse one expression per component into an analytic vector field."""
    from .verification import AnalyticVectorField
    if len(texts) != dim:
        raise ConfigError("expected {} components, got {}".format(dim, len(texts)))
    return AnalyticVectorField([parse_expression(s, dim) for s in texts], dim)
