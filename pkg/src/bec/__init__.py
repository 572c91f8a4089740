"""Certification toolkit for bilevel programs via lower-level Moreau envelopes."""

from .expr import (
    Binary,
    Const,
    DomainError,
    EvalPoint,
    Expr,
    ParseError,
    Power,
    Unary,
    Var,
    eval_expr,
    eval_many,
    format_expr,
    gradient,
    hessian,
    parse_expr,
)

__version__ = "0.1.0"
