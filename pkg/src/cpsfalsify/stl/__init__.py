"""Signal temporal logic: syntax, parsing and offline monitoring."""
from .formula import (And, Const, Eventually, Formula, Globally, Interval, Not, Or, Pred,
                      Until, depth, horizon, signals_of, to_text)
from .monitor import (STLDomainError, Trace, eval_qualitative, eval_robustness,
                      load_trace_csv, robustness_signal, satisfies, save_trace_csv)
from .parser import STLSyntaxError, parse_stl

__all__ = [
    "And", "Const", "Eventually", "Formula", "Globally", "Interval", "Not", "Or", "Pred",
    "Until", "depth", "horizon", "signals_of", "to_text", "STLDomainError", "Trace",
    "eval_qualitative", "eval_robustness", "load_trace_csv", "robustness_signal",
    "satisfies", "save_trace_csv", "STLSyntaxError", "parse_stl",
]
