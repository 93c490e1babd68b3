"""Impartial auxiliary learning for hard-parameter-sharing multi-task networks.

The package builds everything from a small numpy autodiff tape (:mod:`ial.grad`)
up to seeded benchmark runs (:mod:`ial.harness`)::

    from ial import scenario, RunConfig, run

    result = run(RunConfig(scenario="standard", strategy="ial", seeds=(0,)))
"""
from .balance import STRATEGY_NAMES, BalanceOutcome, strategy_registry
from .grad import Graph, GraphError, NodeRef
from .harness import ConfigError, RunConfig, compare, run
from .ial import IalConfig, StepReport, f_weight, normalize_aux_grad, train_step
from .metrics import MetricRecord, delta_mtl, eval_net
from .net import MultiTaskNet, TaskSpec, forward, init_net, sigma
from .synth import SynthConfig, SynthTask, generate, scenario

__all__ = [
    "BalanceOutcome",
    "ConfigError",
    "Graph",
    "GraphError",
    "IalConfig",
    "MetricRecord",
    "MultiTaskNet",
    "NodeRef",
    "RunConfig",
    "STRATEGY_NAMES",
    "StepReport",
    "SynthConfig",
    "SynthTask",
    "TaskSpec",
    "compare",
    "delta_mtl",
    "eval_net",
    "f_weight",
    "forward",
    "generate",
    "init_net",
    "normalize_aux_grad",
    "run",
    "scenario",
    "sigma",
    "strategy_registry",
    "train_step",
]
