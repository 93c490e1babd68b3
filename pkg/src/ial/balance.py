"""Task-balancing strategies compared against IAL.

All strategies act on the same two places: the weight each task's loss gets
when its decoder is trained, and how the per-task gradients at the shared
feature ``z`` are merged before they reach the encoder. The pure functions
below compute one step of each rule; the :class:`Strategy` classes wrap them
into a training step with whatever state the rule needs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import ial
from .net import MultiTaskNet, ParamGrads, apply_gradients, forward, sigma

log = logging.getLogger(__name__)

STRATEGY_NAMES = ("uniform", "fixed", "uw", "dwa", "gcs", "olaux", "ial")


@dataclass
class BalanceOutcome:
    decoder_weights: dict[str, float]
    encoder_weights: dict[str, float]
    normalized_grads: dict[str, np.ndarray]
    combined_z_grad: np.ndarray
    diagnostics: list[str] = field(default_factory=list)


def _weighted_sum(z_grads, weights, order=None) -> np.ndarray:
    order = order or list(z_grads)
    total = np.zeros_like(next(iter(z_grads.values())))
    for tid in order:
        total = total + weights[tid] * z_grads[tid]
    return total


def uniform(losses, z_grads) -> BalanceOutcome:
    if not z_grads:
        raise ValueError("uniform needs at least one task")
    w = {tid: 1.0 for tid in z_grads}
    return BalanceOutcome(dict(w), dict(w), dict(z_grads), _weighted_sum(z_grads, w))


def fixed(losses, z_grads, primary_id: str, aux_weight: float = 0.1) -> BalanceOutcome:
    if aux_weight < 0:
        raise ValueError(f"aux_weight must be non-negative, got {aux_weight}")
    w = {tid: (1.0 if tid == primary_id else float(aux_weight)) for tid in z_grads}
    return BalanceOutcome(dict(w), dict(w), dict(z_grads), _weighted_sum(z_grads, w))


def uncertainty_weight(losses, sigmas) -> tuple[dict[str, float], float]:
    """Return ``({task: 1/(2 sigma^2)}, total)`` with total = sum of weighted losses + log sigma."""
    weights, total = {}, 0.0
    for tid, sig in sigmas.items():
        if not sig > 0:
            raise ValueError(f"sigma for {tid!r} must be positive, got {sig}")
        weights[tid] = 1.0 / (2.0 * sig * sig)
        total += weights[tid] * losses[tid] + math.log(sig)
    return weights, total


def dwa(loss_history, temperature: float = 2.0) -> dict[str, float]:
    """Dynamic weight average from the last two epoch-mean losses.

    ``loss_history`` is a sequence of ``{task: mean loss}`` per epoch, oldest
    first. With fewer than two epochs every weight is 1.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if len(loss_history) < 2:
        tasks = loss_history[-1].keys() if loss_history else ()
        return {tid: 1.0 for tid in tasks}
    prev2, prev1 = loss_history[-2], loss_history[-1]
    tids = list(prev1)
    for tid in tids:
        if prev1[tid] <= 0 or prev2[tid] <= 0:
            raise ValueError(f"dwa needs positive losses, task {tid!r}")
    r = np.array([prev1[t] / prev2[t] for t in tids]) / temperature
    e = np.exp(r - r.max())
    w = len(tids) * e / e.sum()
    return {tid: float(v) for tid, v in zip(tids, w)}


def _cos(a, b) -> float:
    return float(np.sum(a * b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def gcs(z_grads, primary_id: str) -> BalanceOutcome:
    """Keep an auxiliary gradient only if its cosine with the primary is >= 0."""
    pri = z_grads[primary_id]
    diagnostics = []
    weights = {primary_id: 1.0}
    zero_pri = float(np.linalg.norm(pri)) == 0.0
    if zero_pri:
        diagnostics.append("gcs: zero primary gradient, all auxiliaries kept")
    for tid, g in z_grads.items():
        if tid == primary_id:
            continue
        if zero_pri or float(np.linalg.norm(g)) == 0.0:
            weights[tid] = 1.0
        else:
            weights[tid] = 1.0 if _cos(g, pri) >= 0.0 else 0.0
    dec = {tid: 1.0 for tid in z_grads}
    return BalanceOutcome(dec, weights, dict(z_grads), _weighted_sum(z_grads, weights), diagnostics)


def olaux(z_grads, primary_id: str, state: dict, beta: float = 0.05, init: float = 1.0) -> BalanceOutcome:
    """Combine with the current lambdas, then nudge each lambda by beta * cos(aux, pri).

    ``state`` maps auxiliary task id to lambda and is updated in place.
    """
    pri = z_grads[primary_id]
    for tid in z_grads:
        if tid != primary_id:
            state.setdefault(tid, init)
    weights = {primary_id: 1.0, **{tid: float(state[tid]) for tid in z_grads if tid != primary_id}}
    outcome = BalanceOutcome(dict(weights), dict(weights), dict(z_grads), _weighted_sum(z_grads, weights))
    n_pri = float(np.linalg.norm(pri))
    for tid, g in z_grads.items():
        if tid == primary_id:
            continue
        if n_pri == 0.0 or float(np.linalg.norm(g)) == 0.0:
            continue
        state[tid] = max(0.0, state[tid] + beta * _cos(pri, g))
    return outcome


# -- strategies --------------------------------------------------------------------


class Strategy:
    """A balancing rule wrapped as a training step.

    Subclasses implement :meth:`balance`; the base step builds the graph, collects
    the per-task gradients once, and applies decoder then encoder updates.
    """

    name = "base"
    uses_uncertainty = False

    def balance(self, net: MultiTaskNet, losses, z_grads) -> BalanceOutcome:
        raise NotImplementedError

    def end_epoch(self, mean_losses: dict[str, float]) -> None:
        pass

    def state(self) -> dict:
        return {}

    def step(self, net: MultiTaskNet, batch, lr_params: float, lr_eta: float, freeze=()) -> ial.StepReport:
        x, y = batch
        fp = forward(net, x, y)
        tgs = ial.task_grads(fp)
        losses = {tid: tg.loss for tid, tg in tgs.items()}
        z_grads = {tid: tg.z_grad for tid, tg in tgs.items()}
        sigmas = {tid: sigma(net, tid) for tid in net.task_ids}
        outcome = self.balance(net, losses, z_grads)
        for msg in outcome.diagnostics:
            log.debug(msg)

        grads = ParamGrads()
        for tid, tg in tgs.items():
            w = outcome.decoder_weights[tid]
            grads.decoder[tid] = [w * d for d in tg.decoder]
            if self.uses_uncertainty:
                grads.eta[tid] = ial.uw_eta_grad(tg.loss, net.eta[tid])
        leaf_grads = fp.graph.inject_grad_and_continue(fp.z_node, outcome.combined_z_grad)
        grads.encoder = [leaf_grads.get(leaf, np.zeros_like(p)) for leaf, p in zip(fp.encoder_leaves, net.encoder_params)]
        apply_gradients(net, grads, lr_params, freeze=freeze, lr_eta=lr_eta)

        return ial.StepReport(
            losses=losses,
            sigmas=sigmas if not self.uses_uncertainty else {t: sigma(net, t) for t in net.task_ids},
            decoder_weights=dict(outcome.decoder_weights),
            encoder_weights=dict(outcome.encoder_weights),
            grad_norms={tid: float(np.linalg.norm(g)) for tid, g in z_grads.items()},
            normalized_grad_norms={tid: float(np.linalg.norm(g)) for tid, g in outcome.normalized_grads.items()},
            encoder_grad_norm=float(math.sqrt(sum(float(np.sum(e * e)) for e in grads.encoder))),
        )


class Uniform(Strategy):
    name = "uniform"

    def balance(self, net, losses, z_grads):
        return uniform(losses, z_grads)


class Fixed(Strategy):
    name = "fixed"

    def __init__(self, aux_weight: float = 0.1):
        if aux_weight < 0:
            raise ValueError(f"aux_weight must be non-negative, got {aux_weight}")
        self.aux_weight = float(aux_weight)

    def balance(self, net, losses, z_grads):
        return fixed(losses, z_grads, net.primary, self.aux_weight)


class UncertaintyWeighting(Strategy):
    """One joint loss ``sum_t L_t / (2 sigma_t^2) + log sigma_t`` for decoders and encoder alike."""

    name = "uw"
    uses_uncertainty = True

    def balance(self, net, losses, z_grads):
        w, _ = uncertainty_weight(losses, {t: sigma(net, t) for t in z_grads})
        return BalanceOutcome(dict(w), dict(w), dict(z_grads), _weighted_sum(z_grads, w))


class DynamicWeightAverage(Strategy):
    name = "dwa"

    def __init__(self, temperature: float = 2.0):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.temperature = float(temperature)
        self.history: list[dict[str, float]] = []

    def end_epoch(self, mean_losses):
        self.history.append(dict(mean_losses))
        del self.history[:-2]

    def state(self):
        return {"history": [dict(h) for h in self.history]}

    def balance(self, net, losses, z_grads):
        if len(self.history) < 2:
            w = {tid: 1.0 for tid in z_grads}
        else:
            w = dwa(self.history, self.temperature)
        return BalanceOutcome(dict(w), dict(w), dict(z_grads), _weighted_sum(z_grads, w))


class GradientCosineSimilarity(Strategy):
    name = "gcs"

    def balance(self, net, losses, z_grads):
        return gcs(z_grads, net.primary)


class OnlineAuxWeighting(Strategy):
    name = "olaux"

    def __init__(self, beta: float = 0.05, init: float = 1.0):
        self.beta = float(beta)
        self.init = float(init)
        self.lambdas: dict[str, float] = {}

    def state(self):
        return {"lambdas": dict(self.lambdas)}

    def balance(self, net, losses, z_grads):
        return olaux(z_grads, net.primary, self.lambdas, self.beta, self.init)


class Ial(Strategy):
    """Impartial decoder stage plus primary-dominant encoder stage."""

    name = "ial"
    uses_uncertainty = True

    def __init__(self, **params):
        self.params = params

    def config(self, lr_params: float, lr_eta: float) -> ial.IalConfig:
        return ial.IalConfig(lr_params=lr_params, lr_eta=lr_eta, **self.params)

    def step(self, net, batch, lr_params, lr_eta, freeze=()):
        return ial.train_step(net, batch, self.config(lr_params, lr_eta), freeze=freeze)


_REGISTRY = {
    "uniform": Uniform,
    "fixed": Fixed,
    "uw": UncertaintyWeighting,
    "dwa": DynamicWeightAverage,
    "gcs": GradientCosineSimilarity,
    "olaux": OnlineAuxWeighting,
    "ial": Ial,
}


def strategy_registry(name: str, **params) -> Strategy:
    """Instantiate a strategy by case-insensitive name."""
    key = str(name).strip().lower()
    if key not in _REGISTRY:
        raise ValueError(f"unknown strategy {name!r}; supported: {', '.join(STRATEGY_NAMES)}")
    strategy = _REGISTRY[key](**params)
    if key == "ial":
        # fail on bad hyperparameters now rather than mid-run
        strategy.config(0.05, 0.025)
    return strategy
