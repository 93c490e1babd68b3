"""Impartial auxiliary learning: the two-stage training step.

Decoder stage
    Every task, primary or auxiliary, trains its own decoder on
    ``L_t / (2 sigma_t^2) + log sigma_t``. The decoder gradient of task ``t``
    depends on ``L_t`` alone and ``sigma_t`` follows its own loss.

Encoder stage
    Per-task gradients at the shared feature ``z`` are recombined as
    ``grad_pri + sum_aux f(sigma_aux) * rescale(grad_aux)`` where ``rescale``
    gives each auxiliary gradient the primary gradient's norm and
    ``f(sigma) = min(1, g(1 - sigma))`` shrinks noisy auxiliaries towards zero.
    The combined gradient is pushed through the encoder with the chain rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .net import ForwardPass, MultiTaskNet, ParamGrads, apply_gradients, forward, sigma

G_MAPS = ("clamp", "softplus")
WEIGHT_SOURCES = ("uncertainty", "fixed", "cosine")


@dataclass(frozen=True)
class IalConfig:
    lr_params: float = 0.05
    lr_eta: float = 0.025
    g_map: str = "clamp"
    weight_cap: float = 1.0
    # ablation switches: gradient rescaling on/off, and where auxiliary weights come from
    normalize: bool = True
    weight_source: str = "uncertainty"
    fixed_aux_weight: float = 0.1

    def __post_init__(self):
        if self.lr_params <= 0 or self.lr_eta <= 0:
            raise ValueError("learning rates must be positive")
        if self.g_map not in G_MAPS:
            raise ValueError(f"g_map must be one of {G_MAPS}, got {self.g_map!r}")
        if self.weight_source not in WEIGHT_SOURCES:
            raise ValueError(f"weight_source must be one of {WEIGHT_SOURCES}")
        if self.weight_cap <= 0:
            raise ValueError("weight_cap must be positive")
        if self.fixed_aux_weight < 0:
            raise ValueError("fixed_aux_weight must be non-negative")


@dataclass
class StepReport:
    losses: dict[str, float]
    sigmas: dict[str, float]
    decoder_weights: dict[str, float]
    encoder_weights: dict[str, float]
    grad_norms: dict[str, float]
    normalized_grad_norms: dict[str, float]
    encoder_grad_norm: float
    extras: dict = field(default_factory=dict)


@dataclass
class TaskGrads:
    loss: float
    z_grad: np.ndarray
    decoder: list[np.ndarray]


# -- uncertainty-weighted loss ------------------------------------------------


def uw_objective(loss: float, sig: float) -> float:
    return loss / (2.0 * sig * sig) + math.log(sig)


def uw_sigma_grad(loss: float, sig: float) -> float:
    """d/dsigma of ``loss / (2 sigma^2) + log sigma``."""
    return -loss / sig**3 + 1.0 / sig


def uw_eta_grad(loss: float, eta: float) -> float:
    """Same derivative expressed for ``eta = ln sigma^2`` (dsigma/deta = sigma / 2)."""
    sig = math.exp(eta / 2.0)
    return uw_sigma_grad(loss, sig) * sig / 2.0


def task_grads(fp: ForwardPass) -> dict[str, TaskGrads]:
    """Per-task loss, gradient at ``z`` and raw decoder gradients (cached per pass)."""
    cached = fp.cache.get("task_grads")
    if cached is not None:
        return cached
    g = fp.graph
    g.zero_grad()
    out = {}
    for tid, loss_node in fp.loss_nodes.items():
        z_grad = g.backward_to(loss_node, fp.z_node)
        out[tid] = TaskGrads(
            float(g.value(loss_node)), z_grad, [g.grad(leaf) for leaf in fp.decoder_leaves[tid]]
        )
    fp.cache["task_grads"] = out
    return out


# -- decoder stage ---------------------------------------------------------------


def decoder_stage(fp: ForwardPass, net: MultiTaskNet, cfg: IalConfig | None = None) -> ParamGrads:
    """Decoder and eta gradients of the uncertainty-weighted objective, task by task."""
    grads = ParamGrads()
    for tid, tg in task_grads(fp).items():
        sig = sigma(net, tid)
        w = 1.0 / (2.0 * sig * sig)
        grads.decoder[tid] = [w * d for d in tg.decoder]
        grads.eta[tid] = uw_eta_grad(tg.loss, net.eta[tid])
    return grads


# -- encoder stage ---------------------------------------------------------------


def normalize_aux_grad(g_aux, g_pri) -> np.ndarray:
    """Rescale ``g_aux`` to the norm of ``g_pri``."""
    g_aux = np.asarray(g_aux, dtype=np.float64)
    n_pri = float(np.linalg.norm(g_pri))
    n_aux = float(np.linalg.norm(g_aux))
    if n_aux == 0.0:
        return g_aux.copy()
    if n_pri == 0.0:
        return np.zeros_like(g_aux)
    return (n_pri / n_aux) * g_aux


def _softplus(y: float) -> float:
    return max(y, 0.0) + math.log1p(math.exp(-abs(y)))


def f_weight(sig: float, cfg: IalConfig | None = None) -> float:
    """Auxiliary encoder weight ``min(cap, g(1 - sigma))``; non-increasing in sigma."""
    cfg = cfg or IalConfig()
    if not sig > 0:
        raise ValueError(f"sigma must be positive, got {sig}")
    y = 1.0 - sig
    if cfg.g_map == "clamp":
        g = max(y, 0.0)
    else:
        g = _softplus(y) / _softplus(1.0)
    return min(cfg.weight_cap, g)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.sum(a * b) / (na * nb))


def aux_weights(net: MultiTaskNet, z_grads: dict[str, np.ndarray], cfg: IalConfig) -> dict[str, float]:
    pri = z_grads[net.primary]
    weights = {}
    for tid in net.auxiliaries:
        if cfg.weight_source == "uncertainty":
            weights[tid] = f_weight(sigma(net, tid), cfg)
        elif cfg.weight_source == "fixed":
            weights[tid] = min(cfg.weight_cap, cfg.fixed_aux_weight)
        else:
            weights[tid] = min(cfg.weight_cap, max(0.0, _cosine(z_grads[tid], pri)))
    return weights


def combine_z_grads(net: MultiTaskNet, z_grads: dict[str, np.ndarray], weights, cfg: IalConfig):
    """Return ``(combined, transformed)``; the primary enters with weight exactly 1."""
    pri = z_grads[net.primary]
    transformed = {net.primary: pri}
    combined = pri.copy()
    for tid in net.auxiliaries:
        g = normalize_aux_grad(z_grads[tid], pri) if cfg.normalize else z_grads[tid]
        transformed[tid] = g
        combined = combined + weights[tid] * g
    return combined, transformed


def encoder_stage(fp: ForwardPass, net: MultiTaskNet, sigmas=None, cfg: IalConfig | None = None):
    """Encoder gradients from the recombined shared-feature gradient.

    ``sigmas`` optionally overrides the net's current uncertainties. Returns
    ``(ParamGrads, StepReport)``; the report's decoder fields are left empty.
    """
    cfg = cfg or IalConfig()
    if sigmas is not None:
        net = replace(net, eta={t: 2.0 * math.log(s) for t, s in sigmas.items()})
    tgs = task_grads(fp)
    z_grads = {tid: tg.z_grad for tid, tg in tgs.items()}
    weights = aux_weights(net, z_grads, cfg)
    combined, transformed = combine_z_grads(net, z_grads, weights, cfg)

    leaf_grads = fp.graph.inject_grad_and_continue(fp.z_node, combined)
    enc = [leaf_grads.get(leaf, np.zeros_like(p)) for leaf, p in zip(fp.encoder_leaves, net.encoder_params)]
    report = StepReport(
        losses={tid: tg.loss for tid, tg in tgs.items()},
        sigmas={tid: sigma(net, tid) for tid in net.task_ids},
        decoder_weights={},
        encoder_weights={net.primary: 1.0, **weights},
        grad_norms={tid: float(np.linalg.norm(g)) for tid, g in z_grads.items()},
        normalized_grad_norms={tid: float(np.linalg.norm(g)) for tid, g in transformed.items()},
        encoder_grad_norm=float(math.sqrt(sum(float(np.sum(e * e)) for e in enc))),
    )
    return ParamGrads(encoder=enc), report


def train_step(net: MultiTaskNet, batch, cfg: IalConfig | None = None, freeze=()) -> StepReport:
    """Forward, decoder stage (decoders and sigmas move), then encoder stage with updated sigmas."""
    cfg = cfg or IalConfig()
    x, y = batch
    fp = forward(net, x, y)
    decoder_weights = {tid: 1.0 / (2.0 * sigma(net, tid) ** 2) for tid in net.task_ids}
    dec = decoder_stage(fp, net, cfg)
    apply_gradients(net, dec, cfg.lr_params, freeze=freeze, lr_eta=cfg.lr_eta)
    enc, report = encoder_stage(fp, net, cfg=cfg)
    apply_gradients(net, enc, cfg.lr_params)
    report.decoder_weights = decoder_weights
    return report
