"""Walk through a single IAL training step on a tiny two-task network.

Run with ``python demos/01_one_step.py``.
"""
import math

import numpy as np

from ial.ial import IalConfig, decoder_stage, encoder_stage, task_grads
from ial.net import TaskSpec, apply_gradients, forward, init_net, sigma

rng = np.random.default_rng(0)

# %% A primary regression task and one auxiliary classification task share a 2-unit feature z.
tasks = [
    TaskSpec("depth", "primary", "mse", (8, 1)),
    TaskSpec("labels", "auxiliary", "softmax_ce", (8, 4)),
]
net = init_net([5, 12, 2], tasks, seed=0)
x = rng.standard_normal((32, 5))
y = {"depth": rng.standard_normal(32), "labels": rng.integers(0, 4, size=32)}

# pretend training already made the auxiliary fairly certain
net.eta["labels"] = 2 * math.log(0.4)

# %% One forward pass, then per-task gradients at z.
fp = forward(net, x, y)
for tid, tg in task_grads(fp).items():
    print(f"{tid:7s} loss {tg.loss:.4f}  |dL/dz| {np.linalg.norm(tg.z_grad):.4f}  sigma {sigma(net, tid):.3f}")

# %% Decoder stage: each head follows only its own uncertainty-weighted loss.
cfg = IalConfig()
dec = decoder_stage(fp, net, cfg)
apply_gradients(net, dec, cfg.lr_params, lr_eta=cfg.lr_eta)
print("sigma after decoder stage:", {t: round(sigma(net, t), 4) for t in net.task_ids})

# %% Encoder stage: the auxiliary gradient is rescaled to the primary's norm and weighted by f(sigma).
enc, report = encoder_stage(fp, net, cfg=cfg)
apply_gradients(net, enc, cfg.lr_params)
print("encoder weights:", {t: round(w, 4) for t, w in report.encoder_weights.items()})
print("raw |grad z|:", {t: round(v, 4) for t, v in report.grad_norms.items()})
print("rescaled |grad z|:", {t: round(v, 4) for t, v in report.normalized_grad_norms.items()})
