"""Domain-adversarial head: latent pooling, gradient reversal, MLP
discriminator, and the binary cross-entropy domain loss.

The reversal layer flips and scales gradients flowing back into the
encoder while the discriminator itself trains on the unflipped loss, so a
single backward pass realizes the adversarial game.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T

PROB_EPS = 1e-7
DISC_PREFIX = "disc"


@dataclass
class DatConfig:
    grl_lambda: float = 1.0
    enabled: bool = False

    def __post_init__(self):
        if self.grl_lambda < 0:
            raise ValueError(f"grl_lambda must be >= 0, got {self.grl_lambda}")


def init_disc_params(rng, d_model, hidden=64, prefix=DISC_PREFIX):
    """MLP discriminator weights: d_model -> hidden -> 1."""
    def glorot(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return {
        f"{prefix}.w0": T.Tensor(glorot(d_model, hidden), requires_grad=True),
        f"{prefix}.b0": T.Tensor(np.zeros(hidden), requires_grad=True),
        f"{prefix}.w1": T.Tensor(glorot(hidden, 1), requires_grad=True),
        f"{prefix}.b1": T.Tensor(np.zeros(1), requires_grad=True),
    }


def pool_latent(memory, mask):
    """Mean of encoder output over time and unmasked agents: [B, d]."""
    mask = np.asarray(mask, dtype=np.float64)
    counts = mask.sum(axis=1)
    if np.any(counts <= 0):
        raise T.ContractError("pool_latent: a sample has no unmasked agents")
    t_len = memory.shape[1]
    masked = memory * T.Tensor(mask[:, None, :, None])
    pooled = T.sum_(masked, axis=(1, 2))
    return pooled * T.Tensor((1.0 / (t_len * counts))[:, None])


def disc_forward(params, pooled, prefix=DISC_PREFIX):
    """Domain membership probability in (0, 1) for each pooled latent."""
    h = T.relu(pooled @ params[f"{prefix}.w0"] + params[f"{prefix}.b0"])
    return T.sigmoid(h @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"])


def domain_bce(predicted, labels):
    """Batch-averaged binary cross-entropy against 0/1 domain labels."""
    labels = np.asarray(labels, dtype=np.float64).reshape(predicted.shape)
    p = T.clip(predicted, PROB_EPS, 1.0 - PROB_EPS)
    lab = T.Tensor(labels)
    losses = -(lab * T.log(p) + (1.0 - lab) * T.log(1.0 - p))
    return T.mean(losses)


def dat_forward(params, memory, mask, labels, dat_cfg):
    """Pool -> gradient reversal -> discriminator -> BCE.

    Returns (loss, probabilities). Encoder-side gradients arrive scaled by
    -grl_lambda; discriminator gradients are the ordinary BCE gradients.
    """
    if not dat_cfg.enabled:
        raise T.ContractError("dat_forward called with domain adaptation disabled")
    pooled = pool_latent(memory, mask)
    reversed_latent = T.grad_reverse(pooled, dat_cfg.grl_lambda)
    probs = disc_forward(params, reversed_latent)
    return domain_bce(probs, labels), probs
