"""Central finite-difference verification of every differentiable layer.

Each registered check builds a miniature randomized instance, computes
analytic gradients through the tape, and compares them elementwise against
(f(x+h) - f(x-h)) / 2h in double precision.
"""

import numpy as np

from . import domain, graph, model
from . import tensor as T
from .seeding import stream

FD_STEP = 1e-5
REL_TOL = 1e-3
ABS_FLOOR = 1e-8


def check_gradients(loss_fn, params, step=FD_STEP, floor=ABS_FLOOR, fd_scale=None):
    """Max relative error between tape gradients and central differences.

    `loss_fn()` must rebuild the forward pass from `params` (a name ->
    Tensor dict) and return a scalar Tensor. `fd_scale(name)` gives the
    factor relating the tape gradient to the true loss gradient (-lambda
    for parameters upstream of a gradient reversal layer, 1 otherwise).
    """
    for p in params.values():
        p.zero_grad()
    loss_fn().backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    worst = 0.0
    worst_param = None
    for name, p in params.items():
        scale = 1.0 if fd_scale is None else fd_scale(name)
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn().data.item()
            flat[i] = orig - step
            down = loss_fn().data.item()
            flat[i] = orig
            fd = scale * (up - down) / (2.0 * step)
            a = analytic[name].ravel()[i]
            rel = abs(a - fd) / max(abs(a), abs(fd), floor)
            if rel > worst:
                worst = rel
                worst_param = name
    return worst, worst_param


def _mini_cfg():
    return model.TransformerConfig(
        d_model=8, heads=2, ff_width=16, encoder_layers=1, decoder_layers=1,
        dropout=0.0, history_len=4, future_len=4, max_agents=2)


def _mini_batch(rng, cfg, n=2):
    mask = np.ones((1, n))
    history = rng.uniform(-1, 1, size=(1, cfg.history_len, n, 2))
    future = rng.uniform(-1, 1, size=(1, cfg.future_len, n, 2))
    adjacency = np.stack([
        graph.build_scene_graph(rng.uniform(0, 10, size=(n, 2)),
                                np.ones(n), mask[0]).norm_adjacency
        for _ in range(cfg.history_len)])[None]
    return {"history": history, "future": future,
            "adjacency": adjacency, "mask": mask}


def _sq_mean(x):
    # The 1/32 keeps check losses well below 1, so that central-difference
    # roundoff (eps * |L| / 2h) stays an order of magnitude under the
    # absolute floor even for parameters with exactly zero gradient.
    return T.mean(x * x) * 0.03125


def _check_gcn(rng):
    params = graph.init_gcn_params(rng, 2, 4)
    feats = rng.normal(size=(3, 2, 2))
    adj = np.stack([graph.build_scene_graph(rng.uniform(0, 10, size=(2, 2)),
                                            np.ones(2)).norm_adjacency
                    for _ in range(3)])
    return params, lambda: _sq_mean(graph.gcn_forward(T.Tensor(feats), adj, params))


def _check_layer_norm(rng):
    params = {"g": T.Tensor(rng.normal(size=6), requires_grad=True),
              "b": T.Tensor(rng.normal(size=6), requires_grad=True)}
    x = rng.normal(size=(3, 6))
    return params, lambda: _sq_mean(T.layer_norm(T.Tensor(x), params["g"], params["b"]))


def _check_attention(rng):
    cfg = _mini_cfg()
    params = {}
    for proj in ("q", "k", "v", "o"):
        model._linear_params(rng, params, f"attn.{proj}", cfg.d_model, cfg.d_model)
    x = rng.normal(size=(1, 4, 2, cfg.d_model))
    mask_bias = model.causal_mask(4)
    return params, lambda: _sq_mean(model.multi_head_attention(
        params, "attn", T.Tensor(x), T.Tensor(x), cfg, mask_bias=mask_bias))


def _check_feedforward(rng):
    params = {}
    model._linear_params(rng, params, "ff.1", 6, 12)
    model._linear_params(rng, params, "ff.2", 12, 6)
    x = rng.normal(size=(5, 6))
    return params, lambda: _sq_mean(model.feed_forward(params, "ff", T.Tensor(x)))


def _check_softmax(rng):
    params = {"w": T.Tensor(rng.normal(size=(4, 4)), requires_grad=True)}
    x = rng.normal(size=(3, 4))
    return params, lambda: _sq_mean(T.softmax(T.Tensor(x) @ params["w"], axis=-1))


def _check_mse(rng):
    params = {"w": T.Tensor(rng.normal(size=(2, 2)), requires_grad=True)}
    pred = rng.normal(size=(2, 4, 2, 2))
    truth = rng.normal(size=(2, 4, 2, 2))
    mask = np.ones((2, 2))
    from . import training

    def loss():
        p = T.Tensor(pred) @ params["w"]
        return training.mse_loss(p, truth, mask) * 0.03125

    return params, loss


def _check_bce(rng):
    params = domain.init_disc_params(rng, 6, hidden=5)
    x = rng.normal(size=(4, 6))
    labels = np.array([0.0, 1.0, 1.0, 0.0])

    def loss():
        probs = domain.disc_forward(params, T.Tensor(x))
        return domain.domain_bce(probs, labels)

    return params, loss


def _check_grl_composite(rng):
    cfg = _mini_cfg()
    params = model.init_params(cfg, rng)
    params.update(domain.init_disc_params(rng, cfg.d_model, hidden=5))
    batch = _mini_batch(rng, cfg)
    labels = np.array([1.0])
    dat = domain.DatConfig(grl_lambda=0.7, enabled=True)

    def loss():
        memory = model.encode(params, cfg, T.Tensor(batch["history"]),
                              batch["adjacency"], batch["mask"])
        bce, _ = domain.dat_forward(params, memory, batch["mask"], labels, dat)
        return bce * 0.03125

    # Everything upstream of the reversal layer receives -lambda times the
    # true loss gradient; the discriminator itself is un-reversed.
    def fd_scale(name):
        return 1.0 if name.startswith(domain.DISC_PREFIX) else -dat.grl_lambda

    return params, loss, fd_scale


def _check_encoder(rng):
    cfg = _mini_cfg()
    params = model.init_params(cfg, rng)
    batch = _mini_batch(rng, cfg)

    def loss():
        memory = model.encode(params, cfg, T.Tensor(batch["history"]),
                              batch["adjacency"], batch["mask"])
        return _sq_mean(memory)

    return params, loss


def _check_full_model(rng):
    from . import training
    cfg = _mini_cfg()
    params = model.init_params(cfg, rng)
    batch = _mini_batch(rng, cfg)

    def loss():
        _, preds = model.forward_train(params, cfg, batch)
        return training.mse_loss(preds, batch["future"], batch["mask"]) * 0.03125

    return params, loss


REGISTRY = {
    "gcn": _check_gcn,
    "layer_norm": _check_layer_norm,
    "attention": _check_attention,
    "feedforward": _check_feedforward,
    "softmax": _check_softmax,
    "mse": _check_mse,
    "bce": _check_bce,
    "grl_composite": _check_grl_composite,
    "encoder": _check_encoder,
    "full_model": _check_full_model,
}


def run_all(seed=0, n_seeds=5, rel_tol=REL_TOL):
    """Run every registered check on n_seeds random instances.

    Returns a list of (layer name, max relative error, passed) tuples.
    """
    results = []
    for name, builder in REGISTRY.items():
        worst = 0.0
        for k in range(n_seeds):
            rng = stream(seed, f"gradcheck_{name}", k)
            built = builder(rng)
            params, loss_fn = built[0], built[1]
            fd_scale = built[2] if len(built) > 2 else None
            err, _ = check_gradients(loss_fn, params, fd_scale=fd_scale)
            worst = max(worst, err)
        results.append((name, worst, worst < rel_tol))
    return results
