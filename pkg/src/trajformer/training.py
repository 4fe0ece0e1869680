"""Joint optimization loop: Adam over the trajectory MSE plus the
adversarial domain BCE, with deterministic batching, metrics logging, and
atomic checkpointing.
"""

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import data, domain, model
from . import tensor as T
from .config import ConfigError
from .seeding import stream

log = logging.getLogger(__name__)

# Published-protocol split counts keyed by (case study, domain, total samples).
# The published counts are not exact 1/3 or 1/2 fractions of the totals, so
# the protocol pins them explicitly; other totals fall back to the fractions.
SPLIT_PROTOCOL = {
    ("cross_city", "source", 5398): (3602, 1796),
    ("cross_city", "target", 7799): (3897, 3902),
    ("cross_period", "source", 6154): (4104, 2050),
    ("cross_period", "target", 8427): (4211, 4216),
}
SOURCE_TEST_FRACTION = 1.0 / 3.0
TARGET_TEST_FRACTION = 1.0 / 2.0


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16          # full-scale reference value is 128
    steps: int = 1000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dat: domain.DatConfig = field(default_factory=domain.DatConfig)
    case_study: str = "custom"
    checkpoint_every: int = 200

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def fresh(cls, params):
        return cls(m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()})


def mse_loss(pred, truth, mask):
    """Mean squared error over unmasked agents, all frames and coordinates."""
    mask = np.asarray(mask, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    n_terms = mask.sum() * pred.shape[1] * pred.shape[3]
    if n_terms <= 0:
        raise T.ContractError("mse_loss: batch has no unmasked agents")
    diff = (pred - T.Tensor(truth)) * T.Tensor(mask[:, None, :, None])
    return T.sum_(diff * diff) * (1.0 / n_terms)


def adam_step(params, state, cfg):
    """In-place bias-corrected Adam update; missing gradients count as zero."""
    state.step += 1
    t = state.step
    for name in sorted(params):
        p = params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise T.ContractError(
                f"non-finite gradient for parameter {name!r} at step {t}")
        state.m[name] = cfg.beta1 * state.m[name] + (1 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1 - cfg.beta2) * g * g
        m_hat = state.m[name] / (1 - cfg.beta1 ** t)
        v_hat = state.v[name] / (1 - cfg.beta2 ** t)
        p.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


def zero_grads(params):
    for p in params.values():
        p.zero_grad()


# ----------------------------------------------------------------------
# splits and batching


def make_case_study_splits(case_study, datasets, seed):
    """Deterministic {source,target} x {train,test} splits.

    Test fractions are 1/3 (source) and 1/2 (target); when a domain's size
    matches a published case-study total, the protocol's exact counts are
    used instead.
    """
    out = {}
    for dom, fraction in (("source", SOURCE_TEST_FRACTION),
                          ("target", TARGET_TEST_FRACTION)):
        samples = datasets.get(dom)
        if dom == "target" and samples is None:
            continue
        if not samples:
            raise ConfigError(f"empty {dom} domain for case study {case_study!r}")
        n = len(samples)
        counts = SPLIT_PROTOCOL.get((case_study, dom, n))
        if counts is None:
            n_test = int(n * fraction)
            counts = (n - n_test, n_test)
        n_train, n_test = counts
        order = stream(seed, f"split_{dom}").permutation(n)
        out[f"{dom}_train"] = [samples[i] for i in order[:n_train]]
        out[f"{dom}_test"] = [samples[i] for i in order[n_train:n_train + n_test]]
    return out


def split_counts(case_study, dom, total):
    """Train/test counts the protocol assigns to a domain of `total` samples."""
    counts = SPLIT_PROTOCOL.get((case_study, dom, total))
    if counts is not None:
        return counts
    fraction = SOURCE_TEST_FRACTION if dom == "source" else TARGET_TEST_FRACTION
    n_test = int(total * fraction)
    return total - n_test, n_test


class _EpochSampler:
    """Serves dataset positions from per-epoch seeded permutations, so any
    step's batch can be re-derived after a resume."""

    def __init__(self, seed, name, n):
        self.seed = seed
        self.name = name
        self.n = n
        self._epoch = None
        self._perm = None

    def take(self, start, count):
        out = []
        for pos in range(start, start + count):
            epoch, offset = divmod(pos, self.n)
            if epoch != self._epoch:
                self._epoch = epoch
                self._perm = stream(self.seed, self.name, epoch).permutation(self.n)
            out.append(int(self._perm[offset]))
        return out


# ----------------------------------------------------------------------
# training loop


class MetricsLog:
    """Append-only line-delimited metrics: step,mse,bce,disc_accuracy,wall_ms."""

    HEADER = "step,mse,bce,disc_accuracy,wall_ms"

    def __init__(self, path, append=False):
        self.path = path
        mode = "a" if append and os.path.exists(path) else "w"
        self._fh = open(path, mode, encoding="utf-8")
        if mode == "w":
            self._fh.write(self.HEADER + "\n")

    def write(self, step, mse, bce=None, disc_acc=None, wall_ms=None):
        bce_s = "" if bce is None else repr(float(bce))
        acc_s = "" if disc_acc is None else repr(float(disc_acc))
        wall_s = "" if wall_ms is None else f"{wall_ms:.3f}"
        self._fh.write(f"{step},{float(mse)!r},{bce_s},{acc_s},{wall_s}\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def _atomic_checkpoint(path, params, cfg, meta, state):
    tmp = f"{path}.tmp"
    model.save_checkpoint(tmp, params, cfg, extra_meta=meta,
                          moments=(state.m, state.v, state.step))
    os.replace(tmp, path)


def train(model_cfg, train_cfg, source_train, target_train=None,
          checkpoint_path=None, metrics_path=None, resume_from=None):
    """Run the optimization loop; returns (params, metrics row list).

    Each step draws a mixed batch (half source, half target when domain
    adaptation is on), backpropagates MSE + adversarial BCE through one
    combined loss, and applies an Adam update.
    """
    dat = train_cfg.dat
    if dat.enabled and not target_train:
        raise ConfigError("domain adaptation requires a target training set")
    if not source_train:
        raise ConfigError("empty source training set")

    if resume_from is not None:
        params, loaded_cfg, meta, moments = model.load_checkpoint(resume_from)
        if loaded_cfg != model_cfg:
            raise model.CheckpointError(
                "resume config does not match checkpoint config")
        m, v, adam_t = moments
        state = AdamState(m=m, v=v, step=adam_t)
        start_step = int(meta.get("train_step", 0))
    else:
        rng = stream(train_cfg.seed, "init")
        params = model.init_params(model_cfg, rng)
        if dat.enabled:
            params.update(domain.init_disc_params(
                stream(train_cfg.seed, "init_disc"), model_cfg.d_model))
        state = AdamState.fresh(params)
        start_step = 0

    n_src_per_step = train_cfg.batch_size // 2 if dat.enabled else train_cfg.batch_size
    n_tgt_per_step = train_cfg.batch_size - n_src_per_step if dat.enabled else 0
    src_sampler = _EpochSampler(train_cfg.seed, "shuffle_source", len(source_train))
    tgt_sampler = (_EpochSampler(train_cfg.seed, "shuffle_target", len(target_train))
                   if dat.enabled else None)

    log_file = MetricsLog(metrics_path, append=resume_from is not None) if metrics_path else None
    rows = []
    try:
        for step in range(start_step, train_cfg.steps):
            t0 = time.perf_counter()
            picks = [source_train[i]
                     for i in src_sampler.take(step * n_src_per_step, n_src_per_step)]
            if dat.enabled:
                picks += [target_train[i]
                          for i in tgt_sampler.take(step * n_tgt_per_step, n_tgt_per_step)]
            batch = data.stack_batch(picks)

            drop_rng = stream(train_cfg.seed, "dropout", step) if model_cfg.dropout > 0 else None
            memory, preds = model.forward_train(params, model_cfg, batch, rng=drop_rng)
            mse = mse_loss(preds, batch["future"], batch["mask"])
            bce_val = acc_val = None
            if dat.enabled:
                bce, probs = domain.dat_forward(params, memory, batch["mask"],
                                                batch["domain"], dat)
                total = mse + bce
                bce_val = bce.data.item()
                acc_val = float(np.mean(
                    (probs.data.ravel() > 0.5) == (batch["domain"] > 0.5)))
            else:
                total = mse

            zero_grads(params)
            total.backward()
            adam_step(params, state, train_cfg)

            wall_ms = (time.perf_counter() - t0) * 1e3
            row = (step, mse.data.item(), bce_val, acc_val, wall_ms)
            rows.append(row)
            if log_file:
                log_file.write(*row)

            done = step + 1
            if checkpoint_path and (done % train_cfg.checkpoint_every == 0
                                    or done == train_cfg.steps):
                _atomic_checkpoint(checkpoint_path, params, model_cfg,
                                   {"train_step": done, "seed": train_cfg.seed},
                                   state)
    finally:
        if log_file:
            log_file.close()
    return params, rows
