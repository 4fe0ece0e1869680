"""Estimator-style facade: fit on trajectory samples, predict futures.

Follows the scikit-learn parameter protocol (constructor kwargs mirrored
by get_params/set_params) so the model composes with generic tooling,
without depending on scikit-learn itself.
"""

import inspect

import numpy as np

from . import data, evaluation, model, training
from .domain import DatConfig


class TrajectoryPredictor:
    """Graph-embedded seq2seq Transformer for multi-agent trajectories.

    fit() trains on TrajectorySample lists (optionally with a target
    domain for adversarial adaptation); predict() rolls the decoder out
    autoregressively and returns normalized coordinates.
    """

    def __init__(self, d_model=64, heads=4, ff_width=2048, encoder_layers=2,
                 decoder_layers=2, dropout=0.1, use_gcn=True, gcn_layers=1,
                 learning_rate=1e-4, batch_size=16, steps=1000, seed=0,
                 dat=False, grl_lambda=1.0):
        self.d_model = d_model
        self.heads = heads
        self.ff_width = ff_width
        self.encoder_layers = encoder_layers
        self.decoder_layers = decoder_layers
        self.dropout = dropout
        self.use_gcn = use_gcn
        self.gcn_layers = gcn_layers
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.steps = steps
        self.seed = seed
        self.dat = dat
        self.grl_lambda = grl_lambda

    # -- scikit-learn parameter protocol --------------------------------

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        for name, value in params.items():
            if name not in self._param_names():
                raise ValueError(f"unknown parameter {name!r} for TrajectoryPredictor")
            setattr(self, name, value)
        return self

    # -- fitting and inference -------------------------------------------

    def _model_config(self, samples):
        first = samples[0]
        return model.TransformerConfig(
            d_model=self.d_model, heads=self.heads, ff_width=self.ff_width,
            encoder_layers=self.encoder_layers, decoder_layers=self.decoder_layers,
            dropout=self.dropout, use_gcn=self.use_gcn, gcn_layers=self.gcn_layers,
            history_len=first.history.shape[0], future_len=first.future.shape[0],
            max_agents=first.mask.shape[0])

    def fit(self, source_samples, target_samples=None, metrics_path=None,
            checkpoint_path=None):
        self.config_ = self._model_config(source_samples)
        train_cfg = training.TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            steps=self.steps, seed=self.seed,
            dat=DatConfig(grl_lambda=self.grl_lambda, enabled=self.dat))
        self.params_, self.history_ = training.train(
            self.config_, train_cfg, source_samples, target_samples,
            checkpoint_path=checkpoint_path, metrics_path=metrics_path)
        return self

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("TrajectoryPredictor is not fitted; call fit() first")

    def predict(self, samples, batch_size=32):
        """Normalized future positions [len(samples), t_f, n, 2]."""
        self._require_fitted()
        out = []
        for start in range(0, len(samples), batch_size):
            batch = data.stack_batch(samples[start:start + batch_size])
            out.append(model.predict(self.params_, self.config_, batch))
        return np.concatenate(out)

    def score(self, samples, scaler):
        """Negative average RMSE in meters (higher is better)."""
        self._require_fitted()
        preds = scaler.denormalize(self.predict(samples))
        batch = data.stack_batch(samples)
        report = evaluation.build_report(preds, scaler.denormalize(batch["future"]),
                                         batch["mask"])
        return -report.average

    def save(self, path):
        self._require_fitted()
        model.save_checkpoint(path, self.params_, self.config_)
        return self

    @classmethod
    def load(cls, path):
        params, cfg, _, _ = model.load_checkpoint(path)
        est = cls(d_model=cfg.d_model, heads=cfg.heads, ff_width=cfg.ff_width,
                  encoder_layers=cfg.encoder_layers, decoder_layers=cfg.decoder_layers,
                  dropout=cfg.dropout, use_gcn=cfg.use_gcn, gcn_layers=cfg.gcn_layers)
        est.config_ = cfg
        est.params_ = params
        return est
