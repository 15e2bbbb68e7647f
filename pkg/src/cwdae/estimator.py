"""scikit-learn style front end for the autoencoder."""

from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .autodiff import Tensor
from .data import TabularSchema, coerce_table, encode
from .model import TrainConfig, encode as encode_latent, train
from .synthesis import SynthesisRequest, generate


class CWDAE(BaseEstimator):
    """Mixture Cramer-Wold distributional autoencoder for mixed-type tables.

    Parameters
    ----------
    schema : TabularSchema, optional
        Column typing. Inferred from the training frame when omitted
        (numeric columns become continuous, the rest discrete).
    pi : float, default=0.05
        Weight of the coordinate-axis (marginal) part of the reconstruction
        distance. Larger values favour marginal fidelity and privacy over
        joint structure.
    epochs, batch_size, learning_rate : training schedule for Adam.
    lam : float, default=1.0
        Weight of the latent prior-matching term.
    tau : float, default=0.2
        Floor of the Gumbel-Softmax temperature schedule.
    latent_dim : int, default=2
    n_knots : int, default=10
        Interior knots of each quantile spline.
    gamma : float or "silverman", default="silverman"
        Smoothing bandwidth of the distances.
    anneal : {"epoch", "step"}, default="epoch"
    random_state : int, default=0

    Attributes
    ----------
    model_ : CwdaeModel
    encoder_ : TabularEncoder
    schema_ : TabularSchema
    history_ : list of LossBreakdown, one per epoch
    """

    def __init__(self, schema: TabularSchema | None = None, pi: float = 0.05, epochs: int = 100,
                 batch_size: int = 1024, learning_rate: float = 0.001, lam: float = 1.0,
                 tau: float = 0.2, latent_dim: int = 2, n_knots: int = 10,
                 gamma: float | str = "silverman", anneal: str = "epoch", random_state: int = 0):
        self.schema = schema
        self.pi = pi
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lam = lam
        self.tau = tau
        self.latent_dim = latent_dim
        self.n_knots = n_knots
        self.gamma = gamma
        self.anneal = anneal
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, lam=self.lam, tau=self.tau,
                           latent_dim=self.latent_dim, pi=self.pi, n_knots=self.n_knots,
                           seed=self.random_state, gamma=self.gamma, anneal=self.anneal)

    def fit(self, X, y=None):
        cfg = self._config()
        df = pd.DataFrame(X).rename(columns=str)
        schema = self.schema if self.schema is not None else TabularSchema.infer(df)
        ds = encode(df, schema)
        if len(ds) < 2:
            raise ValueError("at least two training rows are required")
        self.schema_ = schema
        self.encoder_ = ds.encoder
        self.model_, self.history_ = train(ds, cfg)
        self.n_features_in_ = len(schema.columns)
        self.feature_names_in_ = np.asarray(schema.names, dtype=object)
        return self

    def sample(self, n_samples: int | None = None, random_state: int | None = None,
               median_only: bool = False) -> pd.DataFrame:
        """Synthetic rows; ``n_samples`` defaults to the training row count."""
        check_is_fitted(self, "model_")
        n = self.model_.n_train if n_samples is None else int(n_samples)
        seed = self.random_state if random_state is None else random_state
        return generate(self.model_, SynthesisRequest(n, seed, median_only))

    def transform(self, X) -> np.ndarray:
        """Posterior mean of the latent code for every row."""
        check_is_fitted(self, "model_")
        df = coerce_table(pd.DataFrame(X), self.schema_)
        _, mu, _ = encode_latent(self.model_, Tensor(self.encoder_.transform(df)),
                                 eps=np.zeros((len(df), self.latent_dim)))
        return mu.data

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X).transform(X)
