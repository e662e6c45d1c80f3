"""sklearn-compatible classifier around the training engine."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from ..data import Dataset
from ..validation import as_images
from .engine import TrainConfig, predict_proba, train
from .network import LENET, build_network


class NetworkClassifier(ClassifierMixin, BaseEstimator):
    """Train a matrix-backed network with plain (momentum) SGD.

    Parameters
    ----------
    architecture : str
        Layer string understood by :func:`~xbarcompress.nn.parse_architecture`.
        Its final ``fc`` width must equal the number of classes.
    max_iter : int
        Number of mini-batch steps.
    random_state : int
        Seeds both the Xavier initialization and the batch order.

    Attributes
    ----------
    network_ : Network
    classes_ : ndarray
    """

    def __init__(self, architecture=LENET, learning_rate=0.01, batch_size=64, max_iter=1000, momentum=0.9,
                 weight_decay=0.0, lr_gamma=0.0, lr_power=0.75, random_state=0):
        self.architecture = architecture
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_gamma = lr_gamma
        self.lr_power = lr_power
        self.random_state = random_state

    def fit(self, X, y):
        X = as_images(X)
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(np.asarray(y), return_inverse=True)
        seed = self.random_state or 0
        cfg = TrainConfig(self.learning_rate, self.batch_size, self.max_iter, seed, self.momentum,
                          self.weight_decay, self.lr_gamma, self.lr_power)
        self.network_ = build_network(self.architecture, X.shape[1:], len(self.classes_), seed=seed)
        train(self.network_, Dataset(X, y_idx, len(self.classes_)), cfg)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        return predict_proba(self.network_, as_images(X, self.network_.input_shape))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
