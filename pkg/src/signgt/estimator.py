"""scikit-learn compatible wrappers around the SignGT model and graph preprocessing."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import GRAPH_SPLIT, NODE_SPLIT, GraphDataset, NodeDataset
from .errors import InvalidInputError
from .graph import Graph, Split, adjacency_power, normalize_adjacency, random_split, stratified_split
from .model import ModelConfig, SignGTModel, attention_rows, encode, model_forward
from .training import TrainConfig, fit


def _check_adjacency(adjacency, n: int):
    if adjacency is None:
        raise InvalidInputError("an adjacency matrix is required")
    a = adjacency if sp.issparse(adjacency) else check_array(adjacency, accept_sparse=False)
    if a.shape != (n, n):
        raise InvalidInputError(f"adjacency must be {n}x{n}, got {a.shape}")
    return a


class StructuralBiasTransformer(TransformerMixin, BaseEstimator):
    """Map an adjacency matrix to the k-th power of its normalised form."""

    def __init__(self, k=1):
        self.k = k

    def fit(self, A, y=None):
        A = A if sp.issparse(A) else check_array(A)
        if A.shape[0] != A.shape[1]:
            raise InvalidInputError(f"adjacency must be square, got {A.shape}")
        self.n_nodes_ = A.shape[0]
        return self

    def transform(self, A):
        check_is_fitted(self, "n_nodes_")
        n = A.shape[0]
        g = Graph.from_adjacency(A, np.zeros((n, 1)))
        return adjacency_power(normalize_adjacency(g), self.k).matrix


class _SignGTBase(ClassifierMixin, BaseEstimator):
    def __init__(
        self,
        num_layers=1,
        d_model=64,
        num_heads=2,
        k=1,
        variant="signed",
        scale_scores=True,
        norm="pre",
        dropout=0.1,
        learning_rate=5e-3,
        weight_decay=5e-4,
        max_epochs=500,
        patience=50,
        random_state=0,
    ):
        self.num_layers = num_layers
        self.d_model = d_model
        self.num_heads = num_heads
        self.k = k
        self.variant = variant
        self.scale_scores = scale_scores
        self.norm = norm
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.patience = patience
        self.random_state = random_state

    _task = "node"

    def _model_config(self, in_dim, num_classes) -> ModelConfig:
        return ModelConfig(
            in_dim=in_dim,
            num_classes=num_classes,
            d_model=self.d_model,
            num_heads=self.num_heads,
            num_layers=self.num_layers,
            k=self.k,
            variant=self.variant,
            scale_scores=self.scale_scores,
            norm=self.norm,
            dropout=self.dropout,
            task=self._task,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.random_state,
        )

    def _fit_dataset(self, dataset, in_dim):
        seed = 0 if self.random_state is None else int(self.random_state)
        model = SignGTModel.init(self._model_config(in_dim, len(self.classes_)), seed)
        self.model_, self.history_ = fit(model, dataset, self._train_config())
        self.n_features_in_ = in_dim
        return self


class SignGTNodeClassifier(_SignGTBase):
    """Transductive node classifier.

    ``fit(X, y, adjacency=A)`` trains on the nodes in ``train_idx`` and selects
    the epoch by accuracy on ``val_idx``. Without indices a stratified 60/20/20
    split is drawn from ``random_state``. Entries of ``y`` equal to -1 are
    treated as unlabelled and never used for training or validation.
    """

    def _graph(self, X, adjacency, y=None):
        X = check_array(X, dtype=np.float64)
        a = _check_adjacency(adjacency, X.shape[0])
        return Graph.from_adjacency(a, X, y, num_classes=None if y is None else len(self.classes_))

    def fit(self, X, y, adjacency=None, train_idx=None, val_idx=None):
        y = np.asarray(y)
        labelled = np.flatnonzero(y != -1) if y.dtype.kind in "iu" else np.arange(len(y))
        self.classes_, enc = np.unique(y[labelled], return_inverse=True)
        codes = np.zeros(len(y), dtype=np.int64)
        codes[labelled] = enc
        g = self._graph(X, adjacency, codes)
        if train_idx is None:
            s = stratified_split(codes[labelled], NODE_SPLIT, self.random_state or 0)
            split = Split(labelled[s.train], labelled[s.val], labelled[s.test], s.seed)
        else:
            train = np.asarray(train_idx, dtype=np.int64)
            val = np.asarray(train if val_idx is None else val_idx, dtype=np.int64)
            rest = np.setdiff1d(labelled, np.union1d(train, val))
            split = Split(train, val, rest, -1)
        self.split_ = split
        return self._fit_dataset(NodeDataset(g, split, "estimator"), g.features.shape[1])

    def decision_function(self, X, adjacency=None):
        check_is_fitted(self, "model_")
        return model_forward(self.model_, self._graph(X, adjacency), "eval").data

    def predict_proba(self, X, adjacency=None):
        z = self.decision_function(X, adjacency)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X, adjacency=None):
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.decision_function(X, adjacency), axis=1)]

    def score(self, X, y, adjacency=None, sample_idx=None):
        pred = self.predict(X, adjacency)
        y = np.asarray(y)
        idx = np.arange(len(y)) if sample_idx is None else np.asarray(sample_idx)
        return float(np.mean(pred[idx] == y[idx]))

    def transform(self, X, adjacency=None):
        """Final node representations."""
        check_is_fitted(self, "model_")
        return encode(self.model_, self._graph(X, adjacency), "eval").data

    def attention(self, X, adjacency=None, node_id=0, layer=-1):
        check_is_fitted(self, "model_")
        return attention_rows(self.model_, self._graph(X, adjacency), node_id, layer)


class SignGTGraphClassifier(_SignGTBase):
    """Graph-level classifier over a list of :class:`~signgt.graph.Graph` objects.

    Graphs are processed one at a time and mean-pooled before the MLP head.
    ``fit`` holds out 20% of the graphs (random split) for model selection
    unless ``val_graphs``/``val_y`` are given.
    """

    _task = "graph"

    @staticmethod
    def _check_graphs(graphs):
        graphs = list(graphs)
        if not graphs or not all(isinstance(g, Graph) for g in graphs):
            raise InvalidInputError("expected a non-empty list of Graph objects")
        widths = {g.features.shape[1] for g in graphs}
        if len(widths) != 1:
            raise InvalidInputError(f"graphs disagree on feature width: {sorted(widths)}")
        return graphs

    def fit(self, graphs, y, val_graphs=None, val_y=None):
        graphs = self._check_graphs(graphs)
        all_y = np.asarray(y) if val_y is None else np.concatenate([np.asarray(y), np.asarray(val_y)])
        self.classes_, codes = np.unique(all_y, return_inverse=True)
        if val_graphs is None:
            split = random_split(len(graphs), (GRAPH_SPLIT[0], GRAPH_SPLIT[1] + GRAPH_SPLIT[2], 0.0), self.random_state or 0)
        else:
            val_graphs = self._check_graphs(val_graphs)
            n_tr = len(graphs)
            graphs = graphs + val_graphs
            split = Split(np.arange(n_tr), np.arange(n_tr, len(graphs)), np.array([], dtype=np.int64), -1)
        labelled = []
        for g, c in zip(graphs, codes):
            h = Graph(g.n, g.edges, g.features, g.labels, label=int(c), num_classes=g.num_classes)
            labelled.append(h)
        return self._fit_dataset(GraphDataset(labelled, split, "estimator"), labelled[0].features.shape[1])

    def decision_function(self, graphs):
        check_is_fitted(self, "model_")
        graphs = self._check_graphs(graphs)
        return np.concatenate([model_forward(self.model_, g, "eval").data for g in graphs])

    def predict(self, graphs):
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.decision_function(graphs), axis=1)]
