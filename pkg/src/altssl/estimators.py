"""scikit-learn compatible estimators around the training routines.

All classifiers take ``y`` with ``-1`` for unlabeled samples, build an MLP
for 2-D ``X`` or the small CNN for image ``X``, and expose the fitted network
as ``model_``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._training import derive_seed
from .baselines import RampSchedule, labeled_only_train, pi_model_train
from .data import Dataset, SemiSplit, UnlabeledSet
from .diffcore import softmax_probs
from .models import ModelState, build_network
from .pretext import N_ROTATIONS, PretextCheckpoint, train_pretext
from .ssl import CycleConfig, run_cycles
from .validation import check_features, check_matching_input, check_semi_supervised


def _resolve_state(init_state) -> ModelState | None:
    if init_state is None or isinstance(init_state, ModelState):
        return init_state
    if isinstance(init_state, PretextCheckpoint):
        return init_state.state
    if hasattr(init_state, "checkpoint_"):
        return init_state.checkpoint_.state
    return ModelState.load(init_state)


def _as_eval_set(eval_set, classes) -> Dataset | None:
    if eval_set is None:
        return None
    Xe, ye = eval_set
    ye = np.asarray(ye)
    if not np.isin(ye, classes).all():
        raise ValueError("eval_set contains labels not seen during fit")
    return Dataset(check_features(Xe), np.searchsorted(classes, ye))


class _NetClassifier(ClassifierMixin, BaseEstimator):
    """Shared prediction code; subclasses implement ``fit``."""

    def _setup(self, X, y):
        X, y_enc, classes = check_semi_supervised(X, y)
        self.classes_ = classes
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.input_shape_ = tuple(X.shape[1:])
        seed = 0 if self.random_state is None else int(self.random_state)
        model = build_network(X, len(classes), self.hidden_dims, self.channels, seed)
        theta0 = _resolve_state(self.init_state)
        if theta0 is None:
            theta0 = model.snapshot()
        self.theta0_ = theta0
        self.model_ = model
        labeled = y_enc >= 0
        ids = np.arange(len(X))
        return X, y_enc, labeled, ids, seed

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_matching_input(X, self.input_shape_)
        return self.model_.predict_logits(X)

    def predict_proba(self, X):
        return softmax_probs(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]


class AlternatingSSLClassifier(_NetClassifier):
    """Semi-supervised classifier trained by alternating head fitting and
    pseudo-label fitting, with the backbone reset to ``init_state`` each cycle.

    Parameters
    ----------
    init_state : ModelState, PretextCheckpoint, fitted RotationPretrainer, path or None
        Backbone checkpoint to start from and reset to. ``None`` uses the
        seeded random initialisation.
    n_cycles, final_full_cycles, phase1_epochs, phase2_epochs, lambda_temp,
    pseudo_mode, subset_fraction, reinitialize, frozen_block_count
        See :class:`altssl.ssl.CycleConfig`.
    random_state : int
        Seeds network initialisation, heads, subsets and batch order.
    """

    def __init__(self, hidden_dims=(16, 16), channels=(8, 16), n_cycles=10, final_full_cycles=3,
                 phase1_epochs=50, phase2_epochs=20, lambda_temp=0.0, pseudo_mode="hard",
                 subset_fraction=2 / 3, reinitialize=True, frozen_block_count=1, phase1_lr=0.1,
                 phase2_lr=0.05, momentum=0.9, batch_size=64, weight_decay=0.0, input_noise=0.0,
                 init_state=None, random_state=0):
        self.hidden_dims = hidden_dims
        self.channels = channels
        self.n_cycles = n_cycles
        self.final_full_cycles = final_full_cycles
        self.phase1_epochs = phase1_epochs
        self.phase2_epochs = phase2_epochs
        self.lambda_temp = lambda_temp
        self.pseudo_mode = pseudo_mode
        self.subset_fraction = subset_fraction
        self.reinitialize = reinitialize
        self.frozen_block_count = frozen_block_count
        self.phase1_lr = phase1_lr
        self.phase2_lr = phase2_lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.input_noise = input_noise
        self.init_state = init_state
        self.random_state = random_state

    def cycle_config(self) -> CycleConfig:
        return CycleConfig(
            num_cycles=self.n_cycles, final_full_cycles=self.final_full_cycles,
            phase1_epochs=self.phase1_epochs, phase2_epochs=self.phase2_epochs,
            lambda_temp=self.lambda_temp, pseudo_mode=self.pseudo_mode,
            subset_fraction=self.subset_fraction, reinitialize=self.reinitialize,
            frozen_block_count=self.frozen_block_count, phase1_lr=self.phase1_lr,
            phase1_momentum=self.momentum, phase2_lr=self.phase2_lr,
            phase2_momentum=self.momentum, phase2_batch_size=self.batch_size,
            weight_decay=self.weight_decay, input_noise=self.input_noise,
            seed=0 if self.random_state is None else int(self.random_state),
        )

    def fit(self, X, y, eval_set=None):
        """Fit on ``X`` with ``y == -1`` marking unlabeled rows.

        ``eval_set=(X_test, y_test)`` fills ``test_accuracy`` in
        ``cycle_reports_``.
        """
        config = self.cycle_config()
        X, y_enc, labeled, ids, seed = self._setup(X, y)
        if labeled.all():
            raise ValueError("no unlabeled samples (y == -1) to learn from")
        split = SemiSplit(
            labeled=Dataset(X[labeled], y_enc[labeled], ids[labeled]),
            unlabeled=UnlabeledSet(X[~labeled], ids[~labeled]),
            labels_per_class=int(np.bincount(y_enc[labeled]).min()),
            seed=seed,
        )
        self.cycle_reports_ = run_cycles(self.model_, split, self.theta0_, config,
                                         eval_set=_as_eval_set(eval_set, self.classes_))
        return self


class LabeledOnlyClassifier(_NetClassifier):
    """Supervised baseline: unlabeled rows (``y == -1``) are dropped before training."""

    def __init__(self, hidden_dims=(16, 16), channels=(8, 16), epochs=50, lr=0.1, momentum=0.9,
                 weight_decay=0.0, frozen_block_count=1, steps_per_epoch=1, init_state=None,
                 random_state=0):
        self.hidden_dims = hidden_dims
        self.channels = channels
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.frozen_block_count = frozen_block_count
        self.steps_per_epoch = steps_per_epoch
        self.init_state = init_state
        self.random_state = random_state

    def fit(self, X, y, eval_set=None):
        X, y_enc, labeled, ids, seed = self._setup(X, y)
        data = Dataset(X[labeled], y_enc[labeled], ids[labeled])
        self.losses_ = labeled_only_train(
            self.model_, self.theta0_, data, self.epochs, lr=self.lr,
            frozen_block_count=self.frozen_block_count, momentum=self.momentum,
            weight_decay=self.weight_decay, steps_per_epoch=self.steps_per_epoch, seed=seed,
        )
        return self


class PiModelClassifier(_NetClassifier):
    """Pi-model baseline with Gaussian input noise and a Gaussian ramp-up."""

    def __init__(self, hidden_dims=(16, 16), channels=(8, 16), epochs=100, lr=0.1, momentum=0.9,
                 weight_decay=0.0, batch_size=100, noise_sigma=0.05, ramp_length=80,
                 max_weight=1.0, frozen_block_count=1, snapshot_epochs=(), init_state=None,
                 random_state=0):
        self.hidden_dims = hidden_dims
        self.channels = channels
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.noise_sigma = noise_sigma
        self.ramp_length = ramp_length
        self.max_weight = max_weight
        self.frozen_block_count = frozen_block_count
        self.snapshot_epochs = snapshot_epochs
        self.init_state = init_state
        self.random_state = random_state

    def fit(self, X, y, eval_set=None):
        X, y_enc, labeled, ids, seed = self._setup(X, y)
        result = pi_model_train(
            self.model_, self.theta0_,
            Dataset(X[labeled], y_enc[labeled], ids[labeled]),
            UnlabeledSet(X[~labeled], ids[~labeled]),
            noise_sigma=self.noise_sigma,
            ramp=RampSchedule(self.ramp_length, self.max_weight),
            epochs=self.epochs, lr=self.lr, momentum=self.momentum,
            weight_decay=self.weight_decay, batch_size=self.batch_size,
            frozen_block_count=self.frozen_block_count,
            snapshot_epochs=tuple(self.snapshot_epochs), seed=seed,
        )
        self.losses_ = result.losses
        self.snapshots_ = result.snapshots
        return self

    def predict_with_state(self, X, state: ModelState):
        """Class predictions from one of ``snapshots_`` without disturbing ``model_``."""
        check_is_fitted(self, "model_")
        X = check_matching_input(X, self.input_shape_)
        current = self.model_.snapshot()
        try:
            self.model_.restore(state)
            return self.classes_[np.argmax(self.model_.predict_logits(X), axis=1)]
        finally:
            self.model_.restore(current)


class RotationPretrainer(TransformerMixin, BaseEstimator):
    """Learns a backbone by predicting image rotations; ``transform`` returns backbone features."""

    def __init__(self, channels=(8, 16), epochs=30, lr=0.1, momentum=0.9, weight_decay=5e-4,
                 batch_size=32, holdout=0.1, random_state=0):
        self.channels = channels
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.holdout = holdout
        self.random_state = random_state

    def fit(self, X, y=None):
        """Train on images ``X``; ``y`` is ignored."""
        X = check_features(X)
        if X.ndim != 4:
            raise ValueError(f"rotation pretraining needs (N, C, H, W) images, got shape {X.shape}")
        seed = 0 if self.random_state is None else int(self.random_state)
        self.model_ = build_network(X, N_ROTATIONS, (), self.channels, seed)
        self.input_shape_ = tuple(X.shape[1:])
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.checkpoint_ = train_pretext(
            self.model_, X, epochs=self.epochs, base_lr=self.lr, momentum=self.momentum,
            weight_decay=self.weight_decay, batch_size=self.batch_size, holdout=self.holdout,
            seed=derive_seed(seed, 7),
        )
        return self

    @property
    def state_(self) -> ModelState:
        check_is_fitted(self, "checkpoint_")
        return self.checkpoint_.state

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_matching_input(X, self.input_shape_)
        with_grad = self.model_.frozen_blocks
        self.model_.freeze_backbone()
        try:
            return np.concatenate([self.model_.features(X[i : i + 512]).data for i in range(0, len(X), 512)])
        finally:
            self.model_.set_trainable(with_grad)
