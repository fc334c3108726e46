"""scikit-learn style wrappers around the adaptive-depth models.

``DactClassifier`` trains the accumulated-answer model (two phases) and
predicts with the guaranteed early exit.  ``EarlyExitClassifier`` shares
the same backbone recipe but fits plain per-block heads and exits on an
entropy threshold or a patience streak.  Both follow the usual estimator
contract: constructor only stores hyperparameters, ``fit`` returns self,
fitted state lives in trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .baselines import forward_baseline
from .config import ModelConfig, TrainConfig
from .data import Example, Vocab, tokenize
from .halting import DactModel
from .training import train_baseline_heads, train_phase1, train_phase2


def _validate_texts(X):
    if isinstance(X, (str, bytes)):
        raise ValueError("X must be a sequence of strings, not a single string")
    texts = list(X)
    if not texts:
        raise ValueError("X is empty")
    for i, t in enumerate(texts):
        if not isinstance(t, str):
            raise ValueError(f"X[{i}] is {type(t).__name__}, expected str")
        if not t.strip():
            raise ValueError(f"X[{i}] is blank")
    return texts


class _TextDepthClassifier(BaseEstimator, ClassifierMixin):
    """Shared plumbing: text validation, vocab building, backbone training."""

    def _model_config(self, vocab_size: int, num_classes: int) -> ModelConfig:
        return ModelConfig(
            num_blocks=self.num_blocks,
            hidden_dim=self.hidden_dim,
            num_heads=self.num_heads,
            ffn_dim=self.ffn_dim,
            vocab_size=vocab_size,
            max_seq_len=self.max_seq_len,
            num_classes=num_classes,
        )

    def _train_config(self, tau: float) -> TrainConfig:
        return TrainConfig(
            tau=tau,
            lr_phase1=self.lr_phase1,
            lr_phase2=self.lr_phase2,
            epochs_phase1=self.epochs_phase1,
            epochs_phase2=self.epochs_phase2,
            batch_size=self.batch_size,
            seed=self.seed,
            grad_clip=self.grad_clip,
        )

    def _prepare_fit(self, X, y):
        texts = _validate_texts(X)
        y = np.asarray(y)
        if y.ndim != 1 or len(y) != len(texts):
            raise ValueError(f"y must be 1-D with {len(texts)} entries, got shape {y.shape}")
        classes, encoded = np.unique(y, return_inverse=True)
        if classes.size < 2:
            raise ValueError(f"need at least 2 classes, got {classes.size}")
        examples = [Example(text_a=t, label=int(lab)) for t, lab in zip(texts, encoded)]
        vocab = Vocab.build(examples)
        return examples, vocab, classes

    def _encode(self, text: str):
        return tokenize(Example(text_a=text, label=0), self.vocab_, self.model_.config.max_seq_len)

    def predict(self, X):
        check_is_fitted(self, "model_")
        idx = [self._predict_index(self._encode(t)) for t in _validate_texts(X)]
        return self.classes_[np.asarray(idx, dtype=np.int64)]

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return np.vstack([self._predict_distribution(self._encode(t)) for t in _validate_texts(X)])

    def decision_depths(self, X):
        """Blocks executed per input; shows which examples exited early."""
        check_is_fitted(self, "model_")
        return np.asarray([self._predict_depth(self._encode(t)) for t in _validate_texts(X)])


class DactClassifier(_TextDepthClassifier):
    """Adaptive-depth text classifier with an argmax-preserving early exit.

    ``tau`` trades compute for accuracy pressure during training: larger
    values push halting values down, which lets inference stop earlier.
    Predictions are identical to running the full depth, by the exit
    bound's worst-case guarantee.
    """

    def __init__(self, num_blocks=6, hidden_dim=32, num_heads=4, ffn_dim=64, max_seq_len=32,
                 tau=5e-3, lr_phase1=1e-3, lr_phase2=3e-4, epochs_phase1=3, epochs_phase2=3,
                 batch_size=16, seed=0, grad_clip=1.0):
        self.num_blocks = num_blocks
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.ffn_dim = ffn_dim
        self.max_seq_len = max_seq_len
        self.tau = tau
        self.lr_phase1 = lr_phase1
        self.lr_phase2 = lr_phase2
        self.epochs_phase1 = epochs_phase1
        self.epochs_phase2 = epochs_phase2
        self.batch_size = batch_size
        self.seed = seed
        self.grad_clip = grad_clip

    def fit(self, X, y):
        examples, vocab, classes = self._prepare_fit(X, y)
        config = self._model_config(vocab.size, classes.size)
        train_cfg = self._train_config(self.tau)
        model = DactModel(config, seed=self.seed)
        train_phase1(model, examples, vocab, train_cfg)
        train_phase2(model, examples, vocab, train_cfg)
        self.model_ = model
        self.vocab_ = vocab
        self.classes_ = classes
        return self

    def _predict_index(self, ids) -> int:
        pred, _, _ = self.model_.forward_adaptive(ids)
        return pred

    def _predict_depth(self, ids) -> int:
        _, used, _ = self.model_.forward_adaptive(ids)
        return used

    def _predict_distribution(self, ids):
        _, _, state = self.model_.forward_adaptive(ids)
        return state.answer_values()


class EarlyExitClassifier(_TextDepthClassifier):
    """Threshold-style early-exit classifier (entropy or patience rule).

    Exits carry no correctness guarantee; the knob directly trades
    accuracy against depth.
    """

    def __init__(self, method="entropy", threshold=0.2, patience=2,
                 num_blocks=6, hidden_dim=32, num_heads=4, ffn_dim=64, max_seq_len=32,
                 lr_phase1=1e-3, lr_phase2=3e-4, epochs_phase1=3, epochs_phase2=3,
                 batch_size=16, seed=0, grad_clip=1.0):
        self.method = method
        self.threshold = threshold
        self.patience = patience
        self.num_blocks = num_blocks
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.ffn_dim = ffn_dim
        self.max_seq_len = max_seq_len
        self.lr_phase1 = lr_phase1
        self.lr_phase2 = lr_phase2
        self.epochs_phase1 = epochs_phase1
        self.epochs_phase2 = epochs_phase2
        self.batch_size = batch_size
        self.seed = seed
        self.grad_clip = grad_clip

    def _knob(self) -> float:
        return self.threshold if self.method == "entropy" else float(self.patience)

    def fit(self, X, y):
        if self.method not in ("entropy", "patience", "static"):
            raise ValueError(f"method must be entropy, patience, or static, got {self.method!r}")
        examples, vocab, classes = self._prepare_fit(X, y)
        config = self._model_config(vocab.size, classes.size)
        train_cfg = self._train_config(tau=0.0)
        model = DactModel(config, seed=self.seed)
        train_phase1(model, examples, vocab, train_cfg)
        train_baseline_heads(model, examples, vocab, train_cfg)
        self.model_ = model
        self.vocab_ = vocab
        self.classes_ = classes
        return self

    def _predict_index(self, ids) -> int:
        pred, _, _ = forward_baseline(self.model_, ids, self.method, self._knob())
        return pred

    def _predict_depth(self, ids) -> int:
        _, used, _ = forward_baseline(self.model_, ids, self.method, self._knob())
        return used

    def _predict_distribution(self, ids):
        _, _, probs = forward_baseline(self.model_, ids, self.method, self._knob())
        return np.asarray(probs, dtype=np.float64)
