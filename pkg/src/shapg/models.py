"""Built-in evaluators, score functions and the external-process bridge.

An evaluator turns ``(train_X, train_y, test_X, test_y)`` into a single
score. Built-ins are ordinary least squares (with an optional ridge term)
and k-nearest neighbours. Anything else can be plugged in as an external
command that speaks one JSON object per line on its standard streams.
"""

from __future__ import annotations

import json
import os
import queue
import selectors
import subprocess
import threading
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import CLASSIFICATION, REGRESSION

EVALUATOR_KINDS = ("ols", "knn_regress", "knn_classify", "external")
METRIC_KINDS = ("r2", "f1", "accuracy")
TIMEOUT_ENV = "SHAPG_EXTERNAL_TIMEOUT"
DEFAULT_TIMEOUT = 300.0


class EvaluatorError(RuntimeError):
    """A model could not be fitted or scored."""

    def __init__(self, message: str, coalition: int | None = None):
        if coalition is not None:
            message = f"{message} (coalition mask {coalition})"
        super().__init__(message)
        self.coalition = coalition


@dataclass(frozen=True)
class Metric:
    kind: str
    value: float

    def __float__(self):
        return self.value


# -- ordinary least squares -------------------------------------------------


def ols_fit(X: np.ndarray, y: np.ndarray, lam: float = 1e-8):
    """Coefficients ``(intercept, slopes)`` of a ridge-regularised line fit.

    The intercept is not penalised. Solved through the centred normal
    equations, which is algebraically the same system as augmenting the
    design with a column of ones.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise EvaluatorError("OLS needs at least one feature column")
    if X.shape[0] < 1:
        raise EvaluatorError("OLS needs at least one training row")
    if lam < 0:
        raise EvaluatorError(f"ridge term must be >= 0, got {lam}")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    gram = Xc.T @ Xc
    if lam > 0:
        gram[np.diag_indices_from(gram)] += lam
    rhs = Xc.T @ (y - y_mean)
    if lam == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise EvaluatorError("singular normal equations; use a ridge term lambda > 0")
    try:
        beta = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        raise EvaluatorError(
            "singular normal equations; use a ridge term lambda > 0"
        ) from None
    return float(y_mean - x_mean @ beta), beta


def ols_fit_predict(
    train_X: np.ndarray,
    train_y: np.ndarray,
    test_X: np.ndarray,
    lam: float = 1e-8,
) -> np.ndarray:
    intercept, beta = ols_fit(train_X, train_y, lam)
    return intercept + np.asarray(test_X, dtype=float) @ beta


# -- k nearest neighbours ---------------------------------------------------


def _standardize(train_X, test_X):
    mu = train_X.mean(axis=0)
    sd = train_X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (train_X - mu) / sd, (test_X - mu) / sd


def knn_neighbors(train_X: np.ndarray, test_X: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest train rows per test row.

    Features are z-scored with train statistics. Equal distances resolve
    to the lower train row index.
    """
    train_X = np.asarray(train_X, dtype=float)
    test_X = np.asarray(test_X, dtype=float)
    if k < 1:
        raise EvaluatorError(f"k must be >= 1, got {k}")
    if k > train_X.shape[0]:
        raise EvaluatorError(f"k={k} exceeds the {train_X.shape[0]} training rows")
    Ztr, Zte = _standardize(train_X, test_X)
    d2 = (
        np.einsum("ij,ij->i", Zte, Zte)[:, None]
        - 2.0 * Zte @ Ztr.T
        + np.einsum("ij,ij->i", Ztr, Ztr)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def knn_predict(
    train_X: np.ndarray,
    train_y: np.ndarray,
    test_X: np.ndarray,
    k: int = 5,
    task_kind: str = REGRESSION,
) -> np.ndarray:
    idx = knn_neighbors(train_X, test_X, k)
    neigh = np.asarray(train_y)[idx]
    if task_kind == REGRESSION:
        return neigh.astype(float).mean(axis=1)
    # majority vote; equal counts go to the smallest label
    labels = np.unique(train_y)
    counts = (neigh[:, :, None] == labels[None, None, :]).sum(axis=1)
    return labels[np.argmax(counts, axis=1)]


# -- scores -----------------------------------------------------------------


def r2_score(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    ss_res = float(np.sum((truth - pred) ** 2))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def _f1_for(pred, truth, positive) -> float:
    tp = np.sum((pred == positive) & (truth == positive))
    fp = np.sum((pred == positive) & (truth != positive))
    fn = np.sum((pred != positive) & (truth == positive))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def f1_score(pred, truth, labels: Sequence[int] | None = None) -> float:
    """Positive-class F1 for two labels (larger label is positive), else macro F1."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if labels is None:
        labels = np.union1d(np.unique(truth), np.unique(pred))
    labels = sorted(int(c) for c in labels)
    if len(labels) <= 2:
        return _f1_for(pred, truth, labels[-1])
    return float(np.mean([_f1_for(pred, truth, c) for c in labels]))


def score(predictions, truth, metric_kind: str, labels=None) -> Metric:
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape or predictions.ndim != 1:
        raise ValueError(
            f"length mismatch: {predictions.shape} predictions vs {truth.shape} targets"
        )
    if len(truth) < 1:
        raise ValueError("cannot score an empty prediction vector")
    if metric_kind == "r2":
        return Metric("r2", r2_score(predictions, truth))
    if metric_kind == "f1":
        return Metric("f1", f1_score(predictions, truth, labels))
    if metric_kind == "accuracy":
        return Metric("accuracy", float(np.mean(predictions == truth)))
    raise ValueError(f"unknown metric {metric_kind!r}")


def metric_for(task_kind: str) -> str:
    return "r2" if task_kind == REGRESSION else "f1"


def constant_predictions(train_y, n_test: int, task_kind: str) -> np.ndarray:
    """Train-mean (regression) or train-majority (classification) predictor."""
    train_y = np.asarray(train_y)
    if task_kind == REGRESSION:
        return np.full(n_test, float(train_y.mean()))
    labels, counts = np.unique(train_y, return_counts=True)
    return np.full(n_test, labels[np.argmax(counts)])


# -- external process -------------------------------------------------------


def default_timeout() -> float:
    env = os.environ.get(TIMEOUT_ENV)
    return float(env) if env else DEFAULT_TIMEOUT


def encode_request(task, feature_indices, train_X, train_y, test_X, test_y) -> str:
    def _y(v):
        v = np.asarray(v)
        return v.astype(int).tolist() if task == CLASSIFICATION else v.astype(float).tolist()

    payload = {
        "task": task,
        "feature_indices": [int(i) for i in feature_indices],
        "train": {"X": np.asarray(train_X, dtype=float).tolist(), "y": _y(train_y)},
        "test": {"X": np.asarray(test_X, dtype=float).tolist(), "y": _y(test_y)},
    }
    return json.dumps(payload, separators=(",", ":")) + "\n"


def decode_response(line: str) -> float:
    try:
        obj = json.loads(line)
        value = obj["score"]
    except (ValueError, KeyError, TypeError):
        raise EvaluatorError(f"malformed response from external evaluator: {line!r}") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise EvaluatorError(f"non-numeric score in response: {line!r}")
    return float(value)


class ExternalProcess:
    """One child process answering requests line by line.

    The child is spawned lazily and respawned if it exits between
    requests, so both long-lived servers and answer-once scripts work.
    """

    def __init__(self, command: Sequence[str], timeout: float | None = None):
        if isinstance(command, str):
            import shlex

            command = shlex.split(command)
        self.command = list(command)
        self.timeout = default_timeout() if timeout is None else timeout
        self._proc: subprocess.Popen | None = None
        self._served = 0

    def _spawn(self):
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise EvaluatorError(f"cannot start external evaluator {self.command}: {exc}") from None

    def _fail(self, message, coalition):
        proc, self._proc = self._proc, None
        stderr = ""
        if proc is not None:
            if proc.poll() is None:
                proc.kill()
            try:
                _, stderr = proc.communicate(timeout=5)
            except (subprocess.TimeoutExpired, ValueError, OSError):
                pass
        tail = (stderr or "").strip().splitlines()[-3:]
        if tail:
            message += ": " + " | ".join(tail)
        raise EvaluatorError(message, coalition)

    def request(self, line: str, coalition: int | None = None) -> float:
        if self._proc is None or self._proc.poll() is not None:
            self._spawn()
            self._served = 0
        reply = self._exchange(line, coalition)
        if reply is None and self._served:
            # child answered before and then exited cleanly: start a fresh one
            self._proc = None
            self._spawn()
            self._served = 0
            reply = self._exchange(line, coalition)
        if reply is None:
            self._fail("external evaluator exited without replying", coalition)
        try:
            value = decode_response(reply)
        except EvaluatorError as exc:
            self._fail(str(exc), coalition)
        self._served += 1
        return value

    def _exchange(self, line, coalition):
        """Send one request; ``None`` means the child exited with status 0 unanswered."""
        proc = self._proc
        try:
            proc.stdin.write(line)
            proc.stdin.flush()
        except (BrokenPipeError, OSError):
            code = proc.wait(timeout=self.timeout)
            if code == 0:
                return None
            self._fail(f"external evaluator exit status {code}", coalition)

        deadline = time.monotonic() + self.timeout
        with selectors.DefaultSelector() as sel:
            sel.register(proc.stdout, selectors.EVENT_READ)
            remaining = deadline - time.monotonic()
            if not sel.select(timeout=max(remaining, 0)):
                self._fail(f"external evaluator timed out after {self.timeout:g} s", coalition)
        reply = proc.stdout.readline()
        if reply:
            return reply
        code = proc.wait(timeout=self.timeout)
        if code != 0:
            self._fail(f"external evaluator exit status {code}", coalition)
        return None

    def close(self):
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            proc.stdin.close()
            proc.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            proc.kill()
            proc.wait()
        finally:
            for s in (proc.stdout, proc.stderr):
                if s:
                    s.close()


def external_evaluate(
    command,
    train_X,
    train_y,
    test_X,
    test_y,
    feature_indices: Sequence[int],
    task: str = REGRESSION,
    timeout: float | None = None,
    coalition: int | None = None,
) -> Metric:
    """Single request against a freshly started external evaluator."""
    proc = ExternalProcess(command, timeout)
    try:
        value = proc.request(
            encode_request(task, feature_indices, train_X, train_y, test_X, test_y),
            coalition,
        )
    finally:
        proc.close()
    return Metric(metric_for(task), value)


# -- evaluator --------------------------------------------------------------


@dataclass
class Evaluator:
    """Fit-and-score recipe used by every score-based game.

    ``command`` is only read for the external kind. ``pool_size`` bounds how
    many external child processes may serve requests concurrently.
    """

    kind: str = "ols"
    k: int = 5
    lam: float = 1e-8
    command: Sequence[str] | str | None = None
    seed: int = 0
    timeout: float | None = None
    pool_size: int = 1
    _pool: queue.Queue | None = field(default=None, init=False, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in EVALUATOR_KINDS:
            raise ValueError(f"unknown evaluator kind {self.kind!r}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.kind == "external" and not self.command:
            raise ValueError("external evaluator needs a command")
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")

    def check_task(self, task_kind: str):
        if self.kind == "ols" and task_kind != REGRESSION:
            raise ValueError("the ols evaluator only supports regression")
        if self.kind == "knn_regress" and task_kind != REGRESSION:
            raise ValueError("knn_regress only supports regression")
        if self.kind == "knn_classify" and task_kind != CLASSIFICATION:
            raise ValueError("knn_classify only supports classification")

    def fit(self, train_X, train_y, task_kind: str):
        """Return a ``predict(test_X)`` callable for built-in kinds."""
        train_X = np.asarray(train_X, dtype=float)
        if self.kind == "ols":
            intercept, beta = ols_fit(train_X, train_y, self.lam)
            return lambda X: intercept + np.asarray(X, dtype=float) @ beta
        if self.kind in ("knn_regress", "knn_classify"):
            train_y = np.asarray(train_y)
            return lambda X: knn_predict(train_X, train_y, X, self.k, task_kind)
        raise EvaluatorError("external evaluators cannot be fitted in-process")

    def evaluate(
        self,
        train_X,
        train_y,
        test_X,
        test_y,
        task_kind: str,
        feature_indices: Sequence[int] | None = None,
        labels=None,
        coalition: int | None = None,
    ) -> float:
        if feature_indices is None:
            feature_indices = range(np.shape(train_X)[1])
        if self.kind == "external":
            line = encode_request(task_kind, feature_indices, train_X, train_y, test_X, test_y)
            proc = self._acquire()
            try:
                return proc.request(line, coalition)
            finally:
                self._pool.put(proc)
        try:
            pred = self.fit(train_X, train_y, task_kind)(test_X)
        except EvaluatorError as exc:
            if coalition is None or exc.coalition is not None:
                raise
            raise EvaluatorError(str(exc), coalition) from None
        return score(pred, test_y, metric_for(task_kind), labels).value

    def _acquire(self) -> ExternalProcess:
        with self._lock:
            if self._pool is None:
                self._pool = queue.Queue()
                for _ in range(self.pool_size):
                    self._pool.put(ExternalProcess(self.command, self.timeout))
        return self._pool.get()

    def close(self):
        with self._lock:
            pool, self._pool = self._pool, None
        while pool is not None and not pool.empty():
            pool.get().close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
