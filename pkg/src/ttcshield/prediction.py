"""Learned one-step dynamics: replay memories, featurization, linear and
3-layer tanh predictors, closed-form ridge fitting, and plain backprop.

A predictor maps the last five observed rows of an agent (plus executed
controls and a candidate command for the ego) to the next row. Positions
enter as offsets from the newest row and are predicted as deltas, so a
trained model is indifferent to where on the road the window sits.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .vehicle import ControlCommand

WINDOW = 5          # history rows per window
ROW_DIM = 6         # x, y, vx, vy, ax, ay
CONTROL_DIM = 3     # throttle, steering, brake
HDV_INPUT_DIM = WINDOW * ROW_DIM                                # 30
CAV_INPUT_DIM = WINDOW * (ROW_DIM + CONTROL_DIM) + CONTROL_DIM  # 48

CHECKPOINT_FORMAT = "ttcshield-predictor-v1"


@dataclass(frozen=True)
class StateRow:
    """One observed row: planar position, velocity and acceleration."""

    x: float
    y: float
    vx: float
    vy: float
    ax: float
    ay: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.ax, self.ay])

    @classmethod
    def from_array(cls, arr) -> "StateRow":
        return cls(*(float(v) for v in arr))


def command_to_array(cmd: ControlCommand) -> np.ndarray:
    return np.array([cmd.throttle, cmd.steering, cmd.brake])


@dataclass(frozen=True)
class HistoryWindow:
    """The last WINDOW rows of one agent, oldest first.

    Ego windows additionally carry the control row aligned with each state
    row: the command whose execution produced that row (zeros for rows that
    predate the episode).
    """

    rows: np.ndarray                      # (WINDOW, ROW_DIM)
    controls: Optional[np.ndarray] = None  # (WINDOW, CONTROL_DIM) for the ego

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.shape != (WINDOW, ROW_DIM):
            raise ValueError(f"window rows must be {(WINDOW, ROW_DIM)}, got {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("window rows contain non-finite values")
        object.__setattr__(self, "rows", rows)
        if self.controls is not None:
            controls = np.asarray(self.controls, dtype=float)
            if controls.shape != (WINDOW, CONTROL_DIM):
                raise ValueError(
                    f"window controls must be {(WINDOW, CONTROL_DIM)}, got {controls.shape}"
                )
            object.__setattr__(self, "controls", controls)


@dataclass(frozen=True)
class TransitionHDV:
    window: HistoryWindow
    next: StateRow


@dataclass(frozen=True)
class TransitionCAV:
    window: HistoryWindow
    applied_action_command: ControlCommand
    next: StateRow


class ReplayMemory:
    """Bounded FIFO of transitions; eviction is strictly oldest-first."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be > 0")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def push(self, transition) -> None:
        self._items.append(transition)

    def extend(self, transitions) -> None:
        for t in transitions:
            self.push(t)

    def sample(self, b: int, rng: np.random.Generator):
        """b transitions drawn uniformly without replacement."""
        if b > len(self._items):
            raise ValueError(f"cannot sample {b} from memory of size {len(self._items)}")
        idx = rng.choice(len(self._items), size=b, replace=False)
        items = list(self._items)
        return [items[i] for i in idx]


def featurize_hdv(window: HistoryWindow) -> np.ndarray:
    """Row-major flattening, oldest row first, positions relative to the last row."""
    rows = window.rows.copy()
    rows[:, 0] -= rows[-1, 0]
    rows[:, 1] -= rows[-1, 1]
    return rows.reshape(-1)


def featurize_cav(window: HistoryWindow, candidate) -> np.ndarray:
    """HDV-style state features, then the five control rows, then the candidate."""
    if window.controls is None:
        raise ValueError("ego featurization needs a window with control rows")
    if isinstance(candidate, ControlCommand):
        candidate = command_to_array(candidate)
    candidate = np.asarray(candidate, dtype=float)
    if candidate.shape != (CONTROL_DIM,):
        raise ValueError(f"candidate command must have shape ({CONTROL_DIM},)")
    return np.concatenate(
        [featurize_hdv(window), window.controls.reshape(-1), candidate]
    )


def transition_target(window: HistoryWindow, next_row: StateRow) -> np.ndarray:
    """Training target: position delta from the window's last row, rest absolute."""
    target = next_row.as_array()
    target[0] -= window.rows[-1, 0]
    target[1] -= window.rows[-1, 1]
    return target


@dataclass(frozen=True)
class Predictor:
    """Affine stack with tanh between layers; 'linear' is the single-layer case.

    Inputs are z-scored with the stored per-feature mean/scale; outputs are
    raw next-row targets (position deltas, absolute velocity/acceleration).
    """

    kind: str                 # "linear" or "mlp3"
    input_dim: int
    weights: tuple            # of (out, in) arrays
    biases: tuple             # of (out,) arrays
    mu: np.ndarray            # (input_dim,)
    scale: np.ndarray         # (input_dim,), strictly positive
    trained: bool = False
    output_dim: int = ROW_DIM

    def __post_init__(self):
        if self.kind not in ("linear", "mlp3"):
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        expected_layers = 1 if self.kind == "linear" else 3
        if len(self.weights) != expected_layers or len(self.biases) != expected_layers:
            raise ValueError(f"{self.kind} predictor needs {expected_layers} layers")
        dim = self.input_dim
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != dim or b.shape != (w.shape[0],):
                raise ValueError(f"inconsistent layer shapes: {w.shape} after dim {dim}")
            dim = w.shape[0]
        if dim != self.output_dim:
            raise ValueError(f"final layer emits {dim}, expected {self.output_dim}")
        if self.mu.shape != (self.input_dim,) or self.scale.shape != (self.input_dim,):
            raise ValueError("normalization vectors must match input_dim")
        if not np.all(self.scale > 0.0):
            raise ValueError("normalization scales must be > 0")

    def forward(self, features: np.ndarray) -> np.ndarray:
        """Batched forward pass; features is (b, input_dim)."""
        act = (features - self.mu) / self.scale
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            act = act @ w.T + b
            if i < last:
                act = np.tanh(act)
        return act

    def predict_row(self, rows, controls=None, command=None) -> np.ndarray:
        """Absolute next row for one agent window (arrays in, array out)."""
        if self.input_dim == CAV_INPUT_DIM:
            window = HistoryWindow(rows, controls)
            features = featurize_cav(window, command)
        else:
            features = featurize_hdv(HistoryWindow(rows))
        delta = self.forward(features[None, :])[0]
        out = delta.copy()
        out[0] += rows[-1][0]
        out[1] += rows[-1][1]
        return out


def predict(model: Predictor, features) -> StateRow:
    """Predicted next row in delta form (x, y are offsets from the last row)."""
    features = np.asarray(features, dtype=float)
    if features.shape != (model.input_dim,):
        raise ValueError(
            f"feature length {features.shape} does not match input_dim {model.input_dim}"
        )
    return StateRow.from_array(model.forward(features[None, :])[0])


def _as_row_matrix(batch) -> np.ndarray:
    rows = [r.as_array() if isinstance(r, StateRow) else np.asarray(r, float) for r in batch]
    out = np.stack(rows) if rows else np.empty((0, ROW_DIM))
    if out.ndim != 2 or out.shape[1] != ROW_DIM:
        raise ValueError(f"expected rows of width {ROW_DIM}, got shape {out.shape}")
    return out


def mse_loss(predictions, truths) -> float:
    """Mean over the batch of the squared 6-component error norm."""
    pred = _as_row_matrix(predictions)
    true = _as_row_matrix(truths)
    if pred.shape != true.shape:
        raise ValueError(f"batch shapes differ: {pred.shape} vs {true.shape}")
    if pred.shape[0] == 0:
        raise ValueError("empty batch")
    return float(np.mean(np.sum((pred - true) ** 2, axis=1)))


def memory_matrices(memory) -> tuple:
    """Stack a replay memory into (features X, targets Y) matrices."""
    feats, targets = [], []
    for tr in memory:
        if isinstance(tr, TransitionCAV):
            feats.append(featurize_cav(tr.window, tr.applied_action_command))
        elif isinstance(tr, TransitionHDV):
            feats.append(featurize_hdv(tr.window))
        else:
            raise TypeError(f"unexpected transition type {type(tr)!r}")
        targets.append(transition_target(tr.window, tr.next))
    if not feats:
        raise ValueError("empty replay memory")
    return np.stack(feats), np.stack(targets)


def normalization_from(features: np.ndarray) -> tuple:
    mu = features.mean(axis=0)
    sigma = features.std(axis=0)
    scale = np.where(sigma < 1e-12, 1.0, sigma)
    return mu, scale


def fit_linear_matrices(
    features: np.ndarray, targets: np.ndarray, regularization: float = 1e-6
) -> Predictor:
    """Ridge least-squares affine map over stacked (features, targets) matrices.

    Bias is left unpenalized (centered solve), so regularization -> inf
    shrinks the weights to zero and the prediction to the target mean.
    Raises on fewer samples than features, or on an exactly singular
    normal matrix when regularization is zero.
    """
    n, d = features.shape
    if n < d:
        raise ValueError(f"need at least {d} samples to fit, have {n}")
    mu, scale = normalization_from(features)
    z = (features - mu) / scale
    z_mean = z.mean(axis=0)
    y_mean = targets.mean(axis=0)
    zc = z - z_mean
    yc = targets - y_mean
    gram = zc.T @ zc / n + regularization * np.eye(d)
    try:
        wt = np.linalg.solve(gram, zc.T @ yc / n)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular normal matrix; use a positive regularization") from exc
    w = wt.T
    b = y_mean - w @ z_mean
    return Predictor(
        kind="linear",
        input_dim=d,
        weights=(w,),
        biases=(b,),
        mu=mu,
        scale=scale,
        trained=True,
    )


def fit_linear_closed_form(memory, regularization: float = 1e-6) -> Predictor:
    """Ridge least-squares fit over a whole replay memory; see fit_linear_matrices."""
    features, targets = memory_matrices(memory)
    return fit_linear_matrices(features, targets, regularization)


def init_predictor(
    kind: str, input_dim: int, rng: np.random.Generator, hidden: tuple = (64, 64)
) -> Predictor:
    """Fresh untrained predictor; MLP weights are scaled-normal, biases zero."""
    dims = [input_dim, ROW_DIM] if kind == "linear" else [input_dim, *hidden, ROW_DIM]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return Predictor(
        kind=kind,
        input_dim=input_dim,
        weights=tuple(weights),
        biases=tuple(biases),
        mu=np.zeros(input_dim),
        scale=np.ones(input_dim),
    )


def backprop_gradients(model: Predictor, features: np.ndarray, targets: np.ndarray):
    """Loss and parameter gradients of the batch MSE, by reverse accumulation."""
    b = features.shape[0]
    z = (features - model.mu) / model.scale
    activations = [z]
    act = z
    last = len(model.weights) - 1
    for i, (w, bias) in enumerate(zip(model.weights, model.biases)):
        act = act @ w.T + bias
        if i < last:
            act = np.tanh(act)
        activations.append(act)
    pred = activations[-1]
    loss = float(np.mean(np.sum((pred - targets) ** 2, axis=1)))

    grad = 2.0 * (pred - targets) / b
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for i in range(last, -1, -1):
        grads_w[i] = grad.T @ activations[i]
        grads_b[i] = grad.sum(axis=0)
        if i > 0:
            grad = (grad @ model.weights[i]) * (1.0 - activations[i] ** 2)
    return loss, grads_w, grads_b


def train_step(model: Predictor, batch: tuple, learning_rate: float):
    """One full-gradient descent step on the batch; returns (model, pre-step loss)."""
    features, targets = batch
    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if features.ndim != 2 or features.shape[1] != model.input_dim:
        raise ValueError(f"features must be (b, {model.input_dim})")
    if targets.shape != (features.shape[0], model.output_dim):
        raise ValueError("targets must match batch size and output_dim")
    if features.shape[0] == 0:
        raise ValueError("empty batch")
    if learning_rate < 0.0:
        raise ValueError("learning_rate must be >= 0")
    loss, grads_w, grads_b = backprop_gradients(model, features, targets)
    new_weights = tuple(w - learning_rate * g for w, g in zip(model.weights, grads_w))
    new_biases = tuple(b - learning_rate * g for b, g in zip(model.biases, grads_b))
    return replace(model, weights=new_weights, biases=new_biases, trained=True), loss


# --- checkpoints ----------------------------------------------------------------


def save_checkpoint(model: Predictor, path) -> None:
    """JSON checkpoint; float values round-trip bit-exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "kind": model.kind,
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "trained": model.trained,
        "mu": model.mu.tolist(),
        "scale": model.scale.tolist(),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> Predictor:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(
            f"checkpoint format {doc.get('format')!r} does not match {CHECKPOINT_FORMAT!r}"
        )
    return Predictor(
        kind=doc["kind"],
        input_dim=int(doc["input_dim"]),
        output_dim=int(doc["output_dim"]),
        trained=bool(doc["trained"]),
        mu=np.asarray(doc["mu"], dtype=float),
        scale=np.asarray(doc["scale"], dtype=float),
        weights=tuple(np.asarray(w, dtype=float) for w in doc["weights"]),
        biases=tuple(np.asarray(b, dtype=float) for b in doc["biases"]),
    )
