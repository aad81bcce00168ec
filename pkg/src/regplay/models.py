"""Dynamics models for the planner: exact simulator and a learned ensemble.

The ground-truth model wraps the gridworld transition function and rolls
whole candidate batches with integer positions.  The learned model is an
ensemble of small tanh feedforward networks (hand-rolled numpy forward,
backward, and Adam passes) that maps

    [positions normalized to [0,1] | one-hot actuated entity | move in {-1,0,1}^2]

to the per-entity position delta in grid-cell units (cell-unit targets
keep the regression signal O(1); normalized targets were two orders of
magnitude smaller than the weight-init output scale and trained far too
slowly).  Members are initialized and trained on independently shuffled
bootstrap resamples, and each carries a fixed randomly initialized prior
network added to its output: training cancels a member's own prior on
covered data but cannot touch it elsewhere, so disagreement (trace of
the population covariance of member predictions, the
epistemic-uncertainty reward term) stays alive on configurations the
buffer has never seen instead of collapsing once the ensemble converges.

Imagined rollouts propagate the member-mean state and record every
member's one-step prediction from it (the ensemble is never
re-discretized onto the grid, so the mean trajectory still drifts off
the lattice: that "hallucination" is intended).  Checkpoints are
a flat binary file (header with layer shapes, float64 little-endian
bodies) plus a JSON sidecar carrying the EnsembleConfig; prior nets and
optimizer moments are not stored, priors regenerate exactly from the
seed and Adam simply restarts.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from regplay import gridworld
from regplay.gridworld import Configuration, GridAction
from regplay.rng import substream

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
_MAGIC = b"RPEN"
_VERSION = 1


@dataclass(frozen=True)
class EnsembleConfig:
    members: int = 3
    hidden: tuple[int, ...] = (64,)
    learning_rate: float = 0.001
    batch_size: int = 256
    epochs: int = 20  # training epochs per free-play iteration
    prior_scale: float = 0.7
    prior_hidden: tuple[int, ...] = (16,)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.members < 2:
            raise ValueError("need at least 2 members for disagreement")
        if not self.hidden or any(w < 1 for w in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("hyperparameters must be positive")
        if self.prior_scale < 0:
            raise ValueError("prior_scale must be non-negative")
        if not self.prior_hidden or any(w < 1 for w in self.prior_hidden):
            raise ValueError("prior widths must be positive")


class ReplayBuffer:
    """Append-only store of (model input, normalized next-state delta)."""

    def __init__(self, input_dim: int, target_dim: int):
        self.input_dim = input_dim
        self.target_dim = target_dim
        self._inputs: list[np.ndarray] = []
        self._targets: list[np.ndarray] = []
        self._size = 0

    def extend(self, inputs: np.ndarray, targets: np.ndarray) -> None:
        inputs = np.asarray(inputs, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if inputs.shape[1:] != (self.input_dim,) or targets.shape[1:] != (self.target_dim,):
            raise ValueError("transition shape mismatch")
        if inputs.shape[0] != targets.shape[0]:
            raise ValueError("inputs and targets must pair up")
        self._inputs.append(inputs)
        self._targets.append(targets)
        self._size += inputs.shape[0]

    def __len__(self) -> int:
        return self._size

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._inputs:
            raise ValueError("nothing to train on")
        if len(self._inputs) > 1:
            self._inputs = [np.concatenate(self._inputs)]
            self._targets = [np.concatenate(self._targets)]
        return self._inputs[0], self._targets[0]


def grid_extent(config: gridworld.GridConfig) -> np.ndarray:
    """Per-axis scale used to normalize cell coordinates into [0,1]."""
    return np.asarray([max(config.width - 1, 1), max(config.height - 1, 1)], dtype=np.float64)


def model_input(
    positions_norm: np.ndarray, actuated: int, move: np.ndarray, n_entities: int
) -> np.ndarray:
    onehot = np.zeros(n_entities)
    onehot[actuated] = 1.0
    return np.concatenate([np.asarray(positions_norm).ravel(), onehot, np.asarray(move, dtype=np.float64)])


def transition_pair(state: Configuration, action_raw: np.ndarray, next_state: Configuration) -> tuple[np.ndarray, np.ndarray]:
    """Build one replay-buffer row from a realized environment transition.

    Inputs carry normalized positions; the regression target is the
    position delta in raw cell units.
    """
    ext = grid_extent(state.config)
    cur = gridworld.positions_array(state)
    nxt = gridworld.positions_array(next_state)
    move = gridworld.threshold_actions(np.asarray(action_raw, dtype=np.float64))
    inp = model_input(cur / ext, state.cursor[0], move, len(state.positions))
    return inp, (nxt - cur).astype(np.float64).ravel()


def _init_layers(dims: list[int], rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
        b = np.zeros(fan_out)
        layers.append((w, b))
    return layers


def member_forward(layers: list[tuple[np.ndarray, np.ndarray]], x: np.ndarray) -> np.ndarray:
    """tanh hidden layers, linear output; x is (B, input_dim)."""
    h = x
    for w, b in layers[:-1]:
        h = np.tanh(h @ w + b)
    w, b = layers[-1]
    return h @ w + b


def member_loss_and_grads(
    layers: list[tuple[np.ndarray, np.ndarray]], x: np.ndarray, y: np.ndarray
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Mean-squared error over the batch and its gradient by backprop."""
    activations = [x]
    h = x
    for w, b in layers[:-1]:
        h = np.tanh(h @ w + b)
        activations.append(h)
    w, b = layers[-1]
    out = h @ w + b
    batch = x.shape[0]
    diff = out - y
    loss = float(np.mean(diff * diff))
    # d loss / d out; mean over batch and output dims
    grad_out = 2.0 * diff / diff.size
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    delta = grad_out
    for li in range(len(layers) - 1, -1, -1):
        a_prev = activations[li]
        gw = a_prev.T @ delta
        gb = delta.sum(axis=0)
        grads.append((gw, gb))
        if li > 0:
            w, _ = layers[li]
            delta = (delta @ w.T) * (1.0 - activations[li] ** 2)
    grads.reverse()
    return loss, grads


class EnsembleModel:
    """M independent feedforward predictors over a fixed gridworld shape."""

    def __init__(self, grid_config: gridworld.GridConfig, config: EnsembleConfig):
        self.grid_config = grid_config
        self.config = config
        self.n = grid_config.num_entities
        self.input_dim = 3 * self.n + 2
        self.output_dim = 2 * self.n
        self.extent = grid_extent(grid_config)
        self.extent_tiled = np.tile(self.extent, self.n)
        dims = [self.input_dim, *config.hidden, self.output_dim]
        self.members: list[list[tuple[np.ndarray, np.ndarray]]] = [
            _init_layers(dims, substream(config.seed, "init", m)) for m in range(config.members)
        ]
        # fixed random prior per member (never trained, regenerated from the
        # seed on load): keeps members apart on states the buffer never covers
        prior_dims = [self.input_dim, *config.prior_hidden, self.output_dim]
        self.priors: list[list[tuple[np.ndarray, np.ndarray]]] = [
            _init_layers(prior_dims, substream(config.seed, "prior", m))
            for m in range(config.members)
        ]
        zeros = lambda member: [(np.zeros_like(w), np.zeros_like(b)) for w, b in member]
        self._adam_m = [zeros(member) for member in self.members]
        self._adam_v = [zeros(member) for member in self.members]
        self._adam_t = [0] * config.members
        self.epochs_trained = 0

    # -- prediction ---------------------------------------------------------

    def member_delta(self, m: int, inputs: np.ndarray) -> np.ndarray:
        """Member m's predicted cell-unit delta: trained net plus fixed prior."""
        delta = member_forward(self.members[m], inputs)
        if self.config.prior_scale > 0.0:
            delta = delta + self.config.prior_scale * member_forward(self.priors[m], inputs)
        return delta

    def predict_next(self, inputs: np.ndarray) -> np.ndarray:
        """(B, input_dim) -> (M, B, 2N) predicted next normalized positions."""
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim == 1:
            inputs = inputs[None, :]
        if inputs.shape[1] != self.input_dim:
            raise ValueError("input length mismatch")
        cur = inputs[:, : self.output_dim]
        # members emit cell-unit deltas; predictions stay normalized
        preds = [cur + self.member_delta(m, inputs) / self.extent_tiled for m in range(self.config.members)]
        return np.stack(preds)

    def rollout_batch(self, state: Configuration, plans: np.ndarray) -> "BatchRollout":
        """Roll raw action plans (P, H, 2) through the ensemble.

        The imagined trajectory propagates the member-mean state; at each
        step every member predicts once from that shared state, so the
        per-step spread is the single-transition disagreement.  (Letting
        each member carry its own state instead compounds per-member bias:
        a plan that sits still feeds a member the same input over and over
        and its bias accumulates linearly, which drowns the
        input-dependent uncertainty signal in self-amplified drift and
        rewards doing nothing.)  Positions are reported in grid-cell
        units; nothing is clipped or re-binned.
        """
        plans = np.asarray(plans, dtype=np.float64)
        nplans, horizon, _ = plans.shape
        moves = gridworld.threshold_actions(plans).astype(np.float64)
        actuated = gridworld.actuated_sequence(state, horizon)
        start = (gridworld.positions_array(state) / self.extent).ravel()
        states = np.broadcast_to(start, (nplans, self.output_dim)).copy()
        eye = np.eye(self.n)
        member_positions = np.empty((self.config.members, nplans, horizon, self.n, 2))
        for h in range(horizon):
            onehot = np.broadcast_to(eye[actuated[h]], (nplans, self.n))
            act = moves[:, h, :]
            inp = np.concatenate([states, onehot, act], axis=1)
            for m in range(self.config.members):
                nxt = states + self.member_delta(m, inp) / self.extent_tiled
                member_positions[m, :, h] = nxt.reshape(nplans, self.n, 2) * self.extent
            states = member_positions[:, :, h].reshape(
                self.config.members, nplans, self.output_dim
            ).mean(axis=0) / self.extent_tiled
        return BatchRollout(
            positions=member_positions.mean(axis=0),
            member_positions=member_positions,
            colors=gridworld.color_bit_array(state),
            frozen=np.asarray(state.frozen, dtype=bool),
        )

    # -- training -----------------------------------------------------------

    def _adam_step(self, m: int, grads: list[tuple[np.ndarray, np.ndarray]]) -> None:
        lr = self.config.learning_rate
        self._adam_t[m] += 1
        t = self._adam_t[m]
        bias1 = 1.0 - ADAM_BETA1**t
        bias2 = 1.0 - ADAM_BETA2**t
        member = self.members[m]
        for li, ((w, b), (gw, gb)) in enumerate(zip(member, grads)):
            mw, mb = self._adam_m[m][li]
            vw, vb = self._adam_v[m][li]
            mw = ADAM_BETA1 * mw + (1.0 - ADAM_BETA1) * gw
            mb = ADAM_BETA1 * mb + (1.0 - ADAM_BETA1) * gb
            vw = ADAM_BETA2 * vw + (1.0 - ADAM_BETA2) * gw * gw
            vb = ADAM_BETA2 * vb + (1.0 - ADAM_BETA2) * gb * gb
            self._adam_m[m][li] = (mw, mb)
            self._adam_v[m][li] = (vw, vb)
            member[li] = (
                w - lr * (mw / bias1) / (np.sqrt(vw / bias2) + ADAM_EPS),
                b - lr * (mb / bias1) / (np.sqrt(vb / bias2) + ADAM_EPS),
            )

    def train_epoch(self, buffer: ReplayBuffer) -> list[float]:
        """One Adam epoch per member on its own bootstrap resample; mean losses.

        Only the trainable net gets gradients: it is fit to the residual
        target y - prior(x), so the reported loss is still the full
        prediction's squared error.
        """
        if len(buffer) == 0:
            raise ValueError("nothing to train on")
        x, y = buffer.arrays()
        size = x.shape[0]
        losses = []
        for m, member in enumerate(self.members):
            if self.config.prior_scale > 0.0:
                y_fit = y - self.config.prior_scale * member_forward(self.priors[m], x)
            else:
                y_fit = y
            rng = substream(self.config.seed, "shuffle", m, self.epochs_trained)
            order = rng.integers(0, size, size=size)  # bootstrap resample
            epoch_loss = 0.0
            batches = 0
            for lo in range(0, size, self.config.batch_size):
                idx = order[lo : lo + self.config.batch_size]
                loss, grads = member_loss_and_grads(member, x[idx], y_fit[idx])
                self._adam_step(m, grads)
                epoch_loss += loss
                batches += 1
            losses.append(epoch_loss / batches)
        self.epochs_trained += 1
        return losses

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        dims = [self.input_dim, *self.config.hidden, self.output_dim]
        blob = bytearray()
        blob += _MAGIC
        blob += struct.pack("<III", _VERSION, self.config.members, len(dims) - 1)
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            blob += struct.pack("<II", fan_in, fan_out)
        for member in self.members:
            for w, b in member:
                blob += w.astype("<f8").tobytes(order="C")
                blob += b.astype("<f8").tobytes(order="C")
        path.write_bytes(bytes(blob))
        sidecar = {
            "config": asdict(self.config),
            "grid": asdict(self.grid_config),
            "epochs_trained": self.epochs_trained,
        }
        Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "EnsembleModel":
        path = Path(path)
        sidecar = json.loads(Path(str(path) + ".json").read_text())
        grid_cfg = sidecar["grid"]
        grid_cfg["frozen"] = tuple(grid_cfg["frozen"])
        ens_cfg = sidecar["config"]
        ens_cfg["hidden"] = tuple(ens_cfg["hidden"])
        ens_cfg["prior_hidden"] = tuple(ens_cfg["prior_hidden"])
        model = cls(gridworld.GridConfig(**grid_cfg), EnsembleConfig(**ens_cfg))
        blob = path.read_bytes()
        if blob[:4] != _MAGIC:
            raise ValueError("not an ensemble checkpoint")
        version, members, nlayers = struct.unpack_from("<III", blob, 4)
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        off = 16
        shapes = []
        for _ in range(nlayers):
            fan_in, fan_out = struct.unpack_from("<II", blob, off)
            shapes.append((fan_in, fan_out))
            off += 8
        for m in range(members):
            layers = []
            for fan_in, fan_out in shapes:
                w = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=off).reshape(
                    fan_in, fan_out
                ).copy()
                off += 8 * fan_in * fan_out
                b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=off).copy()
                off += 8 * fan_out
                layers.append((w, b))
            model.members[m] = layers
        model.epochs_trained = sidecar["epochs_trained"]
        return model


def disagreement(predictions: np.ndarray) -> float:
    """Trace of the population covariance of M prediction vectors."""
    preds = np.asarray(predictions, dtype=np.float64)
    if preds.ndim != 2 or preds.shape[0] < 2:
        raise ValueError("need at least 2 member predictions")
    centered = preds - preds.mean(axis=0)
    return float(np.mean(np.sum(centered * centered, axis=1)))


def disagreement_batch(member_positions: np.ndarray) -> np.ndarray:
    """(M, ..., N, 2) member predictions -> (...) covariance traces."""
    centered = member_positions - member_positions.mean(axis=0)
    return np.mean(np.sum(centered * centered, axis=(-2, -1)), axis=0)


@dataclass
class BatchRollout:
    """Imagined trajectories for a batch of plans, in grid-cell units.

    positions: (P, H, N, 2) representative (ground-truth or member-mean);
    member_positions: (M, P, H, N, 2) or None for exact models.
    """

    positions: np.ndarray
    member_positions: np.ndarray | None
    colors: np.ndarray | None
    frozen: np.ndarray


class GroundTruthModel:
    """The real simulator exposed through the planner's model interface."""

    def __init__(self, grid_config: gridworld.GridConfig):
        self.grid_config = grid_config

    def predict(self, state: Configuration, action: GridAction) -> Configuration:
        return gridworld.step(state, action)

    def rollout_batch(self, state: Configuration, plans: np.ndarray) -> BatchRollout:
        moves = gridworld.threshold_actions(np.asarray(plans, dtype=np.float64))
        positions = gridworld.roll_positions(state, moves).astype(np.float64)
        return BatchRollout(
            positions=positions,
            member_positions=None,
            colors=gridworld.color_bit_array(state),
            frozen=np.asarray(state.frozen, dtype=bool),
        )


def gt_predict(state: Configuration, action: GridAction | Sequence[float]) -> Configuration:
    """Exact next state: delegates to the simulator's transition."""
    return gridworld.step(state, action)
