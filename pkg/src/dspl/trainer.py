"""Self-paced gradient descent over triplet batches.

One iteration:

  1. sample a triplet batch and embed every distinct sample once;
  2. solve each triplet's weight u from its hinge loss R in closed form
     (modes without self-pacing force u = 1);
  3. accumulate the per-triplet gradients u*dR + zeta*dS, walking triplets
     in ascending index order, then push the per-sample embedding
     gradients through the network backward pass (ascending sample id);
  4. add the parameter-regularizer gradient 2*xi*Omega and take a plain
     SGD step Omega <- Omega - tau * grad;
  5. divide the model age by the age rate (modes without self-pacing keep
     the age frozen).

All accumulation orders are fixed, so a (config, seed) pair reproduces
bit-identical parameters and records. Non-finite losses or gradients
abort with a DivergenceError naming the triplet; divergence is surfaced,
never clipped.

Ablation modes:

    baseline   u = 1, zeta = 0, age frozen
    spl_only   solved u, zeta = 0, age updates
    sym_only   u = 1, zeta as configured, age frozen
    dspl       solved u, zeta as configured, age updates
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, TripletBatch, sample_triplets
from .errors import ConfigError, DivergenceError
from .losses import LossParams, relative_term, symmetric_term, triplet_grad
from .net import NetworkModel, backward, forward
from .spl import SplState, solve_weight, update_age

MODES = ("baseline", "spl_only", "sym_only", "dspl")


@dataclass(frozen=True)
class ModeFlags:
    solve_weights: bool
    symmetric: bool
    age_updates: bool


_MODE_FLAGS = {
    "baseline": ModeFlags(False, False, False),
    "spl_only": ModeFlags(True, False, True),
    "sym_only": ModeFlags(False, True, False),
    "dspl": ModeFlags(True, True, True),
}


def mode_flags(mode: str) -> ModeFlags:
    if mode not in _MODE_FLAGS:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    return _MODE_FLAGS[mode]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    max_iterations: int = 500
    loss: LossParams = field(default_factory=LossParams)
    spl: SplState = field(default_factory=SplState)
    anchors_per_batch: int = 5
    triplets_per_anchor: int = 200
    mode: str = "dspl"
    grad_mode: str = "exact"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.max_iterations < 0:
            raise ConfigError(f"max_iterations must be >= 0, got {self.max_iterations}")
        mode_flags(self.mode)


@dataclass(frozen=True)
class TrainRecord:
    """Per-iteration diagnostics; `age` is the model age after this
    iteration's pace update (frozen modes keep it constant)."""

    iteration: int
    age: float
    mean_loss: float
    frac_active: float
    mean_weight_clean: float | None
    mean_weight_outlier: float | None
    mean_abs_dev: float

    def to_json_dict(self) -> dict:
        return {
            "h": self.iteration,
            "lambda": self.age,
            "mean_loss": self.mean_loss,
            "frac_active": self.frac_active,
            "mean_weight_clean": self.mean_weight_clean,
            "mean_weight_outlier": self.mean_weight_outlier,
            "mean_abs_D": self.mean_abs_dev,
        }


def _mean(values) -> float | None:
    return float(np.mean(values)) if len(values) else None


def train_step(
    model: NetworkModel,
    batch: TripletBatch,
    cfg: TrainConfig,
    state: SplState,
    samples: dict,
    iteration: int = 1,
) -> tuple[NetworkModel, TrainRecord]:
    """One weighted SGD step over a batch; returns the updated model.

    `samples` maps sample_id -> Sample for every id referenced by the
    batch. The returned record reports the age *after* the (possibly
    frozen) pace update; callers running their own loop must still apply
    update_age themselves.
    """
    flags = mode_flags(cfg.mode)
    zeta = cfg.loss.symmetric_weight if flags.symmetric else 0.0
    eff_loss = replace(cfg.loss, symmetric_weight=zeta)

    distinct = sorted({*batch.anchor_ids, *batch.positive_ids, *batch.negative_ids})
    embeddings: dict[int, np.ndarray] = {}
    tapes: dict[int, object] = {}
    for sid in distinct:
        emb, tape = forward(model, samples[sid].payload)
        embeddings[sid] = emb.reshape(-1)
        tapes[sid] = tape

    emb_grads = {sid: np.zeros_like(embeddings[sid]) for sid in distinct}
    u_out = np.ones(len(batch), dtype=np.float64)
    losses = np.empty(len(batch))
    devs = np.empty(len(batch))
    active = np.zeros(len(batch), dtype=bool)
    outlier_triplet = np.zeros(len(batch), dtype=bool)

    for i in range(len(batch)):
        a_id = int(batch.anchor_ids[i])
        p_id = int(batch.positive_ids[i])
        n_id = int(batch.negative_ids[i])
        f_a, f_p, f_n = embeddings[a_id], embeddings[p_id], embeddings[n_id]

        r, is_active = relative_term(f_a, f_p, f_n, cfg.loss.margin)
        s, dev, z, _ = symmetric_term(f_a, f_p, f_n, cfg.loss.sharpness)
        if not (math.isfinite(r) and math.isfinite(s)):
            raise DivergenceError(
                f"non-finite loss at iteration {iteration}, triplet {i}",
                iteration=iteration,
                triplet_index=i,
            )
        u = solve_weight(r, state) if flags.solve_weights else 1.0

        grad = triplet_grad(f_a, f_p, f_n, eff_loss, u, cfg.grad_mode)
        if not (
            np.isfinite(grad.g_a).all()
            and np.isfinite(grad.g_p).all()
            and np.isfinite(grad.g_n).all()
        ):
            raise DivergenceError(
                f"non-finite gradient at iteration {iteration}, triplet {i}",
                iteration=iteration,
                triplet_index=i,
            )
        emb_grads[a_id] += grad.g_a
        emb_grads[p_id] += grad.g_p
        emb_grads[n_id] += grad.g_n

        u_out[i] = u
        losses[i] = u * r + zeta * s
        devs[i] = z
        active[i] = is_active
        outlier_triplet[i] = (
            samples[a_id].is_outlier or samples[p_id].is_outlier or samples[n_id].is_outlier
        )

    grad_params: dict[str, dict[str, np.ndarray]] = {}
    for sid in distinct:
        gp, _ = backward(model, tapes[sid], emb_grads[sid].reshape(tapes[sid].embedding.shape))
        for name, parts in gp.items():
            slot = grad_params.setdefault(name, {})
            for key, g in parts.items():
                slot[key] = slot[key] + g if key in slot else g

    xi = cfg.loss.parameter_weight
    tau = cfg.learning_rate
    new_params: dict[str, dict[str, np.ndarray]] = {}
    for name, parts in model.params.items():
        new_params[name] = {}
        for key, value in parts.items():
            g = grad_params.get(name, {}).get(key, 0.0) + 2.0 * xi * value
            new_params[name][key] = value - tau * g

    new_state = update_age(state) if flags.age_updates else state
    record = TrainRecord(
        iteration=iteration,
        age=new_state.age,
        mean_loss=float(losses.mean()),
        frac_active=float(active.mean()),
        mean_weight_clean=_mean(u_out[~outlier_triplet]),
        mean_weight_outlier=_mean(u_out[outlier_triplet]),
        mean_abs_dev=float(devs.mean()),
    )
    return model.with_params(new_params), record


def train(
    model: NetworkModel, train_data: Dataset, cfg: TrainConfig
) -> tuple[NetworkModel, list[TrainRecord]]:
    """Run cfg.max_iterations batches of self-paced descent."""
    state = cfg.spl
    flags = mode_flags(cfg.mode)
    records: list[TrainRecord] = []
    by_id = train_data.by_id
    for h in range(1, cfg.max_iterations + 1):
        batch = sample_triplets(
            train_data, cfg.anchors_per_batch, cfg.triplets_per_anchor, cfg.seed, h
        )
        model, record = train_step(model, batch, cfg, state, by_id, iteration=h)
        if flags.age_updates:
            state = update_age(state)
        records.append(record)
    return model, records
