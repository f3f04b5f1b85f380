"""Three-stage training: joint pretraining, cluster initialization, and
end-to-end refinement with self-paced filtering and per-epoch reassignment.

Stage 1 minimizes reconstruction + KL + survival loss. Stage 2 clusters the
eval-mode latent codes and freezes the resulting centers. Stage 3 optimizes
the self-paced curriculum loss plus contrastive and survival terms, pulling
latents toward the frozen centers while cluster assignments are refreshed
from the full training set after every epoch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import clustering, losses
from .config import ExperimentConfig
from .errors import NumericError, UsageError
from .metrics import TimeGrid, build_time_grid, concordance_index, expected_event_time
from .networks import Model, ModelConfig
from .tensor import Adam, Tensor

LOG_COLUMNS = (
    "epoch", "stage", "loss_total", "loss_rec", "loss_kld", "loss_clus",
    "loss_spl", "loss_cl", "loss_surv", "lambda_spl", "admitted_frac",
    "val_c_index",
)


@dataclass
class TrainData:
    """Preprocessed arrays plus the time grid fitted on the training rows."""

    X: np.ndarray
    t: np.ndarray
    e: np.ndarray
    grid: TimeGrid
    bins: np.ndarray
    X_val: np.ndarray | None = None
    t_val: np.ndarray | None = None
    e_val: np.ndarray | None = None
    val_bins: np.ndarray | None = None


@dataclass
class TrainState:
    """Everything produced by training, enough to checkpoint and predict."""

    model: Model
    optimizer: Adam
    config: ExperimentConfig
    grid: TimeGrid
    cluster_models: list = field(default_factory=list)
    assignments: list = field(default_factory=list)
    logs: list = field(default_factory=list)
    stage: int = 0
    train_times: np.ndarray | None = None
    train_events: np.ndarray | None = None


def prepare_training_data(X, t, e, n_bins, X_val=None, t_val=None, e_val=None) -> TrainData:
    X = np.asarray(X, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).ravel()
    e = np.asarray(e, dtype=np.int64).ravel()
    grid = build_time_grid(t, e, n_bins)
    data = TrainData(X=X, t=t, e=e, grid=grid, bins=grid.bin_of(t))
    if X_val is not None:
        data.X_val = np.asarray(X_val, dtype=np.float64)
        data.t_val = np.asarray(t_val, dtype=np.float64).ravel()
        data.e_val = np.asarray(e_val, dtype=np.int64).ravel()
        data.val_bins = grid.bin_of(data.t_val)
    return data


def spl_threshold(per_instance, epoch: int, max_epochs: int) -> float:
    """Adaptive admission threshold: mean + (e / E_max) * population std."""
    vals = np.asarray(per_instance, dtype=np.float64).ravel()
    if vals.size == 0:
        raise UsageError("cannot compute a threshold over zero losses")
    if max_epochs < 1:
        raise UsageError("max_epochs must be >= 1")
    return float(vals.mean() + (epoch / max_epochs) * vals.std())


def spl_filter(per_instance, threshold: float):
    """Admission mask and the mean loss over the admitted set.

    The admitted set is never empty: the minimum is always <= the mean, and
    the threshold is never below the mean.
    """
    vals = np.asarray(per_instance, dtype=np.float64).ravel()
    mask = vals <= threshold
    if not mask.any():
        mask = vals <= vals.min()
    return mask, float(vals[mask].mean())


def _training_rng(seed: int) -> np.random.Generator:
    # spawn_key distinct from the model's own children of the same entropy
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1 << 20,)))


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _model_config(config: ExperimentConfig, input_dim: int) -> ModelConfig:
    return ModelConfig(
        input_dim=input_dim,
        latent_dim=config.latent_dim,
        n_bins=config.n_bins,
        variational=config.variational,
        siamese=config.siamese,
        head_mode="ensemble" if config.heads == "per-cluster" else "shared",
        n_clusters=config.n_clusters,
        encoder_hidden=tuple(config.encoder_hidden),
        head_hidden=tuple(config.head_hidden),
        seed=config.seed,
    )


def _encode_views(model: Model, x: Tensor, train: bool, rng):
    outs = [model.encode(x, view=1, train=train, rng=rng)]
    if model.config.siamese:
        outs.append(model.encode(x, view=2, train=train, rng=rng))
    return outs


def _scalar(t: Tensor) -> float:
    return float(t.values[0, 0])


def _rec_and_kld(model: Model, x: Tensor, outs):
    rec_parts, rec_inst_parts = [], []
    kld_parts, kld_inst_parts = [], []
    for v, out in enumerate(outs):
        x_hat = model.decode(out.z, view=v + 1)
        rec, rec_i = losses.loss_rec(x, x_hat)
        rec_parts.append(rec)
        rec_inst_parts.append(rec_i)
        if model.config.variational:
            kld, kld_i = losses.loss_kld(out.mu, out.log_var)
            kld_parts.append(kld)
            kld_inst_parts.append(kld_i)
    rec = losses.average_views(rec_parts)
    rec_i = losses.average_views(rec_inst_parts)
    if kld_parts:
        return rec, rec_i, losses.average_views(kld_parts), losses.average_views(kld_inst_parts)
    return rec, rec_i, None, None


def _pretrain_survival(model: Model, h: Tensor, bins, events, weights):
    """Pretraining survival loss; ensemble mode trains every head on the batch."""
    from .networks import SurvivalDistribution
    from .tensor import softmax_rows

    parts = []
    for head in model.heads:
        probs = softmax_rows(head(h))
        survival = Tensor(np.ones((1, 1))) - probs @ model._cum
        dist = SurvivalDistribution(probs=probs, survival=survival)
        nll = losses.loss_nll(dist, bins, events)
        rank = losses.loss_rank(dist, bins, events, weights.sigma_rank)
        parts.append(losses.combine_surv(weights, nll, rank))
    return losses.average_views(parts)


def pretrain(data: TrainData, config: ExperimentConfig) -> TrainState:
    """Stage 1: minimize rec + KL + survival for pretrain_epochs epochs."""
    config.validate()
    model = Model(_model_config(config, data.X.shape[1]))
    optimizer = Adam([t for _, t in model.parameters()], lr=config.learning_rate)
    state = TrainState(
        model=model, optimizer=optimizer, config=config, grid=data.grid,
        train_times=data.t.copy(), train_events=data.e.copy(),
    )
    rng = _training_rng(config.seed)
    w = config.weights
    n = data.X.shape[0]
    for epoch in range(1, config.pretrain_epochs + 1):
        sums = {"loss_rec": 0.0, "loss_kld": 0.0, "loss_surv": 0.0, "loss_total": 0.0}
        n_batches = 0
        for idx in _batches(n, config.batch_size, rng):
            try:
                x = Tensor(data.X[idx])
                outs = _encode_views(model, x, train=True, rng=rng)
                rec, _, kld, _ = _rec_and_kld(model, x, outs)
                h = model.survival_input(x, outs)
                surv = _pretrain_survival(model, h, data.bins[idx], data.e[idx], w)
                total = rec * w.alpha_rec + surv * w.alpha_surv
                if kld is not None:
                    total = total + kld * w.alpha_kld
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
            except NumericError as exc:
                raise NumericError(f"pretraining aborted at epoch {epoch}: {exc}")
            sums["loss_rec"] += _scalar(rec)
            sums["loss_kld"] += _scalar(kld) if kld is not None else 0.0
            sums["loss_surv"] += _scalar(surv)
            sums["loss_total"] += _scalar(total)
            n_batches += 1
        row = {c: "" for c in LOG_COLUMNS}
        row.update(epoch=epoch, stage=1)
        row.update({k: v / n_batches for k, v in sums.items()})
        state.logs.append(row)
    state.stage = 1
    return state


def init_clusters(state: TrainState, data: TrainData, algorithm: str | None = None,
                  n_clusters: int | None = None, seed: int | None = None) -> TrainState:
    """Stage 2: cluster eval-mode latents per view and freeze the centers."""
    if state.stage < 1:
        raise UsageError("init_clusters requires a pretrained state")
    config = state.config
    algorithm = algorithm or config.clustering
    n_clusters = n_clusters or config.n_clusters
    seed = config.seed if seed is None else seed
    state.cluster_models = []
    state.assignments = []
    n_views = 2 if config.siamese else 1
    for view in range(1, n_views + 1):
        latents = state.model.latents(data.X, view=view)
        cm = clustering.fit(latents, algorithm, n_clusters, seed=seed, nu=config.nu)
        state.cluster_models.append(cm)
        state.assignments.append(cm.assignments.copy())
    state.stage = 2
    return state


def _contrastive_loss(model, outs, events, batch_assignments, centers, config):
    w = config.weights
    l_ivcg = None
    if w.alpha_ivcg:
        parts = [
            losses.loss_ivcg(out.z, events, batch_assignments[v], w.tau)
            for v, out in enumerate(outs)
        ]
        l_ivcg = parts[0]
        for p in parts[1:]:
            l_ivcg = l_ivcg + p
    l_iviw = None
    l_ivcw = None
    if len(outs) == 2:
        if w.alpha_iviw:
            l_iviw = losses.loss_iviw(outs[0].z, outs[1].z, w.tau)
        if w.alpha_ivcw:
            q1 = losses.soft_assign_tensor(outs[0].z, centers[0], config.nu)
            q2 = losses.soft_assign_tensor(outs[1].z, centers[1], config.nu)
            l_ivcw = losses.loss_ivcw(q1, q2, w.tau)
    return losses.combine_cl(w, config.siamese, l_ivcg, l_iviw, l_ivcw)


def _dataset_spl_threshold(state, data, epoch, max_epochs):
    """Full-dataset eval-mode per-instance loss statistics, for spl_scope=dataset."""
    model = state.model
    x = Tensor(data.X)
    outs = _encode_views(model, x, train=False, rng=None)
    _, rec_i, _, kld_i = _rec_and_kld(model, x, outs)
    clus_parts = [
        losses.loss_clus(out.z, state.cluster_models[v].centers, state.assignments[v])[1]
        for v, out in enumerate(outs)
    ]
    per = losses.combine_instance(
        state.config.weights, rec_i, kld_i, losses.average_views(clus_parts)
    )
    return spl_threshold(per.values, epoch, max_epochs)


def validation_c_index(state: TrainState, data: TrainData) -> float | None:
    if data.X_val is None or data.X_val.shape[0] == 0:
        return None
    pred = predict(state, data.X_val)
    return concordance_index(pred["risk"], data.t_val, data.e_val)


def train_stage3(state: TrainState, data: TrainData) -> TrainState:
    """Stage 3: SPL + contrastive + survival, with per-epoch reassignment."""
    if state.stage < 2:
        raise UsageError("train_stage3 requires initialized clusters")
    config = state.config
    w = config.weights
    model = state.model
    optimizer = state.optimizer
    rng = _training_rng(config.seed + 1)
    n = data.X.shape[0]
    centers = [cm.centers for cm in state.cluster_models]
    frozen = [c.copy() for c in centers]
    ensemble = model.config.head_mode == "ensemble"
    best_c = -np.inf
    best_params = None
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        if ensemble:
            counts = np.bincount(
                state.assignments[config.routing_view - 1], minlength=config.n_clusters
            )
            for k, c in enumerate(counts):
                if c == 0:
                    warnings.warn(
                        f"cluster {k} has no training instances in epoch {epoch}; "
                        "its head receives no updates"
                    )
        lam_dataset = None
        if config.spl_scope == "dataset":
            lam_dataset = _dataset_spl_threshold(state, data, epoch, config.max_epochs)
        sums = {k: 0.0 for k in ("loss_total", "loss_rec", "loss_kld", "loss_clus",
                                 "loss_spl", "loss_cl", "loss_surv")}
        lam_sum = 0.0
        admitted_sum = 0.0
        n_batches = 0
        for idx in _batches(n, config.batch_size, rng):
            try:
                x = Tensor(data.X[idx])
                outs = _encode_views(model, x, train=True, rng=rng)
                rec, rec_i, kld, kld_i = _rec_and_kld(model, x, outs)
                clus_scalar_parts, clus_inst_parts = [], []
                batch_assign = [a[idx] for a in state.assignments]
                for v, out in enumerate(outs):
                    cs, ci = losses.loss_clus(out.z, frozen[v], batch_assign[v])
                    clus_scalar_parts.append(cs)
                    clus_inst_parts.append(ci)
                clus = losses.average_views(clus_scalar_parts)
                clus_i = losses.average_views(clus_inst_parts)
                per_instance = losses.combine_instance(w, rec_i, kld_i, clus_i)
                lam = lam_dataset if lam_dataset is not None else spl_threshold(
                    per_instance.values, epoch, config.max_epochs
                )
                mask, _ = spl_filter(per_instance.values, lam)
                admitted = Tensor(mask.astype(np.float64)[:, None])
                l_spl = (per_instance * admitted).sum() * (1.0 / mask.sum())
                l_cl = _contrastive_loss(model, outs, data.e[idx], batch_assign,
                                         frozen, config)
                h = model.survival_input(x, outs)
                ids = batch_assign[config.routing_view - 1] if ensemble else None
                dist = model.survival_forward(h, cluster_ids=ids)
                nll = losses.loss_nll(dist, data.bins[idx], data.e[idx])
                rank = losses.loss_rank(dist, data.bins[idx], data.e[idx], w.sigma_rank)
                l_surv = losses.combine_surv(w, nll, rank)
                total = l_spl * w.alpha_spl + l_cl * w.alpha_cl + l_surv * w.alpha_surv
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
            except NumericError as exc:
                raise NumericError(f"stage 3 aborted at epoch {epoch}: {exc}")
            sums["loss_total"] += _scalar(total)
            sums["loss_rec"] += _scalar(rec)
            sums["loss_kld"] += _scalar(kld) if kld is not None else 0.0
            sums["loss_clus"] += _scalar(clus)
            sums["loss_spl"] += _scalar(l_spl)
            sums["loss_cl"] += _scalar(l_cl)
            sums["loss_surv"] += _scalar(l_surv)
            lam_sum += lam
            admitted_sum += float(mask.mean())
            n_batches += 1
        # refresh assignments from the full training set against frozen centers
        for v in range(len(state.cluster_models)):
            latents = model.latents(data.X, view=v + 1)
            state.assignments[v] = clustering.assign_nearest(latents, frozen[v])
        val_c = validation_c_index(state, data)
        row = {c: "" for c in LOG_COLUMNS}
        row.update(epoch=epoch, stage=3)
        row.update({k: v / n_batches for k, v in sums.items()})
        row["lambda_spl"] = lam_sum / n_batches
        row["admitted_frac"] = admitted_sum / n_batches
        row["val_c_index"] = "" if val_c is None else val_c
        state.logs.append(row)
        if config.early_stopping and val_c is not None:
            if val_c > best_c:
                best_c = val_c
                best_params = {k: v.values.copy() for k, v in model.parameters()}
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if best_params is not None:
        for name, t in model.parameters():
            t.values = best_params[name]
        for v in range(len(state.cluster_models)):
            latents = model.latents(data.X, view=v + 1)
            state.assignments[v] = clustering.assign_nearest(latents, frozen[v])
    state.stage = 3
    return state


def fit(data: TrainData, config: ExperimentConfig) -> TrainState:
    """All three stages in order; deterministic given the config seed."""
    state = pretrain(data, config)
    state = init_clusters(state, data)
    state = train_stage3(state, data)
    return state


def predict(state: TrainState, X) -> dict:
    """Eval-mode prediction: probabilities, survival, risk, cluster labels."""
    model = state.model
    x = Tensor(np.asarray(X, dtype=np.float64))
    outs = _encode_views(model, x, train=False, rng=None)
    labels = None
    ids = None
    if state.cluster_models:
        view = state.config.routing_view
        latents = outs[view - 1].mu.values
        labels = clustering.assign_nearest(latents, state.cluster_models[view - 1].centers)
        if model.config.head_mode == "ensemble":
            ids = labels
    h = model.survival_input(x, outs)
    dist = model.survival_forward(h, cluster_ids=ids)
    probs = dist.probs.values.copy()
    survival = dist.survival.values.copy()
    risk = -expected_event_time(probs, state.grid)
    return {
        "probs": probs,
        "survival": survival,
        "risk": risk,
        "labels": labels,
        "latents": outs[0].mu.values.copy(),
    }


def evaluate(state: TrainState, X, t, e) -> dict:
    """Test-time metrics with censoring weights from the training data."""
    from .metrics import integrated_brier_score

    pred = predict(state, X)
    c = concordance_index(pred["risk"], t, e)
    ibs = integrated_brier_score(
        pred["survival"], state.grid, np.asarray(t, dtype=np.float64),
        np.asarray(e), state.train_times, state.train_events,
    )
    return {"c_index": c, "ibs": ibs}


def format_epoch_log(logs) -> str:
    """Machine-readable epoch log: one comma-separated line per epoch."""
    lines = [",".join(LOG_COLUMNS)]
    for row in logs:
        lines.append(",".join(repr(row[c]) if row[c] != "" else "" for c in LOG_COLUMNS))
    return "\n".join(lines) + "\n"
