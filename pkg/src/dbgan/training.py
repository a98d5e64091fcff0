"""Adversarial and reconstruction losses and the training schedule.

One epoch of full training runs, in order:

1. ``critic_steps`` updates of the feature critic ``D_x`` (fresh prior draw each),
2. one generator update against ``D_x``,
3. one latent critic ``D_z`` update,
4. one encoder update on ``L_EA + alpha * L_REC``; the generator also moves
   here because the feature reconstruction ``G(E(X))`` runs through it.

With ``use_bal`` off only step 4 remains and it minimizes the reconstruction
loss alone (adjacency only when ``strict_gae`` is set, which makes the model a
plain graph autoencoder). With ``use_pde`` off the prior is N(0, I).
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import EdgeSplit, Graph, normalize_adjacency
from .metrics import link_prediction
from .nn import (
    AdamState,
    Mlp,
    ModelParams,
    adam_step,
    discriminator_forward,
    encoder_forward,
    generator_forward,
    init_model,
)
from .prior import EXACT_THRESHOLD, estimate_prior

log = logging.getLogger(__name__)

PROB_EPS = 1e-7
DENSE_ADJ_MAX_NODES = 6000


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, history: "TrainHistory", what: str):
        super().__init__(f"non-finite {what} at epoch {epoch}")
        self.epoch = epoch
        self.history = history


@dataclass
class TrainConfig:
    alpha: float = 1.0
    lambda_gp: float = 1.0
    lr: float = 0.001
    epochs: int = 400
    critic_steps: int = 5
    q: int = 32
    m: int = 500
    seed: int = 0
    use_pde: bool = True
    use_bal: bool = True
    strict_gae: bool = False
    feature_loss: str = "bce"
    encoder_hidden: Tuple[int, ...] = (32,)
    generator_hidden: Tuple[int, ...] = (256, 512)
    dz_hidden: Tuple[int, ...] = (64, 32)
    dx_hidden: Tuple[int, ...] = (512, 256)
    bandwidth: Union[str, float] = "scott"
    prior_x_only: bool = False
    exact_threshold: int = EXACT_THRESHOLD
    neg_samples_per_pos: int = 1
    eval_every: int = 1
    select_best: bool = False
    checkpoint_every: int = 0

    def validate(self) -> "TrainConfig":
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.lambda_gp < 0:
            raise ConfigError("lambda_gp must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.critic_steps < 1:
            raise ConfigError("critic_steps must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.q < 1 or self.m < 1:
            raise ConfigError("q and m must be positive")
        if self.feature_loss not in ("bce", "mse"):
            raise ConfigError(f"feature_loss must be 'bce' or 'mse', got {self.feature_loss!r}")
        if self.bandwidth != "scott":
            try:
                if float(self.bandwidth) <= 0:
                    raise ConfigError("bandwidth must be positive")
            except (TypeError, ValueError):
                raise ConfigError(f"bandwidth must be 'scott' or a number, got {self.bandwidth!r}") from None
        return self

    @property
    def prior_mode(self) -> str:
        if not self.use_pde:
            return "standard-normal"
        return "x-only" if self.prior_x_only else "pde"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        kwargs = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, fields[key].default, raw)
        return cls(**kwargs).validate()


def _coerce(key, default, raw):
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if isinstance(raw, (list, tuple)):
                return tuple(int(v) for v in raw)
            text = str(raw).strip()
            return tuple(int(v) for v in text.split(",") if v.strip()) if text else ()
        if key == "bandwidth":
            return raw if str(raw).strip() == "scott" else float(raw)
        return str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def read_config(path) -> Dict[str, str]:
    """Parse a flat ``key = value`` file (``#`` comments, blank lines allowed)."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def write_config(path, config: TrainConfig):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in config.to_dict().items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key} = {value}\n")


# ---------------------------------------------------------------- losses


def _critic(d) -> Callable[[Tensor], Tensor]:
    if isinstance(d, Mlp):
        return lambda x: discriminator_forward(x, d)
    return d


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def gradient_penalty(critic, real, fake, seed=None) -> Tensor:
    """Mean over rows of ``(||grad D(x_hat_i)|| - 1)^2`` at random interpolates.

    ``x_hat_i = u_i * real_i + (1 - u_i) * fake_i`` with ``u_i ~ U(0, 1)`` per
    row. The result stays differentiable with respect to the critic weights.
    """
    real, fake = _data(real), _data(fake)
    if real.shape != fake.shape:
        raise ad.ShapeError(f"real {real.shape} and fake {fake.shape} differ")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random((real.shape[0], 1))
    x_hat = Tensor(u * real + (1.0 - u) * fake, requires_grad=True)
    scores = _critic(critic)(x_hat)
    grads = ad.input_gradient(ad.sum(scores), x_hat)
    return ad.mean(ad.square(ad.row_norm(grads) - 1.0))


def critic_loss(critic, real, fake, lambda_gp: float, seed=None) -> Tensor:
    """``-E[D(real)] + E[D(fake)] + lambda * GP``; both inputs are held constant."""
    d = _critic(critic)
    real_t, fake_t = Tensor(_data(real)), Tensor(_data(fake))
    loss = ad.mean(d(fake_t)) - ad.mean(d(real_t))
    if lambda_gp:
        loss = loss + lambda_gp * gradient_penalty(d, real_t, fake_t, seed)
    return loss


def loss_dz(z, h, d_z, lambda_gp: float, seed=None) -> Tensor:
    """Latent critic loss: prior samples are real, encoder outputs are fake."""
    return critic_loss(d_z, z, h, lambda_gp, seed)


def loss_ea(h: Tensor, d_z) -> Tensor:
    return -ad.mean(_critic(d_z)(h))


def loss_dx(x, x_fake, d_x, lambda_gp: float, seed=None) -> Tensor:
    """Feature critic loss: node features are real, generated features are fake."""
    return critic_loss(d_x, x, x_fake, lambda_gp, seed)


def loss_g(x_fake: Tensor, d_x) -> Tensor:
    return -ad.mean(_critic(d_x)(x_fake))


def feature_reconstruction(x, x_rec: Tensor, feature_loss: str = "bce") -> Tensor:
    x = _data(x)
    if feature_loss == "mse":
        return ad.mean(ad.square(x_rec - Tensor(x)))
    if x.min() < 0 or x.max() > 1:
        raise ValueError("binary cross-entropy needs features in [0, 1]")
    p = ad.clip(x_rec, PROB_EPS, 1.0 - PROB_EPS)
    xt = Tensor(x)
    ll = xt * ad.log(p) + (1.0 - xt) * ad.log(1.0 - p)
    return -ad.mean(ll)


def _weighted_bce(p: Tensor, target: np.ndarray, weights: np.ndarray) -> Tensor:
    p = ad.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    t = Tensor(target)
    ll = t * ad.log(p) + (1.0 - t) * ad.log(1.0 - p)
    return -ad.sum(ll * Tensor(weights)) * (1.0 / float(weights.sum()))


def adjacency_reconstruction(h: Tensor, a_target: np.ndarray) -> Tensor:
    """Class-balanced BCE between ``sigmoid(H H^T)`` and a dense 0/1 target.

    Positives are weighted by ``#neg / #pos`` and the weighted sum is divided
    by the total weight, so each class contributes one half.
    """
    a_target = np.asarray(a_target, dtype=np.float64)
    n_pos = float(a_target.sum())
    n_neg = float(a_target.size) - n_pos
    if n_pos == 0 or n_neg == 0:
        weights = np.ones_like(a_target)
    else:
        weights = np.where(a_target > 0, n_neg / n_pos, 1.0)
    return _weighted_bce(ad.sigmoid(ad.matmul(h, ad.transpose(h))), a_target, weights)


def sampled_adjacency_reconstruction(h: Tensor, pos_pairs: np.ndarray, n: int, rng, ratio: int = 1) -> Tensor:
    """Large-graph estimator of :func:`adjacency_reconstruction`.

    Averages the positive-entry loss over all positive pairs and the
    negative-entry loss over uniformly sampled zero entries, half each.
    """
    pos_pairs = np.asarray(pos_pairs, dtype=np.int64)
    taken = set((pos_pairs[:, 0] * n + pos_pairs[:, 1]).tolist())
    want = ratio * len(pos_pairs)
    neg = []
    while len(neg) < want:
        cand = rng.integers(0, n, size=(2 * (want - len(neg)) + 16, 2))
        for i, j in cand.tolist():
            if i * n + j not in taken:
                neg.append((i, j))
                if len(neg) == want:
                    break
    neg = np.array(neg, dtype=np.int64)

    def side(pairs, label):
        logits = ad.sum(ad.take_rows(h, pairs[:, 0]) * ad.take_rows(h, pairs[:, 1]), axis=1)
        p = ad.clip(ad.sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)
        return -ad.mean(ad.log(p) if label else ad.log(1.0 - p))

    return 0.5 * side(pos_pairs, 1) + 0.5 * side(neg, 0)


def reconstruction_loss(x, x_rec: Optional[Tensor], h: Tensor, a_target, feature_loss: str = "bce") -> Tensor:
    """Feature term (skipped when ``x_rec`` is None) plus the adjacency term."""
    adj_term = adjacency_reconstruction(h, a_target)
    if x_rec is None:
        return adj_term
    return feature_reconstruction(x, x_rec, feature_loss) + adj_term


def loss_encoder_total(loss_ea_value: Tensor, rec_value: Tensor, alpha: float) -> Tensor:
    return loss_ea_value + alpha * rec_value


# ---------------------------------------------------------------- schedule


HISTORY_COLUMNS = ["epoch", "loss_dz", "loss_ea", "loss_dx", "loss_g", "loss_rec", "val_auc", "val_ap"]


@dataclass
class TrainHistory:
    records: List[Dict[str, float]] = field(default_factory=list)
    steps: Dict[str, int] = field(default_factory=lambda: {"d_x": 0, "g": 0, "d_z": 0, "e": 0})

    def column(self, name: str) -> np.ndarray:
        return np.array([r.get(name, np.nan) for r in self.records], dtype=np.float64)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                row = []
                for c in HISTORY_COLUMNS:
                    v = r.get(c)
                    if c == "epoch":
                        row.append(int(v))
                    elif v is None or (isinstance(v, float) and math.isnan(v)):
                        row.append("")
                    else:
                        row.append(repr(float(v)))
                w.writerow(row)


def prepare_features(g: Graph, feature_loss: str = "bce") -> Graph:
    """Min-max scale columns into [0, 1] when BCE is used on non-binary features."""
    x = g.features
    if feature_loss != "bce" or (x.min() >= 0 and x.max() <= 1):
        return g
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    scaled = np.where(span > 0, (x - lo) / np.where(span > 0, span, 1.0), 0.0)
    return Graph(g.n, g.edges, scaled, g.labels)


@dataclass
class TrainingContext:
    """Everything derived from the data before the first step."""

    features: np.ndarray
    adj: object
    a_target: Optional[np.ndarray]
    target_pairs: Optional[np.ndarray]
    prior: object
    prototypes: object


def build_context(g: Graph, split: EdgeSplit, config: TrainConfig, prior_rng) -> TrainingContext:
    train_graph = g.with_edges(split.train_pos)
    adj = normalize_adjacency(train_graph, self_loops=True)
    if g.n <= DENSE_ADJ_MAX_NODES:
        a_target = train_graph.adjacency().toarray() + np.eye(g.n)
        pairs = None
    else:
        a_target = None
        e = train_graph.edges
        loops = np.arange(g.n)
        pairs = np.concatenate([e, e[:, ::-1], np.stack([loops, loops], axis=1)])
    q = config.q
    d = g.num_features
    if config.prior_mode != "standard-normal" and q > d:
        raise ConfigError(f"latent dimension q={q} exceeds the feature dimension d={d}")
    m = max(config.m, q)
    if m != config.m and config.prior_mode == "pde":
        log.info("raising prototype count from %d to q=%d so PCA can produce q components", config.m, q)
    prior, protos = estimate_prior(
        train_graph,
        normalize_adjacency(train_graph, self_loops=False),
        q=q,
        m=m,
        seed=prior_rng,
        mode=config.prior_mode,
        bandwidth=config.bandwidth,
        exact_threshold=config.exact_threshold,
    )
    return TrainingContext(g.features, adj, a_target, pairs, prior, protos)


def _check(value: Tensor, what: str, epoch: int, history: TrainHistory) -> float:
    v = float(value.data)
    if not math.isfinite(v):
        raise TrainingDiverged(epoch, history, what)
    return v


def train(
    g: Graph,
    split: EdgeSplit,
    config: TrainConfig,
    callback: Optional[Callable[[int, ModelParams, TrainHistory], None]] = None,
    context: Optional[TrainingContext] = None,
) -> Tuple[ModelParams, TrainHistory]:
    """Train DBGAN (or one of its ablations) and return parameters and history.

    ``callback(epoch, params, history)`` runs after every epoch with the live
    parameters; copy them before keeping a reference.
    """
    config.validate()
    g = prepare_features(g, config.feature_loss)
    init_ss, prior_ss, step_ss = np.random.SeedSequence(config.seed).spawn(3)
    init_rng = np.random.default_rng(init_ss)
    step_rng = np.random.default_rng(step_ss)
    ctx = context or build_context(g, split, config, np.random.default_rng(prior_ss))
    x = ctx.features
    n = g.n
    params = init_model(
        g.num_features,
        config.q,
        config.encoder_hidden,
        config.generator_hidden,
        config.dz_hidden,
        config.dx_hidden,
        seed=init_rng,
    )
    enc, gen = params.group("encoder"), params.group("generator")
    dz, dx = params.group("d_z"), params.group("d_x")
    opt = {k: AdamState() for k in ("d_x", "g", "d_z", "e")}
    history = TrainHistory()
    best = (-np.inf, None)
    lr = config.lr

    def rec_loss(h, x_rec):
        if ctx.a_target is not None:
            adj_term = adjacency_reconstruction(h, ctx.a_target)
        else:
            adj_term = sampled_adjacency_reconstruction(h, ctx.target_pairs, n, step_rng, config.neg_samples_per_pos)
        if x_rec is None:
            return adj_term
        return feature_reconstruction(x, x_rec, config.feature_loss) + adj_term

    for epoch in range(1, config.epochs + 1):
        rec: Dict[str, float] = {"epoch": epoch}
        if config.use_bal:
            for _ in range(config.critic_steps):
                z = ctx.prior.sample(n, step_rng)
                with ad.no_grad():
                    x_fake = generator_forward(z, ctx.adj, params).data
                loss = loss_dx(x, x_fake, params.d_x, config.lambda_gp, step_rng)
                rec["loss_dx"] = _check(loss, "D_x loss", epoch, history)
                adam_step(dx, ad.backward(loss, dx), opt["d_x"], lr)
                history.steps["d_x"] += 1

            z = ctx.prior.sample(n, step_rng)
            loss = loss_g(generator_forward(z, ctx.adj, params), params.d_x)
            rec["loss_g"] = _check(loss, "G loss", epoch, history)
            adam_step(gen, ad.backward(loss, gen), opt["g"], lr)
            history.steps["g"] += 1

            z = ctx.prior.sample(n, step_rng)
            with ad.no_grad():
                h_fixed = encoder_forward(x, ctx.adj, params).data
            loss = loss_dz(z, h_fixed, params.d_z, config.lambda_gp, step_rng)
            rec["loss_dz"] = _check(loss, "D_z loss", epoch, history)
            adam_step(dz, ad.backward(loss, dz), opt["d_z"], lr)
            history.steps["d_z"] += 1

            h = encoder_forward(x, ctx.adj, params)
            adv = loss_ea(h, params.d_z)
            rloss = rec_loss(h, generator_forward(h, ctx.adj, params))
            total = loss_encoder_total(adv, rloss, config.alpha)
            rec["loss_ea"] = _check(adv, "encoder adversarial loss", epoch, history)
            rec["loss_rec"] = _check(rloss, "reconstruction loss", epoch, history)
            movers = enc + gen
        else:
            h = encoder_forward(x, ctx.adj, params)
            x_rec = None if config.strict_gae else generator_forward(h, ctx.adj, params)
            total = rec_loss(h, x_rec)
            rec["loss_rec"] = _check(total, "reconstruction loss", epoch, history)
            movers = enc if config.strict_gae else enc + gen
        adam_step(movers, ad.backward(total, movers), opt["e"], lr)
        history.steps["e"] += 1

        if config.eval_every and (epoch % config.eval_every == 0 or epoch == config.epochs) and len(split.val_pos) and len(split.val_neg):
            with ad.no_grad():
                h_eval = encoder_forward(x, ctx.adj, params).data
            lp = link_prediction(h_eval, split.val_pos, split.val_neg)
            rec["val_auc"], rec["val_ap"] = lp.auc, lp.ap
            if config.select_best and lp.auc > best[0]:
                best = (lp.auc, params.copy())
        history.records.append(rec)
        if callback is not None:
            callback(epoch, params, history)
        if epoch % 10 == 0 or epoch == config.epochs:
            log.info(
                "epoch %d  rec=%.4f  val_auc=%s",
                epoch,
                rec.get("loss_rec", float("nan")),
                f"{rec['val_auc']:.4f}" if "val_auc" in rec else "-",
            )

    if config.select_best and best[1] is not None:
        return best[1], history
    return params, history
