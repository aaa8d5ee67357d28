"""Residual MLP that maps tuple features to voting targets, with manual
backpropagation, the composite training loss, finite-difference gradient
checking, and a small binary weights format.

Per tuple the network embeds each point's SHOT descriptor (352 -> 64 -> 32,
shared), concatenates the embeddings with the pairwise offset/cosine
features, runs a residual trunk, and emits per joint: the two joint-origin
offsets, a distribution over direction-cosine bins, the two
affordable-point offsets, and an articulation logit.
"""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .features import FeatureBatch, TupleSample
from .geometry import VoteTargets

BCE_EPS = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    n_joints: int = 1
    tuple_size: int = 5
    shot_dim: int = 352
    embed_hidden: int = 64
    embed_out: int = 32
    trunk_width: int = 256
    n_blocks: int = 4
    theta_bins: int = 60
    activation: str = "relu"  # "relu" or "identity"
    # fixed input scalings so meter-scale offsets and unit-L2 descriptors
    # reach the first layer at O(1) magnitude
    f1_scale: float = 5.0
    shot_scale: float = 18.0

    @property
    def pair_count(self) -> int:
        return self.tuple_size * (self.tuple_size - 1) // 2

    @property
    def trunk_in(self) -> int:
        return 4 * self.pair_count + self.tuple_size * self.embed_out

    @property
    def head_dim(self) -> int:
        # mu, nu, theta logits, mu_a, nu_a, articulation logit
        return 4 + self.theta_bins + 1


@dataclass
class ModelWeights:
    config: ModelConfig
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def flat_size(self) -> int:
        return sum(p.size for p in self.params.values())


@dataclass
class TrainConfig:
    lambda_d: float = 0.1
    lambda_a: float = 1.0
    lambda_aa: float = 0.5
    learning_rate: float = 0.03
    epochs: int = 10
    batch_size: int = 256
    momentum: float = 0.9
    grad_clip: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if min(self.lambda_d, self.lambda_a, self.lambda_aa) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class Prediction:
    """Network output for one tuple; all fields are arrays over joints."""

    mu: np.ndarray
    nu: np.ndarray
    theta_dist: np.ndarray
    mu_a: np.ndarray
    nu_a: np.ndarray
    c_hat: np.ndarray

    def __post_init__(self):
        if np.any(np.abs(self.theta_dist.sum(axis=-1) - 1.0) > 1e-6) or np.any(self.theta_dist < 0):
            raise ValueError("theta_dist must be a probability simplex")
        if np.any(self.c_hat <= 0) or np.any(self.c_hat >= 1):
            raise ValueError("c_hat must lie strictly inside (0, 1)")


@dataclass
class BatchPrediction:
    """Stacked predictions: leading axis is the tuple, then the joint."""

    mu: np.ndarray
    nu: np.ndarray
    theta_dist: np.ndarray
    mu_a: np.ndarray
    nu_a: np.ndarray
    c_hat: np.ndarray

    def __getitem__(self, k: int) -> Prediction:
        return Prediction(self.mu[k], self.nu[k], self.theta_dist[k],
                          self.mu_a[k], self.nu_a[k], self.c_hat[k])

    @property
    def n(self) -> int:
        return self.mu.shape[0]


@dataclass
class TupleDataset:
    """Training rows: features, regression targets, theta and scores.

    offsets columns are (mu, nu, mu_a, nu_a) per joint.
    """

    f1: np.ndarray
    f2: np.ndarray
    shot: np.ndarray
    offsets: np.ndarray
    theta: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return self.f1.shape[0]

    def subset(self, idx) -> "TupleDataset":
        return TupleDataset(self.f1[idx], self.f2[idx], self.shot[idx],
                            self.offsets[idx], self.theta[idx], self.scores[idx])

    @staticmethod
    def concatenate(parts: list["TupleDataset"]) -> "TupleDataset":
        return TupleDataset(*[np.concatenate([getattr(p, f) for p in parts])
                              for f in ("f1", "f2", "shot", "offsets", "theta", "scores")])


@dataclass
class TrainResult:
    weights: ModelWeights
    loss_log: np.ndarray


def _param_specs(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    specs = [
        ("embed.w1", (cfg.shot_dim, cfg.embed_hidden)),
        ("embed.b1", (cfg.embed_hidden,)),
        ("embed.w2", (cfg.embed_hidden, cfg.embed_out)),
        ("embed.b2", (cfg.embed_out,)),
        ("trunk.win", (cfg.trunk_in, cfg.trunk_width)),
        ("trunk.bin", (cfg.trunk_width,)),
    ]
    for k in range(cfg.n_blocks):
        specs += [
            (f"block{k}.wa", (cfg.trunk_width, cfg.trunk_width)),
            (f"block{k}.ba", (cfg.trunk_width,)),
            (f"block{k}.wb", (cfg.trunk_width, cfg.trunk_width)),
            (f"block{k}.bb", (cfg.trunk_width,)),
        ]
    for j in range(cfg.n_joints):
        specs += [
            (f"head{j}.w", (cfg.trunk_width, cfg.head_dim)),
            (f"head{j}.b", (cfg.head_dim,)),
        ]
    return specs


def init_weights(cfg: ModelConfig, seed: int = 0, scale: float = 1.0,
                 identity_residual: bool = True) -> ModelWeights:
    """He-style initialization; biases start at zero.

    With identity_residual (the training default) each residual branch's
    second layer starts at zero so blocks begin as identity maps, which
    stabilizes the deep trunk. Gradient checks use identity_residual=False:
    exact-zero preactivations sit on ReLU kinks where finite differences
    and subgradients legitimately disagree.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in _param_specs(cfg):
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        elif identity_residual and name.endswith(".wb"):
            params[name] = np.zeros(shape)
        else:
            std = scale * np.sqrt(2.0 / shape[0])
            params[name] = rng.normal(0.0, std, size=shape)
    return ModelWeights(cfg, params)


def zero_weights(cfg: ModelConfig) -> ModelWeights:
    return ModelWeights(cfg, {n: np.zeros(s) for n, s in _param_specs(cfg)})


def _act(cfg: ModelConfig, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if cfg.activation == "relu" else z


def _act_grad(cfg: ModelConfig, z: np.ndarray) -> np.ndarray:
    return (z > 0).astype(float) if cfg.activation == "relu" else np.ones_like(z)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_arrays(w: ModelWeights, f1, f2, shot, need_cache: bool = False):
    """Raw per-joint head outputs (B, J, head_dim) plus a backprop cache."""
    cfg = w.config
    p = w.params
    f1 = np.asarray(f1, dtype=float)
    f2 = np.asarray(f2, dtype=float)
    shot = np.asarray(shot, dtype=float)
    b = f1.shape[0]
    if f1.shape[1] != 3 * cfg.pair_count or f2.shape[1] != cfg.pair_count \
            or shot.shape[1:] != (cfg.tuple_size, cfg.shot_dim):
        raise ValueError("feature shapes do not match the model configuration")

    f1 = f1 * cfg.f1_scale
    shot = shot * cfg.shot_scale
    z1 = shot @ p["embed.w1"] + p["embed.b1"]
    a1 = _act(cfg, z1)
    z2 = a1 @ p["embed.w2"] + p["embed.b2"]
    a2 = _act(cfg, z2)
    x = np.concatenate([f1, f2, a2.reshape(b, -1)], axis=1)

    zin = x @ p["trunk.win"] + p["trunk.bin"]
    h = _act(cfg, zin)
    blocks = []
    for k in range(cfg.n_blocks):
        bz1 = h @ p[f"block{k}.wa"] + p[f"block{k}.ba"]
        ba = _act(cfg, bz1)
        bz2 = ba @ p[f"block{k}.wb"] + p[f"block{k}.bb"]
        y = h + bz2
        h_next = _act(cfg, y)
        blocks.append((h, bz1, ba, y))
        h = h_next

    out = np.stack([h @ p[f"head{j}.w"] + p[f"head{j}.b"] for j in range(cfg.n_joints)], axis=1)
    cache = None
    if need_cache:
        cache = {"shot": shot, "z1": z1, "a1": a1, "z2": z2, "x": x,
                 "zin": zin, "blocks": blocks, "h": h, "b": b}
    return out, cache


def _backward_arrays(w: ModelWeights, cache, dout) -> dict[str, np.ndarray]:
    """Parameter gradients given d(loss)/d(head outputs)."""
    cfg = w.config
    p = w.params
    grads = {}
    h = cache["h"]
    dh = np.zeros_like(h)
    for j in range(cfg.n_joints):
        doj = dout[:, j, :]
        grads[f"head{j}.w"] = h.T @ doj
        grads[f"head{j}.b"] = doj.sum(axis=0)
        dh += doj @ p[f"head{j}.w"].T

    for k in reversed(range(cfg.n_blocks)):
        h_in, bz1, ba, y = cache["blocks"][k]
        dy = dh * _act_grad(cfg, y)
        grads[f"block{k}.wb"] = ba.T @ dy
        grads[f"block{k}.bb"] = dy.sum(axis=0)
        dba = dy @ p[f"block{k}.wb"].T
        dbz1 = dba * _act_grad(cfg, bz1)
        grads[f"block{k}.wa"] = h_in.T @ dbz1
        grads[f"block{k}.ba"] = dbz1.sum(axis=0)
        dh = dy + dbz1 @ p[f"block{k}.wa"].T

    dzin = dh * _act_grad(cfg, cache["zin"])
    grads["trunk.win"] = cache["x"].T @ dzin
    grads["trunk.bin"] = dzin.sum(axis=0)
    dx = dzin @ p["trunk.win"].T

    da2 = dx[:, 4 * cfg.pair_count:].reshape(cache["b"], cfg.tuple_size, cfg.embed_out)
    dz2 = da2 * _act_grad(cfg, cache["z2"])
    a1 = cache["a1"]
    grads["embed.w2"] = a1.reshape(-1, cfg.embed_hidden).T @ dz2.reshape(-1, cfg.embed_out)
    grads["embed.b2"] = dz2.sum(axis=(0, 1))
    da1 = dz2 @ p["embed.w2"].T
    dz1 = da1 * _act_grad(cfg, cache["z1"])
    grads["embed.w1"] = cache["shot"].reshape(-1, cfg.shot_dim).T @ dz1.reshape(-1, cfg.embed_hidden)
    grads["embed.b1"] = dz1.sum(axis=(0, 1))
    return grads


def _split_out(cfg: ModelConfig, out: np.ndarray):
    nb = cfg.theta_bins
    return (out[..., 0], out[..., 1], out[..., 2:2 + nb],
            out[..., 2 + nb], out[..., 3 + nb], out[..., 4 + nb])


def predict_batch(w: ModelWeights, batch: FeatureBatch) -> BatchPrediction:
    out, _ = _forward_arrays(w, batch.f1, batch.f2, batch.shot)
    mu, nu, logits, mu_a, nu_a, c_logit = _split_out(w.config, out)
    return BatchPrediction(mu=mu, nu=nu, theta_dist=softmax(logits),
                           mu_a=mu_a, nu_a=nu_a, c_hat=sigmoid(c_logit))


def forward(w: ModelWeights, sample: TupleSample) -> Prediction:
    """Prediction for one tuple; nu/nu_a are raw (clamping happens when voting)."""
    batch = FeatureBatch(sample.f1[None], sample.f2[None], sample.shot[None])
    return predict_batch(w, batch)[0]


def soft_target(theta: float, n_bins: int = 60, sigma_bins: float = 1.0) -> np.ndarray:
    """Gaussian soft label over direction-cosine bins spanning [-1, 1]."""
    if abs(theta) > 1.0:
        raise ValueError("theta must lie in [-1, 1]")
    return soft_targets(np.asarray([theta]), n_bins, sigma_bins)[0]


def soft_targets(theta: np.ndarray, n_bins: int = 60, sigma_bins: float = 1.0) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    center = (theta + 1.0) / 2.0 * n_bins - 0.5  # continuous bin coordinate
    k = np.arange(n_bins)
    g = np.exp(-((k - center[..., None]) ** 2) / (2.0 * sigma_bins ** 2))
    return g / g.sum(axis=-1, keepdims=True)


def theta_bin_centers(n_bins: int = 60) -> np.ndarray:
    return -1.0 + (np.arange(n_bins) + 0.5) * 2.0 / n_bins


def _kl(t: np.ndarray, p: np.ndarray) -> np.ndarray:
    """KL(t || p) along the last axis; empty-support entries of t contribute 0."""
    p = np.maximum(p, 1e-300)
    terms = np.where(t > 0, t * (np.log(np.maximum(t, 1e-300)) - np.log(p)), 0.0)
    return terms.sum(axis=-1)


def tuple_vote_loss(pred: Prediction, target: VoteTargets, j: int = 0,
                    lambda_d: float = 0.1, lambda_a: float = 1.0) -> float:
    """Vote loss of one tuple against joint j: origin MSE + weighted
    direction KL + weighted affordable-point MSE."""
    l_orig = ((pred.mu[j] - target.mu[j]) ** 2 + (pred.nu[j] - target.nu[j]) ** 2) / 2.0
    l_aff = ((pred.mu_a[j] - target.mu_a[j]) ** 2 + (pred.nu_a[j] - target.nu_a[j]) ** 2) / 2.0
    tgt = soft_targets(target.theta[j:j + 1], pred.theta_dist.shape[-1])[0]
    l_dir = float(_kl(tgt, pred.theta_dist[j]))
    return float(l_orig + lambda_d * l_dir + lambda_a * l_aff)


def _bce(c: np.ndarray, c_hat: np.ndarray) -> np.ndarray:
    ch = np.clip(c_hat, BCE_EPS, 1.0 - BCE_EPS)
    return -(c * np.log(ch) + (1.0 - c) * np.log(1.0 - ch))


def batch_loss(preds, targets, lambda_d: float = 0.1, lambda_a: float = 1.0,
               lambda_aa: float = 0.5) -> float:
    """Mean articulation BCE over all (tuple, joint) pairs plus the mean
    vote loss over pairs whose articulation score is 1 (0 if there are none)."""
    if len(preds) != len(targets):
        raise ValueError("predictions and targets must be aligned")
    scores = np.stack([np.asarray(t.scores, dtype=float) for t in targets])
    c_hat = np.stack([np.asarray(p.c_hat, dtype=float) for p in preds])
    l_art = float(_bce(scores, c_hat).mean())
    total = 0.0
    count = 0
    for p, t in zip(preds, targets):
        for j in range(scores.shape[1]):
            if t.scores[j] == 1:
                total += tuple_vote_loss(p, t, j, lambda_d, lambda_a)
                count += 1
    l_vote = total / count if count else 0.0
    return l_vote + lambda_aa * l_art


def _loss_arrays(cfg: ModelConfig, out, offsets, soft_tgt, scores,
                 lambda_d, lambda_a, lambda_aa, need_grad: bool):
    """Loss (and optionally d loss / d head-outputs) from raw head outputs."""
    mu, nu, logits, mu_a, nu_a, c_logit = _split_out(cfg, out)
    bsz, nj = mu.shape
    dist = softmax(logits)
    c_raw = sigmoid(c_logit)
    c_used = np.clip(c_raw, BCE_EPS, 1.0 - BCE_EPS)
    sc = scores.astype(float)
    l_art = float((-(sc * np.log(c_used) + (1.0 - sc) * np.log(1.0 - c_used))).mean())

    mask = sc
    count = float(mask.sum())
    d_mu = mu - offsets[..., 0]
    d_nu = nu - offsets[..., 1]
    d_mua = mu_a - offsets[..., 2]
    d_nua = nu_a - offsets[..., 3]
    if count:
        l_orig = (d_mu ** 2 + d_nu ** 2) / 2.0
        l_aff = (d_mua ** 2 + d_nua ** 2) / 2.0
        l_dir = _kl(soft_tgt, dist)
        l_vote = float((mask * (l_orig + lambda_d * l_dir + lambda_a * l_aff)).sum() / count)
    else:
        l_vote = 0.0
    loss = l_vote + lambda_aa * l_art
    if not need_grad:
        return loss, None

    dout = np.zeros_like(out)
    if count:
        m = mask / count
        dout[..., 0] = m * d_mu
        dout[..., 1] = m * d_nu
        dout[..., 2:2 + cfg.theta_bins] = (lambda_d * m)[..., None] * (dist - soft_tgt)
        dout[..., 2 + cfg.theta_bins] = lambda_a * m * d_mua
        dout[..., 3 + cfg.theta_bins] = lambda_a * m * d_nua
    unclamped = (c_raw > BCE_EPS) & (c_raw < 1.0 - BCE_EPS)
    dc = np.where(unclamped, c_raw - sc, 0.0)  # d BCE/d logit through sigmoid
    dout[..., 4 + cfg.theta_bins] = lambda_aa * dc / (bsz * nj)
    return loss, dout


def _batch_views(ds: TupleDataset, idx=None):
    sel = (lambda a: a) if idx is None else (lambda a: a[idx])
    return (np.asarray(sel(ds.f1), dtype=float), np.asarray(sel(ds.f2), dtype=float),
            np.asarray(sel(ds.shot), dtype=float), np.asarray(sel(ds.offsets), dtype=float),
            np.asarray(sel(ds.theta), dtype=float), np.asarray(sel(ds.scores)))


def dataset_loss_and_grads(w: ModelWeights, ds: TupleDataset, idx=None,
                           lambda_d=0.1, lambda_a=1.0, lambda_aa=0.5,
                           need_grad: bool = True):
    f1, f2, shot, offsets, theta, scores = _batch_views(ds, idx)
    soft_tgt = soft_targets(theta, w.config.theta_bins)
    out, cache = _forward_arrays(w, f1, f2, shot, need_cache=need_grad)
    loss, dout = _loss_arrays(w.config, out, offsets, soft_tgt, scores,
                              lambda_d, lambda_a, lambda_aa, need_grad)
    if not need_grad:
        return loss, None
    return loss, _backward_arrays(w, cache, dout)


def grad_check(w: ModelWeights, sample: TupleDataset, eps: float = 1e-5,
               n_checks: int = 200, seed: int = 0,
               lambda_d=0.1, lambda_a=1.0, lambda_aa=0.5) -> float:
    """Max relative error between analytic and central finite-difference
    gradients on n_checks randomly chosen parameters.

    Relative error uses max(|analytic|, |fd|, 1) as denominator, so
    sub-unit gradients are effectively compared absolutely.
    """
    rng = np.random.default_rng(seed)
    _, grads = dataset_loss_and_grads(w, sample, None, lambda_d, lambda_a, lambda_aa)
    names = list(w.params)
    sizes = np.array([w.params[n].size for n in names])
    cum = np.cumsum(sizes)
    total = int(cum[-1])
    picks = rng.choice(total, size=min(n_checks, total), replace=False)

    def loss_only() -> float:
        val, _ = dataset_loss_and_grads(w, sample, None, lambda_d, lambda_a,
                                        lambda_aa, need_grad=False)
        return val

    worst = 0.0
    for flat_i in picks:
        pi = int(np.searchsorted(cum, flat_i, side="right"))
        local = int(flat_i - (cum[pi] - sizes[pi]))
        arr = w.params[names[pi]].reshape(-1)
        orig = arr[local]
        arr[local] = orig + eps
        up = loss_only()
        arr[local] = orig - eps
        down = loss_only()
        arr[local] = orig
        fd = (up - down) / (2.0 * eps)
        an = grads[names[pi]].reshape(-1)[local]
        worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1.0))
    return worst


def train(dataset: TupleDataset, config: TrainConfig,
          model_config: ModelConfig | None = None,
          weights: ModelWeights | None = None) -> TrainResult:
    """Minibatch SGD with momentum 0.9 and a cosine-decayed learning rate.

    Deterministic for a fixed seed. Final weights are snapped to
    float32-representable values so the weights file round-trips exactly.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    if weights is None:
        weights = init_weights(model_config or ModelConfig(), seed=config.seed)
    rng = np.random.default_rng(config.seed + 1)
    velocity = {k: np.zeros_like(v) for k, v in weights.params.items()}
    steps_per_epoch = int(np.ceil(n / config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    loss_log = []
    step = 0
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for s in range(steps_per_epoch):
            idx = perm[s * config.batch_size:(s + 1) * config.batch_size]
            loss, grads = dataset_loss_and_grads(
                weights, dataset, idx, config.lambda_d, config.lambda_a, config.lambda_aa)
            if config.grad_clip:
                gnorm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if gnorm > config.grad_clip:
                    scale = config.grad_clip / gnorm
                    grads = {k: g * scale for k, g in grads.items()}
            lr = config.learning_rate * 0.5 * (1.0 + np.cos(np.pi * step / max(total_steps, 1)))
            for k, g in grads.items():
                velocity[k] = config.momentum * velocity[k] - lr * g
                weights.params[k] += velocity[k]
            epoch_loss += loss * idx.size
            step += 1
        loss_log.append(epoch_loss / n)
    for k in weights.params:
        weights.params[k] = weights.params[k].astype(np.float32).astype(np.float64)
    return TrainResult(weights, np.array(loss_log))


MAGIC = b"AVW1"


def save_weights(w: ModelWeights, path) -> None:
    """Binary weights: magic, little-endian shape table, float32 blob.
    Hyperparameters and metadata go to a JSON sidecar at path + '.json'."""
    names = list(w.params)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(names)))
        for name in names:
            nb = name.encode("utf-8")
            arr = w.params[name]
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for name in names:
            f.write(np.ascontiguousarray(w.params[name], dtype="<f4").tobytes())
    sidecar = {"config": asdict(w.config), "meta": w.meta}
    with open(str(path) + ".json", "w", encoding="ascii") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_weights(path) -> ModelWeights:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic, not a weights file")
    off = 4
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        shapes.append((name, shape))
    params = {}
    for name, shape in shapes:
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off)
        off += 4 * size
        params[name] = arr.reshape(shape).astype(np.float64)
    with open(str(path) + ".json", "r", encoding="ascii") as f:
        sidecar = json.load(f)
    cfg = ModelConfig(**sidecar["config"])
    return ModelWeights(cfg, params, meta=sidecar.get("meta", {}))
