"""GIN -> multi-head self-attention -> GCN graph classifier.

Each block computes::

    H'  = MLP((1 + alpha) H + A H)                      # GIN aggregation
    H~  = LNorm(H' + Dropout(MHA(H' Q, H' K, H' V)))    # dense self-attention, post-norm
    H+  = ReLU(D^-1/2 (A + I) D^-1/2 H~ W + b)          # GCN propagation

and the graph representation is the mean of the final node embeddings fed to
a linear head. Layers are plain functions over explicit parameter tensors so
that each one can be tested against dense reference formulas; torch is used
only for tensor arithmetic, autograd and the Adam update.

Graphs are batched by zero-padding to a common node count with a boolean node
mask; padded nodes are excluded from attention keys and from pooling, and are
never adjacent to real nodes, so real-node outputs do not depend on padding.
"""

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import __version__

DTYPE = torch.float64
CLASSES = ("pcr", "rd")
LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    in_dim: int = 29
    hidden: int = 256
    heads: int = 2
    blocks: int = 2
    n_classes: int = 2
    dropout: float = 0.5
    activation: str = "relu"  # "identity" gives the linear stub used in gradient checks
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.blocks <= 4:
            raise ValueError("blocks must be in 1..4")
        if self.hidden % self.heads:
            raise ValueError("hidden width must be divisible by the head count")
        if self.activation not in ("relu", "identity"):
            raise ValueError("activation must be 'relu' or 'identity'")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 250
    seed: int = 0
    batch_size: int = 8
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    # stop once an epoch's mean training loss falls below this value
    early_stop_loss: float = None
    # stop after this many epochs without a `min_delta` improvement of the best loss
    patience: int = None
    min_delta: float = 1e-3


@dataclass(frozen=True)
class GinParams:
    alpha: torch.Tensor
    w1: torch.Tensor
    b1: torch.Tensor
    w2: torch.Tensor
    b2: torch.Tensor


@dataclass(frozen=True)
class AttentionParams:
    wq: torch.Tensor
    wk: torch.Tensor
    wv: torch.Tensor
    wo: torch.Tensor
    bo: torch.Tensor
    heads: int = 2


@dataclass(frozen=True)
class NormParams:
    scale: torch.Tensor
    shift: torch.Tensor


@dataclass(frozen=True)
class GcnParams:
    w: torch.Tensor
    b: torch.Tensor


@dataclass
class ModelParams:
    """All learnable tensors, keyed by dotted name in a fixed order."""

    config: ModelConfig
    tensors: dict
    class_prior: tuple = (0.5, 0.5)
    meta: dict = field(default_factory=dict)

    def gin(self, k):
        t = self.tensors
        return GinParams(*(t[f"block{k}.gin.{n}"] for n in ("alpha", "w1", "b1", "w2", "b2")))

    def attention(self, k):
        t = self.tensors
        return AttentionParams(*(t[f"block{k}.attn.{n}"] for n in ("wq", "wk", "wv", "wo", "bo")), heads=self.config.heads)

    def norm(self, k):
        return NormParams(self.tensors[f"block{k}.ln.scale"], self.tensors[f"block{k}.ln.shift"])

    def gcn(self, k):
        return GcnParams(self.tensors[f"block{k}.gcn.w"], self.tensors[f"block{k}.gcn.b"])

    def parameter_count(self):
        return sum(t.numel() for t in self.tensors.values())

    def flat(self):
        return torch.cat([t.detach().reshape(-1) for t in self.tensors.values()])

    def clone(self):
        tensors = {k: v.detach().clone().requires_grad_(True) for k, v in self.tensors.items()}
        return ModelParams(self.config, tensors, self.class_prior, dict(self.meta))


def parameter_shapes(cfg):
    shapes = {}
    width = cfg.in_dim
    h = cfg.hidden
    for k in range(cfg.blocks):
        p = f"block{k}"
        shapes[f"{p}.gin.alpha"] = ()
        shapes[f"{p}.gin.w1"] = (width, h)
        shapes[f"{p}.gin.b1"] = (h,)
        shapes[f"{p}.gin.w2"] = (h, h)
        shapes[f"{p}.gin.b2"] = (h,)
        for n in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{n}"] = (h, h)
        shapes[f"{p}.attn.bo"] = (h,)
        shapes[f"{p}.ln.scale"] = (h,)
        shapes[f"{p}.ln.shift"] = (h,)
        shapes[f"{p}.gcn.w"] = (h, h)
        shapes[f"{p}.gcn.b"] = (h,)
        width = h
    shapes["head.w"] = (h, cfg.n_classes)
    shapes["head.b"] = (cfg.n_classes,)
    return shapes


def init_params(cfg, class_prior=(0.5, 0.5)):
    gen = torch.Generator().manual_seed(cfg.seed)
    tensors = {}
    for name, shape in parameter_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "scale":
            t = torch.ones(shape, dtype=DTYPE)
        elif len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            if name == "head.w":
                # small head keeps initial predictions near uniform
                bound *= 0.1
            t = (torch.rand(shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound
        else:
            t = torch.zeros(shape, dtype=DTYPE)
        tensors[name] = t.requires_grad_(True)
    return ModelParams(cfg, tensors, tuple(class_prior))


# -- layers ------------------------------------------------------------------


def _act(x, activation):
    return torch.relu(x) if activation == "relu" else x


def gin_forward(h, a, p, activation="relu"):
    """MLP((1 + alpha) h_v + sum of neighbour rows); works on (n, d) or (B, n, d)."""
    if h.shape[-1] != p.w1.shape[0]:
        raise ValueError(f"feature width {h.shape[-1]} does not match GIN input {p.w1.shape[0]}")
    pre = (1 + p.alpha) * h + a @ h
    return _act(pre @ p.w1 + p.b1, activation) @ p.w2 + p.b2


def attention_weights(x, p, mask=None):
    """Per-head softmax attention matrices, shape (..., heads, n, n)."""
    *lead, n, d = x.shape
    dh = d // p.heads
    q = (x @ p.wq).reshape(*lead, n, p.heads, dh).transpose(-3, -2)
    k = (x @ p.wk).reshape(*lead, n, p.heads, dh).transpose(-3, -2)
    logits = q @ k.transpose(-1, -2) / math.sqrt(dh)
    if mask is not None:
        logits = logits.masked_fill(~mask[..., None, None, :], float("-inf"))
    return torch.softmax(logits, dim=-1)


def multi_head_attention(x, p, mask=None):
    """Concatenated head outputs, output-projected; no residual or norm."""
    if x.shape[-1] != p.wq.shape[0]:
        raise ValueError(f"feature width {x.shape[-1]} does not match attention width {p.wq.shape[0]}")
    *lead, n, d = x.shape
    dh = d // p.heads
    w = attention_weights(x, p, mask)
    v = (x @ p.wv).reshape(*lead, n, p.heads, dh).transpose(-3, -2)
    out = (w @ v).transpose(-3, -2).reshape(*lead, n, d)
    return out @ p.wo + p.bo


def layer_norm(x, p):
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + LN_EPS) * p.scale + p.shift


def attention_forward(x, p, norm, mask=None, dropout=None):
    """Self-attention with residual add and layer norm (post-norm)."""
    out = multi_head_attention(x, p, mask)
    if dropout is not None:
        out = dropout(out)
    return layer_norm(x + out, norm)


def normalized_adjacency(a):
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    eye = torch.eye(a.shape[-1], dtype=a.dtype)
    a_hat = a + eye
    dinv = a_hat.sum(dim=-1).rsqrt()
    return dinv[..., :, None] * a_hat * dinv[..., None, :]


def gcn_forward(x, a, p, activation="relu", a_norm=None):
    if a_norm is None:
        a_norm = normalized_adjacency(a)
    return _act(a_norm @ x @ p.w + p.b, activation)


class _Dropout:
    """Inverted dropout drawing from an explicit generator (reproducible)."""

    def __init__(self, rate, generator):
        self.rate = rate
        self.generator = generator

    def __call__(self, x):
        if self.rate <= 0:
            return x
        keep = torch.rand(x.shape, generator=self.generator, dtype=x.dtype) >= self.rate
        return x * keep / (1.0 - self.rate)


def forward(params, h, a, mask=None, dropout=None, return_details=False):
    """Logits for a graph (n, d) / (n, n) or a padded batch (B, n, d) / (B, n, n)."""
    cfg = params.config
    if mask is None:
        mask = torch.ones(h.shape[:-1], dtype=torch.bool)
    a_norm = normalized_adjacency(a)
    x = h
    attn = None
    for k in range(cfg.blocks):
        x = gin_forward(x, a, params.gin(k), cfg.activation)
        if return_details:
            attn = attention_weights(x, params.attention(k), mask)
        x = attention_forward(x, params.attention(k), params.norm(k), mask, dropout)
        x = gcn_forward(x, a, params.gcn(k), cfg.activation, a_norm)
    m = mask.to(x.dtype)[..., None]
    pooled = (x * m).sum(dim=-2) / m.sum(dim=-2)
    if dropout is not None:
        pooled = dropout(pooled)
    logits = pooled @ params.tensors["head.w"] + params.tensors["head.b"]
    if return_details:
        return logits, x, attn
    return logits


# -- inference ---------------------------------------------------------------


@dataclass
class Prediction:
    probs: np.ndarray  # (pCR, RD)
    embeddings: np.ndarray  # (n, hidden) final node embeddings
    attention: np.ndarray  # (n,) mean attention each node receives in the last block


def _as_tensor(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)


def predict(adjacency, features, params):
    """Class probabilities for one graph; dropout is off.

    An empty graph has nothing to pool, so it gets the training-set prior.
    """
    features = np.asarray(features, dtype=float)
    n = features.shape[0]
    if n == 0:
        warnings.warn("empty graph: returning the training-set class prior", RuntimeWarning)
        return Prediction(np.asarray(params.class_prior, dtype=float), np.zeros((0, params.config.hidden)), np.zeros(0))
    with torch.no_grad():
        logits, emb, attn = forward(params, _as_tensor(features), _as_tensor(adjacency), return_details=True)
        probs = torch.softmax(logits, dim=-1)
        received = attn.mean(dim=0).mean(dim=0)
    return Prediction(probs.numpy().copy(), emb.numpy().copy(), received.numpy().copy())


# -- training ----------------------------------------------------------------


def pad_batch(items):
    """[(features (n, d), adjacency (n, n))] -> padded H, A, mask tensors."""
    nmax = max(f.shape[0] for f, _ in items)
    d = items[0][0].shape[1]
    h = torch.zeros((len(items), nmax, d), dtype=DTYPE)
    a = torch.zeros((len(items), nmax, nmax), dtype=DTYPE)
    mask = torch.zeros((len(items), nmax), dtype=torch.bool)
    for b, (f, adj) in enumerate(items):
        n = f.shape[0]
        h[b, :n] = _as_tensor(f)
        a[b, :n, :n] = _as_tensor(adj)
        mask[b, :n] = True
    return h, a, mask


@dataclass
class TrainResult:
    params: ModelParams
    loss_curve: list
    epochs_run: int


def train(dataset, cfg=None, model_cfg=None):
    """Fit a model on [(adjacency, features, class_index)], class 0 = pCR.

    Cross-entropy, Adam, one shuffled pass over the graphs per epoch.
    """
    cfg = cfg or TrainConfig()
    items = [(np.asarray(f, dtype=float), np.asarray(adj, dtype=float), int(y)) for adj, f, y in dataset]
    if len(items) < 2:
        raise ValueError("training needs at least two graphs")
    labels = np.array([y for _, _, y in items])
    if len(set(labels.tolist())) < 2:
        raise ValueError("training set contains a single class")
    empty = [i for i, (f, _, _) in enumerate(items) if f.shape[0] == 0]
    if empty:
        warnings.warn(f"skipping {len(empty)} empty graph(s) during training", RuntimeWarning)
        items = [it for i, it in enumerate(items) if i not in set(empty)]
    prior = tuple(float(np.mean(labels == c)) for c in range(2))

    in_dim = items[0][0].shape[1]
    model_cfg = model_cfg or ModelConfig(in_dim=in_dim, seed=cfg.seed)
    if model_cfg.in_dim != in_dim:
        raise ValueError(f"model expects {model_cfg.in_dim} features, data has {in_dim}")

    prev_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        params = init_params(model_cfg, prior)
        opt = torch.optim.Adam(
            list(params.tensors.values()), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay
        )
        gen = torch.Generator().manual_seed(cfg.seed + 1)
        drop = _Dropout(model_cfg.dropout, gen)
        rng = np.random.default_rng(cfg.seed)
        curve = []
        best, stale = math.inf, 0
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(items))
            total = 0.0
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                h, a, mask = pad_batch([(items[i][0], items[i][1]) for i in idx])
                y = torch.as_tensor([items[i][2] for i in idx])
                logits = forward(params, h, a, mask, drop)
                loss = torch.nn.functional.cross_entropy(logits, y)
                if not torch.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite loss {loss.item()} at epoch {epoch}, batch starting {start}; "
                        f"max |logit| {logits.detach().abs().max().item():.3g}"
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            curve.append(total / len(items))
            if cfg.early_stop_loss is not None and curve[-1] < cfg.early_stop_loss:
                break
            if curve[-1] < best - cfg.min_delta:
                best, stale = curve[-1], 0
            else:
                stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                break
    finally:
        torch.set_num_threads(prev_threads)
    return TrainResult(params, curve, len(curve))


# -- gradient check ----------------------------------------------------------


def _loss(params, h, a, y, class_mask=None):
    logits = forward(params, h, a)
    if class_mask is not None:
        # only the unmasked classes' logits reach the loss
        return (logits * class_mask).sum()
    return torch.nn.functional.cross_entropy(logits[None, :], torch.as_tensor([y]))


@dataclass
class GradCheckResult:
    max_rel_error: float  # max over tensors of ||g - fd|| / max(||g||, ||fd||)
    per_tensor: dict
    max_abs_error: float  # largest single-entry |g - fd|
    analytic: dict
    numeric: dict


def grad_check(params, features, adjacency, label=0, step=1e-5, include_inputs=True, class_mask=None):
    """Compare autograd gradients with central finite differences.

    Every scalar parameter (and every input feature when ``include_inputs``)
    is perturbed by +-step. The relative error of a tensor is measured on the
    whole gradient vector, since entrywise ratios of near-zero gradients only
    measure the difference quotient's roundoff.
    """
    params = params.clone()
    h = _as_tensor(features).requires_grad_(include_inputs)
    a = _as_tensor(adjacency)
    cm = None if class_mask is None else torch.as_tensor(class_mask, dtype=DTYPE)

    loss = _loss(params, h, a, label, cm)
    targets = list(params.tensors.items()) + ([("input", h)] if include_inputs else [])
    grads = torch.autograd.grad(loss, [t for _, t in targets])
    analytic = {name: g.detach().clone() for (name, _), g in zip(targets, grads)}

    numeric, per_tensor = {}, {}
    max_abs = 0.0
    with torch.no_grad():
        for name, t in targets:
            flat = t.view(-1)
            fd = torch.empty(flat.numel(), dtype=DTYPE)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = _loss(params, h, a, label, cm).item()
                flat[i] = orig - step
                down = _loss(params, h, a, label, cm).item()
                flat[i] = orig
                fd[i] = (up - down) / (2 * step)
            g = analytic[name].reshape(-1)
            numeric[name] = fd.reshape(t.shape)
            scale = max(g.norm().item(), fd.norm().item())
            diff = (g - fd).norm().item()
            per_tensor[name] = diff / scale if scale > 0 else 0.0
            max_abs = max(max_abs, (g - fd).abs().max().item() if fd.numel() else 0.0)
    worst = max(per_tensor.values()) if per_tensor else 0.0
    return GradCheckResult(worst, per_tensor, max_abs, analytic, numeric)


# -- checkpoints -------------------------------------------------------------

CKPT_MAGIC = "tmegraph-ckpt"


def save_checkpoint(params, extra=None):
    header = {
        "format": CKPT_MAGIC,
        "version": 1,
        "tool_version": __version__,
        "config": asdict(params.config),
        "tensors": [[name, list(t.shape)] for name, t in params.tensors.items()],
        "class_prior": list(params.class_prior),
        "meta": params.meta,
    }
    if extra:
        header.update(extra)
    blob = params.flat().numpy().astype("<f8").tobytes()
    text = f"# tmegraph {__version__} checkpoint\n" + json.dumps(header, sort_keys=True) + "\n"
    return text.encode("utf-8") + blob


def load_checkpoint(data):
    """Inverse of save_checkpoint; returns (ModelParams, header dict)."""
    pos = 0
    while data[pos : pos + 1] == b"#":
        pos = data.index(b"\n", pos) + 1
    end = data.index(b"\n", pos)
    header = json.loads(data[pos:end].decode("utf-8"))
    if header.get("format") != CKPT_MAGIC or header.get("version") != 1:
        raise ValueError("not a version-1 tmegraph checkpoint")
    flat = np.frombuffer(data[end + 1 :], dtype="<f8")
    cfg = ModelConfig(**header["config"])
    tensors = {}
    offset = 0
    for name, shape in header["tensors"]:
        size = int(np.prod(shape)) if shape else 1
        if offset + size > flat.size:
            raise ValueError("checkpoint parameter array is truncated")
        arr = flat[offset : offset + size].reshape(shape).astype(np.float64)
        tensors[name] = torch.tensor(arr, dtype=DTYPE).requires_grad_(True)
        offset += size
    if offset != flat.size:
        raise ValueError("checkpoint has trailing parameter data")
    params = ModelParams(cfg, tensors, tuple(header["class_prior"]), header.get("meta", {}))
    return params, header
