"""Full-batch training of LGTL and the template baselines for node classification.

Forward passes for whole node batches are written in torch (float64) so that
gradients come from autograd; the per-node numpy forward in :mod:`lgtl.model`
is the independent reference they are checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .errors import ConfigError, DomainError, NumericError, PreconditionError
from .graph import Graph, hop_sets
from .model import ABLATIONS, FULL, NO_GATE, NO_SELECTION, LgtlParams, gate_neighborhood, sample_hop
from .rng import make_rng
from .templates import ho_token_stack, nd_index_stack

TEMPLATES = ("none", "ho", "nd", "lgtl")
DTYPE = torch.float64


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 500
    seed: int = 0
    hop_count: int = 2
    sample_sizes: tuple = (4, 4)
    ablation: str = FULL
    early_stop_patience: int = 50
    template: str = "lgtl"
    train_backbone: bool = False
    resample: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sample_sizes", tuple(int(s) for s in self.sample_sizes))

    def validate(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.template not in TEMPLATES:
            raise ConfigError(f"template must be one of {TEMPLATES}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")
        if self.template in ("lgtl", "nd") and len(self.sample_sizes) != self.hop_count:
            raise ConfigError("need one sample size per hop")
        if any(s < 1 for s in self.sample_sizes):
            raise ConfigError("sample sizes must be >= 1")
        if self.early_stop_patience < 0:
            raise ConfigError("patience must be >= 0")


@dataclass(frozen=True)
class SplitSpec:
    train: tuple
    val: tuple
    test: tuple

    def validate(self, num_nodes: int | None = None):
        sets = [set(self.train), set(self.val), set(self.test)]
        if sum(map(len, sets)) != len(sets[0] | sets[1] | sets[2]):
            raise PreconditionError("splits overlap")
        if num_nodes is not None and any(not 0 <= v < num_nodes for s in sets for v in s):
            raise PreconditionError("split references a node outside the graph")


def make_splits(num_nodes: int, seed: int, ratios=(0.6, 0.2, 0.2)) -> SplitSpec:
    """Random split by ratio; the test split takes the remainder."""
    perm = make_rng(seed, 11).permutation(num_nodes)
    a = int(round(ratios[0] * num_nodes))
    b = a + int(round(ratios[1] * num_nodes))
    return SplitSpec(tuple(sorted(perm[:a].tolist())), tuple(sorted(perm[a:b].tolist())),
                     tuple(sorted(perm[b:].tolist())))


@dataclass(frozen=True)
class Metrics:
    micro_f1: float
    macro_f1: float
    accuracy: float


def classification_metrics(y_true, y_pred, class_count: int | None = None) -> Metrics:
    """Micro-F1 (= accuracy) and macro-F1 over the classes seen in truth or predictions.

    A class that occurs in the truth but is never predicted scores F1 = 0.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise DomainError("no nodes to evaluate")
    acc = float(np.mean(y_true == y_pred))
    f1s = []
    for c in np.union1d(y_true, y_pred):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        f1s.append(0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn))
    return Metrics(acc, float(np.mean(f1s)), acc)


def argmax_lowest(scores) -> np.ndarray:
    """Row-wise argmax, ties broken toward the lowest class index."""
    scores = np.asarray(scores)
    return np.argmax(scores == scores.max(axis=1, keepdims=True), axis=1)


# --
# Batched model

def _pad(rows, fill=0):
    width = max(len(r) for r in rows)
    idx = np.full((len(rows), width), fill, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        idx[i, :len(r)] = r
        mask[i, :len(r)] = True
    return torch.from_numpy(idx), torch.from_numpy(mask)


class Structure:
    """Precomputed token structure for every node of a graph under one config.

    Holds everything that does not depend on parameters: HO tokens, ND index
    lists, gate neighborhoods and sampled selection stars.
    """

    def __init__(self, g: Graph, cfg: TrainConfig, sample_seed: int | None = None):
        self.g = g
        self.cfg = cfg
        self.X = torch.from_numpy(np.array(g.features, dtype=np.float64))
        seed = cfg.seed if sample_seed is None else sample_seed
        L = cfg.hop_count
        if cfg.template == "ho":
            self.ho = torch.from_numpy(ho_token_stack(g, L)).to(DTYPE)
        elif cfg.template == "nd":
            self.nd = torch.from_numpy(nd_index_stack(g, cfg.sample_sizes, seed))
        elif cfg.template == "lgtl":
            self.gate_idx, self.gate_mask = _pad([gate_neighborhood(g, u) for u in range(g.num_nodes)])
            self.stars = []
            per_hop = [[] for _ in range(L)]
            for u in range(g.num_nodes):
                hops = hop_sets(g, u, L)
                for i in range(1, L + 1):
                    sampled = sample_hop(g, u, i, cfg.sample_sizes[i - 1], seed, hops[i].members)
                    per_hop[i - 1].append((u,) + sampled if sampled else (u,))
            for i in range(L):
                idx, mask = _pad(per_hop[i])
                empty = torch.tensor([len(r) == 1 for r in per_hop[i]])
                self.stars.append((idx, mask, empty))


def _leaky(z, slope):
    return torch.where(z > 0, z, slope * z)


def _masked_softmax(e, mask):
    e = e.masked_fill(~mask, -math.inf)
    return torch.softmax(e, dim=-1)


def _gat_coefficients(x_u, Xn, mask, W, a, slope):
    z = (x_u @ W)[:, None, :] + Xn @ W
    return _masked_softmax(_leaky(z, slope) @ a, mask)


PARAM_NAMES = ["gate.W", "gate.a", "gate.bias", "selection.W", "selection.a", "selection.bias",
               "W_Q", "W_K", "W_V", "classifier"]


def to_tensors(p: LgtlParams) -> dict:
    return {name: torch.from_numpy(np.array(a, dtype=np.float64)) for name, a in p.named_arrays()}


def from_tensors(p: LgtlParams, tensors: dict) -> LgtlParams:
    return p.with_flat(np.concatenate([tensors[n].detach().numpy().ravel() for n in PARAM_NAMES]))


def forward_batch(st: Structure, params: dict, nodes, slopes=(0.2, 0.2), ablation: str | None = None) -> dict:
    """Representations and intermediate weights for a batch of center nodes."""
    cfg = st.cfg
    ablation = cfg.ablation if ablation is None else ablation
    nodes = torch.as_tensor(np.asarray(nodes, dtype=np.int64))
    X = st.X
    WQ, WK, WV = params["W_Q"], params["W_K"], params["W_V"]
    out = {}
    if cfg.template == "none":
        T = X[nodes][:, None, :]
    elif cfg.template == "ho":
        T = st.ho[nodes]
    elif cfg.template == "nd":
        T = X[st.nd[nodes]]
    else:
        L = cfg.hop_count
        xu = X[nodes]
        if ablation == NO_GATE:
            s_hat = torch.full((len(nodes), L + 1), 1.0 / (L + 1), dtype=DTYPE)
        else:
            gi, gm = st.gate_idx[nodes], st.gate_mask[nodes]
            Xn = X[gi]
            att = _gat_coefficients(xu, Xn, gm, params["gate.W"], params["gate.a"], slopes[0])
            raw = torch.einsum("bn,bnh->bh", att, Xn @ params["gate.W"]) + params["gate.bias"]
            s_hat = torch.softmax(raw, dim=-1)
        toks = [xu]
        betas = []
        for idx, mask, empty in st.stars:
            si, sm, se = idx[nodes], mask[nodes], empty[nodes]
            S = X[si]
            if ablation == NO_SELECTION:
                beta = sm.to(DTYPE) / sm.sum(dim=1, keepdim=True).to(DTYPE)
            else:
                beta = _gat_coefficients(xu, S, sm, params["selection.W"], params["selection.a"], slopes[1])
            tok = torch.einsum("bn,bnd->bd", beta, S)
            tok = torch.where(se[:, None], torch.zeros_like(tok), tok)
            toks.append(tok)
            betas.append(beta)
        T = torch.stack(toks, dim=1)
        out["s_hat"] = s_hat
        out["betas"] = betas
    q0 = T[:, 0, :] @ WQ
    K = T @ WK
    alpha = torch.softmax(torch.einsum("bmh,bh->bm", K, q0) / math.sqrt(WQ.shape[0]), dim=-1)
    if cfg.template == "lgtl":
        w = alpha * out["s_hat"]
        weights = w / w.sum(dim=1, keepdim=True)
    else:
        weights = alpha
    z = torch.einsum("bm,bmd->bd", weights, T @ WV)
    out.update(tokens=T, alpha=alpha, adjusted=weights, z=z, logits=z @ params["classifier"].T)
    return out


def batch_loss(st: Structure, params: dict, nodes, slopes=(0.2, 0.2)) -> torch.Tensor:
    labels = torch.from_numpy(st.g.require_labels()[np.asarray(nodes, dtype=np.int64)])
    logits = forward_batch(st, params, nodes, slopes)["logits"]
    return torch.nn.functional.cross_entropy(logits, labels)


def trainable_names(cfg: TrainConfig) -> list[str]:
    names = ["classifier"]
    if cfg.template == "lgtl":
        if cfg.ablation != NO_GATE:
            names += ["gate.W", "gate.a", "gate.bias"]
        if cfg.ablation != NO_SELECTION:
            names += ["selection.W", "selection.a"]
    if cfg.train_backbone:
        names += ["W_Q", "W_K", "W_V"]
    return names


def _slopes(p: LgtlParams):
    return (p.gate.leaky_slope, p.selection.leaky_slope)


def gradients(g: Graph, nodes, params: LgtlParams, cfg: TrainConfig, st: Structure | None = None) -> np.ndarray:
    """Gradient of the mean cross-entropy over ``nodes`` with respect to ``params.flat()``."""
    nodes = list(nodes)
    if not nodes:
        raise DomainError("empty batch")
    st = st or Structure(g, cfg)
    tensors = {k: v.requires_grad_(True) for k, v in to_tensors(params).items()}
    loss = batch_loss(st, tensors, nodes, _slopes(params))
    grads = torch.autograd.grad(loss, [tensors[n] for n in PARAM_NAMES], allow_unused=True)
    flat = np.concatenate([
        (np.zeros(tensors[n].numel()) if gr is None else gr.detach().numpy().ravel())
        for n, gr in zip(PARAM_NAMES, grads)
    ])
    if not np.isfinite(flat).all():
        raise NumericError("non-finite gradient")
    return flat


def numpy_loss(g: Graph, nodes, params: LgtlParams, cfg: TrainConfig) -> float:
    """Mean cross-entropy computed node by node with the numpy reference forward."""
    from .attention import attend
    from .model import lgtl_forward, logits as head
    from .templates import ho_tokens, nd_tokens, none_tokens

    labels = g.require_labels()
    total = 0.0
    for u in nodes:
        if cfg.template == "lgtl":
            z = lgtl_forward(g, u, params, cfg.seed, cfg.ablation).representation
        else:
            if cfg.template == "none":
                tl = none_tokens(g, u)
            elif cfg.template == "ho":
                tl = ho_tokens(g, u, cfg.hop_count)
            else:
                tl = nd_tokens(g, u, cfg.sample_sizes, cfg.seed)[0]
            z = attend(tl, params.projections).output[0]
        lg = head(params, z)
        m = lg.max()
        total += m + math.log(np.exp(lg - m).sum()) - lg[labels[u]]
    return total / len(nodes)


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    worst_name: str
    analytic: float
    numeric: float
    checked: int


def grad_check(g: Graph, params: LgtlParams, eps: float = 1e-5, cfg: TrainConfig | None = None,
               nodes=None, names=None, floor: float = 1e-3) -> GradCheckReport:
    """Compare autograd gradients with central differences of the numpy loss.

    Relative error per coordinate is ``|a - f| / max(|a|, |f|, floor)``.
    ``names`` restricts the check to some parameter arrays.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise PreconditionError("eps must lie in [1e-6, 1e-3]")
    cfg = cfg or TrainConfig(hop_count=params.hop_count, sample_sizes=params.sample_sizes)
    nodes = list(range(g.num_nodes)) if nodes is None else list(nodes)
    analytic = gradients(g, nodes, params, cfg)
    base = params.flat()
    spans, pos = [], 0
    for name, a in params.named_arrays():
        spans.append((name, pos, pos + a.size))
        pos += a.size
    worst = (0.0, -1, "", 0.0, 0.0)
    checked = 0
    for name, lo, hi in spans:
        if names is not None and name not in names:
            continue
        for i in range(lo, hi):
            up, dn = base.copy(), base.copy()
            up[i] += eps
            dn[i] -= eps
            fd = (numpy_loss(g, nodes, params.with_flat(up), cfg)
                  - numpy_loss(g, nodes, params.with_flat(dn), cfg)) / (2 * eps)
            err = abs(analytic[i] - fd) / max(abs(analytic[i]), abs(fd), floor)
            checked += 1
            if err > worst[0] or worst[1] < 0:
                worst = (err, i, name, float(analytic[i]), float(fd))
    return GradCheckReport(worst[0], worst[1], worst[2], worst[3], worst[4], checked)


# --
# Training loop

@dataclass
class TrainResult:
    params: LgtlParams
    curve: list = field(default_factory=list)  # (epoch, loss, train_acc, val_micro)
    best_epoch: int = 0
    best_val: float = float("nan")


def predict(g: Graph, params: LgtlParams, nodes, cfg: TrainConfig, st: Structure | None = None) -> np.ndarray:
    st = st or Structure(g, cfg)
    with torch.no_grad():
        lg = forward_batch(st, to_tensors(params), nodes, _slopes(params))["logits"].numpy()
    return argmax_lowest(lg)


def evaluate(g: Graph, params: LgtlParams, nodes, cfg: TrainConfig | None = None,
             st: Structure | None = None) -> Metrics:
    nodes = list(nodes)
    if not nodes:
        raise DomainError("no nodes to evaluate")
    cfg = cfg or TrainConfig(hop_count=params.hop_count, sample_sizes=params.sample_sizes)
    pred = predict(g, params, nodes, cfg, st)
    return classification_metrics(g.require_labels()[nodes], pred, g.class_count)


def train(g: Graph, splits: SplitSpec, cfg: TrainConfig, init_params: LgtlParams) -> TrainResult:
    """Plain full-batch gradient descent with early stopping on validation micro-F1.

    Returns the parameters from the epoch with the best validation score.
    """
    cfg.validate()
    splits.validate(g.num_nodes)
    g.require_labels()
    if not splits.train:
        raise PreconditionError("train split is empty")
    result = TrainResult(init_params)
    if cfg.epochs == 0:
        return result
    st = Structure(g, cfg)
    tensors = to_tensors(init_params)
    names = trainable_names(cfg)
    for n in names:
        tensors[n].requires_grad_(True)
    slopes = _slopes(init_params)
    labels = g.require_labels()
    train_nodes = list(splits.train)
    val_nodes = list(splits.val) or train_nodes
    best_val, best_epoch, best = -1.0, 0, init_params
    since = 0
    for epoch in range(1, cfg.epochs + 1):
        if cfg.resample:
            st = Structure(g, cfg, sample_seed=cfg.seed + epoch)
        loss = batch_loss(st, tensors, train_nodes, slopes)
        if not torch.isfinite(loss):
            raise NumericError("loss is not finite", epoch)
        grads = torch.autograd.grad(loss, [tensors[n] for n in names], allow_unused=True)
        with torch.no_grad():
            for n, gr in zip(names, grads):
                if gr is not None:  # e.g. selection weights when there are no hops
                    tensors[n] -= cfg.learning_rate * gr
            out = forward_batch(st, tensors, train_nodes + val_nodes, slopes)["logits"].numpy()
        pred = argmax_lowest(out)
        k = len(train_nodes)
        train_acc = float(np.mean(pred[:k] == labels[train_nodes]))
        val = classification_metrics(labels[val_nodes], pred[k:]).micro_f1
        result.curve.append((epoch, float(loss.detach()), train_acc, val))
        if val > best_val:
            best_val, best_epoch, since = val, epoch, 0
            best = from_tensors(init_params, tensors)
        else:
            since += 1
            if since > cfg.early_stop_patience:
                break
    result.params, result.best_epoch, result.best_val = best, best_epoch, best_val
    return result


def config_for(template: str, base: TrainConfig, **overrides) -> TrainConfig:
    return replace(base, template=template, **overrides)
