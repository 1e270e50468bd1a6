"""Desk-scale reproductions of the template comparison, ablation, gate and selection analyses.

Every row of a report carries the hash of the configuration that produced it,
so any number can be regenerated from ``(config, seed)``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, DomainError
from .graph import Graph, SbmConfig, edge_homophily, generate_sbm, node_homophily
from .model import FULL, NO_GATE, NO_SELECTION, LgtlParams, lgtl_forward
from .rng import make_rng
from .training import (Structure, TrainConfig, evaluate, forward_batch, make_splits, predict, to_tensors, train)

HOMOPHILIC = {"p_intra": 0.04, "p_inter": 0.01}
HETEROPHILIC = {"p_intra": 0.005, "p_inter": 0.045}


@dataclass(frozen=True)
class ExperimentConfig:
    """Graph families, seeds and training settings shared by all analyses."""

    families: dict = field(default_factory=lambda: {"homophilic": dict(HOMOPHILIC),
                                                    "heterophilic": dict(HETEROPHILIC)})
    seeds: tuple = (0, 1, 2, 3, 4)
    nodes_per_class: int = 150
    class_count: int = 2
    feature_dim: int = 8
    class_mean_separation: float = 2.0
    noise_std: float = 1.0
    templates: tuple = ("none", "ho", "nd")
    hop_count: int = 3
    nd_sizes: tuple = (4, 2, 2)
    lgtl_sizes: tuple = (8, 8, 8)
    learning_rate: float = 0.3
    epochs: int = 500
    early_stop_patience: int = 100
    train_backbone: bool = False
    attention_scale: float = 0.0
    selection_width: int = 16
    random_draws: int = 100

    def __post_init__(self):
        for name in ("seeds", "templates", "nd_sizes", "lgtl_sizes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def validate(self):
        if not self.families:
            raise ConfigError("no graph families configured")
        if not self.seeds:
            raise ConfigError("no seeds configured")
        if len(self.nd_sizes) != self.hop_count or len(self.lgtl_sizes) != self.hop_count:
            raise ConfigError("sample sizes must have one entry per hop")
        for name, fam in self.families.items():
            if set(fam) - {"p_intra", "p_inter"}:
                raise ConfigError(f"family {name!r} has unknown keys")
            self.sbm(name, 0).validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def hash(self) -> str:
        """Short sha256 of the canonical JSON form."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def sbm(self, family: str, seed: int) -> SbmConfig:
        fam = self.families[family]
        return SbmConfig(self.nodes_per_class, self.class_count, float(fam["p_intra"]), float(fam["p_inter"]),
                         self.feature_dim, self.class_mean_separation, self.noise_std, seed)

    def train_config(self, template: str, seed: int, ablation: str = FULL) -> TrainConfig:
        sizes = self.nd_sizes if template == "nd" else self.lgtl_sizes
        return TrainConfig(self.learning_rate, self.epochs, seed, self.hop_count, sizes, ablation,
                           self.early_stop_patience, template, self.train_backbone)

    def init_params(self, template: str, seed: int) -> LgtlParams:
        sizes = self.nd_sizes if template == "nd" else self.lgtl_sizes
        return LgtlParams.init(self.feature_dim, self.hop_count, sizes, self.class_count, seed,
                               selection_width=self.selection_width, attention_scale=self.attention_scale)


@dataclass
class ExperimentReport:
    """Long-format rows ``(section, config_hash, dataset, template, ablation, seed, hop, metric, value)``."""

    config_hash: str
    rows: list = field(default_factory=list)

    HEADER = ("section", "config_hash", "dataset", "template", "ablation", "seed", "hop", "metric", "value")

    def add(self, section, dataset, template, ablation, seed, hop, metric, value):
        self.rows.append((section, self.config_hash, dataset, template, ablation, seed, hop, metric, float(value)))

    def extend(self, other: "ExperimentReport"):
        self.rows.extend(other.rows)

    def select(self, section=None, **match):
        keys = {k: self.HEADER.index(k) for k in match}
        out = []
        for r in self.rows:
            if section is not None and r[0] != section:
                continue
            if all(r[keys[k]] == v for k, v in match.items()):
                out.append(r)
        return out

    def mean(self, section, metric, **match) -> float:
        vals = [r[-1] for r in self.select(section, metric=metric, **match)]
        if not vals:
            raise DomainError(f"no rows for {section}/{metric} {match}")
        return float(np.mean(vals))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.rows:
            w.writerow(list(r[:-1]) + [f"{r[-1]:.10f}"])
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def dataset_id(family: str, seed: int) -> str:
    return f"{family}-{seed}"


def _graph(cfg: ExperimentConfig, family: str, seed: int):
    g = generate_sbm(cfg.sbm(family, seed))
    return g, make_splits(g.num_nodes, seed)


_FITTED: dict = {}
_FITTED_MAX = 64


def _fit(cfg, g, splits, template, seed, ablation=FULL):
    """Train one model; results are memoized since training is deterministic.

    The key is the config hash plus a digest of the graph, so analyses of the
    same config share trained LGTL models.
    """
    tc = cfg.train_config(template, seed, ablation)
    digest = hashlib.sha256(g.indptr.tobytes() + g.indices.tobytes() + g.features.tobytes()).hexdigest()
    key = (cfg.hash(), digest, template, seed, ablation)
    if key not in _FITTED:
        if len(_FITTED) >= _FITTED_MAX:
            _FITTED.pop(next(iter(_FITTED)))
        _FITTED[key] = train(g, splits, tc, cfg.init_params(template, seed)).params
    return _FITTED[key], tc


def run_preliminary(cfg: ExperimentConfig) -> ExperimentReport:
    """Train each fixed template on every family and seed; test metrics plus homophily groups.

    For every template other than ``none`` the test nodes it gets right while
    ``none`` gets them wrong form the "better" group, the reverse the "worse"
    group; the report gives each group's mean node homophily.
    """
    cfg.validate()
    rep = ExperimentReport(cfg.hash())
    for family in cfg.families:
        for seed in cfg.seeds:
            g, splits = _graph(cfg, family, seed)
            ds = dataset_id(family, seed)
            rep.add("graph", ds, "", "", seed, "", "edge_homophily", edge_homophily(g))
            test = list(splits.test)
            labels = g.require_labels()[test]
            preds = {}
            for template in cfg.templates:
                params, tc = _fit(cfg, g, splits, template, seed)
                m = evaluate(g, params, test, tc)
                rep.add("metrics", ds, template, FULL, seed, "", "micro_f1", m.micro_f1)
                rep.add("metrics", ds, template, FULL, seed, "", "macro_f1", m.macro_f1)
                preds[template] = predict(g, params, test, tc)
            if "none" not in preds:
                continue
            hom = np.array([node_homophily(g, u) if g.degree(u) else np.nan for u in test])
            base_ok = preds["none"] == labels
            for template, pred in preds.items():
                if template == "none":
                    continue
                ok = pred == labels
                for group, mask in (("better", ok & ~base_ok), ("worse", ~ok & base_ok)):
                    sel = hom[mask]
                    sel = sel[~np.isnan(sel)]
                    rep.add("homophily", ds, template, FULL, seed, "", f"{group}_count", len(sel))
                    if len(sel):
                        rep.add("homophily", ds, template, FULL, seed, "", f"{group}_mean", sel.mean())
    return rep


def run_ablation(cfg: ExperimentConfig) -> ExperimentReport:
    """LGTL with and without the gate and selection modules on every family and seed."""
    cfg.validate()
    rep = ExperimentReport(cfg.hash())
    for family in cfg.families:
        for seed in cfg.seeds:
            g, splits = _graph(cfg, family, seed)
            ds = dataset_id(family, seed)
            for ablation in (FULL, NO_GATE, NO_SELECTION):
                params, tc = _fit(cfg, g, splits, "lgtl", seed, ablation)
                m = evaluate(g, params, splits.test, tc)
                rep.add("metrics", ds, "lgtl", ablation, seed, "", "micro_f1", m.micro_f1)
                rep.add("metrics", ds, "lgtl", ablation, seed, "", "macro_f1", m.macro_f1)
    return rep


def gate_profile(g: Graph, params: LgtlParams, nodes, tc: TrainConfig) -> np.ndarray:
    """Mean gate weight per hop over ``nodes``."""
    st = Structure(g, tc)
    import torch

    with torch.no_grad():
        s = forward_batch(st, to_tensors(params), list(nodes), (params.gate.leaky_slope,
                                                                 params.selection.leaky_slope))["s_hat"]
    return s.numpy().mean(axis=0)


def selection_consistency(g: Graph, params: LgtlParams, nodes, seed: int, draws: int = 100,
                          uniform: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per hop: share of nodes whose top-weighted sampled node shares their label,
    the same share for a uniformly random sampled node (averaged over ``draws``),
    and how many nodes had a nonempty hop.

    The self-loop entry is excluded from the top pick. Exact ties are broken at
    random, since node ids are grouped by class in generated graphs.
    """
    labels = g.require_labels()
    L = params.hop_count
    top = np.zeros(L)
    rand = np.zeros(L)
    count = np.zeros(L)
    rng = make_rng(seed, 13)
    for u in nodes:
        out = lgtl_forward(g, u, params, seed, NO_SELECTION if uniform else FULL)
        for i in range(1, L + 1):
            beta = {v: b for v, b in out.betas[i].items() if v != u}
            if out.degenerate[i] or not beta:
                continue
            cands = sorted(beta)
            w = np.array([beta[v] for v in cands])
            tied = np.flatnonzero(w >= w.max() * (1 - 1e-12))
            best = cands[int(tied[rng.integers(len(tied))])]
            picks = rng.integers(0, len(cands), size=draws)
            count[i - 1] += 1
            top[i - 1] += labels[best] == labels[u]
            rand[i - 1] += np.mean(labels[np.asarray(cands)[picks]] == labels[u])
    with np.errstate(invalid="ignore", divide="ignore"):
        return top / count, rand / count, count


def run_gate_analysis(cfg: ExperimentConfig) -> ExperimentReport:
    """Mean gate weight per hop over test nodes after training LGTL."""
    cfg.validate()
    rep = ExperimentReport(cfg.hash())
    for family in cfg.families:
        for seed in cfg.seeds:
            g, splits = _graph(cfg, family, seed)
            params, tc = _fit(cfg, g, splits, "lgtl", seed)
            prof = gate_profile(g, params, splits.test, tc)
            for hop, value in enumerate(prof):
                rep.add("gate", dataset_id(family, seed), "lgtl", FULL, seed, hop, "mean_gate", value)
    return rep


def run_selection_analysis(cfg: ExperimentConfig) -> ExperimentReport:
    """Label agreement of the top selected node per hop against random picks."""
    cfg.validate()
    rep = ExperimentReport(cfg.hash())
    for family in cfg.families:
        for seed in cfg.seeds:
            g, splits = _graph(cfg, family, seed)
            params, _ = _fit(cfg, g, splits, "lgtl", seed)
            top, rand, count = selection_consistency(g, params, splits.test, seed, cfg.random_draws)
            ds = dataset_id(family, seed)
            for i in range(cfg.hop_count):
                if count[i] == 0:
                    continue
                rep.add("selection", ds, "lgtl", FULL, seed, i + 1, "top_beta", top[i])
                rep.add("selection", ds, "lgtl", FULL, seed, i + 1, "random", rand[i])
                rep.add("selection", ds, "lgtl", FULL, seed, i + 1, "nodes", count[i])
    return rep


def hop_means(rep: ExperimentReport, section: str, metric: str, family: str, hops: int) -> np.ndarray:
    """Average a per-hop metric over the seeds of one family."""
    out = []
    for hop in range(hops):
        vals = [r[-1] for r in rep.select(section, metric=metric, hop=hop)
                if r[2].rsplit("-", 1)[0] == family]
        out.append(float(np.mean(vals)) if vals else float("nan"))
    return np.array(out)


def family_mean(rep: ExperimentReport, family: str, template: str, ablation: str = FULL,
                metric: str = "micro_f1") -> float:
    vals = [r[-1] for r in rep.select("metrics", template=template, ablation=ablation, metric=metric)
            if r[2].rsplit("-", 1)[0] == family]
    if not vals:
        raise DomainError(f"no {metric} rows for {family}/{template}/{ablation}")
    return float(np.mean(vals))


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **kw)
