"""Run configuration: one JSON document, strictly validated, with dot-path overrides.

Example::

    {
      "seed": 0,
      "domain": {"domain": "rocksample", "grid_n": 6, "k": 5, "placement_seed": 0},
      "search": {"n_sims": 500},
      "evaluation": {"episodes": 100, "mode": "mcts"}
    }

Any leaf can be overridden from the command line as ``--search.n_sims=200``;
values are parsed as JSON when possible and kept as strings otherwise.
"""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .evaluation import MODES
from .gnn.train import TrainingConfig
from .mcts import SearchConfig
from .oracle import ExpertConfig


@dataclass
class BeliefSection:
    n_particles: int = 1000


@dataclass
class GraphSection:
    tau: float = 0.05


@dataclass
class GnnSection:
    hidden: int = 128
    rounds: int = 3


@dataclass
class CollectSection:
    instances: list = field(default_factory=lambda: [
        {"domain": "rocksample", "grid_n": 4, "k": 2},
        {"domain": "rocksample", "grid_n": 4, "k": 3},
    ])
    episodes: int = 40  # per instance
    randomize_placement: bool = True  # rock layout drawn per episode from the seed
    workers: int = 1


@dataclass
class EvaluationSection:
    episodes: int = 100
    seed: int = 0
    mode: str = "mcts"
    workers: int = 1
    ladder: list = field(default_factory=lambda: [
        {"domain": "rocksample", "grid_n": 4, "k": 3},
        {"domain": "rocksample", "grid_n": 6, "k": 5},
        {"domain": "rocksample", "grid_n": 8, "k": 6},
        {"domain": "rocksample", "grid_n": 10, "k": 8},
    ])
    metrics: list = field(default_factory=lambda: ["mean", "stderr", "mean_planning_time"])


_SECTIONS = {
    "belief": BeliefSection,
    "graph": GraphSection,
    "gnn": GnnSection,
    "training": TrainingConfig,
    "search": SearchConfig,
    "expert": ExpertConfig,
    "collect": CollectSection,
    "evaluation": EvaluationSection,
}
_METRICS = ("mean", "stderr", "mean_planning_time", "mean_length")


@dataclass
class RunConfig:
    seed: int = 0
    domain: dict = field(default_factory=lambda: {"domain": "rocksample", "grid_n": 6, "k": 5, "placement_seed": 0})
    belief: BeliefSection = field(default_factory=BeliefSection)
    graph: GraphSection = field(default_factory=GraphSection)
    gnn: GnnSection = field(default_factory=GnnSection)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    collect: CollectSection = field(default_factory=CollectSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def model(self):
        from .domains import make_model

        return make_domain(self.domain, make_model)

    def training_config(self) -> TrainingConfig:
        """Training settings with the network shape taken from the gnn section."""
        return dataclasses.replace(self.training, hidden=self.gnn.hidden, rounds=self.gnn.rounds)

    def search_config(self) -> SearchConfig:
        return self.search.replace(tau=self.graph.tau)


def make_domain(spec: dict, factory):
    try:
        return factory(spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad domain spec {spec}: {exc}") from exc


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        sub = _SECTIONS.get(f.name) if cls is RunConfig else None
        kwargs[f.name] = _build(sub, value, f.name) if sub is not None else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path or 'config'}: {exc}") from exc


def _check_types(obj, default, path: str) -> None:
    for f in dataclasses.fields(obj):
        v, d = getattr(obj, f.name), getattr(default, f.name)
        where = f"{path}.{f.name}" if path else f.name
        if dataclasses.is_dataclass(d):
            _check_types(v, d, where)
        elif isinstance(d, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{where} must be a boolean")
        elif isinstance(d, int):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{where} must be an integer")
        elif isinstance(d, float):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{where} must be a number")
        elif isinstance(d, (str, list, dict)) and not isinstance(v, type(d)):
            raise ConfigError(f"{where} must be a {type(d).__name__}")


def from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, copy.deepcopy(data), "")
    _check_types(cfg, RunConfig(), "")
    if cfg.belief.n_particles < 1:
        raise ConfigError("belief.n_particles must be positive")
    if not 0.0 < cfg.graph.tau < 1.0:
        raise ConfigError("graph.tau must lie in (0, 1)")
    if cfg.gnn.hidden < 1 or cfg.gnn.rounds < 1:
        raise ConfigError("gnn.hidden and gnn.rounds must be positive")
    ev = cfg.evaluation
    if ev.mode not in MODES:
        raise ConfigError(f"evaluation.mode must be one of {MODES}")
    if ev.episodes < 1 or ev.workers < 1 or cfg.collect.workers < 1:
        raise ConfigError("evaluation.episodes and worker counts must be positive")
    bad = sorted(set(ev.metrics) - set(_METRICS))
    if bad:
        raise ConfigError(f"unknown metric(s): {bad}; choose from {_METRICS}")
    if cfg.collect.episodes < 0:
        raise ConfigError("collect.episodes must be >= 0")
    for spec in [cfg.domain, *cfg.collect.instances, *ev.ladder]:
        if not isinstance(spec, dict):
            raise ConfigError(f"instance specs must be objects, got {spec!r}")
    if "max_depth" not in data.get("search", {}) and str(cfg.domain.get("domain", "")).lower() == "lightdark":
        cfg.search = cfg.search.replace(max_depth=10)
    return cfg


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` assignments (leading dashes optional) to a raw config dict."""
    out = copy.deepcopy(data)
    for item in overrides:
        item = item.lstrip("-")
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        key, raw = item.split("=", 1)
        parts = key.split(".")
        if not all(parts):
            raise ConfigError(f"bad override path {key!r}")
        node = out
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r} descends into non-object {p!r}")
            node = nxt
        node[parts[-1]] = parse_value(raw)
    return out


def load_config(path=None, overrides: list[str] = ()) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(apply_overrides(data, list(overrides)))
