"""Benchmark definitions: ground-truth SCM, hypothesis space and exploration sets.

Definitions are YAML files. Mechanisms name a registered function from
:data:`ceo.scm.FUNCTIONS` plus its parameters, so new benchmarks need no code.
The bundled files live next to this module in ``benchmark_data/``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import config as cfg
from .errors import CeoError, ConfigError, UnknownBenchmark
from .graphs import (
    MANIPULATIVE,
    Dag,
    HypothesisSpace,
    InterventionSet,
    enumerate_chain_hypotheses,
)
from .scm import ClosedForm, NormalRoot, Scm, UniformRoot

BUNDLED_DIR = Path(__file__).with_name("benchmark_data")
BUNDLED = ("synthetic", "health", "epi", "ext_epi")


@dataclass(frozen=True)
class OptimumRecord:
    """Best intervention found by the brute-force oracle."""

    y_star: float
    targets: tuple[str, ...]
    x_star: tuple[float, ...]
    stderr: float
    grid: int = 0
    mc_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "y_star": float(self.y_star),
            "set": list(self.targets),
            "x_star": [float(v) for v in self.x_star],
            "stderr": float(self.stderr),
            "grid": int(self.grid),
            "mc_samples": int(self.mc_samples),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimumRecord":
        return cls(
            float(d["y_star"]),
            tuple(d["set"]),
            tuple(float(v) for v in d["x_star"]),
            float(d.get("stderr", 0.0)),
            int(d.get("grid", 0)),
            int(d.get("mc_samples", 0)),
        )


@dataclass(frozen=True, eq=False)
class Benchmark:
    name: str
    scm: Scm
    space: HypothesisSpace
    exploration_sets: tuple[InterventionSet, ...]
    true_index: int
    optimum: Optional[OptimumRecord]
    n_observational: int = 200
    n_initial: int = 2
    direction: str = "min"
    path: Optional[Path] = None

    def __iter__(self):
        # unpacks as (scm, space, exploration sets, domains, optimum)
        return iter((self.scm, self.space, self.exploration_sets, self.domains, self.optimum))

    @property
    def domains(self) -> dict:
        out = {}
        for s in self.exploration_sets:
            out.update(zip(s.targets, s.domain))
        return out

    @property
    def true_graph(self) -> Dag:
        return self.space[self.true_index]

    @property
    def wrong_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(len(self.space)) if i != self.true_index)

    def set_by_name(self, name: str) -> InterventionSet:
        for s in self.exploration_sets:
            if s.name == name:
                return s
        raise KeyError(name)


def benchmark_path(name: str) -> Path:
    if name in BUNDLED:
        return BUNDLED_DIR / f"{name}.yaml"
    p = Path(name)
    if p.suffix in (".yaml", ".yml") and p.exists():
        return p
    raise UnknownBenchmark(f"unknown benchmark {name!r}; valid names: {', '.join(BUNDLED)}")


def make_benchmark(name: str) -> Benchmark:
    """Load a bundled benchmark by name, or any definition file by path."""
    path = benchmark_path(name)
    return parse_benchmark(cfg.load(path), path)


def _pairs(doc: cfg.Located, value, *path) -> list[tuple[str, str]]:
    try:
        return [(str(a), str(b)) for a, b in value]
    except (TypeError, ValueError):
        raise doc.error("edges must be a list of [parent, child] pairs", *path) from None


def _root(doc, spec, path):
    kind = spec.get("root")
    if kind == "uniform":
        return UniformRoot(float(spec["low"]), float(spec["high"]))
    if kind == "normal":
        return NormalRoot(float(spec.get("mean", 0.0)), float(spec.get("sd", 1.0)))
    raise doc.error(f"unknown root distribution {kind!r}; expected uniform or normal", *path, "root")


def parse_benchmark(doc: cfg.Located, path: Optional[Path] = None) -> Benchmark:
    d = doc.data
    if not isinstance(d, dict):
        raise doc.error("benchmark definition must be a mapping")
    for key in ("name", "nodes", "true_graph", "mechanisms", "exploration_sets"):
        if key not in d:
            raise doc.error(f"missing required key {key!r}")
    try:
        nodes = [str(n["name"]) for n in d["nodes"]]
        roles = [str(n["role"]) for n in d["nodes"]]
    except (KeyError, TypeError):
        raise doc.error("each node needs a name and a role", "nodes") from None
    domains = {}
    for i, n in enumerate(d["nodes"]):
        if "domain" in n:
            lo, hi = n["domain"]
            domains[str(n["name"])] = (float(lo), float(hi))
    role_map = dict(zip(nodes, roles))
    try:
        true = Dag(tuple(nodes), tuple(roles), frozenset(_pairs(doc, d["true_graph"]["edges"], "true_graph")))
    except CeoError as exc:
        raise doc.error(str(exc), "true_graph") from None
    if true.target != d.get("target", true.target):
        raise doc.error(f"target {d['target']!r} does not match the node with the target role", "target")

    mechanisms, roots = {}, {}
    mech_cfg = d["mechanisms"]
    for v in nodes:
        if v not in mech_cfg:
            raise doc.error(f"no mechanism for node {v}", "mechanisms")
        spec = mech_cfg[v]
        pa = true.parents(v)
        if pa:
            if "function" not in spec:
                raise doc.error(f"node {v} has parents {pa} and needs a function", "mechanisms", v)
            try:
                mechanisms[v] = ClosedForm(
                    pa, str(spec["function"]), dict(spec.get("params") or {}), float(spec.get("noise_sd", 0.0))
                )
            except CeoError as exc:
                raise doc.error(str(exc), "mechanisms", v) from None
        else:
            roots[v] = _root(doc, spec, ("mechanisms", v))
    try:
        scm = Scm(true, mechanisms, roots)
    except CeoError as exc:
        raise doc.error(str(exc), "mechanisms") from None

    hyp = d.get("hypotheses") or {}
    try:
        if hyp.get("enumerate") == "chain":
            space = enumerate_chain_hypotheses()
            if space[0].edges != true.edges:
                raise doc.error("the chain enumeration requires the X->Z->Y true graph", "hypotheses")
        else:
            graphs, names = [true], ["true"]
            for j, w in enumerate(hyp.get("wrong") or []):
                edges = set(true.edges)
                edges -= set(_pairs(doc, w.get("remove", []), "hypotheses", "wrong", j))
                edges |= set(_pairs(doc, w.get("add", []), "hypotheses", "wrong", j))
                graphs.append(true.with_edges(edges))
                names.append(str(w.get("name", f"wrong{j}")))
            space = HypothesisSpace(tuple(graphs), tuple(names))
    except ConfigError:
        raise
    except CeoError as exc:
        raise doc.error(str(exc), "hypotheses") from None

    es = []
    for j, targets in enumerate(d["exploration_sets"]):
        targets = tuple(str(t) for t in targets)
        for t in targets:
            if role_map.get(t) != MANIPULATIVE:
                raise doc.error(f"exploration set member {t} is not a manipulative node", "exploration_sets", j)
            if t not in domains:
                raise doc.error(f"node {t} has no intervention domain", "exploration_sets", j)
        es.append(InterventionSet(targets, tuple(domains[t] for t in targets)))

    data = d.get("data") or {}
    optimum = OptimumRecord.from_dict(d["optimum"]) if d.get("optimum") else None
    direction = str(d.get("direction", "min"))
    if direction not in ("min", "max"):
        raise doc.error("direction must be min or max", "direction")
    return Benchmark(
        name=str(d["name"]),
        scm=scm,
        space=space,
        exploration_sets=tuple(es),
        true_index=space.index(true),
        optimum=optimum,
        n_observational=int(data.get("n_observational", 200)),
        n_initial=int(data.get("n_initial", 2)),
        direction=direction,
        path=path,
    )
