"""Configuration-driven experiment runner.

A config is a JSON document; ``ExperimentConfig.from_dict`` validates it and
fills in every default so that ``to_dict`` echoes the fully resolved setup.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import List, Optional

import numpy as np

from ensemble_rkhs import __version__
from ensemble_rkhs.clustering import LINKAGES, agglomerative_cluster, cut_clusters, pairwise_mmd
from ensemble_rkhs.ensemble import (
    DEFAULT_C_TRAJ,
    EnsembleSystem,
    IndexSet,
    TimeGrid,
    check_bounded,
    integral_output_array,
    moments_array,
    sample_index_points,
    simulate_batch,
)
from ensemble_rkhs.errors import ConfigError
from ensemble_rkhs.markov import (
    MarkovParams,
    aggregated_markov_parameters,
    baseline_outputs,
    gradient_flow,
    realize_scalar_field,
)
from ensemble_rkhs.presets import PRESETS, get_preset, polynomial_system
from ensemble_rkhs.rkhs import (
    KernelConfig,
    SampleSet,
    decide,
    gram_matrix,
    mmd_from_grams,
    test_threshold,
    two_sample_test,
)
from ensemble_rkhs.signals import SignalSpec, generate_signals, lambda_table, stack_step_values

log = logging.getLogger(__name__)

MODES = {"recognize": "recognize", "samplesizesweep": "sweep", "sweep": "sweep",
         "flow": "flow", "cluster": "cluster"}


@dataclass
class SignalsConfig:
    count: int = 200
    piece_width: float = 0.02
    T: float = 1.0
    box_lo: List[float] = field(default_factory=lambda: [-5.0])
    box_hi: List[float] = field(default_factory=lambda: [5.0])
    seed: int = 0
    shared: bool = True


@dataclass
class BetasConfig:
    count: int = 50
    mode: str = "uniform"
    seed: int = 0
    shared: bool = False


@dataclass
class FlowConfig:
    J: int = 10
    step: float = 1e-3
    iters: int = 500
    guard: bool = True
    eta0: Optional[List[float]] = None
    realize_degree: Optional[int] = None


@dataclass
class ClusterConfig:
    linkage: str = "average"
    k: int = 2


@dataclass
class SweepConfig:
    sizes: List[int] = field(default_factory=lambda: [2, 5, 10, 20, 50, 100])
    repeats: int = 50
    seed: int = 0


@dataclass
class ExperimentConfig:
    name: str
    mode: str
    systems: List
    signals: SignalsConfig = field(default_factory=SignalsConfig)
    betas: BetasConfig = field(default_factory=BetasConfig)
    time_step: float = 0.02
    observation: Optional[str] = None
    moments: List[int] = field(default_factory=lambda: [1])
    cumulative_moments: bool = False
    sigma: float = 1.0
    alpha: float = 0.05
    C: float = 1.0
    calibrate: bool = False
    reference: Optional[int] = None
    flow: Optional[FlowConfig] = None
    cluster: Optional[ClusterConfig] = None
    sweep: Optional[SweepConfig] = None
    paper_scale: dict = field(default_factory=dict)
    c_traj: float = DEFAULT_C_TRAJ
    notes: str = ""
    output_dir: str = "out"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = copy.deepcopy(raw)
        try:
            mode = MODES[str(raw.pop("mode")).lower()]
        except KeyError as exc:
            raise ConfigError(f"missing or unknown mode: {exc}") from None
        subs = {"signals": SignalsConfig, "betas": BetasConfig, "flow": FlowConfig,
                "cluster": ClusterConfig, "sweep": SweepConfig}
        kwargs = {}
        for key, value in raw.items():
            if key in subs:
                if not isinstance(value, dict):
                    raise ConfigError(f"'{key}' must be an object")
                value = dict(value)
                if key == "signals" and "box" in value:
                    lo, hi = value.pop("box")
                    value["box_lo"], value["box_hi"] = _as_list(lo), _as_list(hi)
                try:
                    kwargs[key] = subs[key](**value)
                except TypeError as exc:
                    raise ConfigError(f"bad '{key}' block: {exc}") from None
            elif key in cls.__dataclass_fields__:
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        if "name" not in kwargs or "systems" not in kwargs:
            raise ConfigError("config needs 'name' and 'systems'")
        cfg = cls(mode=mode, **kwargs)
        for key, sub in (("flow", FlowConfig), ("cluster", ClusterConfig), ("sweep", SweepConfig)):
            if mode == key and getattr(cfg, key) is None:
                setattr(cfg, key, sub())
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def with_paper_scale(self) -> "ExperimentConfig":
        out = copy.deepcopy(self)
        for key, value in self.paper_scale.items():
            block, _, attr = key.partition(".")
            target = getattr(out, block)
            if not hasattr(target, attr):
                raise ConfigError(f"paper_scale key {key!r} does not name a config field")
            setattr(target, attr, value)
        out.validate()
        return out

    def validate(self) -> None:
        s, b = self.signals, self.betas
        if not isinstance(self.systems, list) or not self.systems:
            raise ConfigError("'systems' must be a non-empty list")
        if int(s.count) < 1:
            raise ConfigError("signals.count must be >= 1")
        if int(b.count) < 1:
            raise ConfigError("betas.count must be >= 1")
        if b.mode not in ("uniform", "grid"):
            raise ConfigError("betas.mode must be 'uniform' or 'grid'")
        if not (s.piece_width > 0 and s.T > 0 and self.time_step > 0):
            raise ConfigError("piece_width, T and time_step must be positive")
        for num, den, what in ((s.T, self.time_step, "T / time_step"),
                               (s.piece_width, self.time_step, "piece_width / time_step"),
                               (s.T, s.piece_width, "T / piece_width")):
            r = num / den
            if abs(r - round(r)) > 1e-9 * max(1.0, r):
                raise ConfigError(f"{what} must be an integer")
        if len(s.box_lo) != len(s.box_hi) or any(lo > hi for lo, hi in zip(s.box_lo, s.box_hi)):
            raise ConfigError("signal box must satisfy lo <= hi componentwise")
        if not self.sigma >= 0:
            raise ConfigError("sigma must be non-negative")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.C > 0:
            raise ConfigError("C must be positive")
        orders = self.moments
        if not orders or any(int(a) < 1 for a in orders) or any(
                y <= x for x, y in zip(orders, orders[1:])):
            raise ConfigError("moments must be a strictly increasing list of positive orders")
        if self.observation not in (None, "moments", "integral"):
            raise ConfigError("observation must be 'moments' or 'integral'")
        if self.mode == "flow":
            f = self.flow
            if f.J < 1 or f.step < 0 or f.iters < 1:
                raise ConfigError("flow needs J >= 1, step >= 0, iters >= 1")
            if f.eta0 is not None and len(f.eta0) != f.J:
                raise ConfigError("flow.eta0 must have J entries")
        if self.mode == "cluster":
            if self.cluster.linkage not in LINKAGES:
                raise ConfigError(f"cluster.linkage must be one of {LINKAGES}")
            if not 1 <= self.cluster.k <= len(self.systems):
                raise ConfigError("cluster.k must lie in [1, number of systems]")
            if len(self.systems) < 2:
                raise ConfigError("clustering needs at least two systems")
        if self.mode == "sweep":
            if any(int(i) < 2 for i in self.sweep.sizes) or self.sweep.repeats < 1:
                raise ConfigError("sweep sizes must be >= 2 and repeats >= 1")
        if self.reference is not None and not 0 <= self.reference < len(self.systems):
            raise ConfigError("reference must index into systems")
        for entry in self.systems:
            _resolve_system(entry)  # raises ConfigError on unknown presets


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def load_config(path_or_name: str) -> ExperimentConfig:
    """Load a JSON config from a path, or a bundled config by name."""
    p = Path(path_or_name)
    if p.exists():
        text = p.read_text(encoding="utf-8")
    else:
        name = p.name if p.suffix == ".json" else p.name + ".json"
        try:
            text = resources.files("ensemble_rkhs").joinpath("configs", name).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"no config file or bundled config named {path_or_name!r}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(raw)


def bundled_configs() -> List[str]:
    root = resources.files("ensemble_rkhs").joinpath("configs")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _resolve_system(entry):
    """Returns (label, system, default observation)."""
    if isinstance(entry, str):
        entry = {"preset": entry}
    if not isinstance(entry, dict):
        raise ConfigError(f"system entry must be a preset name or object, got {entry!r}")
    try:
        if "preset" in entry:
            name = entry["preset"]
            if name not in PRESETS:
                raise ConfigError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")
            system = get_preset(name)
            observation = PRESETS[name]["observation"]
            label = entry.get("label", name)
            if "index_set" in entry:
                system = system.with_index_set(IndexSet(*entry["index_set"]))
        else:
            for key in ("A", "B", "index_set"):
                if key not in entry:
                    raise ConfigError(f"inline system needs {key!r}")
            system = polynomial_system(IndexSet(*entry["index_set"]), entry["A"], entry["B"],
                                       entry.get("C"), entry.get("x0"), entry.get("label", ""))
            observation = entry.get("observation", "moments")
            label = entry.get("label", "inline")
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid system definition {entry!r}: {exc}") from None
    return label, system, observation


def _derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


@dataclass
class SimulatedEnsemble:
    label: str
    system: EnsembleSystem
    betas: np.ndarray
    signals: list
    samples: SampleSet  # all configured moment orders (or the integral output)


def simulate_ensembles(cfg: ExperimentConfig, threads: int = 1) -> List[SimulatedEnsemble]:
    """Generate signals, simulate, aggregate and optionally calibrate every system."""
    grid = TimeGrid(cfg.signals.T, cfg.time_step)
    resolved = [_resolve_system(e) for e in cfg.systems]
    labels = [r[0] for r in resolved]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"system labels must be distinct: {labels}")
    m = resolved[0][1].input_dim
    if any(r[1].input_dim != m for r in resolved):
        raise ConfigError("all systems must take the same input dimension")
    s = cfg.signals
    lo = np.broadcast_to(np.asarray(s.box_lo, dtype=float), (m,))
    hi = np.broadcast_to(np.asarray(s.box_hi, dtype=float), (m,))

    def spec_for(i):
        seed = s.seed if s.shared else _derived_seed(s.seed, i)
        return SignalSpec(m, s.piece_width, s.T, tuple(lo), tuple(hi), seed)

    def run(i):
        label, system, default_obs = resolved[i]
        obs = cfg.observation or default_obs
        bseed = cfg.betas.seed if cfg.betas.shared else _derived_seed(cfg.betas.seed, i)
        betas = sample_index_points(system.index_set, int(cfg.betas.count), cfg.betas.mode, bseed)
        signals = generate_signals(spec_for(i), int(s.count))
        controls = stack_step_values(signals, grid)
        states = simulate_batch(system, controls, betas, grid)

        def aggregate(x):
            if obs == "integral":
                if system.C is None:
                    raise ConfigError(f"system {label!r} has no output map for integral observation")
                return integral_output_array(x, betas, system.C, system.index_set)
            return moments_array(x, betas, cfg.moments)

        y = aggregate(states)
        del states
        if cfg.calibrate:
            null = simulate_batch(system, np.zeros((1,) + controls.shape[1:]), betas, grid)
            y = y - aggregate(null)
        check_bounded(y, cfg.c_traj)
        log.info("simulated %s: %d signals x %d index points", label, len(signals), len(betas))
        return SimulatedEnsemble(label, system, betas, signals, SampleSet(grid, y))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, range(len(resolved))))
    return [run(i) for i in range(len(resolved))]


def _moment_prefixes(cfg: ExperimentConfig, ens: SimulatedEnsemble):
    """(orders, column slice) for each evaluated moment set."""
    n = ens.system.state_dim
    if cfg.observation == "integral" or (cfg.observation is None and ens.samples.q != n * len(cfg.moments)):
        return [(None, slice(None))]
    if cfg.cumulative_moments:
        return [(cfg.moments[:d], slice(0, d * n)) for d in range(1, len(cfg.moments) + 1)]
    return [(list(cfg.moments), slice(None))]


def _restrict(s: SampleSet, cols) -> SampleSet:
    return SampleSet(s.time_grid, s.values[:, :, cols])


def run_recognition(cfg: ExperimentConfig, ensembles: List[SimulatedEnsemble]) -> dict:
    kcfg = KernelConfig(cfg.sigma)
    labels = [e.label for e in ensembles]
    n = len(ensembles)
    out = []
    for orders, cols in _moment_prefixes(cfg, ensembles[0]):
        sets = [_restrict(e.samples, cols) for e in ensembles]
        within = [gram_matrix(s, s, kcfg) for s in sets]
        pairs = ([(cfg.reference, j) for j in range(n) if j != cfg.reference]
                 if cfg.reference is not None else
                 [(i, j) for i in range(n) for j in range(i + 1, n)])
        tests = []
        table = np.full((n, n), np.nan)
        for i, j in pairs:
            if len(sets[i]) != len(sets[j]):
                raise ConfigError("recognition needs equal sample sizes")
            h = mmd_from_grams(within[i], within[j], gram_matrix(sets[i], sets[j], kcfg))
            thr = test_threshold(cfg.C, cfg.alpha, len(sets[i]))
            table[i, j] = table[j, i] = h
            tests.append({"a": labels[i], "b": labels[j], "mmd2": h, "mmd2_floored": max(h, 0.0),
                          "threshold": thr, "alpha": cfg.alpha, "I": len(sets[i]),
                          "sigma": cfg.sigma, "decision": decide(h, thr).value})
        split = {}
        for k, s in enumerate(sets):
            half = len(s) // 2
            if half >= 2:
                res = two_sample_test(s.subset(range(half)), s.subset(range(half, 2 * half)),
                                      kcfg, cfg.C, cfg.alpha)
                table[k, k] = res.mmd2
                split[labels[k]] = res.to_dict()
        out.append({"orders": orders, "tests": tests, "split_half": split,
                    "table": table.tolist()})
    return {"labels": labels, "moment_sets": out}


def sweep_sample_size(cfg: ExperimentConfig, sizes=None, repeats=None,
                      master: Optional[SampleSet] = None, seed=None) -> List[dict]:
    """Repeated two-sample statistics on random subsets of one master sample set.

    When 2 I fits in the master set the two subsets are the halves of one
    draw without replacement; otherwise they are drawn independently and
    may overlap.
    """
    sw = cfg.sweep or SweepConfig()
    sizes = list(sizes if sizes is not None else sw.sizes)
    repeats = int(repeats if repeats is not None else sw.repeats)
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if master is None:
        master = simulate_ensembles(cfg)[0].samples
    kcfg = KernelConfig(cfg.sigma)
    full = gram_matrix(master, master, kcfg)
    rng = np.random.default_rng(sw.seed if seed is None else seed)
    rows = []
    for I in sizes:
        I = int(I)
        if I < 2:
            raise ValueError("subset sizes must be >= 2")
        if I > len(master):
            raise ValueError(f"subset size {I} exceeds master set of {len(master)}")
        thr = test_threshold(cfg.C, cfg.alpha, I)
        hs = []
        for _ in range(repeats):
            if 2 * I <= len(master):
                a, b = np.split(rng.choice(len(master), 2 * I, replace=False), 2)
            else:
                a = rng.choice(len(master), I, replace=False)
                b = rng.choice(len(master), I, replace=False)
            hs.append(mmd_from_grams(full[np.ix_(a, a)], full[np.ix_(b, b)], full[np.ix_(a, b)]))
        hs = np.array(hs)
        rows.append({"I": I, "mean_h": float(hs.mean()), "std_h": float(hs.std()) if repeats > 1 else 0.0,
                     "threshold": thr, "accept_fraction": float(np.mean(hs <= thr))})
    return rows


def run_flow(cfg: ExperimentConfig, ens: SimulatedEnsemble) -> dict:
    f = cfg.flow
    s1 = ens.samples
    if s1.q != 1:
        raise ConfigError("the flow needs a scalar measurement (use the integral observation)")
    table = lambda_table(ens.signals, f.J, s1.time_grid)
    eta0 = MarkovParams(f.eta0 if f.eta0 is not None else np.zeros(f.J))
    res = gradient_flow(eta0, s1, table, KernelConfig(cfg.sigma), f.step, f.iters, f.guard)
    out = {"h_initial": float(res.h_path[0]), "h_final": float(res.h_path[-1]),
           "eta_final": res.final.eta.tolist(), "flow": res}
    sys = ens.system
    if sys.is_linear and sys.C is not None and sys.input_dim == 1:
        out["eta_true"] = aggregated_markov_parameters(sys, f.J).eta.tolist()
    out["baseline"] = baseline_outputs(res.final, table)
    if f.realize_degree is not None:
        out["realization"] = realize_scalar_field(res.final, f.realize_degree, sys.index_set)
    return out


def run_clustering(cfg: ExperimentConfig, ensembles: List[SimulatedEnsemble]) -> dict:
    dm = pairwise_mmd([e.samples for e in ensembles], KernelConfig(cfg.sigma),
                      [e.label for e in ensembles])
    tree = agglomerative_cluster(dm, cfg.cluster.linkage)
    labels = cut_clusters(tree, cfg.cluster.k)
    groups = [[e.label for e, c in zip(ensembles, labels) if c == k] for k in range(cfg.cluster.k)]
    return {"matrix": dm, "dendrogram": tree, "assignment": labels, "clusters": groups}


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_trajectories(path: Path, ensembles, extra=None) -> None:
    grid = ensembles[0].samples.time_grid
    cols, data = ["t"], [grid.times]
    for e in ensembles:
        for k in range(min(3, len(e.samples))):
            for c in range(e.samples.q):
                cols.append(f"{e.label}/y{k + 1}[{c}]")
                data.append(e.samples.values[k, :, c])
    for name, series in (extra or {}).items():
        cols.append(name)
        data.append(series)
    _write_csv(path, cols, zip(*data))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return None if not np.isfinite(x) else float(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> dict:
    """Run the configured pipeline and write report.json plus CSV artifacts."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    ensembles = simulate_ensembles(cfg, threads)
    out.mkdir(parents=True, exist_ok=True)
    results: dict = {}
    if cfg.mode == "recognize":
        results = run_recognition(cfg, ensembles)
        for ms in results["moment_sets"]:
            tag = "" if ms["orders"] is None else "_d" + "".join(str(o) for o in ms["orders"])
            _write_csv(out / f"mmd_table{tag}.csv", [""] + results["labels"],
                       ([lab] + row for lab, row in zip(results["labels"], ms["table"])))
            _write_csv(out / f"decisions{tag}.csv",
                       ["a", "b", "mmd2", "threshold", "I", "decision"],
                       ([t["a"], t["b"], t["mmd2"], t["threshold"], t["I"], t["decision"]]
                        for t in ms["tests"]))
    elif cfg.mode == "sweep":
        rows = sweep_sample_size(cfg, master=ensembles[0].samples)
        results = {"rows": rows}
        _write_csv(out / "sweep.csv", ["I", "mean_h", "std_h", "threshold", "accept_fraction"],
                   ([r["I"], r["mean_h"], r["std_h"], r["threshold"], r["accept_fraction"]] for r in rows))
    elif cfg.mode == "flow":
        fl = run_flow(cfg, ensembles[0])
        fl["flow"].to_csv(out / "flow_path.csv")
        extra = {f"yhat{k + 1}": fl["baseline"].values[k, :, 0]
                 for k in range(min(3, len(fl["baseline"])))}
        _write_trajectories(out / "trajectories.csv", ensembles[:1], extra)
        if "realization" in fl:
            fl["realization"].to_json(out / "realization.json")
            fl["realization"] = json.loads(fl["realization"].to_json())
        results = {k: v for k, v in fl.items() if k not in ("flow", "baseline")}
        results["iterations"] = len(fl["flow"].h_path) - 1
    elif cfg.mode == "cluster":
        cl = run_clustering(cfg, ensembles)
        cl["matrix"].to_csv(out / "distances.csv")
        cl["matrix"].to_csv(out / "distances_raw.csv", raw=True)
        cl["dendrogram"].to_csv(out / "dendrogram.csv")
        cl["dendrogram"].to_json(out / "dendrogram.json")
        results = {"labels": cl["matrix"].labels, "distances": cl["matrix"].d,
                   "distances_raw": cl["matrix"].raw, "diagonal": cl["matrix"].diagonal,
                   "merges": cl["dendrogram"].merges, "assignment": cl["assignment"],
                   "clusters": cl["clusters"]}
    if cfg.mode != "flow":
        _write_trajectories(out / "trajectories.csv", ensembles)
    report = {"config": cfg.to_dict(), "version": __version__, "mode": cfg.mode,
              "results": _jsonable(results)}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return report
