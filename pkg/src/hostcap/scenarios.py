"""Scenario generation, k-means reduction, Monte Carlo hosting-capacity runs,
and hosting-capacity distribution statistics.

Scenarios perturb a baseline day with independent Gaussian noise per channel,
clamped back to each channel's physical domain.  Reduction clusters the
flattened (z-normalized) channel vectors with k-means and keeps one real
scenario per cluster (the medoid), with probabilities equal to cluster member
fractions; the most extreme scenarios (highest total solar energy, highest
total load energy) are always retained because they stress the grid the most.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .der import ObjectiveWeights
from .hca import HcaConfig, HcaTrace, run_deterministic_hca
from .network import Network
from .profiles import ScenarioData


class ScenarioError(ValueError):
    pass


CHANNELS = ("alpha_pv", "t_out", "lmp", "fixed_load_p", "fixed_load_q",
            "baseline_bs", "baseline_ev", "baseline_hp")

# physical domain per channel; None leaves a side unclamped
_CLAMPS: dict[str, tuple[float | None, float | None]] = {
    "alpha_pv": (0.0, 1.0),
    "t_out": (None, None),
    "lmp": (None, None),
    "fixed_load_p": (0.0, None),
    "fixed_load_q": (0.0, None),
    "baseline_bs": (-1.0, 1.0),
    "baseline_ev": (-1.0, 1.0),
    "baseline_hp": (-1.0, 0.0),
}


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: tuple[ScenarioData, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.scenarios:
            raise ScenarioError("scenario set cannot be empty")
        total = sum(s.probability for s in self.scenarios)
        if abs(total - 1.0) > 1e-12:
            raise ScenarioError(f"probabilities sum to {total}, expected 1")
        H = self.scenarios[0].horizon
        n = self.scenarios[0].fixed_load_p.shape[0]
        for s in self.scenarios:
            if s.horizon != H or s.fixed_load_p.shape[0] != n:
                raise ScenarioError("scenarios are not dimensionally identical")

    def __len__(self) -> int:
        return len(self.scenarios)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([s.probability for s in self.scenarios])


def default_noise(baseline: ScenarioData, fraction: float = 0.05) -> dict[str, float]:
    """Per-channel noise std at a fraction of the channel's baseline peak."""
    out = {}
    for name in CHANNELS:
        peak = float(np.max(np.abs(getattr(baseline, name))))
        out[name] = fraction * peak
    return out


def generate_scenarios(baseline: ScenarioData, noise: dict[str, float],
                       count: int, seed: int) -> ScenarioSet:
    """`count` independent Gaussian perturbations of the baseline, clamped to
    each channel's domain, equally probable, reproducible from the seed."""
    if count < 1:
        raise ScenarioError("need at least one scenario")
    bad = set(noise) - set(CHANNELS)
    if bad:
        raise ScenarioError(f"unknown noise channels {sorted(bad)}")
    rng = np.random.default_rng(seed)
    scenarios = []
    for _ in range(count):
        fields = {}
        for name in CHANNELS:
            arr = np.asarray(getattr(baseline, name), dtype=float)
            std = float(noise.get(name, 0.0))
            if std > 0:
                arr = arr + rng.normal(0.0, std, size=arr.shape)
            lo, hi = _CLAMPS[name]
            if lo is not None or hi is not None:
                arr = np.clip(arr, lo, hi)
            fields[name] = arr
        scenarios.append(dataclasses.replace(baseline, probability=1.0 / count, **fields))
    return ScenarioSet(tuple(scenarios),
                       provenance={"seed": seed, "noise": dict(noise), "count": count})


# -- k-means reduction ------------------------------------------------------------

def scenario_features(sset: ScenarioSet) -> np.ndarray:
    """Flattened channel matrix (K, d), z-normalized per channel across the
    set; constant channels are dropped from the distance geometry."""
    cols = []
    for name in CHANNELS:
        stack = np.stack([np.asarray(getattr(s, name), dtype=float).ravel()
                          for s in sset.scenarios])
        mu = stack.mean()
        sd = stack.std()
        if sd > 1e-15:
            cols.append((stack - mu) / sd)
    if not cols:
        return np.zeros((len(sset), 1))
    return np.concatenate(cols, axis=1)


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [int(rng.integers(n))]
    for _ in range(k - 1):
        d2 = np.min(((X[:, None, :] - X[None, centers, :]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        if total <= 1e-30:
            # all remaining points coincide with a center: spread deterministically
            remaining = [i for i in range(n) if i not in centers]
            centers.append(remaining[0] if remaining else centers[-1])
            continue
        centers.append(int(rng.choice(n, p=d2 / total)))
    return X[centers].copy()


def lloyd_kmeans(X: np.ndarray, k: int, seed: int,
                 max_iter: int = 300) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    """Plain Lloyd iterations from a seeded k-means++ start.

    Returns (assignments, centroids, inertia, inertia history); the history is
    nonincreasing by construction of the two alternating steps.
    """
    if not (1 <= k <= X.shape[0]):
        raise ScenarioError(f"k={k} outside [1, {X.shape[0]}]")
    rng = np.random.default_rng(seed)
    C = _kmeans_pp_init(X, k, rng)
    history: list[float] = []
    assign: np.ndarray | None = None
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        history.append(float(d2[np.arange(X.shape[0]), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = X[assign == j]
            if len(members):
                C[j] = members.mean(axis=0)
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    inertia = float(d2[np.arange(X.shape[0]), assign].sum())
    return assign, C, inertia, history


def _extreme_indices(sset: ScenarioSet) -> list[int]:
    """Most severe scenarios by total solar energy and total load energy; a
    channel with no spread across the set has no meaningful extreme."""
    out = []
    for energies in (
        [float(np.sum(s.alpha_pv)) for s in sset.scenarios],
        [float(np.sum(s.fixed_load_p)) for s in sset.scenarios],
    ):
        spread = max(energies) - min(energies)
        if spread > 1e-12 * max(1.0, abs(max(energies))):
            out.append(int(np.argmax(energies)))
    return out


def kmeans_reduce(sset: ScenarioSet, k: int, seed: int = 0) -> tuple[ScenarioSet, float]:
    """Reduce to k representative scenarios (cluster medoids) with cluster
    member fractions as probabilities; the max-solar-energy and
    max-load-energy scenarios are force-included, each replacing the medoid
    nearest to it (inheriting that cluster's probability mass)."""
    K = len(sset)
    if k > K:
        raise ScenarioError(f"cannot reduce {K} scenarios to {k}")
    X = scenario_features(sset)
    assign, C, inertia, _ = lloyd_kmeans(X, k, seed)
    medoids: list[int] = []
    masses: list[float] = []
    for j in range(k):
        members = np.flatnonzero(assign == j)
        if len(members) == 0:
            continue
        d2 = ((X[members] - C[j]) ** 2).sum(axis=1)
        medoids.append(int(members[d2.argmin()]))
        masses.append(len(members) / K)
    forced: list[int] = []
    for ext in _extreme_indices(sset):
        if ext in medoids:
            forced.append(ext)
            continue
        # replace the nearest medoid, but never evict another forced extreme
        slots = [i for i, m in enumerate(medoids) if m not in forced] \
            or list(range(len(medoids)))
        d2 = ((X[[medoids[i] for i in slots]] - X[ext]) ** 2).sum(axis=1)
        medoids[slots[int(d2.argmin())]] = ext
        forced.append(ext)
    reduced = tuple(sset.scenarios[i].with_probability(m)
                    for i, m in zip(medoids, masses))
    prov = dict(sset.provenance)
    prov.update({"reduced_from": K, "k": k, "kmeans_seed": seed,
                 "medoid_indices": medoids})
    return ScenarioSet(reduced, prov), inertia


def elbow_curve(sset: ScenarioSet, k_max: int, seed: int = 0) -> list[tuple[int, float]]:
    """Inertia for k = 1..k_max under nested initialization (each k warm
    starts from the previous centroids plus the worst-assigned point), which
    makes the curve nonincreasing by construction."""
    K = len(sset)
    if k_max > K:
        raise ScenarioError(f"k_max={k_max} exceeds the set size {K}")
    X = scenario_features(sset)
    out: list[tuple[int, float]] = []
    C = X.mean(axis=0, keepdims=True)
    for k in range(1, k_max + 1):
        if k > 1:
            d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2).min(axis=1)
            C = np.vstack([C, X[int(d2.argmax())]])
        # Lloyd from the warm start
        for _ in range(300):
            d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
            assign = d2.argmin(axis=1)
            newC = C.copy()
            for j in range(k):
                members = X[assign == j]
                if len(members):
                    newC[j] = members.mean(axis=0)
            if np.allclose(newC, C, atol=1e-14):
                break
            C = newC
        d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        inertia = float(d2.min(axis=1).sum())
        out.append((k, inertia))
    return out


def elbow_pick(curve: list[tuple[int, float]]) -> int:
    """Largest-second-difference heuristic; callers may well pick by eye."""
    if len(curve) < 3:
        return curve[-1][0]
    inertias = [c[1] for c in curve]
    second = [inertias[i - 1] - 2 * inertias[i] + inertias[i + 1]
              for i in range(1, len(inertias) - 1)]
    return curve[1 + int(np.argmax(second))][0]


# -- Monte Carlo hosting capacity ----------------------------------------------------

@dataclass
class HcDistribution:
    """Hosting-capacity values across scenarios with summary statistics."""

    samples: np.ndarray
    partial: bool = False
    metric_samples: dict[str, np.ndarray] = field(default_factory=dict)
    traces: list[HcaTrace] | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))

    @property
    def std(self) -> float:
        # sample convention (n-1); a single sample has zero spread
        return float(np.std(self.samples, ddof=1)) if len(self.samples) > 1 else 0.0

    @property
    def min(self) -> float:
        return float(np.min(self.samples))

    @property
    def max(self) -> float:
        return float(np.max(self.samples))

    @property
    def median(self) -> float:
        return float(np.median(self.samples))

    def summary(self) -> dict:
        return {"mean": self.mean, "std": self.std, "min": self.min,
                "max": self.max, "median": self.median,
                "worst_case": self.min, "n": int(len(self.samples)),
                "partial": self.partial}

    def to_json_dict(self) -> dict:
        return {"samples": self.samples.tolist(), "summary": self.summary(),
                "metric_samples": {k: v.tolist() for k, v in self.metric_samples.items()}}

    def histogram_rows(self, bins: int = 10) -> list[tuple[float, float, int]]:
        counts, edges = np.histogram(self.samples, bins=bins)
        return [(float(edges[i]), float(edges[i + 1]), int(c))
                for i, c in enumerate(counts)]


def run_stochastic_hca(net: Network, cfg: HcaConfig, sset: ScenarioSet,
                       weights: ObjectiveWeights | None = None,
                       workers: int = 1) -> HcDistribution:
    """Independent iterative HCA per scenario; aggregates hosting capacities
    and per-scenario flow-metric extremes into a distribution.

    The conservative headline value is the worst case (distribution minimum);
    mean, median, and spread are reported alongside.
    """
    def one(scen: ScenarioData) -> HcaTrace:
        return run_deterministic_hca(net, cfg, scen, weights)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(one, sset.scenarios))
    else:
        traces = [one(s) for s in sset.scenarios]

    samples = np.array([t.final_hc for t in traces])
    partial = any(t.aborted for t in traces)
    metric_samples: dict[str, list[float]] = {
        "v_max": [], "v_mean": [], "i_max_pct": [], "i_mean_pct": []}
    for t in traces:
        feasible = [r.metrics for r in t.records if r.feasible and r.metrics is not None]
        if not feasible:
            continue
        metric_samples["v_max"].append(max(m.v_max for m in feasible))
        metric_samples["v_mean"].append(float(np.mean([m.v_mean for m in feasible])))
        metric_samples["i_max_pct"].append(max(m.i_max_pct for m in feasible))
        metric_samples["i_mean_pct"].append(float(np.mean([m.i_mean_pct for m in feasible])))
    return HcDistribution(samples, partial,
                          {k: np.array(v) for k, v in metric_samples.items()},
                          traces)


def gaussian_kde(samples, bandwidth: float | str = "auto"):
    """One-dimensional Gaussian kernel density evaluator.

    Auto bandwidth follows the Silverman rule; degenerate (all-equal) samples
    have no data-driven scale, so they demand an explicit bandwidth.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.size < 2:
        raise ScenarioError("kernel density needs at least two samples")
    if bandwidth == "auto":
        sd = float(np.std(arr, ddof=1))
        iqr = float(np.subtract(*np.percentile(arr, [75, 25])))
        scale = min(sd, iqr / 1.34) if iqr > 0 else sd
        if scale <= 0:
            raise ScenarioError(
                "degenerate samples: pass an explicit bandwidth")
        bw = 0.9 * scale * arr.size ** (-0.2)
    else:
        bw = float(bandwidth)
        if bw <= 0:
            raise ScenarioError("bandwidth must be positive")

    def density(x):
        x = np.asarray(x, dtype=float)
        z = (np.atleast_1d(x)[:, None] - arr[None, :]) / bw
        d = np.exp(-0.5 * z ** 2).sum(axis=1) / (arr.size * bw * math.sqrt(2 * math.pi))
        return d if np.ndim(x) else float(d[0])

    density.bandwidth = bw
    return density


# -- serialization ---------------------------------------------------------------

def save_scenario_set(sset: ScenarioSet, out_dir: str | Path) -> None:
    """Directory of per-channel CSV files plus a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    first = sset.scenarios[0]
    manifest = {
        "dt": first.dt,
        "horizon": first.horizon,
        "n_bus": int(first.fixed_load_p.shape[0]),
        "count": len(sset),
        "probabilities": [s.probability for s in sset.scenarios],
        "provenance": sset.provenance,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    for name in CHANNELS:
        path = out / f"{name}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            sample = np.asarray(getattr(first, name))
            if sample.ndim == 1:
                w.writerow(("scenario", "t", "value"))
                for k, s in enumerate(sset.scenarios):
                    for t, val in enumerate(np.asarray(getattr(s, name))):
                        w.writerow((k, t, repr(float(val))))
            else:
                w.writerow(("scenario", "bus", "t", "value"))
                for k, s in enumerate(sset.scenarios):
                    arr = np.asarray(getattr(s, name))
                    for b in range(arr.shape[0]):
                        for t in range(arr.shape[1]):
                            w.writerow((k, b, t, repr(float(arr[b, t]))))


def load_scenario_set(in_dir: str | Path) -> ScenarioSet:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    K, H, n = manifest["count"], manifest["horizon"], manifest["n_bus"]
    data: dict[str, np.ndarray] = {}
    for name in CHANNELS:
        with (src / f"{name}.csv").open() as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header == ["scenario", "t", "value"]:
            arr = np.zeros((K, H))
            for k, t, val in body:
                arr[int(k), int(t)] = float(val)
        else:
            arr = np.zeros((K, n, H))
            for k, b, t, val in body:
                arr[int(k), int(b), int(t)] = float(val)
        data[name] = arr
    scenarios = []
    for k in range(K):
        scenarios.append(ScenarioData(
            dt=manifest["dt"],
            alpha_pv=data["alpha_pv"][k], t_out=data["t_out"][k], lmp=data["lmp"][k],
            fixed_load_p=data["fixed_load_p"][k], fixed_load_q=data["fixed_load_q"][k],
            baseline_bs=data["baseline_bs"][k], baseline_ev=data["baseline_ev"][k],
            baseline_hp=data["baseline_hp"][k],
            probability=manifest["probabilities"][k]))
    return ScenarioSet(tuple(scenarios), manifest.get("provenance", {}))
