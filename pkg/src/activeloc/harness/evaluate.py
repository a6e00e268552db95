"""Paired evaluation of viewpoint-selection policies."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..policy import Policy, PolicyKind, rank_results, select
from .config import DEFAULT_THRESHOLDS, ExperimentConfig
from .dataset import RecordTable, SceneBundle, iter_sweeps, localization_results
from .seeds import SPLITS, Stream, derive_seed

logger = logging.getLogger(__name__)

# row order of the results table
ROW_ORDER = ("forward", "random", "max", "max+occl", "angle", "angle+occl", "fim", "fim+occl",
             "mlp", "mlp+occl", "vpt", "vpt+occl", "best")


def parse_policy(name, models=None, pixel_sigma=1.0, scalarization="trace") -> Policy:
    """``"max+occl"`` style names to policies; learned kinds take their model from ``models``."""
    base, _, suffix = name.partition("+")
    if suffix not in ("", "occl"):
        raise ValueError(f"unknown policy modifier in {name!r}")
    kind = PolicyKind(base)
    model = None
    if kind in (PolicyKind.MLP, PolicyKind.VPT):
        model = (models or {}).get(base)
        if model is None:
            raise ValueError(f"policy {name!r} needs a trained {base} model")
    return Policy(kind, suffix == "occl", scalarization, pixel_sigma, model)


def sort_rows(names):
    rank = {n: i for i, n in enumerate(ROW_ORDER)}
    return sorted(names, key=lambda n: (rank.get(n, len(ROW_ORDER)), n))


@dataclass
class EvalReport:
    thresholds: list
    policies: list
    recall: dict  # policy -> recall (%) per threshold
    cdf: dict  # policy -> [(position error m, cumulative fraction)]
    selections: dict  # policy -> [(split, scene, waypoint, candidate, pos_error_m, rot_error_deg)]
    n_waypoints: int = 0
    timing: dict = field(default_factory=dict)  # policy -> seconds and candidates/second

    def to_dict(self, include_timing=False):
        d = {
            "thresholds": [[float(a), float(b)] for a, b in self.thresholds],
            "policies": list(self.policies),
            "n_waypoints": int(self.n_waypoints),
            "recall": {p: [float(v) for v in self.recall[p]] for p in self.policies},
            "cdf": {p: [[float(e), float(f)] for e, f in self.cdf[p]] for p in self.policies},
            "selections": {p: [[int(a), int(b), int(c), int(k), float(e), float(r)]
                               for a, b, c, k, e, r in self.selections[p]] for p in self.policies},
        }
        if include_timing:
            d["timing"] = self.timing
        return d

    @classmethod
    def from_dict(cls, d):
        return cls([tuple(t) for t in d["thresholds"]], list(d["policies"]), d["recall"],
                   {p: [tuple(x) for x in v] for p, v in d["cdf"].items()},
                   {p: [tuple(x) for x in v] for p, v in d["selections"].items()},
                   d.get("n_waypoints", 0), d.get("timing", {}))

    def recall_at(self, policy, threshold):
        k = [tuple(map(float, t)) for t in self.thresholds].index(tuple(map(float, threshold)))
        return self.recall[policy][k]


def recall_row(pos_err, rot_err, thresholds):
    pe = np.asarray(pos_err, dtype=float)
    re = np.asarray(rot_err, dtype=float)
    if len(pe) == 0:
        return [0.0] * len(thresholds)
    return [100.0 * float(np.mean((pe <= d) & (re <= a))) for d, a in thresholds]


def cdf_pairs(pos_err):
    """(error, fraction of waypoints at or below it); failures never enter the curve."""
    pe = np.asarray(pos_err, dtype=float)
    n = len(pe)
    finite = np.sort(pe[np.isfinite(pe)])
    return [(float(e), (i + 1) / n) for i, e in enumerate(finite)]


def evaluate_table(table: RecordTable, policies, cam, master, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    """Run every policy on the stored sweep of each waypoint.

    Policies only see the candidates and their landmark features; the stored
    localization outcome of the chosen candidate is what they are scored on.
    """
    thresholds = [tuple(map(float, t)) for t in thresholds]
    by_name = {p.name: p for p in policies}
    names = sort_rows(by_name)
    picks = {n: [] for n in names}
    seconds = {n: 0.0 for n in names}
    n_cands = 0
    a = table.arrays
    groups = table.waypoint_groups()
    for g in groups:
        g = g[np.argsort(a["candidate"][g], kind="stable")]
        split, scene, wp = int(a["split"][g[0]]), int(a["scene"][g[0]]), int(a["waypoint"][g[0]])
        cands = [table.candidate(i) for i in g]
        feats = [table.features(i) for i in g]
        position = a["position"][g[0]]
        nxt = a["next_waypoint"][g[0]]
        n_cands += len(g)
        rseed = derive_seed(master, split, scene, wp, stream=Stream.RANDOM_POLICY)
        for n in names:
            p = by_name[n]
            t0 = time.perf_counter()
            if p.kind is PolicyKind.BEST_POSSIBLE:
                k, _ = rank_results(localization_results(table, g))
            else:
                k = select(p, None, None, cam, position, cands, nxt, rseed, feats).candidate.index
            seconds[n] += time.perf_counter() - t0
            i = g[k]
            picks[n].append((split, scene, wp, int(a["candidate"][i]), float(a["pos_error_m"][i]),
                             float(a["rot_error_deg"][i])))
    recall, cdf, timing = {}, {}, {}
    for n in names:
        pe = [s[4] for s in picks[n]]
        re = [s[5] for s in picks[n]]
        recall[n] = recall_row(pe, re, thresholds)
        cdf[n] = cdf_pairs(pe)
        timing[n] = {"seconds": seconds[n], "candidates": n_cands,
                     "candidates_per_second": n_cands / seconds[n] if seconds[n] > 0 else float("inf")}
    return EvalReport(thresholds, names, recall, cdf, picks, len(groups), timing)


def evaluate(bundles, policies, candidates_per_waypoint, thresholds=DEFAULT_THRESHOLDS, cfg=None, master=0,
             waypoints_per_scene=None) -> EvalReport:
    """Sweep every scene live and evaluate the policies on the shared draws.

    Identical to generating the test records and calling :func:`evaluate_table`.
    """
    cfg = cfg or ExperimentConfig()
    n_wp = waypoints_per_scene or cfg.test_waypoints_per_scene
    tables = []
    for b in bundles:
        sweeps = list(iter_sweeps(b, cfg, master, n_wp, candidates_per_waypoint))
        tables.append(RecordTable.from_sweeps(sweeps, b.split, cfg.threshold, bins=cfg.features.bins,
                                              heatmap=tuple(cfg.features.heatmap), d_tok=10 + b.lmap.d_app))
    return evaluate_table(RecordTable.concat(tables), policies, cfg.camera, master, thresholds)


def random_expectation(table: RecordTable, threshold):
    """Expected recall (%) of uniform random choice: the per-waypoint positive rate, averaged."""
    a = table.arrays
    ok = (a["pos_error_m"] <= threshold[0]) & (a["rot_error_deg"] <= threshold[1])
    return 100.0 * float(np.mean([ok[g].mean() for g in table.waypoint_groups()]))
