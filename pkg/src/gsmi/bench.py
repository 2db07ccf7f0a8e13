"""Parameter-sweep benchmark harness.

One sweep varies a single parameter over its standard range while holding
the others at their defaults (k=20, |candidates|=60, b=5, alpha=0.6).  All
methods at a parameter point share the dataset, index, query set, random
seed, and final Monte-Carlo evaluation budget, so rows are comparable.

Reports are written as plot-ready TSV plus a JSON twin carrying metadata
(dataset manifest hash, package version, evaluation budget), and rendered
to PNG figures (runtime and MC-evaluated influence against the swept
parameter) alongside the delimited output.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import influence as inf
from .brknn import batch_reverse_topk
from .datagen import generate_query_set, subsample_dataset
from .geo_core import build_distance_oracle
from .ignvd import build_index
from .solvers import (
    POLICIES,
    QuerySpec,
    make_context,
    solve_approx,
    solve_baseline,
    solve_heuristic,
    solve_policy,
)

PARAM_RANGES = {
    "k": (10, 15, 20, 25, 30),
    "pc": (20, 40, 60, 80, 100),
    "b": (1, 3, 5, 7, 9),
    "alpha": (0.0, 0.2, 0.4, 0.6, 0.8),
    "user-frac": (0.6, 0.7, 0.8, 0.9, 1.0),
    "poi-frac": (0.6, 0.7, 0.8, 0.9, 1.0),
}

DEFAULTS = {"k": 20, "pc": 60, "b": 5, "alpha": 0.6}

TSV_COLUMNS = (
    "param",
    "value",
    "method",
    "influence_mc",
    "influence_stderr",
    "total_s",
    "brknn_s",
    "selection_s",
    "rr_sets",
    "iterations",
    "ratio",
    "certified",
    "candidates",
    "pruned_lemma4",
    "keyword_drops",
    "pseudo_users_pruned",
    "nodes_pruned_outward",
    "manifest_sha256",
    "version",
)

ALL_METHODS = ("ba", "ap", "he") + POLICIES


@dataclass
class BenchReport:
    meta: dict
    rows: list = field(default_factory=list)

    def write_tsv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\t".join(TSV_COLUMNS) + "\n")
            for row in self.rows:
                fh.write("\t".join(str(row.get(c, "")) for c in TSV_COLUMNS) + "\n")
        return path

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"meta": self.meta, "rows": self.rows}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    def render_figures(self, directory):
        """PNG figures next to the delimited output; returns written paths."""
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        param = self.meta["param"]
        methods = sorted({r["method"] for r in self.rows})
        written = []
        panels = (
            ("influence_mc", "MC-evaluated influence", f"{param}_influence.png", None),
            ("total_s", "total runtime (s)", f"{param}_runtime.png", "log"),
        )
        for column, label, filename, yscale in panels:
            fig, ax = plt.subplots(figsize=(5.4, 3.4))
            for m in methods:
                pts = [(r["value"], r[column]) for r in self.rows if r["method"] == m]
                pts.sort()
                ax.plot([x for x, _ in pts], [y for _, y in pts], marker="o", label=m)
            ax.set_xlabel(param)
            ax.set_ylabel(label)
            if yscale:
                ax.set_yscale(yscale)
            ax.legend(fontsize=8)
            ax.grid(True, alpha=0.3)
            fig.tight_layout()
            out = directory / filename
            fig.savefig(out, dpi=150)
            plt.close(fig)
            written.append(out)
        return written


def _value_key(v):
    return int(v) if float(v).is_integer() and abs(v) >= 1 else v


def run_benchmark(
    dataset,
    index,
    param,
    methods=("ap", "he", "maxbrknn", "random"),
    seed=0,
    mc_budget=1000,
    cluster=1,
    threads=1,
    frequent_threshold=None,
    epsilon=0.1,
    delta=None,
):
    """Sweep one parameter; every method at a point shares inputs and budget."""
    if param not in PARAM_RANGES:
        raise ValueError(f"unknown sweep parameter {param!r} (choose from {sorted(PARAM_RANGES)})")
    methods = tuple(methods)
    if not methods:
        raise ValueError("empty method list")
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}")
    if frequent_threshold is None:
        frequent_threshold = max(3, index.threshold)
    meta = {
        "param": param,
        "range": list(PARAM_RANGES[param]),
        "methods": list(methods),
        "defaults": dict(DEFAULTS),
        "seed": seed,
        "mc_budget": mc_budget,
        "cluster": cluster,
        "manifest_sha256": dataset.manifest.get("sha256", ""),
        "version": __version__,
    }
    report = BenchReport(meta=meta)

    for value in PARAM_RANGES[param]:
        point = dict(DEFAULTS)
        ds, idx = dataset, index
        if param in ("user-frac", "poi-frac"):
            fracs = {"user_frac": 1.0, "poi_frac": 1.0}
            fracs["user_frac" if param == "user-frac" else "poi_frac"] = value
            ds = subsample_dataset(dataset, rng=np.random.default_rng([seed, 5]), **fracs)
            idx = build_index(ds, threshold=index.threshold,
                              fanout=index.gtree.fanout, leaf_capacity=index.gtree.leaf_capacity)
        else:
            point[param] = value

        pois = generate_query_set(
            ds,
            size=point["pc"],
            cluster=cluster,
            rng=np.random.default_rng([seed, 7]),
            frequent_threshold=frequent_threshold,
        )
        spec = QuerySpec(
            poi_ids=pois,
            b=point["b"],
            k=point["k"],
            alpha=point["alpha"],
            epsilon=epsilon,
            delta=delta,
            seed=seed,
        )
        ctx = make_context(ds, idx, spec)
        t0 = time.perf_counter()
        shared_batch = batch_reverse_topk(ctx, spec.poi_ids, spec.k)
        shared_brknn_s = time.perf_counter() - t0

        eval_rng = np.random.default_rng([seed, 13])

        def evaluate(selected):
            seeds = set()
            for p in selected:
                seeds.update(shared_batch.members[p])
            return inf.estimate_influence_mc(ds.social, seeds, mc_budget, eval_rng)

        for method in methods:
            if method == "ba":
                out = solve_baseline(
                    spec, ds, idx, ctx=ctx, brknn_result=shared_batch, threads=threads
                )
                out.timings["brknn"] = shared_brknn_s
            elif method == "ap":
                out = solve_approx(
                    spec, ds, idx, ctx=ctx, brknn_result=shared_batch, threads=threads
                )
                out.timings["brknn"] = shared_brknn_s
            elif method == "he":
                out = solve_heuristic(spec, ds, idx, ctx=ctx, threads=threads)
            else:
                out = solve_policy(
                    method, spec, ds, idx, ctx=ctx, brknn_result=shared_batch, mc_budget=mc_budget
                )
                out.timings.setdefault("brknn", shared_brknn_s)
            mean, stderr = evaluate(out.selected)
            stats = out.stats or {}
            report.rows.append(
                {
                    "param": param,
                    "value": _value_key(value),
                    "method": method,
                    "influence_mc": round(mean, 4),
                    "influence_stderr": round(stderr, 4),
                    "total_s": round(out.timings.get("total", out.wall_time), 4),
                    "brknn_s": round(out.timings.get("brknn", 0.0), 4),
                    "selection_s": round(out.timings.get("selection", 0.0), 4),
                    "rr_sets": out.rr_sets,
                    "iterations": out.iterations,
                    "ratio": None if out.ratio is None else round(out.ratio, 4),
                    "certified": out.certified,
                    "candidates": stats.get("candidates", ""),
                    "pruned_lemma4": stats.get("pruned_lemma4", ""),
                    "keyword_drops": stats.get("keyword_drops", ""),
                    "pseudo_users_pruned": stats.get("pseudo_users_pruned", ""),
                    "nodes_pruned_outward": stats.get("nodes_pruned_outward", ""),
                    "manifest_sha256": ds.manifest.get("sha256", ""),
                    "version": __version__,
                }
            )
    return report
