"""Command-line front end.

Subcommands: ``gen``, ``build-index``, ``brknn``, ``solve``, ``oracle``,
``bench``.  Every command is deterministic given ``--seed``.  Exit codes:
0 on success, 1 on usage errors, 2 on data errors.  ``--threads`` falls back
to the ``GSMI_THREADS`` environment variable.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import __version__, datagen
from .geo_core import DataError, build_distance_oracle, load_dataset, save_dataset
from .ignvd import IndexFormatError, build_index, load_index, save_index


def _threads(value):
    if value is not None:
        return value
    return int(os.environ.get("GSMI_THREADS", "1"))


def _parse_poi_list(text):
    if text.startswith("@"):
        raw = Path(text[1:]).read_text(encoding="utf-8")
        tokens = []
        for line in raw.splitlines():
            line = line.split("#", 1)[0]
            tokens.extend(line.replace(",", " ").split())
    else:
        tokens = text.replace(",", " ").split()
    try:
        return tuple(sorted({int(t) for t in tokens}))
    except ValueError as exc:
        raise DataError(f"malformed poi id list: {exc}") from None


def _load_pair(index_path, dataset_dir):
    index = load_index(index_path)
    directory = dataset_dir or index.dataset_path
    if not directory:
        raise DataError(
            "the index does not record its dataset directory; pass --dataset"
        )
    dataset = load_dataset(directory)
    if index.dataset_fingerprint and dataset.manifest.get("sha256"):
        if index.dataset_fingerprint != dataset.manifest["sha256"]:
            raise DataError("index was built from a different dataset bundle")
    return dataset, index


@click.group()
@click.version_option(version=__version__, prog_name="gsmi")
def cli():
    """Geo-social reverse top-k retrieval and influence-maximizing selection."""


@cli.command()
@click.option("--preset", type=click.Choice(sorted(datagen.PRESETS)), required=True)
@click.option("--seed", type=int, default=None, help="Override the preset seed.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def gen(preset, seed, out_dir):
    """Generate a synthetic dataset bundle."""
    config = datagen.preset(preset, seed=seed)
    dataset = datagen.generate(config)
    save_dataset(dataset, out_dir)
    click.echo(json.dumps(dataset.counts()))


@cli.command("build-index")
@click.option("--dataset", "dataset_dir", type=click.Path(), required=True)
@click.option("--threshold", type=int, required=True, help="Frequent-keyword document frequency.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--fanout", type=int, default=4, show_default=True)
@click.option("--leaf-capacity", type=int, default=64, show_default=True)
def build_index_cmd(dataset_dir, threshold, out_path, fanout, leaf_capacity):
    """Build and serialize the road-network/keyword index."""
    dataset = load_dataset(dataset_dir)
    index = build_index(
        dataset,
        threshold=threshold,
        fanout=fanout,
        leaf_capacity=leaf_capacity,
        dataset_path=str(Path(dataset_dir).resolve()),
    )
    save_index(index, out_path)
    click.echo(
        json.dumps(
            {
                "nodes": len(index.gtree.nodes),
                "frequent_keywords": len(index.frequent),
                "posting_lists": len(index.postings),
            }
        )
    )


@cli.command()
@click.option("--index", "index_path", type=click.Path(), required=True)
@click.option("--pois", required=True, help="Comma-separated ids or @file.")
@click.option("--k", type=int, required=True)
@click.option("--alpha", type=float, default=0.6, show_default=True)
@click.option("--dataset", "dataset_dir", type=click.Path(), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None, help="TSV output (default stdout).")
@click.option("--stats", "stats_path", type=click.Path(), default=None,
              help="Stats sidecar path (default <out>.stats.json).")
def brknn(index_path, pois, k, alpha, dataset_dir, out_path, stats_path):
    """Batch reverse top-k: emit poi_id<TAB>user_id rows plus a stats sidecar."""
    from .brknn import QueryContext, batch_reverse_topk
    from .scoring import ScoreParams

    dataset, index = _load_pair(index_path, dataset_dir)
    poi_ids = _parse_poi_list(pois)
    ctx = QueryContext(dataset, index, build_distance_oracle(dataset.road), ScoreParams(alpha=alpha))
    result = batch_reverse_topk(ctx, poi_ids, k)
    lines = []
    for p in sorted(result.members):
        for u in sorted(result.members[p]):
            lines.append(f"{p}\t{u}")
    body = "\n".join(lines) + ("\n" if lines else "")
    if out_path:
        Path(out_path).write_text(body, encoding="utf-8")
    else:
        click.echo(body, nl=False)
    sidecar = stats_path or (f"{out_path}.stats.json" if out_path else None)
    if sidecar:
        Path(sidecar).write_text(
            json.dumps(result.stats.as_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )


@cli.command()
@click.option("--index", "index_path", type=click.Path(), required=True)
@click.option("--dataset", "dataset_dir", type=click.Path(), default=None)
@click.option("--method", type=click.Choice(["ba", "ap", "he", "relevance", "influencer",
                                             "maxbrknn", "random"]), required=True)
@click.option("--pois", required=True, help="Comma-separated ids or @file.")
@click.option("--b", type=int, required=True)
@click.option("--k", type=int, default=20, show_default=True)
@click.option("--alpha", type=float, default=0.6, show_default=True)
@click.option("--epsilon", type=float, default=0.1, show_default=True)
@click.option("--delta", type=float, default=None, help="Defaults to 1/|V_s|.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--threads", type=int, default=None)
def solve(index_path, dataset_dir, method, pois, b, k, alpha, epsilon, delta, seed, out_path,
          threads):
    """Select b influence-maximizing POIs with the chosen method."""
    from .solvers import (
        QuerySpec,
        solve_approx,
        solve_baseline,
        solve_heuristic,
        solve_policy,
    )

    dataset, index = _load_pair(index_path, dataset_dir)
    spec = QuerySpec(
        poi_ids=_parse_poi_list(pois), b=b, k=k, alpha=alpha,
        epsilon=epsilon, delta=delta, seed=seed,
    )
    threads = _threads(threads)
    if method == "ba":
        outcome = solve_baseline(spec, dataset, index, threads=threads)
    elif method == "ap":
        outcome = solve_approx(spec, dataset, index, threads=threads)
    elif method == "he":
        outcome = solve_heuristic(spec, dataset, index, threads=threads)
    else:
        outcome = solve_policy(method, spec, dataset, index)
    payload = json.dumps(outcome.as_dict(), indent=2, sort_keys=True) + "\n"
    if out_path:
        Path(out_path).write_text(payload, encoding="utf-8")
    else:
        click.echo(payload, nl=False)


@cli.group()
def oracle():
    """Brute-force reference computations (slow, for verification)."""


@oracle.command("topk")
@click.option("--dataset", "dataset_dir", type=click.Path(), required=True)
@click.option("--user", type=int, required=True)
@click.option("--k", type=int, required=True)
@click.option("--alpha", type=float, default=0.6, show_default=True)
def oracle_topk_cmd(dataset_dir, user, k, alpha):
    from .oracles import oracle_topk
    from .scoring import ScoreParams

    dataset = load_dataset(dataset_dir)
    for pid, score in oracle_topk(dataset, user, k, ScoreParams(alpha=alpha)):
        click.echo(f"{pid}\t{score!r}")


@oracle.command("brknn")
@click.option("--dataset", "dataset_dir", type=click.Path(), required=True)
@click.option("--pois", required=True)
@click.option("--k", type=int, required=True)
@click.option("--alpha", type=float, default=0.6, show_default=True)
def oracle_brknn_cmd(dataset_dir, pois, k, alpha):
    from .oracles import oracle_brknn
    from .scoring import ScoreParams

    dataset = load_dataset(dataset_dir)
    members = oracle_brknn(dataset, _parse_poi_list(pois), k, ScoreParams(alpha=alpha))
    for p in sorted(members):
        for u in sorted(members[p]):
            click.echo(f"{p}\t{u}")


@oracle.command("influence")
@click.option("--dataset", "dataset_dir", type=click.Path(), required=True)
@click.option("--seeds", required=True, help="Comma-separated user ids or @file.")
@click.option("--mode", type=click.Choice(["exact", "mc"]), default="exact", show_default=True)
@click.option("--sims", type=int, default=10000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def oracle_influence_cmd(dataset_dir, seeds, mode, sims, seed):
    import numpy as np

    from .oracles import oracle_influence

    dataset = load_dataset(dataset_dir)
    value = oracle_influence(
        dataset, _parse_poi_list(seeds), mode=mode, n_sims=sims,
        rng=np.random.default_rng(seed),
    )
    click.echo(repr(value))


@cli.command()
@click.option("--dataset", "dataset_dir", type=click.Path(), required=True)
@click.option("--index", "index_path", type=click.Path(), required=True)
@click.option("--param", type=click.Choice(sorted(["k", "pc", "b", "alpha", "user-frac", "poi-frac"])),
              required=True)
@click.option("--methods", default="ap,he,maxbrknn,random", show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--mc-budget", type=int, default=1000, show_default=True)
@click.option("--cluster", type=int, default=1, show_default=True)
@click.option("--plots/--no-plots", default=True, show_default=True)
@click.option("--threads", type=int, default=None)
def bench(dataset_dir, index_path, param, methods, out_dir, seed, mc_budget, cluster, plots,
          threads):
    """Sweep one parameter and write TSV/JSON reports plus figures."""
    from .bench import run_benchmark

    dataset = load_dataset(dataset_dir)
    index = load_index(index_path)
    method_list = tuple(m.strip() for m in methods.split(",") if m.strip())
    if not method_list:
        raise click.UsageError("empty method list")
    report = run_benchmark(
        dataset,
        index,
        param,
        methods=method_list,
        seed=seed,
        mc_budget=mc_budget,
        cluster=cluster,
        threads=_threads(threads),
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_tsv(out / f"{param}_report.tsv")
    report.write_json(out / f"{param}_report.json")
    written = report.render_figures(out) if plots else []
    click.echo(json.dumps({"rows": len(report.rows),
                           "figures": [str(w) for w in written]}))


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        return 1
    except (DataError, IndexFormatError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
