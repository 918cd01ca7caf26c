"""Command-line front end: generate, fit, predict, evaluate.

Exit codes: 0 success, 2 input/validation problems, 3 I/O failures,
4 numerical faults.  Progress goes to stderr; machine-readable output to
files or stdout.  All structured outputs are JSON or JSON lines; input
tables are the CSV formats of the data module.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .data import (
    DataError,
    Dataset,
    load_dataset_dir,
    load_relations_csv,
    write_dataset_dir,
)
from .generative import GroundTruth, sample_generative
from .inference import (
    ChainConfig,
    NumericalError,
    PosteriorSamples,
    load_samples,
    run_gibbs,
    save_samples,
)
from .predict_eval import (
    DEFAULT_TOPN,
    PredictionResult,
    accuracy,
    adjusted_rand_index,
    consensus_partition,
    fold_in_entity,
    predict_attribute,
    predict_relation,
    predict_relation_batch,
    roc_topn,
)
from .schema import SchemaError, load_schema, schema_hash

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


@dataclasses.dataclass
class RunManifest:
    """Reproducibility record written next to every command's outputs."""

    schema_hash: str
    input_digests: dict[str, str]
    config: dict | None
    version: str
    wall_clock_seconds: float
    seconds_per_sweep: float | None = None

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _probe_writable(out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    probe = os.path.join(out_dir, ".write_probe")
    with open(probe, "w") as fh:
        fh.write("")
    os.remove(probe)


def _parse_sizes(text: str) -> dict[str, int]:
    sizes = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        if not value:
            raise SchemaError(f"--sizes expects Class=count pairs, got {part!r}")
        sizes[name.strip()] = int(value)
    return sizes


def cmd_generate(args) -> int:
    started = time.perf_counter()
    schema = load_schema(args.schema)
    sizes = _parse_sizes(args.sizes)
    rng = np.random.default_rng(args.seed)
    dataset, truth = sample_generative(schema, sizes, rng)
    _probe_writable(args.out_dir)
    written = write_dataset_dir(args.out_dir, dataset)
    gt_path = os.path.join(args.out_dir, "ground_truth.json")
    with open(gt_path, "w", encoding="utf-8") as fh:
        fh.write(truth.to_json())
    written.append(gt_path)
    manifest = RunManifest(
        schema_hash=schema_hash(schema),
        input_digests={args.schema: _digest(args.schema)},
        config={"seed": args.seed, "sizes": sizes},
        version=__version__,
        wall_clock_seconds=time.perf_counter() - started,
    )
    manifest.write(os.path.join(args.out_dir, "manifest.json"))
    print(f"wrote {len(written) + 1} files to {args.out_dir}", file=sys.stderr)
    return EXIT_OK


def _load_inputs(args):
    schema = load_schema(args.schema)
    dataset, dicts = load_dataset_dir(schema, args.data_dir)
    return schema, dataset, dicts


def _run_chain(schema, dataset, config, label):
    def progress(sweep, state, ll):
        if sweep % 100 == 0 or sweep == config.iterations:
            ks = ", ".join(f"{name}:{state.K[ci]}" for ci, name in enumerate(state.class_names))
            print(f"[{label}] sweep {sweep}/{config.iterations}  K {ks}  loglik {ll:.2f}",
                  file=sys.stderr)

    return run_gibbs(schema, dataset, config, progress=progress)


def cmd_fit(args) -> int:
    started = time.perf_counter()
    schema, dataset, _ = _load_inputs(args)
    config = ChainConfig(
        iterations=args.iterations,
        burn_in=args.burn_in,
        thin=args.thin,
        param_update_period=args.param_update_period,
        mode=args.mode,
        seed=args.seed,
    )
    config.validate()
    configs = [dataclasses.replace(config, seed=config.seed + i) for i in range(args.chains)]
    if args.chains == 1:
        results = [_run_chain(schema, dataset, configs[0], "chain0")]
    else:
        with ThreadPoolExecutor(max_workers=args.chains) as pool:
            futures = [
                pool.submit(_run_chain, schema, dataset, cfg, f"chain{i}")
                for i, cfg in enumerate(configs)
            ]
            results = [f.result() for f in futures]

    for i, samples in enumerate(results):
        if args.chains > 1:
            save_samples(f"{args.out}.chain{i}", samples, schema)
    merged = PosteriorSamples(
        states=[s for r in results for s in r.states],
        config=config,
        log_likelihood_trace=np.concatenate([r.log_likelihood_trace for r in results]),
        snapshot_sweeps=[sw for r in results for sw in r.snapshot_sweeps],
    )
    # merged sweep indices repeat per chain; keep the trace aligned per chain file
    if args.chains > 1:
        merged.snapshot_sweeps = list(range(1, len(merged.states) + 1))
        merged.log_likelihood_trace = np.asarray(
            [r.log_likelihood_trace[sw - 1] for r in results for sw in r.snapshot_sweeps]
        )
    save_samples(args.out, merged, schema)
    wall = time.perf_counter() - started
    manifest = RunManifest(
        schema_hash=schema_hash(schema),
        input_digests={
            args.schema: _digest(args.schema),
            **{
                os.path.join(args.data_dir, f): _digest(os.path.join(args.data_dir, f))
                for f in sorted(os.listdir(args.data_dir))
                if f.endswith(".csv")
            },
        },
        config=dataclasses.asdict(config) | {"chains": args.chains},
        version=__version__,
        wall_clock_seconds=wall,
        seconds_per_sweep=wall / (config.iterations * args.chains),
    )
    manifest.write(args.out + ".manifest.json")
    return EXIT_OK


def _resolve_entity(dicts, entity_class, ident):
    ids = dicts.entity_ids.get(entity_class, {})
    if str(ident) in ids:
        return ids[str(ident)]
    raise DataError(f"unknown {entity_class} identifier {ident!r}")


def _query_result(doc, samples, dataset, dicts):
    kind = doc.get("type", "relation")
    if kind == "relation":
        rc = dataset.schema.relation_class(doc["relation"])
        s = _resolve_entity(dicts, rc.subject_class, doc["subject"])
        o = _resolve_entity(dicts, rc.object_class, doc["object"])
        res = predict_relation(samples, doc["relation"], s, o, dataset)
    elif kind == "attribute":
        e = _resolve_entity(dicts, doc["entity_class"], doc["entity"])
        res = predict_attribute(samples, doc["entity_class"], e, doc["attribute"], dataset)
    elif kind == "fold_in":
        ec = dataset.schema.entity_class(doc["entity_class"])
        attr_obs = {}
        for name, raw in doc.get("attributes", {}).items():
            codes = dicts.attribute_values.get(ec.name, {}).get(name, {})
            attr_obs[name] = codes.get(str(raw), raw if isinstance(raw, int) else None)
            if attr_obs[name] is None:
                raise DataError(f"cannot code attribute value {raw!r} for {name!r}")
        rel_obs = []
        for item in doc.get("relations", []):
            rel_name, role, counterpart, raw = item
            rc = dataset.schema.relation_class(rel_name)
            cp_class = rc.object_class if role == "subject" else rc.subject_class
            cp = _resolve_entity(dicts, cp_class, counterpart)
            codes = dicts.relation_values.get(rel_name, {})
            value = codes.get(str(raw), raw if isinstance(raw, int) else None)
            if value is None:
                raise DataError(f"cannot code relation value {raw!r} for {rel_name!r}")
            rel_obs.append((rel_name, role, cp, value))
        memberships = fold_in_entity(samples, doc["entity_class"], attr_obs, rel_obs)
        return {"query": doc, "memberships": [m.tolist() for m in memberships],
                "samples_used": len(memberships)}
    else:
        raise DataError(f"unknown query type {kind!r}")
    return {"query": doc, "distribution": res.distribution.tolist(),
            "samples_used": res.samples_used}


def cmd_predict(args) -> int:
    schema, dataset, dicts = _load_inputs(args)
    samples = load_samples(args.samples, dataset)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        with open(args.queries, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                doc = json.loads(line)
                out.write(json.dumps(_query_result(doc, samples, dataset, dicts)) + "\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_evaluate(args) -> int:
    schema, dataset, dicts = _load_inputs(args)
    samples = load_samples(args.samples, dataset)
    report: dict = {"metric": args.metric}

    if args.metric == "ari":
        if not args.ground_truth:
            raise DataError("--metric ari requires --ground-truth")
        with open(args.ground_truth, "r", encoding="utf-8") as fh:
            truth = GroundTruth.from_json(fh.read())
        report["ari"] = {}
        for name, z_true in truth.assignments.items():
            consensus = consensus_partition(samples.assignments(name))
            report["ari"][name] = adjusted_rand_index(consensus, z_true)
    else:
        if not args.test:
            raise DataError(f"--metric {args.metric} requires --test")
        relation = args.relation or dataset.schema.relation_classes[0].name
        rc = dataset.schema.relation_class(relation)
        test = load_relations_csv(args.test, schema, relation, dicts)
        report["relation"] = relation
        report["test_triples"] = int(test.shape[0])
        if args.metric == "accuracy":
            dists = predict_relation_batch(samples, relation, test[:, :2], dataset)
            preds = [PredictionResult({"i": i}, d, len(samples.states)) for i, d in enumerate(dists)]
            report["accuracy"] = accuracy(preds, test[:, 2])
        elif args.metric == "roc":
            n_values = [int(x) for x in args.topn.split(",")] if args.topn else list(DEFAULT_TOPN)
            subjects = sorted(set(int(s) for s in test[:, 0]))
            if args.subjects:
                with open(args.subjects, "r", encoding="utf-8") as fh:
                    wanted = {line.strip() for line in fh if line.strip()}
                ids = dicts.entity_ids[rc.subject_class]
                keep = {ids[w] for w in wanted if w in ids}
                subjects = [s for s in subjects if s in keep]
            n_obj = dataset.entity_counts[rc.object_class]
            pairs = np.array([(s, o) for s in subjects for o in range(n_obj)], dtype=np.int64)
            dists = predict_relation_batch(samples, relation, pairs, dataset)
            scores = 1.0 - dists[:, 0]
            score_map = {
                s: scores[i * n_obj: (i + 1) * n_obj] for i, s in enumerate(subjects)
            }
            truth_map: dict[int, set] = {s: set() for s in subjects}
            for s, o, v in test:
                if int(s) in truth_map and int(v) > 0:
                    truth_map[int(s)].add(int(o))
            curve = roc_topn(score_map, truth_map, n_values)
            report["roc"] = [
                {"n": n, "sensitivity": sens, "one_minus_specificity": fpr}
                for n, sens, fpr in curve.points
            ]
        else:
            raise DataError(f"unknown metric {args.metric!r}")

    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relmix", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a synthetic dataset from the prior")
    p.add_argument("--schema", required=True)
    p.add_argument("--sizes", required=True, help="per-class entity counts, e.g. User=100,Movie=80")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="run Gibbs sampling on a dataset directory")
    p.add_argument("--schema", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--iterations", type=int, required=True)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--mode", choices=["collapsed", "instantiated"], default="collapsed")
    p.add_argument("--param-update-period", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="answer relation/attribute/fold-in queries")
    p.add_argument("--schema", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score held-out triples or partition recovery")
    p.add_argument("--schema", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--test", default=None, help="held-out triples CSV")
    p.add_argument("--relation", default=None)
    p.add_argument("--metric", choices=["accuracy", "roc", "ari"], default="accuracy")
    p.add_argument("--topn", default=None, help="comma-separated N values (default 5,10,...,50)")
    p.add_argument("--subjects", default=None, help="file of subject identifiers to keep (roc)")
    p.add_argument("--ground-truth", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, DataError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as e:
        dump = getattr(args, "out", None)
        if dump and e.state is not None:
            try:
                with open(str(dump) + ".crashdump.json", "w", encoding="utf-8") as fh:
                    json.dump({
                        "sweep": e.sweep,
                        "assignments": {
                            name: e.state.z[ci].tolist()
                            for ci, name in enumerate(e.state.class_names)
                        },
                    }, fh)
            except OSError:
                pass
        print(f"numerical fault: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
