"""Command-line front door; each subcommand delegates to its owning module.

    waferfa generate-dataset --preset paper-synthetic --seed 1 --out ds/
    waferfa train --dataset ds/ --out model.npz
    waferfa eval --model model.npz --dataset ds/ --report text
    waferfa simulate --scenario case1.yaml --port 5000 --seed 1
    waferfa telemetry ingest|dump ...
    waferfa index add|query|stats ...
    waferfa run --map wafer.png --equipment-id EQ-INSP-01 ...
    waferfa serve --port 8000
    waferfa ablate --cases 5 --out ablation/
    waferfa latency-report --runs 20

Exit code 0 means no operation-level error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def cmd_generate_dataset(args) -> int:
    from .synth import PRESETS, write_dataset

    if args.preset not in PRESETS:
        return _fail(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
    counts, val_counts = PRESETS[args.preset]
    manifest = write_dataset(counts, args.out, seed=args.seed, val_counts=val_counts)
    print(
        f"wrote {manifest['total']} samples "
        f"({len(manifest['split']['train'])} train / {len(manifest['split']['val'])} val) to {args.out}"
    )
    return 0


def cmd_train(args) -> int:
    from .mlp import TrainConfig, evaluate, load_dataset_features, save_model, train

    X, y, split = load_dataset_features(args.dataset)
    config = TrainConfig(epochs=args.epochs, seed=args.seed, learning_rate=args.learning_rate,
                         batch_size=args.batch_size)
    model, curve = train(X[split["train"]], y[split["train"]], config)
    save_model(model, args.out)
    report = evaluate(model, X[split["val"]], y[split["val"]]) if len(split["val"]) else None
    print(f"trained {config.epochs} epochs; final train loss {curve[-1]:.4f}; model -> {args.out}")
    if report:
        print(f"val accuracy {report.accuracy:.1%}, macro F1 {report.macro_f1:.3f}")
    return 0


def cmd_eval(args) -> int:
    from .mlp import evaluate, load_dataset_features, load_model

    model = load_model(args.model)
    X, y, split = load_dataset_features(args.dataset)
    part = split[args.split]
    report = evaluate(model, X[part], y[part])
    if args.report == "json":
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        print(report.to_text())
    return 0


def cmd_simulate(args) -> int:
    from .equipsim import EquipmentServer, load_scenario
    from .telemetry import TelemetryLog

    scenario = load_scenario(args.scenario)
    store = TelemetryLog(args.store) if args.store else None
    server = EquipmentServer(
        scenario,
        port=args.port,
        seed=args.seed,
        speed=args.speed,
        max_ticks=args.max_ticks,
        store=store,
    ).start()
    print(f"equipment {scenario.equipment_id} serving HSMS on port {server.port}", flush=True)
    try:
        while True:
            time.sleep(0.5)
            if args.max_ticks is not None and server.emitted and not args.stay_up:
                if server.emitted >= args.max_ticks:
                    break
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        if store is not None:
            store.close()
    print(f"emitted {server.emitted} messages")
    return 0


def cmd_telemetry(args) -> int:
    from .telemetry import TelemetryLog

    if args.telemetry_cmd == "ingest":
        from .equipsim import ingest_scenario, load_scenario

        store = TelemetryLog(args.store)
        scenario = load_scenario(args.scenario)
        n = ingest_scenario(store, scenario, ticks=args.ticks, seed=args.seed)
        store.close()
        print(f"ingested {n} events for {scenario.equipment_id} into {args.store}")
        return 0

    store = TelemetryLog(args.store)
    events = store.query_window(args.equipment, args.start, args.end)
    for event in events:
        print(event)
    print(f"# {len(events)} events", file=sys.stderr)
    return 0


def cmd_index(args) -> int:
    from .vindex import DefectCase, VectorIndex

    index = VectorIndex(args.index)
    if args.index_cmd == "add":
        record = json.loads(Path(args.case_file).read_text(encoding="utf-8"))
        index.upsert(DefectCase.from_record(record))
        print(f"upserted {record['case_id']}; index size {len(index)}")
        return 0
    if args.index_cmd == "query":
        embedding = np.asarray(json.loads(args.embedding), dtype=np.float64)
        for case, similarity in index.query_top_k(embedding, args.k):
            print(f"{similarity:.4f}  {case.case_id}  {case.defect_class}  {case.equipment_id}")
        return 0
    print(json.dumps(index.stats(), indent=2, sort_keys=True))
    return 0


def _registry_from_args(args):
    from .config import build_registry, load_config

    config = load_config(args.config) if getattr(args, "config", None) else load_config()
    if getattr(args, "data_dir", None):
        config = load_config(args.config, env={"WAFERFA_DATA_DIR": args.data_dir}) if args.config else \
            load_config(env={"WAFERFA_DATA_DIR": args.data_dir})
    return config, build_registry(config)


def cmd_run(args) -> int:
    from .pipeline import new_state, run_pipeline

    config, registry = _registry_from_args(args)
    state = new_state(
        map_path=args.map,
        equipment_id=args.equipment_id,
        lot_id=args.lot_id,
        wafer_id=args.wafer_id,
        timestamp=args.timestamp,
        inspection_time=args.inspection_time,
    )
    result = run_pipeline(
        state,
        registry,
        disable_telemetry=args.disable_telemetry,
        disable_retrieval=args.disable_retrieval,
    )
    report = result["report"]
    print(json.dumps({"report_id": report["report_id"],
                      "severity": report["severity"],
                      "classification": report["classification"]["defect_class"],
                      "errors": len(report["errors"])}, indent=2))
    if "json_path" in report:
        print(f"report written to {report['json_path']}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    config, registry = _registry_from_args(args)
    serve(registry, host=args.host, port=args.port if args.port is not None else config.http_port)
    return 0


def cmd_ablate(args) -> int:
    """Run the four input-modality conditions side by side; no judging."""
    from .equipsim import BUNDLED_SCENARIOS, bundled_scenario_path, ingest_scenario, load_scenario
    from .knowledge import KnowledgeBase
    from .mlp import load_model
    from .pipeline import ABLATION_CONDITIONS, Registry, new_state, run_pipeline
    from .synth import EQUIPMENT_BY_CLASS, render, sample_seed
    from .telemetry import TelemetryLog
    from .vindex import DefectCase, VectorIndex
    from .features import extract_features

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    scenario_classes = ("scratch", "center_cluster", "ring_pattern", "edge_crack", "no_defect")
    model = load_model(args.model) if args.model else None
    knowledge = KnowledgeBase.load_default()

    store = TelemetryLog(None)
    for name in BUNDLED_SCENARIOS:
        ingest_scenario(store, load_scenario(bundled_scenario_path(name)), ticks=3600, seed=args.seed)

    index = VectorIndex()
    for defect_class in scenario_classes:
        mechanism = knowledge.top_prior_mechanism(defect_class)
        index.upsert(
            DefectCase(
                case_id=f"hist-{defect_class}",
                embedding=extract_features(render(defect_class, sample_seed(args.seed, defect_class, 0))),
                defect_class=defect_class,
                severity="MAJOR",
                root_cause_narrative=f"{knowledge.label(mechanism)}: historical precedent.",
                equipment_id=EQUIPMENT_BY_CLASS[defect_class],
                timestamp=1000.0,
            )
        )

    cases = []
    for i in range(args.cases):
        defect_class = scenario_classes[i % len(scenario_classes)]
        cases.append(
            dict(
                defect_class=defect_class,
                state=new_state(
                    wafer_map=render(defect_class, sample_seed(args.seed + 1, defect_class, i)),
                    equipment_id=EQUIPMENT_BY_CLASS[defect_class],
                    lot_id=f"LOT-2024-{900 + i:03d}",
                    wafer_id=f"W{i + 1:02d}",
                    timestamp=7200.0,
                ),
            )
        )

    for condition, (no_tlm, no_ret) in ABLATION_CONDITIONS.items():
        rows = []
        for case in cases:
            registry = Registry(knowledge=knowledge, model=model, index=index, telemetry=store)
            result = run_pipeline(
                dict(case["state"]),
                registry,
                disable_telemetry=no_tlm,
                disable_retrieval=no_ret,
            )
            rows.append(
                {
                    "defect_class": case["defect_class"],
                    "equipment_id": case["state"]["equipment_id"],
                    "predicted_class": result.get("defect_class"),
                    "hypotheses": [h.to_dict() for h in result.get("hypotheses", [])],
                }
            )
        path = out_dir / f"{condition}.json"
        path.write_text(json.dumps({"condition": condition, "cases": rows}, indent=2, sort_keys=True))
        print(f"{condition}: {len(rows)} hypothesis sets -> {path}")
    return 0


def cmd_latency_report(args) -> int:
    """Execute sample runs in-process and print the per-node breakdown."""
    from .metrics import MetricsCollector, latency_report
    from .mlp import load_model
    from .pipeline import NODE_NAMES, Registry, new_state, run_pipeline
    from .synth import CLASSES, EQUIPMENT_BY_CLASS, render, sample_seed

    metrics = MetricsCollector()
    model = load_model(args.model) if args.model else None
    registry = Registry(model=model, metrics=metrics)
    for i in range(args.runs):
        defect_class = CLASSES[i % len(CLASSES)]
        state = new_state(
            wafer_map=render(defect_class, sample_seed(args.seed, defect_class, i)),
            equipment_id=EQUIPMENT_BY_CLASS[defect_class],
            lot_id=f"LOT-2024-{800 + i:03d}",
            wafer_id=f"W{i + 1:02d}",
            timestamp=float(i),
        )
        run_pipeline(state, registry)
    print(latency_report(metrics, node_order=NODE_NAMES))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="waferfa", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-dataset", help="render a labeled wafer-map dataset")
    p.add_argument("--preset", required=True, choices=["paper-synthetic", "full-9class"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate_dataset)

    p = sub.add_parser("train", help="train the defect classifier on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=["train", "val"], default="val")
    p.add_argument("--report", choices=["text", "json"], default="text")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("simulate", help="serve a scenario as SECS/GEM equipment")
    p.add_argument("--scenario", required=True)
    p.add_argument("--port", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--max-ticks", type=int, default=None)
    p.add_argument("--store", default=None, help="also append emitted events to this telemetry dir")
    p.add_argument("--stay-up", action="store_true")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("telemetry", help="telemetry store operations")
    tsub = p.add_subparsers(dest="telemetry_cmd", required=True)
    d = tsub.add_parser("dump", help="print events in a window")
    d.add_argument("--store", required=True)
    d.add_argument("--equipment", required=True)
    d.add_argument("--from", dest="start", type=float, required=True)
    d.add_argument("--to", dest="end", type=float, required=True)
    g = tsub.add_parser("ingest", help="replay a scenario into a store without networking")
    g.add_argument("--store", required=True)
    g.add_argument("--scenario", required=True)
    g.add_argument("--ticks", type=int, default=3600)
    g.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_telemetry)

    p = sub.add_parser("index", help="vector index operations")
    isub = p.add_subparsers(dest="index_cmd", required=True)
    a = isub.add_parser("add", help="upsert a case from a JSON file")
    a.add_argument("--index", required=True)
    a.add_argument("--case-file", required=True)
    q = isub.add_parser("query", help="top-k query with a JSON array embedding")
    q.add_argument("--index", required=True)
    q.add_argument("--embedding", required=True)
    q.add_argument("-k", type=int, default=5)
    s = isub.add_parser("stats", help="print index statistics")
    s.add_argument("--index", required=True)
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("run", help="run one inspection through the pipeline")
    p.add_argument("--map", required=True)
    p.add_argument("--equipment-id", required=True)
    p.add_argument("--lot-id", required=True)
    p.add_argument("--wafer-id", required=True)
    p.add_argument("--timestamp", type=float, required=True)
    p.add_argument("--inspection-time", type=float, default=None)
    p.add_argument("--disable-telemetry", action="store_true")
    p.add_argument("--disable-retrieval", action="store_true")
    p.add_argument("--config", default=None)
    p.add_argument("--data-dir", default=None)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--data-dir", default=None)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("ablate", help="run the four input-modality conditions")
    p.add_argument("--cases", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("latency-report", help="per-node latency breakdown over sample runs")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--model", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_latency_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # CLI contract: nonzero exit + message
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
