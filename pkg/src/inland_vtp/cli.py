"""Command-line pipeline: synth, prep, fit-gmm, build-lookup, train, predict, eval, plot-density."""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path


from . import __version__
from .errors import VTPError

DEFAULT_CONFIG = {
    "seed": 0,
    "threads": 1,
    "workdir": "run",
    "paths": {
        "geometry": "geometry.json",
        "gmm_trips": "gmm_year/trips.jsonl",
        "gmm_gauges": "gmm_year/gauges.csv",
        "model_trips": "model_year/trips.jsonl",
        "model_gauges": "model_year/gauges.csv",
    },
    "scenario": {"preset": "benchmark", "n_trips": 4200, "gmm_n_trips": 4200, "gmm_seed": 101, "model_seed": 202},
    "prep": {"n_steps": 11, "split": [0.8, 0.1, 0.1], "split_seed": 0},
    "gmm": {"C_max": 4, "min_samples": 20},
    "lookup": {"m_max": 150, "m_prime": 100, "r_d": 0.5, "s_max": 0.6, "r_v": 100, "H": 10},
    "model": {"cell": "gru", "d_model": 128, "d_ff": 512, "dropout": 0.0},
    "train": {"lr": 1e-4, "batch_size": 128, "max_epochs": 1000, "patience": 50, "clip": 1.0,
              "time_limit_s": None},
    "predict": {"n_samples": 40, "freeze_context": False},
    "eval": {"variants": ["trans", "gmm-trans", "gmm-trans-rnn"], "baselines": True},
}

VARIANT_LABELS = {"trans": "Trans", "gmm-trans": "GMM-Trans", "gmm-trans-rnn": "GMM-Trans-RNN"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("UsageError", message)
        sys.exit(1)


def _emit_error(name: str, message: str) -> None:
    print(json.dumps({"error": name, "message": message}), file=sys.stderr)


# -- config and files ------------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None, args: argparse.Namespace) -> dict:
    cfg = DEFAULT_CONFIG
    if path is not None:
        with open(path) as fh:
            cfg = _merge(cfg, json.load(fh))
    cfg = copy.deepcopy(cfg)
    for key in ("seed", "threads", "workdir"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    return cfg


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_digest(cfg: dict) -> str:
    """Hash of the configuration without the work directory, so relocated runs compare equal."""
    body = {k: v for k, v in cfg.items() if k != "workdir"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


class Run:
    """Resolves paths under the work directory and records a manifest of inputs and outputs."""

    def __init__(self, command: str, cfg: dict, tag: str | None = None):
        self.command = command
        self.cfg = cfg
        self.root = Path(cfg["workdir"])
        self.tag = tag
        self.inputs: dict = {}
        self.outputs: dict = {}
        self.info: dict = {}

    def path(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def configured(self, key: str) -> Path:
        return self.path(self.cfg["paths"][key])

    def use(self, rel) -> Path:
        p = self.path(rel)
        if p.exists():
            self.inputs[str(rel)] = sha256_of(p)
        return p

    def out(self, rel) -> Path:
        p = self.path(rel)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs[str(rel)] = p
        return p

    def write_manifest(self) -> Path:
        name = self.command if self.tag is None else f"{self.command}-{self.tag}"
        path = self.root / "manifests" / f"{name}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        body = {
            "command": self.command,
            "version": __version__,
            "seed": self.cfg["seed"],
            "config_sha256": config_digest(self.cfg),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {k: sha256_of(p) for k, p in sorted(self.outputs.items())},
            "info": self.info,
        }
        with open(path, "w") as fh:
            json.dump(body, fh, sort_keys=True, indent=1)
            fh.write("\n")
        return path


def _rel(cfg, key):
    return cfg["paths"][key]


# -- subcommands ---------------------------------------------------------------------------


def cmd_synth(run: Run, args) -> None:
    from .geometry import save_geometry
    from .ingest import write_gauges_csv, write_trips_jsonl
    from .synth import BehaviorMode, ScenarioConfig, benchmark_scenario, gen_gauge_record, gen_river, \
        gen_traffic, write_truth_json

    sc = dict(run.cfg["scenario"])
    preset = sc.pop("preset", "benchmark")
    if preset == "benchmark":
        base, modes = benchmark_scenario()
    elif preset == "custom":
        base, modes = ScenarioConfig(), [BehaviorMode(**m) for m in sc.pop("modes")]
    else:
        raise UsageError(f"unknown scenario preset {preset!r}")
    n_gmm, n_model = sc.pop("gmm_n_trips"), sc.pop("n_trips")
    seeds = {"gmm": sc.pop("gmm_seed"), "model": sc.pop("model_seed")}
    fields = {**asdict(base), **sc}
    geom = None
    truths = {}
    for year, n in (("gmm", n_gmm), ("model", n_model)):
        cfg = ScenarioConfig.from_dict({**fields, "n_trips": n, "seed": seeds[year] + run.cfg["seed"]})
        geom = gen_river(cfg)
        trips, truth = gen_traffic(geom, modes, cfg, trip_prefix=f"{year}-")
        write_trips_jsonl(trips, run.out(_rel(run.cfg, f"{year}_trips")))
        write_gauges_csv(gen_gauge_record(cfg), run.out(_rel(run.cfg, f"{year}_gauges")))
        truths[year] = truth
        run.info[f"{year}_trips"] = len(trips)
    save_geometry(geom, run.out(_rel(run.cfg, "geometry")))
    write_truth_json(truths["gmm"] + truths["model"], run.out("truth.json"))


def _load_geom(run: Run):
    from .geometry import load_geometry

    return load_geometry(run.use(_rel(run.cfg, "geometry")), m_max=run.cfg["lookup"]["m_max"])


def cmd_prep(run: Run, args) -> None:
    from .errors import OutOfCorridor, TooShort
    from .ingest import annotate, read_gauges_csv, read_trips_jsonl, resample_1min, split_trip_ids, \
        write_labeled_jsonl

    geom = _load_geom(run)
    labeled_ids = {}
    for year in ("gmm", "model"):
        gauges = read_gauges_csv(run.use(_rel(run.cfg, f"{year}_gauges")))
        trips_path = run.use(_rel(run.cfg, f"{year}_trips"))
        if not trips_path.exists():
            raise FileNotFoundError(f"trip file {trips_path} not found")
        out, dropped = [], {}
        for tr in read_trips_jsonl(trips_path):
            try:
                out.append(annotate(resample_1min(tr), geom, gauges))
            except (TooShort, OutOfCorridor, VTPError) as e:
                dropped[e.name] = dropped.get(e.name, 0) + 1
        write_labeled_jsonl(out, run.out(f"{year}_labeled.jsonl"))
        labeled_ids[year] = [t.trip_id for t in out]
        run.info[f"{year}_labeled"] = len(out)
        run.info[f"{year}_dropped"] = dict(sorted(dropped.items()))
    p = run.cfg["prep"]
    split = split_trip_ids(labeled_ids["model"], tuple(p["split"]), p["split_seed"])
    with open(run.out("split.json"), "w") as fh:
        json.dump({"n_steps": p["n_steps"], **split}, fh, sort_keys=True, indent=1)


def cmd_fit_gmm(run: Run, args) -> None:
    from .baselines import TypicalProfile
    from .gmm import fit_grid
    from .ingest import read_labeled_jsonl

    trips = read_labeled_jsonl(run.use("gmm_labeled.jsonl"))
    g = run.cfg["gmm"]
    for kind, name in (("lateral", "gmm_lateral.json"), ("longitudinal", "gmm_longitudinal.json")):
        grid = fit_grid(trips, kind, seed=run.cfg["seed"], C_max=g["C_max"], min_samples=g["min_samples"])
        grid.save(run.out(name))
        run.info[kind] = {"cells": len(grid.models), "skipped": len(grid.skipped)}
    TypicalProfile.fit(trips).save(run.out("profile.csv"))


def _lookup_params(cfg):
    from .context import LookupParams

    return LookupParams(**cfg["lookup"])


def cmd_build_lookup(run: Run, args) -> None:
    from .context import build_lookup
    from .gmm import GmmGrid

    geom = _load_geom(run)
    lat = GmmGrid.load(run.use("gmm_lateral.json"))
    lon = GmmGrid.load(run.use("gmm_longitudinal.json"))
    lookup = build_lookup(lat, lon, geom.km_range, _lookup_params(run.cfg))
    lookup.save(run.out("lookup.bin"))
    run.info["fields"] = {"lateral": len(lookup.lat), "longitudinal": len(lookup.lon)}


def _sample_sets(run: Run, lookup):
    from .ingest import read_labeled_jsonl, windows_of
    from .predictor.samples import SampleSet

    trips = {t.trip_id: t for t in read_labeled_jsonl(run.use("model_labeled.jsonl"))}
    with open(run.use("split.json")) as fh:
        split = json.load(fh)
    n = split["n_steps"]
    return {name: SampleSet.from_windows([w for tid in split[name] for w in windows_of(trips[tid], n)], lookup)
            for name in ("train", "val", "test")}


def cmd_train(run: Run, args) -> None:
    import torch

    from .context import LookupDict
    from .predictor.model import ModelConfig, build_model, save_model
    from .predictor.training import TrainConfig, fit_normalization, train, write_history

    variant = args.variant
    mc = dict(run.cfg["model"])
    if args.cell:
        mc["cell"] = args.cell
    lp = _lookup_params(run.cfg)
    lookup = LookupDict.load(run.use("lookup.bin"))
    sets = _sample_sets(run, lookup)
    cfg = ModelConfig(variant=variant, D=lp.D, V=lp.V, H=lp.H, seed=run.cfg["seed"], **mc)
    tc = dict(run.cfg["train"])
    for flag, key in (("epochs", "max_epochs"), ("lr", "lr"), ("patience", "patience")):
        if getattr(args, flag, None) is not None:
            tc[key] = getattr(args, flag)
    tcfg = TrainConfig(seed=run.cfg["seed"], **tc)
    model = build_model(cfg, torch.float32)
    fit_normalization(model, sets["train"], lookup if variant != "trans" else None, seed=run.cfg["seed"])
    history = train(model, sets["train"], sets["val"], lookup, tcfg)
    save_model(model, run.out(f"model_{variant}.bin"), extra={"epochs": len(history) - 1})
    write_history(history, run.out(f"history_{variant}.csv"))
    run.info.update({"train": len(sets["train"]), "val": len(sets["val"]), "epochs": len(history) - 1,
                     "best_val_nll": min(h[2] for h in history),
                     "discarded": sum(s.n_discarded for s in sets.values())})


def cmd_predict(run: Run, args) -> None:
    from .context import LookupDict
    from .predictor.inference import predict_point
    from .predictor.model import load_model

    geom = _load_geom(run)
    lookup = LookupDict.load(run.use("lookup.bin"))
    test = _sample_sets(run, lookup)["test"]
    model, _ = load_model(run.use(f"model_{args.variant}.bin"))
    p = run.cfg["predict"]
    preds, kms = predict_point(model, test, lookup, geom, p["n_samples"], run.cfg["seed"],
                               p["freeze_context"] or args.freeze_context)
    with open(run.out(f"predictions_{args.variant}.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "trip_id", "step", "km", "offset_m", "speed_kmmin"])
        for i in range(len(test)):
            for j in range(preds.shape[1]):
                w.writerow([i, test.trip_id[i], j + 1, repr(float(kms[i, j])), repr(float(preds[i, j, 0])),
                            repr(float(preds[i, j, 1]))])
    run.info["n"] = len(test)


def cmd_eval(run: Run, args) -> None:
    from .baselines import TypicalProfile
    from .context import LookupDict
    from .evaluation import ablation_suite
    from .plotting import plot_per_step
    from .predictor.model import load_model

    geom = _load_geom(run)
    lookup = LookupDict.load(run.use("lookup.bin"))
    test = _sample_sets(run, lookup)["test"]
    variants = args.variants or run.cfg["eval"]["variants"]
    trained = {}
    for v in variants:
        model, _ = load_model(run.use(f"model_{v}.bin"))
        label = VARIANT_LABELS[v] if v != "gmm-trans-rnn" else f"GMM-Trans-{model.cfg.cell.upper()}"
        trained[label] = model
    profile = TypicalProfile.load(run.use("profile.csv")) if run.cfg["eval"]["baselines"] else None
    p = run.cfg["predict"]
    report = ablation_suite(trained, test, lookup, geom, profile, seed=run.cfg["seed"], n=p["n_samples"],
                            with_baselines=run.cfg["eval"]["baselines"])
    report.write(run.out("report.csv"), run.out("per_step.csv"))
    plot_per_step([row for r in report.results for row in r.per_step()], run.out("per_step.png"))
    run.info["models"] = {r["model"]: {"ade": r["ade_mean"], "fde": r["fde_mean"]} for r in report.table()}


def cmd_plot_density(run: Run, args) -> None:
    from .context import LookupDict
    from .gmm import GmmGrid, grid_key
    from .ingest import hecto_index
    from .plotting import plot_density

    lookup = LookupDict.load(run.use("lookup.bin"))
    lateral = args.lane is None
    if lateral:
        key, _ = lookup.resolve_lat(args.dir, args.q)
        grid = lookup.params.offsets
        values = lookup.lat[key].rows([args.km], grid)[0]
        gkey = grid_key(args.dir, key[1], int(hecto_index(args.km)))
        store, xname = "gmm_lateral.json", "offset_m"
    else:
        key, _ = lookup.resolve_lon(args.dir, args.q, args.lane)
        grid = lookup.params.speeds
        values = lookup.lon[key].rows([args.km], grid)[0]
        gkey = grid_key(args.dir, key[1], int(hecto_index(args.km)), key[2])
        store, xname = "gmm_longitudinal.json", "speed_kmmin"
    ref = None
    store_path = run.path(store)
    if store_path.exists():
        gm = GmmGrid.load(run.use(store)).models.get(gkey)
        ref = gm.pdf(grid) if gm is not None else None
    suffix = f"{args.dir}_{int(args.q)}_{args.km:.1f}" + ("" if lateral else f"_lane{args.lane}")
    kind = "lat" if lateral else "lon"
    with open(run.out(f"density_{kind}_{suffix}.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([xname, "density", "gmm_pdf"])
        for i, x in enumerate(grid):
            w.writerow([repr(float(x)), repr(float(values[i])), "" if ref is None else repr(float(ref[i]))])
    plot_density(grid, values, run.out(f"density_{kind}_{suffix}.png"), xname,
                 f"{args.dir} Q={int(key[1])} KM {args.km:.1f}" + ("" if lateral else f" lane {key[2]}"), ref)
    run.info["key"] = list(key)


COMMANDS = {
    "synth": cmd_synth, "prep": cmd_prep, "fit-gmm": cmd_fit_gmm, "build-lookup": cmd_build_lookup,
    "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval, "plot-density": cmd_plot_density,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--workdir", help="directory holding all artifacts")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="cap on torch worker threads")
    p = _Parser(prog="inland-vtp", description="Discharge-aware inland vessel trajectory prediction pipeline.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("synth", "prep", "fit-gmm", "build-lookup"):
        sub.add_parser(name, parents=[common])
    t = sub.add_parser("train", parents=[common])
    t.add_argument("--variant", required=True, choices=list(VARIANT_LABELS))
    t.add_argument("--cell", choices=["gru", "lstm"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--patience", type=int)
    pr = sub.add_parser("predict", parents=[common])
    pr.add_argument("--variant", required=True, choices=list(VARIANT_LABELS))
    pr.add_argument("--freeze-context", action="store_true")
    e = sub.add_parser("eval", parents=[common])
    e.add_argument("--variants", nargs="+", choices=list(VARIANT_LABELS))
    d = sub.add_parser("plot-density", parents=[common])
    d.add_argument("--dir", required=True, choices=["up", "down"])
    d.add_argument("--q", required=True, type=float)
    d.add_argument("--km", required=True, type=float)
    d.add_argument("--lane", type=int, choices=[1, 2, 3, 4])
    return p


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    import torch

    # the numba kernels are serial, so torch is the only threaded backend
    torch.set_num_threads(int(n))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args)
        _set_threads(cfg.get("threads"))
        tag = getattr(args, "variant", None) if args.command in ("train", "predict") else None
        run = Run(args.command, cfg, tag)
        COMMANDS[args.command](run, args)
        run.write_manifest()
    except UsageError as e:
        _emit_error("UsageError", str(e))
        return 1
    except VTPError as e:
        _emit_error(e.name, str(e))
        return e.exit_code
    except FileNotFoundError as e:
        _emit_error("FileNotFound", str(e))
        return 2
    except (ValueError, KeyError, TypeError) as e:
        _emit_error("ConfigError", str(e))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
