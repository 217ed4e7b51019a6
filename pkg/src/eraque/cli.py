"""Command-line entry point: ``eraque {synth,train,distill,predict,benchmark}``.

Configuration is layered, later layers winning: built-in defaults, the
``--config`` YAML/JSON file (flat keys, or a section named after the
subcommand; ``distill`` also reads the ``train`` section), ``ERAQUE_<KEY>`` environment variables, ``--set key=value``
overrides, then the dedicated flags (``--seed``, ``--out-dir``).

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import yaml

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
ENV_PREFIX = "ERAQUE_"

log = logging.getLogger("eraque")


class ConfigError(ValueError):
    pass


SECTIONS = ("synth", "train", "distill", "predict", "benchmark")
# distill inherits the train section, its own section wins
SECTION_CHAIN = {"distill": ("train", "distill")}


def _train_keys():
    from .train import TrainConfig
    return {f.name for f in fields(TrainConfig)}


SYNTH_KEYS = {"out_dir", "num_contents", "clips_per_content", "frames_per_clip", "levels",
              "seed", "height", "width", "jitter"}
SPLIT_KEYS = {"split_ratio", "split_seed", "split_file"}
PREDICT_KEYS = {"checkpoint", "inputs", "output", "stride", "decoder", "seed", "out_dir"}
BENCH_KEYS = {"manifest", "out_dir", "score_files", "checkpoints", "fr_metrics", "stride",
              "alpha", "decoder", "seed"} | SPLIT_KEYS


def allowed_keys(cmd):
    if cmd == "synth":
        return SYNTH_KEYS
    if cmd in ("train", "distill"):
        return _train_keys() | SPLIT_KEYS | {"manifest", "out_dir"}
    if cmd == "predict":
        return PREDICT_KEYS
    return BENCH_KEYS


def _parse_value(text):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def build_config(cmd, args, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    cfg = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        names = SECTION_CHAIN.get(cmd, (cmd,))
        if any(isinstance(loaded.get(n), dict) for n in names):
            for n in names:
                cfg.update(loaded.get(n) or {})
        else:
            cfg.update({k: v for k, v in loaded.items() if k not in SECTIONS})
    keys = allowed_keys(cmd)
    for key in sorted(keys):
        env = ENV_PREFIX + key.upper()
        if env in environ:
            cfg[key] = _parse_value(environ[env])
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = _parse_value(v)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out_dir is not None:
        cfg["out_dir"] = args.out_dir
    unknown = sorted(set(cfg) - keys)
    if unknown:
        raise ConfigError(f"unknown {cmd} config keys: {unknown}")
    return cfg


def _require(cfg, *names):
    missing = [n for n in names if cfg.get(n) in (None, "")]
    if missing:
        raise ConfigError(f"missing required config keys: {missing}")


# -- synth -------------------------------------------------------------------

def cmd_synth(cfg):
    from .synth import SynthConfig, corpus_hash, generate_synth_corpus

    _require(cfg, "out_dir")
    opts = {k: v for k, v in cfg.items() if k not in ("out_dir", "seed")}
    if "seed" in cfg:
        opts["rng_seed"] = int(cfg["seed"])
    try:
        scfg = SynthConfig(**opts)
        scfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    out = Path(cfg["out_dir"])

    def run():
        generate_synth_corpus(scfg, out)
        print(f"manifest: {out / 'manifest.jsonl'}")
        print(f"corpus sha256: {corpus_hash(out)}")
        return EXIT_OK
    return run


# -- train / distill -----------------------------------------------------------

def _resolve_split(cfg, manifest):
    from .bench import Split, split_by_content

    if cfg.get("split_file"):
        path = Path(cfg["split_file"])
        if not path.is_file():
            raise ConfigError(f"split file not found: {path}")
        split = Split.from_dict(json.loads(path.read_text()))
        known = manifest.by_id()
        bad = [i for i in split.train + split.test if i not in known]
        if bad:
            raise ConfigError(f"split file ids not in manifest: {bad[:5]}")
        return split
    seed = int(cfg.get("split_seed", cfg.get("seed", 0)))
    try:
        return split_by_content(manifest, float(cfg.get("split_ratio", 0.8)), seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _load_manifest(cfg):
    from .core import ManifestError, load_manifest

    _require(cfg, "manifest")
    try:
        return load_manifest(cfg["manifest"])
    except ManifestError as exc:
        raise ConfigError(str(exc)) from None


def _train_setup(cmd, cfg, resume):
    from .backbone import CheckpointError, read_checkpoint
    from .train import TrainConfig

    _require(cfg, "out_dir")
    manifest = _load_manifest(cfg)
    split = _resolve_split(cfg, manifest)
    tkeys = _train_keys()
    opts = {k: v for k, v in cfg.items() if k in tkeys}
    if cmd == "distill":
        opts.setdefault("net", "student")
    try:
        tcfg = TrainConfig(**opts)
        tcfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cmd == "distill":
        _require(cfg, "teacher_checkpoint")
        try:
            read_checkpoint(tcfg.teacher_checkpoint)
        except CheckpointError as exc:
            raise ConfigError(str(exc)) from None
    run_dir = Path(cfg["out_dir"])
    if resume and not (run_dir / "last.pt").is_file():
        raise ConfigError(f"--resume: no last.pt in {run_dir}")
    return manifest, split, tcfg, run_dir


def cmd_train(cfg, resume=False, distill=False):
    from .train import train_student, train_teacher

    cmd = "distill" if distill else "train"
    manifest, split, tcfg, run_dir = _train_setup(cmd, cfg, resume)

    def run():
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "cli_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True,
                                                            default=str) + "\n")
        if distill:
            res = train_student(manifest, split, tcfg, run_dir, resume=resume)
        else:
            res = train_teacher(manifest, split, tcfg, run_dir, resume=resume)
        print(f"best checkpoint: {res.best_checkpoint}")
        print(f"last checkpoint: {res.last_checkpoint}")
        return EXIT_OK
    return run


# -- predict -----------------------------------------------------------------

def cmd_predict(cfg, positional=()):
    from .backbone import CheckpointError, read_checkpoint
    from .core import denormalize_mos

    if positional:
        cfg["inputs"] = list(cfg.get("inputs") or []) + list(positional)
    _require(cfg, "checkpoint", "inputs")
    inputs = cfg["inputs"] if isinstance(cfg["inputs"], list) else [cfg["inputs"]]
    try:
        read_checkpoint(cfg["checkpoint"])
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from None
    stride = int(cfg.get("stride", 1))
    if stride < 1:
        raise ConfigError("stride must be >= 1")

    def run():
        from .train import predict_sources

        results = predict_sources(cfg["checkpoint"], [str(p) for p in inputs], stride,
                                  cfg.get("decoder"))
        lines, failed = [], 0
        for src, res in results:
            if isinstance(res, Exception):
                failed += 1
                print(f"error: {src}: {res}", file=sys.stderr)
                continue
            lines.append(json.dumps({"id": src, "score_norm": res,
                                     "score_mos": denormalize_mos(res)}, sort_keys=True))
        text = "".join(ln + "\n" for ln in lines)
        if cfg.get("output"):
            Path(cfg["output"]).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_RUNTIME if failed else EXIT_OK
    return run


# -- benchmark -----------------------------------------------------------------

def cmd_benchmark(cfg):
    from .fr import FR_METRICS

    _require(cfg, "out_dir")
    manifest = _load_manifest(cfg)
    split = _resolve_split(cfg, manifest)
    score_files = cfg.get("score_files") or {}
    checkpoints = cfg.get("checkpoints") or {}
    fr_metrics = cfg.get("fr_metrics") or []
    if not isinstance(score_files, dict) or not isinstance(checkpoints, dict):
        raise ConfigError("score_files and checkpoints map row names to paths")
    bad = [m for m in fr_metrics if m not in FR_METRICS]
    if bad:
        raise ConfigError(f"unknown fr_metrics {bad}; choose from {sorted(FR_METRICS)}")
    for name, path in {**score_files, **checkpoints}.items():
        if not Path(path).is_file():
            raise ConfigError(f"{name}: file not found: {path}")
    if not (score_files or checkpoints or fr_metrics):
        raise ConfigError("configure at least one of score_files, checkpoints, fr_metrics")
    out = Path(cfg["out_dir"])

    def run():
        from .bench import benchmark

        rep = benchmark(manifest, split, score_files, checkpoints, fr_metrics,
                        stride=int(cfg.get("stride", 1)), alpha=float(cfg.get("alpha", 0.05)),
                        decoder=cfg.get("decoder"))
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(rep.to_json())
        (out / "report.txt").write_text(rep.table())
        sys.stdout.write(rep.table())
        return EXIT_OK
    return run


# -- entry point ---------------------------------------------------------------

def make_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--resume", action="store_true", help="continue from out_dir/last.pt")
    common.add_argument("-v", "--verbose", action="count", default=0)
    parser = argparse.ArgumentParser(prog="eraque", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="cmd", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic degraded corpus")
    sub.add_parser("train", parents=[common], help="train a quality net (teacher by default)")
    sub.add_parser("distill", parents=[common], help="distil a frozen teacher into a student")
    p = sub.add_parser("predict", parents=[common], help="score frame directories or videos")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--checkpoint")
    sub.add_parser("benchmark", parents=[common], help="evaluate metrics on the test split")
    return parser


def main(argv=None, environ=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args.cmd, args, environ)
        if args.cmd == "synth":
            run = cmd_synth(cfg)
        elif args.cmd in ("train", "distill"):
            run = cmd_train(cfg, resume=args.resume, distill=args.cmd == "distill")
        elif args.cmd == "predict":
            if args.checkpoint:
                cfg["checkpoint"] = args.checkpoint
            run = cmd_predict(cfg, args.inputs)
        else:
            run = cmd_benchmark(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return run()
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
