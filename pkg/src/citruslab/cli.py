"""Command-line entry point: ``citruslab <subcommand> [options]``.

Every run-oriented subcommand reads a JSON config (``--config``; defaults
are used when omitted), optionally overrides its seed (``--seed``) and writes
under ``--out``: the echoed ``config.json``, a ``report.json`` that each
subcommand merges its own section into, and subcommand-specific files.

Exit codes: 0 success, 1 configuration or I/O error, 2 oracle inequality violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import checkpoint
from .attacks import AttackConfig
from .certify import attacked_average_uap_accuracy, certify_dataset
from .config import RunConfig, dump_config, load_config
from .data import Dataset
from .errors import ConfigError, FormatError, TrainingError
from .experiments import compare_methods, tau_ablation
from .network import predict
from .oracle import run_fuzz
from .trainer import MetricsRecord, train

log = logging.getLogger("citruslab")

METRICS_HEADER = ",".join(MetricsRecord.CSV_FIELDS)
ORACLE_VIOLATION = 2


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _merge_report(out: Path, section: str, payload) -> None:
    path = out / "report.json"
    report = json.loads(path.read_text()) if path.exists() else {}
    report[section] = payload
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _finite(x):
    return None if isinstance(x, float) and not np.isfinite(x) else x


def write_metrics(path: Path, history: List[MetricsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MetricsRecord.CSV_FIELDS)
        for rec in history:
            w.writerow(rec.csv_row())


def _save_split(path: Path, ds: Dataset) -> None:
    rng = [] if ds.data_range is None else list(ds.data_range)
    np.savez(path, inputs=ds.inputs, labels=ds.labels, data_range=np.array(rng),
             n_classes=ds.n_classes)


def cmd_gen_data(args) -> int:
    cfg, out = _config(args), _outdir(args)
    tr, te = cfg.dataset.build()
    _save_split(out / "train.npz", tr)
    _save_split(out / "test.npz", te)
    dump_config(cfg, out / "config.json")
    _merge_report(out, "dataset", {"kind": cfg.dataset.kind, "n_train": len(tr),
                                   "n_test": len(te), "dim": tr.dim, "n_classes": tr.n_classes})
    return 0


def cmd_train(args) -> int:
    cfg, out = _config(args), _outdir(args)
    dump_config(cfg, out / "config.json")
    tr, te = cfg.dataset.build()

    def progress(rec: MetricsRecord):
        log.info("epoch %d loss %.4f clean %.3f ucert %.3f", rec.epoch, rec.loss, rec.clean_acc,
                 rec.ucert_lb)

    net, history = train(cfg.train, tr, cfg.arch, test=te, eval_cfg=cfg.eval_config(),
                         on_epoch=progress)
    checkpoint.save(net, out / "model.ctrw")
    write_metrics(out / "metrics.csv", history)
    payload = {"method": cfg.train.loss_kind.value, "eps": cfg.train.eps_target,
               "tau_ratio": cfg.train.tau_ratio, "epochs": cfg.train.epochs,
               "history": [{k: _finite(v) for k, v in r.to_dict().items()} for r in history]}
    if history:
        last = history[-1]
        payload.update(clean_acc=last.clean_acc, ucert_lb=last.ucert_lb, attack_acc=last.attack_acc,
                       cert_ind_acc=last.cert_ind_acc)
    _merge_report(out, "train", payload)
    return 0


def _model(args, out: Path):
    return checkpoint.load(args.model or out / "model.ctrw")


def cmd_attack(args) -> int:
    cfg, out = _config(args), _outdir(args)
    net = _model(args, out)
    _, te = cfg.dataset.build()
    eps = cfg.certify_eps()
    atk = AttackConfig(steps=cfg.certify.steps, restarts=cfg.certify.restarts, seed=cfg.train.seed,
                       step_size=cfg.attack.step_size)
    acc = attacked_average_uap_accuracy(net, te.inputs, te.labels, eps, atk, cfg.certify.batch_n,
                                        np.random.default_rng(cfg.train.seed), te.data_range)
    _merge_report(out, "attack", {"eps": eps, "batch_n": cfg.certify.batch_n,
                                  "attack_acc": acc, "attack": atk.to_dict()})
    return 0


def cmd_certify(args) -> int:
    cfg, out = _config(args), _outdir(args)
    net = _model(args, out)
    _, te = cfg.dataset.build()
    eps = cfg.certify_eps()
    atk = AttackConfig(steps=cfg.certify.steps, restarts=cfg.certify.restarts, seed=cfg.train.seed)
    rep = certify_dataset(net, te.inputs, te.labels, eps, cfg.certify.batch_n, atk,
                          np.random.default_rng(cfg.train.seed), te.data_range,
                          cfg.certify.exact_resolution)
    (out / "certify_batches.csv").write_text(rep.to_csv())
    payload = rep.to_dict()
    payload["clean_acc"] = float(np.mean(predict(net, te.inputs) == te.labels))
    payload["method"] = cfg.train.loss_kind.value
    _merge_report(out, "certify", payload)
    return 0


def cmd_oracle(args) -> int:
    cfg, out = _config(args), _outdir(args)
    dump_config(cfg, out / "config.json")
    report = run_fuzz(cfg.oracle.fuzz_config())
    (out / "oracle.json").write_text(json.dumps(report, indent=2) + "\n")
    _merge_report(out, "oracle", {"holds": report["holds"], "violations": report["violations"],
                                  "instances": cfg.oracle.instances})
    if report["violations"]:
        print(f"oracle: {report['violations']} inequality violation(s)", file=sys.stderr)
        return ORACLE_VIOLATION
    return 0


REPORT_HEADER = ["run", "method", "eps", "Std", "UCert"]


def report_rows(run_dirs) -> List[list]:
    rows = []
    for d in run_dirs:
        rep = json.loads((Path(d) / "report.json").read_text())
        src = rep.get("certify") or rep.get("train")
        if src is None:
            raise ConfigError(f"{d}: report.json has neither a certify nor a train section")
        method = src.get("method", "")
        eps = src.get("eps")
        std = src.get("clean_acc")
        ucert = src.get("ucert_lb")
        if std is None or ucert is None:
            raise ConfigError(f"{d}: report.json lacks clean_acc/ucert_lb")
        rows.append([Path(d).name, method, eps, f"{100 * std:.2f}", f"{100 * ucert:.2f}"])
    return rows


def cmd_report(args) -> int:
    rows = report_rows(args.runs)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0


def _parse_list(text: str, cast):
    return [cast(t) for t in text.split(",") if t.strip()]


def cmd_compare(args) -> int:
    cfg, out = _config(args), _outdir(args)
    dump_config(cfg, out / "config.json")
    res = compare_methods(cfg, _parse_list(args.methods, str), range(args.seeds))
    _merge_report(out, "compare", res)
    return 0


def cmd_ablate(args) -> int:
    cfg, out = _config(args), _outdir(args)
    dump_config(cfg, out / "config.json")
    res = tau_ablation(cfg, _parse_list(args.ratios, float), range(args.seeds), args.method)
    _merge_report(out, "ablate", res)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="citruslab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_cmd(name, fn, help_, out_required=True):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="RunConfig JSON (defaults when omitted)")
        s.add_argument("--seed", type=int, help="override every seed in the config")
        s.add_argument("--out", required=out_required, help="output directory")
        s.set_defaults(func=fn)
        return s

    run_cmd("gen-data", cmd_gen_data, "generate and save the train/test split")
    run_cmd("train", cmd_train, "train a network; writes model.ctrw and metrics.csv")
    for name, fn, h in (("attack", cmd_attack, "universal PGD accuracy on the test set"),
                        ("certify", cmd_certify, "per-batch certified and attacked bounds")):
        s = run_cmd(name, fn, h)
        s.add_argument("--model", help="checkpoint (default: <out>/model.ctrw)")
    run_cmd("oracle", cmd_oracle, "grid-oracle inequality campaign (exit 2 on violation)")
    s = run_cmd("compare", cmd_compare, "multi-seed comparison of training methods")
    s.add_argument("--methods", default="citrus,ibp,adv_universal")
    s.add_argument("--seeds", type=int, default=5)
    s = run_cmd("ablate", cmd_ablate, "tau-ratio sweep")
    s.add_argument("--ratios", default="0.3,0.5,0.7,0.9")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--method", default="citrus")

    s = sub.add_parser("report", help="merge run directories into a Std/UCert CSV")
    s.add_argument("runs", nargs="+", help="run directories containing report.json")
    s.add_argument("--out", help="CSV path (stdout when omitted)")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError, TrainingError, OSError, ValueError) as e:
        print(f"citruslab {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
