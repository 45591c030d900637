"""Experiment runner: dataset generation, protocol runs, audits, sweeps.

Exit codes: 0 success, 1 configuration error, 2 protocol or privacy audit
failure, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import statistics
import sys
import time

import numpy as np

from . import __version__
from .audit import sensitivity_audit
from .baselines import SgdConfig, dpsgd, fit_nonprivate
from .data import (
    Dataset,
    DatasetSpec,
    IngestError,
    gen_synthetic,
    ingest_csv,
    save_csv,
    split_train_test,
    vsplit,
)
from .dp import DOMAIN_REPLICATE, NoiseStream, PrivacyBudget
from .objective import Task
from .protocol import ProtocolError, audit_server_view, run_protocol
from .solver import SolverError, accuracy, mse

RESULT_HEADER = ["dataset", "method", "epsilon", "K", "metric", "mean", "std", "seconds"]
ENV_SEED = "SPLITDP_SEED"


class ConfigError(ValueError):
    pass


class AuditFailure(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are configuration errors: exit 1
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _parse_epsilon(text: str):
    values = []
    for tok in str(text).split(","):
        tok = tok.strip()
        if tok.lower() in ("inf", "none"):
            values.append(None)
            continue
        val = float(tok)
        if not val > 0:
            raise ConfigError(f"epsilon must be positive or 'inf', got {tok}")
        values.append(val)
    if not values:
        raise ConfigError("empty epsilon list")
    return values


def _load_config_file(path):
    values = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, val = line.partition("=")
                values[key.strip().replace("-", "_")] = val.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


def _resolve(args, file_cfg, name, builtin, cast=str):
    """Fallback chain for one option: CLI flag, config file, builtin default."""
    val = getattr(args, name, None)
    if val is not None:
        return val
    if name in file_cfg:
        raw = file_cfg[name]
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {name}={raw!r}: {exc}") from exc
    return builtin


def _default_seed():
    raw = os.environ.get(ENV_SEED)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{ENV_SEED}={raw!r} is not an integer") from exc


def _bool(text):
    if isinstance(text, bool):
        return text
    return str(text).lower() in ("1", "true", "yes", "on")


def build_parser() -> _Parser:
    parser = _Parser(prog="splitdp", description=__doc__)
    parser.add_argument("--version", action="version", version=f"splitdp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat key=value file supplying defaults for any flag")
        p.add_argument("--seed", type=int, help=f"master seed (default: ${ENV_SEED} or 0)")
        p.add_argument("--task", choices=["linear", "logistic"])

    gen = sub.add_parser("gen", help="write a synthetic dataset as CSV plus metadata sidecar")
    add_common(gen)
    gen.add_argument("--n", type=int)
    gen.add_argument("--d", type=int)
    gen.add_argument("--s", type=float, help="sparsity in (0, 1]")
    gen.add_argument("--label-noise", type=float, dest="label_noise")
    gen.add_argument("--out", required=True)

    def add_run_options(p):
        add_common(p)
        p.add_argument("--data", help="CSV path; omit to use a synthetic dataset")
        p.add_argument("--label-column", dest="label_column")
        p.add_argument("--n", type=int)
        p.add_argument("--d", type=int)
        p.add_argument("--s", type=float)
        p.add_argument("--label-noise", type=float, dest="label_noise")
        p.add_argument("--K", type=int)
        p.add_argument("--scheme", choices=["even"])
        p.add_argument("--epsilon", help="comma list; 'inf' disables noise")
        p.add_argument("--mode", choices=["topdown", "bottomup"])
        p.add_argument("--party-epsilon", type=float, dest="party_epsilon",
                       help="per-party budget target (bottomup mode)")
        p.add_argument("--backend", choices=["secret-sharing", "plaintext-debug"])
        p.add_argument("--methods", help="comma list from fm,dpsgd,nonprivate")
        p.add_argument("--replicates", type=int)
        p.add_argument("--rho", type=float, help="solver eigenvalue floor (default: auto)")
        p.add_argument("--noise-keying", choices=["coefficient", "party"], dest="noise_keying")
        p.add_argument("--sgd-iters", type=int, dest="sgd_iters")
        p.add_argument("--sgd-lr", type=float, dest="sgd_lr")
        p.add_argument("--sgd-clip", type=float, dest="sgd_clip")
        p.add_argument("--out", help="result CSV path (default: stdout)")

    run = sub.add_parser("run", help="run methods over replicates and emit a result table")
    add_run_options(run)

    sweep = sub.add_parser("sweep", help="cross-product of epsilon, K and sparsity axes")
    add_run_options(sweep)
    sweep.add_argument("--K-list", dest="k_list", help="comma list of party counts")
    sweep.add_argument("--s-list", dest="s_list", help="comma list of sparsities")

    audit = sub.add_parser("audit", help="sensitivity bound checks plus a server-view audit")
    add_common(audit)
    audit.add_argument("--d", type=int)
    audit.add_argument("--K", type=int)
    audit.add_argument("--pairs", type=int)
    audit.add_argument("--records", type=int)
    audit.add_argument("--epsilon", help="budget for the server-view protocol run")
    audit.add_argument("--backend", choices=["secret-sharing", "plaintext-debug"])
    audit.add_argument("--inject-out-of-range", action="store_true", default=None,
                       dest="inject_out_of_range")
    return parser


# ---------------------------------------------------------------------------
# Experiment execution


def _resolve_run_config(args, file_cfg):
    cfg = {
        "task": Task(_resolve(args, file_cfg, "task", "linear")),
        "data": _resolve(args, file_cfg, "data", None),
        "label_column": _resolve(args, file_cfg, "label_column", "label"),
        "n": _resolve(args, file_cfg, "n", 1000, int),
        "d": _resolve(args, file_cfg, "d", 10, int),
        "s": _resolve(args, file_cfg, "s", 1.0, float),
        "label_noise": _resolve(args, file_cfg, "label_noise", 0.5, float),
        "K": _resolve(args, file_cfg, "K", 2, int),
        "scheme": _resolve(args, file_cfg, "scheme", "even"),
        "epsilons": _parse_epsilon(_resolve(args, file_cfg, "epsilon", "1")),
        "mode": _resolve(args, file_cfg, "mode", "topdown"),
        "party_epsilon": _resolve(args, file_cfg, "party_epsilon", None, float),
        "backend": _resolve(args, file_cfg, "backend", "secret-sharing"),
        "methods": [m.strip() for m in _resolve(args, file_cfg, "methods", "fm").split(",") if m.strip()],
        "replicates": _resolve(args, file_cfg, "replicates", 10, int),
        "seed": _resolve(args, file_cfg, "seed", _default_seed(), int),
        "rho": _resolve(args, file_cfg, "rho", None, float),
        "noise_keying": _resolve(args, file_cfg, "noise_keying", "coefficient"),
        "sgd_iters": _resolve(args, file_cfg, "sgd_iters", 100, int),
        "sgd_lr": _resolve(args, file_cfg, "sgd_lr", None, float),
        "sgd_clip": _resolve(args, file_cfg, "sgd_clip", 1.0, float),
        "out": _resolve(args, file_cfg, "out", None),
    }
    if cfg["replicates"] < 1:
        raise ConfigError("replicates must be >= 1")
    bad = [m for m in cfg["methods"] if m not in ("fm", "dpsgd", "nonprivate")]
    if bad:
        raise ConfigError(f"unknown methods: {bad}")
    if cfg["mode"] == "bottomup" and cfg["party_epsilon"] is None:
        raise ConfigError("bottomup mode needs --party-epsilon")
    return cfg


def _load_dataset(cfg):
    if cfg["data"]:
        dataset = ingest_csv(cfg["data"], cfg["label_column"], cfg["task"])
        name = os.path.splitext(os.path.basename(cfg["data"]))[0]
        return dataset, name
    spec = DatasetSpec(cfg["n"], cfg["d"], cfg["s"], cfg["label_noise"], cfg["seed"])
    dataset, _ = gen_synthetic(spec, cfg["task"])
    return dataset, spec.dataset_id(cfg["task"])


def _format_eps(eps):
    return "inf" if eps is None else f"{eps:g}"


def run_experiment(cfg):
    """Execute every (method, epsilon) cell over the replicates; return rows."""
    dataset, dataset_id = _load_dataset(cfg)
    task = cfg["task"]
    partition = vsplit(dataset.d, cfg["K"], cfg["scheme"])
    metric_name = "mse" if task is Task.LINEAR else "accuracy"
    master = NoiseStream(cfg["seed"])

    cells = {}
    nonprivate_cache = {}
    for r in range(cfg["replicates"]):
        rep_seed = master.derive_seed(DOMAIN_REPLICATE, r)
        train, test = split_train_test(dataset, 0.8, rep_seed)
        for eps in cfg["epsilons"]:
            for method in cfg["methods"]:
                t0 = time.perf_counter()
                try:
                    if method == "fm":
                        budget = None
                        run_eps = eps
                        if cfg["mode"] == "bottomup":
                            budget = PrivacyBudget.bottomup(task, partition, cfg["party_epsilon"])
                            run_eps = budget.epsilon_global
                        model, _ = run_protocol(
                            train, partition, run_eps, rep_seed, cfg["backend"],
                            budget=budget, noise_keying=cfg["noise_keying"],
                            rho=cfg["rho"], compact_payloads=True,
                        )
                    elif method == "nonprivate":
                        if r not in nonprivate_cache:
                            nonprivate_cache[r] = fit_nonprivate(train.X, train.y, task)
                        model = nonprivate_cache[r]
                    else:
                        sgd = SgdConfig(cfg["sgd_iters"], cfg["sgd_lr"], cfg["sgd_clip"], eps)
                        model = dpsgd(train.X, train.y, task, sgd, rep_seed)
                except (ProtocolError, SolverError) as exc:
                    raise type(exc)(f"{method} failed at replicate {r}: {exc}") from exc
                elapsed = time.perf_counter() - t0
                value = mse(model, test.X, test.y) if task is Task.LINEAR else accuracy(model, test.X, test.y)
                cells.setdefault((method, eps), []).append((value, elapsed))

    rows = []
    for (method, eps), samples in sorted(
        cells.items(), key=lambda kv: (kv[0][0], math.inf if kv[0][1] is None else kv[0][1])
    ):
        values = [v for v, _ in samples]
        secs = [t for _, t in samples]
        std = statistics.pstdev(values) if len(values) > 1 else 0.0
        base = [dataset_id, method, _format_eps(eps), cfg["K"]]
        rows.append(base + [metric_name, statistics.fmean(values), std, statistics.fmean(secs)])
        rows.append(base + [f"{metric_name}_median", statistics.median(values), std, statistics.fmean(secs)])
    return rows, dataset_id


def _emit_rows(rows, out, meta):
    if out:
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RESULT_HEADER)
            writer.writerows(rows)
        with open(out + ".meta.json", "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(RESULT_HEADER)
        writer.writerows(rows)
        print(json.dumps(meta, sort_keys=True), file=sys.stderr)


def _public_meta(cfg, extra=None):
    meta = {k: v for k, v in cfg.items() if k != "out"}
    meta["task"] = cfg["task"].value
    meta["epsilons"] = [_format_eps(e) for e in cfg["epsilons"]]
    meta["version"] = __version__
    meta.update(extra or {})
    return meta


# ---------------------------------------------------------------------------
# Commands


def cmd_gen(args, file_cfg):
    task = Task(_resolve(args, file_cfg, "task", "linear"))
    spec = DatasetSpec(
        n=_resolve(args, file_cfg, "n", 1000, int),
        d=_resolve(args, file_cfg, "d", 10, int),
        sparsity=_resolve(args, file_cfg, "s", 1.0, float),
        label_noise=_resolve(args, file_cfg, "label_noise", 0.5, float),
        seed=_resolve(args, file_cfg, "seed", _default_seed(), int),
    )
    dataset, w_star = gen_synthetic(spec, task)
    try:
        save_csv(dataset, args.out, w_star=w_star, spec=spec)
    except OSError as exc:
        raise ConfigError(f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {dataset.n} records, d={dataset.d} to {args.out}")
    return 0


def cmd_run(args, file_cfg):
    cfg = _resolve_run_config(args, file_cfg)
    rows, dataset_id = run_experiment(cfg)
    _emit_rows(rows, cfg["out"], _public_meta(cfg, {"dataset": dataset_id, "command": "run"}))
    return 0


def cmd_sweep(args, file_cfg):
    cfg = _resolve_run_config(args, file_cfg)
    k_list = [int(v) for v in str(_resolve(args, file_cfg, "k_list", cfg["K"])).split(",")]
    s_list = [float(v) for v in str(_resolve(args, file_cfg, "s_list", cfg["s"])).split(",")]
    rows = []
    ids = []
    for s in s_list:
        for K in k_list:
            sub_cfg = dict(cfg, s=s, K=K)
            sub_rows, dataset_id = run_experiment(sub_cfg)
            rows.extend(sub_rows)
            ids.append(dataset_id)
    meta = _public_meta(cfg, {"K_list": k_list, "s_list": s_list, "datasets": ids, "command": "sweep"})
    _emit_rows(rows, cfg["out"], meta)
    return 0


def cmd_audit(args, file_cfg):
    task = Task(_resolve(args, file_cfg, "task", "linear"))
    d = _resolve(args, file_cfg, "d", 4, int)
    if d > 8:
        raise ConfigError("the neighboring-pair sweep is limited to d <= 8")
    K = _resolve(args, file_cfg, "K", 2, int)
    pairs = _resolve(args, file_cfg, "pairs", 1000, int)
    records = _resolve(args, file_cfg, "records", 40, int)
    seed = _resolve(args, file_cfg, "seed", _default_seed(), int)
    epsilons = _parse_epsilon(_resolve(args, file_cfg, "epsilon", "1"))
    backend = _resolve(args, file_cfg, "backend", "secret-sharing")
    inject = bool(_resolve(args, file_cfg, "inject_out_of_range", False, _bool))

    partition = vsplit(d, K)
    report = sensitivity_audit(task, partition, pairs, records, seed, inject)
    print(f"sensitivity audit: {report.pairs_checked} pairs checked")
    print(f"  bound violations: {len(report.bound_violations)}")
    for v in report.bound_violations[:10]:
        print(f"    trial {v['trial']} [{v['scope']}] distance {v['distance']:.6g} > bound {v['bound']:.6g}")
    print(f"  domain violations (attributed to ingestion): {len(report.domain_violations)}")
    for v in report.domain_violations[:10]:
        print(
            f"    trial {v['trial']} record {v['record']} feature {v['feature']} value {v['value']:g}"
        )

    spec = DatasetSpec(n=60, d=d, sparsity=1.0, seed=seed)
    dataset, _ = gen_synthetic(spec, task)
    eps = epsilons[0]
    _, transcript = run_protocol(dataset, partition, eps, seed, backend)
    view = audit_server_view(transcript, dataset)
    print(f"server-view audit: scanned {view.scanned} messages")
    print(f"  findings: {len(view.findings)}")
    for f in view.findings[:10]:
        print(f"    seq {f.seq} [{f.tag}] {f.detail}")
    print(f"  debug-tagged findings: {len(view.debug_findings)}")

    failed = bool(report.bound_violations or report.domain_violations or view.findings)
    print("audit: FAIL" if failed else "audit: PASS")
    if failed:
        raise AuditFailure("privacy audit reported violations")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        file_cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
        handler = {"gen": cmd_gen, "run": cmd_run, "sweep": cmd_sweep, "audit": cmd_audit}[args.command]
        return handler(args, file_cfg)
    except (ConfigError, IngestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (AuditFailure, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
