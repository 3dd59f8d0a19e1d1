"""Command-line entry point.

Exit codes: 0 success, 1 config error, 2 runtime error, 3 recovery did not
converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .data import retain_set
from .errors import ConfigError
from .evaluation import accuracy, model_metrics
from .federation import FederationState, recover, run_fedavg
from .nn import load_checkpoint, save_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_NONCONVERGED = 0, 1, 2, 3

def _overrides(args) -> dict:
    o = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        o[k.strip()] = ex._parse_value(v)
    if getattr(args, "seed", None) is not None:
        o["experiment.seeds"] = [args.seed]
    if getattr(args, "method", None):
        o["unlearn.method"] = args.method
    if getattr(args, "v", None) is not None:
        o["unlearn.v"] = args.v
    if getattr(args, "client", None) is not None:
        o["experiment.unlearn_client"] = str(args.client)
    if getattr(args, "out", None):
        o["experiment.out"] = args.out
    return o


def _load(args):
    cfg = ex.parse_config(args.config, _overrides(args))
    return cfg, cfg.seeds[0]


def _single_client(cfg) -> int:
    clients = cfg.clients()
    if len(clients) != 1:
        raise ConfigError("this command needs a single --client", "unlearn_client")
    return clients[0]


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_train(args) -> int:
    cfg, seed = _load(args)
    fed = ex.make_federation(cfg, seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    exclude = {args.exclude} if args.exclude is not None else None
    state, history = run_fedavg(fed, ex.seeded(cfg, seed)[1], ex.initial_params(cfg, seed),
                                exclude=exclude)
    name = "original" if exclude is None else f"retrained_u{args.exclude}"
    save_checkpoint(state.params, out / f"{name}.bin")
    ex._write_json(out / f"{name}.json", {"seed": seed, "state": ex._state_dict(state),
                                          "test_acc": history[-1].test_acc})
    client = -1 if args.exclude is None else args.exclude
    ex._write_csv(out / f"{name}_history.csv",
                  ex._history_rows(history, seed=seed, client=client, method=name),
                  ex.HISTORY_FIELDS)
    _emit({"checkpoint": str(out / f"{name}.bin"), "test_acc": history[-1].test_acc})
    return EXIT_OK


def cmd_unlearn(args) -> int:
    cfg, seed = _load(args)
    u = _single_client(cfg)
    fed = ex.make_federation(cfg, seed)
    params = load_checkpoint(args.checkpoint, cfg.arch.hidden_activation)
    unlearned = ex.unlearn(cfg, params, fed.shard(u), seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"unlearned_u{u}.bin"
    save_checkpoint(unlearned, path)
    _emit({"checkpoint": str(path), "method": cfg.method_tag(),
           "test_acc": accuracy(unlearned, fed.test_set),
           "forget_acc": accuracy(unlearned, fed.shard(u))})
    return EXIT_OK


def cmd_recover(args) -> int:
    cfg, seed = _load(args)
    u = _single_client(cfg)
    fed = ex.make_federation(cfg, seed)
    params = load_checkpoint(args.checkpoint, cfg.arch.hidden_activation)
    if args.target is not None:
        target = args.target
    else:
        target = accuracy(load_checkpoint(args.retrained, cfg.arch.hidden_activation),
                          fed.test_set)
    # the checkpoint stands for the model right after the unlearning round
    state = FederationState(params, round=cfg.federation.rounds + 1)
    rec = recover(state, fed, ex.seeded(cfg, seed)[1], {u}, target, cfg.max_recovery_rounds)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(rec.state.params, out / f"recovered_u{u}.bin")
    ce = cfg.federation.rounds / max(rec.rounds, 1) if rec.converged else None
    _emit({"checkpoint": str(out / f"recovered_u{u}.bin"), "target": target,
           "rounds": rec.rounds, "converged": rec.converged, "ce": ce})
    return EXIT_OK if rec.converged else EXIT_NONCONVERGED


def cmd_evaluate(args) -> int:
    cfg, seed = _load(args)
    u = _single_client(cfg)
    fed = ex.make_federation(cfg, seed)
    act = cfg.arch.hidden_activation
    forget, retain = fed.shard(u), retain_set(fed, u)
    mseed = ex.derive_seed(seed, 5)

    def metrics(path):
        return vars(model_metrics(load_checkpoint(path, act), forget, retain, fed.test_set,
                                  mseed, cfg.unlearn.tau))

    result = {"model": metrics(args.checkpoint)}
    if args.retrained:
        rt = metrics(args.retrained)
        result["retrained"] = rt
        result["deltas"] = {k: abs(result["model"][k] - rt[k])
                            for k in ("forget_acc", "mia_song", "mia_yeom")}
    _emit(result)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = ex.parse_config(args.config, _overrides(args))
    arts = ex.run_pipeline(cfg)
    _emit({"out": str(arts.out), "runs": len(arts.reports),
           "converged": sum(r.converged for r in arts.reports), "aggregate": arts.aggregate})
    return EXIT_OK if arts.all_converged else EXIT_NONCONVERGED


def cmd_compare(args) -> int:
    rows = ex.compare(args.reports, args.out)
    _emit({"columns": list(ex.COMPARE_COLUMNS), "rows": rows})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedquit", description="Federated client unlearning "
                                "experiments on small synthetic or CSV data.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, client=True):
        sp.add_argument("--config", required=True, help="key-value or JSON config file")
        sp.add_argument("--seed", type=int, help="run only this seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--method", choices=ex.METHODS)
        sp.add_argument("--v", help="teacher value: a number, 'min' or '1/C'")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
        if client:
            sp.add_argument("--client", type=int, help="client to unlearn")

    sp = sub.add_parser("train", help="train the original model, or a retrained one")
    common(sp, client=False)
    sp.add_argument("--exclude", type=int, help="leave this client out (retrained model)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("unlearn", help="apply the unlearning method to a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_unlearn)

    sp = sub.add_parser("recover", help="resume FedAvg without the client until a target")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--retrained", help="retrained checkpoint whose test accuracy is the target")
    g.add_argument("--target", type=float, help="target test accuracy")
    sp.set_defaults(func=cmd_recover)

    sp = sub.add_parser("evaluate", help="forgetting metrics of a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--retrained", help="retrained checkpoint for deltas")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("pipeline", help="full train, unlearn, recover, report run")
    common(sp)
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("compare", help="comparison table from report.json files")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        if getattr(args, "config", None) and exc.filename == args.config:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
