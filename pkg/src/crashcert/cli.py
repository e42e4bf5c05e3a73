"""Command-line interface: `crashcert <command> [options]`.

Exit codes: 0 success, 1 usage or input error, 2 infeasible or failed
certificate, 3 runtime error.
"""
import argparse
import csv
import inspect
import io
import os
import sys

import numpy as np

from .data import SchemaError, dumps, make_report, read_dataset, read_model, write_model, write_report
from .fault_injection import (CrashModel, EnumerationCapError, empirical_tail, exact_moments,
                              median_replica_sim, monte_carlo_moments)
from .network import Head, LossSpec

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def parse_p(text, depth):
    """Scalar -> layers 0..L-1 (output 0); list -> per layer, index 0 = input."""
    vals = _floats(text)
    if len(vals) == 1:
        p = [vals[0]] * depth + [0.0]
    elif len(vals) == depth + 1:
        p = vals
    elif len(vals) == depth:
        p = vals + [0.0]
    else:
        raise UsageError(f"--p needs 1, {depth} or {depth + 1} values, got {len(vals)}")
    if any(not 0.0 <= v <= 1.0 for v in p):
        raise UsageError("--p values must lie in [0, 1]")
    return CrashModel(tuple(p))


def parse_head(text, spec):
    if text is None or text == "loss":
        return Head.of_loss(spec)
    parts = text.split(":")
    if parts[0] != "output" or len(parts) > 3:
        raise UsageError(f"--head must be 'loss' or 'output:K[:neg]', got {text!r}")
    k = int(parts[1]) if len(parts) > 1 else 0
    sign = -1.0 if len(parts) > 2 and parts[2] == "neg" else 1.0
    return Head.output(k, sign)


def _common(p):
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--p", default="0.01")
    p.add_argument("--x", help="single input as comma-separated values")
    p.add_argument("--target", help="target for a single input (comma-separated, or class index for margin)")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--threads", type=int, default=int(os.environ.get("CRASHCERT_THREADS", "1") or 1))
    p.add_argument("--head", help="'loss' or 'output:K[:neg]'")
    p.add_argument("--loss", choices=("bounded_mse", "bounded_margin"), default="bounded_mse")
    p.add_argument("--margin-scale", type=float, default=1.0)


def build_parser():
    ap = _Parser(prog="crashcert", description="Crash-fault tolerance analysis for feed-forward networks")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    for name, help_ in [("inspect", "shapes, norms, balance and continuity metrics"),
                        ("inject", "Monte Carlo crash moments or dataset tail frequency"),
                        ("enumerate", "exact crash moments by enumeration"),
                        ("bound", "analytic bounds b1..b4"),
                        ("check-ft", "first-order (epsilon, delta) certificate on a dataset"),
                        ("median-plan", "number of replicas for a median system"),
                        ("train", "train a network with the regularized objective"),
                        ("certify", "iterative certification loop"),
                        ("experiment", "named experiment protocols"),
                        ("median-sim", "failure rate of a median of R crashed replicas")]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "bound":
            p.add_argument("--method", choices=("b1", "b2", "b3", "b4", "all"), default="all")
            p.add_argument("--D12", type=float)
        if name == "check-ft":
            p.add_argument("--alpha", type=float)
            p.add_argument("--no-delta0", action="store_true")
            p.add_argument("--samples-per-input", type=int, default=100)
        if name == "median-plan":
            p.add_argument("--delta-base", type=float, default=1.0 / 3.0)
            p.add_argument("--rule", choices=("power", "exact"), default="power")
        if name in ("train", "certify"):
            p.add_argument("--widths", help="comma-separated widths n0,...,nL")
            p.add_argument("--activation", choices=("sigmoid", "relu", "linear"), default="sigmoid")
            p.add_argument("--epochs", type=int, default=200)
            p.add_argument("--batch-size", type=int, default=32)
            p.add_argument("--lr", type=float, default=0.1)
            p.add_argument("--lr-scaling", choices=("none", "fan_in", "mean_field"), default="mean_field")
            p.add_argument("--save", help="where to write the trained model")
        if name == "train":
            p.add_argument("--lambda", dest="lam", type=float, default=0.0)
            p.add_argument("--mu", type=float, default=0.0)
            p.add_argument("--psi", default="0,0")
            p.add_argument("--nu", type=float, default=0.0)
            p.add_argument("--dropout", help="per-layer dropout probabilities for training")
        if name == "certify":
            p.add_argument("--complexity-C", dest="complexity_C", type=float)
            p.add_argument("--max-iterations", type=int, default=50)
            p.add_argument("--validate-samples", type=int, default=0)
        if name == "experiment":
            p.add_argument("name", choices=("width-sweep", "dropout-sweep", "regularizer-comparison",
                                            "bound-table", "superposition"))
            p.add_argument("--repeats", type=int)
            p.add_argument("--mode", choices=("duplication", "regularized", "random"), default="regularized")
        if name == "median-sim":
            p.add_argument("--R", type=int, default=1)
    return ap


def _need(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise UsageError(f"{args.command} needs --{n.replace('_', '-')}")


def _spec(args):
    return LossSpec(args.loss, None, args.margin_scale)


def _single_input(args, net):
    _need(args, "x")
    x = np.array(_floats(args.x))
    if x.size != net.widths[0]:
        raise UsageError(f"--x has {x.size} values, the model expects {net.widths[0]}")
    target = None
    if args.target is not None:
        target = np.array(_floats(args.target))
    return x, target


def _head_and_target(args, net):
    spec = _spec(args)
    head = parse_head(args.head if args.head else "output:0", spec)
    x, target = _single_input(args, net)
    if head.kind == "loss" and target is None:
        raise UsageError("a loss head on a single input needs --target")
    if head.kind == "loss" and spec.kind == "bounded_margin":
        target = int(target[0])
    return head, x, target


def cmd_inspect(args):
    from .core_math import matrix_norm
    from .guarantees import q_factor
    from .regularizer import continuity_c1, continuity_c2, continuity_c3
    _need(args, "model")
    net = read_model(args.model)
    rows = []
    for k, W in enumerate(net.weights, start=1):
        def q(M):
            try:
                return q_factor(M)
            except ValueError:
                return 0.0
        rows.append({"layer": k, "shape": list(W.shape), "activation": net.activations[k - 1],
                     "norm_inf": matrix_norm(W, "inf"), "norm_one": matrix_norm(W, "one"),
                     "norm_spectral_upper": matrix_norm(W, "spectral_upper"),
                     "q_rows": q(W), "q_outgoing_prev_layer": q(W.T),
                     "C1": continuity_c1(W), "C2": continuity_c2(W), "C3": continuity_c3(W)})
    summary = "\n".join(f"layer {r['layer']}: {r['shape'][0]}x{r['shape'][1]} {r['activation']}, "
                        f"|W|inf={r['norm_inf']:.4g} |W|2<={r['norm_spectral_upper']:.4g} q={r['q_rows']:.3g}"
                        for r in rows)
    return {"widths": net.widths, "layers": rows}, rows, summary, EXIT_OK


def cmd_inject(args):
    _need(args, "model")
    net = read_model(args.model)
    crash = parse_p(args.p, net.depth)
    if args.data:
        _need(args, "epsilon")
        ds = read_dataset(args.data)
        per = max(1, args.samples // len(ds))
        t = empirical_tail(net, ds, crash, _spec(args), args.epsilon, per, args.seed, args.threads,
                           head=parse_head(args.head or "loss", _spec(args)))
        res = t.to_dict()
        return res, [res], f"empirical P(delta >= {args.epsilon:g}) = {t.rate:.4g} +/- {t.std_error:.2g} " \
                           f"({t.trials} trials)", EXIT_OK
    head, x, target = _head_and_target(args, net)
    m = monte_carlo_moments(net, x, crash, head, args.samples, args.seed, target, args.epsilon, args.threads)
    res = m.to_dict()
    return res, [res], f"mean {m.mean:.6g} +/- {m.std_error_of_mean:.2g}, variance {m.variance:.6g} " \
                       f"({m.samples} samples)", EXIT_OK


def cmd_enumerate(args):
    _need(args, "model")
    net = read_model(args.model)
    crash = parse_p(args.p, net.depth)
    head, x, target = _head_and_target(args, net)
    m = exact_moments(net, x, crash, head, target=target, epsilon=args.epsilon)
    res = m.to_dict()
    return res, [res], f"exact mean {m.mean:.10g}, variance {m.variance:.10g} over {m.samples} configurations", EXIT_OK


def cmd_bound(args):
    from .bounds import bound_absolute, bound_single_crash, bound_spectral, bound_taylor, bound_taylor_weightform
    _need(args, "model")
    net = read_model(args.model)
    crash = parse_p(args.p, net.depth)
    head, x, target = _head_and_target(args, net)
    methods = ["b1", "b2", "b3", "b4"] if args.method == "all" else [args.method]
    out = {}
    for m in methods:
        if m == "b1":
            r = bound_spectral(net, x, crash)
        elif m == "b2":
            r = bound_absolute(net, x, crash)
        elif m == "b3":
            r = bound_taylor(net, x, crash, head, args.D12, target=target)
            r.meta["weight_form"] = bound_taylor_weightform(net, x, crash, head, target).to_dict()
        else:
            r = bound_single_crash(net, x, crash, head, target)
        out[m] = r.to_dict()
    rows = [{"method": k, "mean_bound": v["mean_bound"], "variance_estimate": v["variance_estimate"]}
            for k, v in out.items()]
    summary = "\n".join(f"{r['method']}: mean {r['mean_bound']}, variance {r['variance_estimate']}" for r in rows)
    return out, rows, summary, EXIT_OK


def cmd_check_ft(args):
    from .guarantees import check_ft
    _need(args, "model", "data", "epsilon")
    net = read_model(args.model)
    ds = read_dataset(args.data)
    crash = parse_p(args.p, net.depth)
    head = parse_head(args.head or "loss", _spec(args))
    r = check_ft(net, ds, crash, _spec(args), args.epsilon, args.alpha, not args.no_delta0,
                 args.samples_per_input, args.seed, head, args.threads)
    res = r.to_dict()
    if r.certificate is None:
        return res, [res], "infeasible: mean error exceeds epsilon", EXIT_INFEASIBLE
    c = r.certificate
    code = EXIT_OK
    if args.delta is not None and c.delta > args.delta:
        code = EXIT_INFEASIBLE
    emp = r.empirical
    summary = f"certificate delta = {c.delta:.4g} (mean {c.mean:.4g}, variance {c.variance:.4g}, t {c.t:.4g}, " \
              f"delta0 {c.delta0})" + ("" if emp is None else f"; empirical {emp.rate:.4g} +/- {emp.std_error:.2g}")
    return res, [{k: v for k, v in c.to_dict().items()}], summary, code


def cmd_median_plan(args):
    from .guarantees import median_repetitions
    _need(args, "delta")
    R = median_repetitions(args.delta_base, args.delta, args.rule)
    res = {"delta_base": args.delta_base, "delta_target": args.delta, "rule": args.rule, "R": R,
           "bound": args.delta_base ** (R / 2.0)}
    return res, [res], f"R = {R}", EXIT_OK


def cmd_train(args):
    from .network import make_network
    from .regularizer import RegWeights
    from .trainer import TrainConfig, train
    _need(args, "data")
    ds = read_dataset(args.data)
    if args.model:
        net = read_model(args.model)
    else:
        _need(args, "widths")
        net = make_network(_ints(args.widths), args.activation, seed=args.seed, init="continuous")
    psi = _floats(args.psi)
    if len(psi) != 2:
        raise UsageError("--psi needs two values: derivative,smoothing")
    drop = None
    if args.dropout:
        drop = tuple(parse_p(args.dropout, net.depth).p)
    cfg = TrainConfig(args.epochs, args.batch_size, args.lr, RegWeights(args.lam, args.mu, tuple(psi), args.nu),
                      drop, args.seed, args.lr_scaling)
    r = train(net, ds, cfg, _spec(args))
    if args.save:
        write_model(r.net, args.save, {"trained_epochs": args.epochs, "best_epoch": r.best_epoch, "seed": args.seed})
    res = {"history": r.history, "best_epoch": r.best_epoch, "final_objective": min(r.history),
           "saved": args.save}
    rows = [{"epoch": i, "objective": v} for i, v in enumerate(r.history)]
    return res, rows, f"objective {r.history[0]:.6g} -> {min(r.history):.6g} (best epoch {r.best_epoch})", EXIT_OK


def cmd_certify(args):
    from .certifier import CertifyConfig, certify, replicate_and_validate
    _need(args, "data", "epsilon", "delta", "widths")
    if args.complexity_C is None:
        raise UsageError("certify needs --complexity-C")
    ds = read_dataset(args.data)
    widths = _ints(args.widths)
    crash = parse_p(args.p, len(widths) - 1)
    cfg = CertifyConfig(args.epsilon, args.delta, args.complexity_C, tuple(widths), crash.p,
                        max_iterations=args.max_iterations, activation=args.activation, epochs=args.epochs,
                        batch_size=args.batch_size, learning_rate=args.lr, lr_scaling=args.lr_scaling,
                        seed=args.seed)
    r = certify(ds, _spec(args), cfg)
    res = r.to_dict()
    res["config"] = cfg.to_dict()
    if r.status == "certified":
        if args.save:
            write_model(r.net, args.save, {"certified": True, "R": r.R})
        if args.validate_samples > 0:
            res["validation"] = replicate_and_validate(r, r.net, ds, CrashModel(tuple(crash.p)), _spec(args),
                                                       args.validate_samples, args.seed, threads=args.threads)
    code = EXIT_OK if r.status == "certified" else EXIT_INFEASIBLE
    summary = f"status {r.status}, R = {r.R}, widths {r.widths}, iterations {len(r.iteration_log)}"
    return res, r.iteration_log, summary, code


def cmd_experiment(args):
    from .experiments import EXPERIMENTS
    fn = EXPERIMENTS[args.name]
    kw = {"seed": args.seed, "repeats": args.repeats, "mode": args.mode, "threads": args.threads}
    accepted = inspect.signature(fn).parameters
    kw = {k: v for k, v in kw.items() if k in accepted and v is not None}
    if args.name != "width-sweep":
        kw.pop("mode", None)
    rep = fn(**kw)
    res = rep.to_dict()
    code = EXIT_OK if rep.passed else EXIT_INFEASIBLE
    summary = f"{rep.name}: " + ", ".join(f"{k}: {'pass' if v else 'FAIL'}" for k, v in rep.assertions.items())
    return res, rep.table(), summary, code


def cmd_median_sim(args):
    _need(args, "model", "epsilon")
    net = read_model(args.model)
    crash = parse_p(args.p, net.depth)
    head, x, target = _head_and_target(args, net)
    t = median_replica_sim(net, x, crash, head, args.R, args.epsilon, args.samples, args.seed, target, args.threads)
    res = t.to_dict()
    return res, [res], f"R={args.R}: failure rate {t.rate:.4g} +/- {t.std_error:.2g} ({t.trials} trials)", EXIT_OK


COMMANDS = {"inspect": cmd_inspect, "inject": cmd_inject, "enumerate": cmd_enumerate, "bound": cmd_bound,
            "check-ft": cmd_check_ft, "median-plan": cmd_median_plan, "train": cmd_train, "certify": cmd_certify,
            "experiment": cmd_experiment, "median-sim": cmd_median_sim}


def _csv_text(rows):
    rows = [r for r in rows if isinstance(r, dict)]
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (v if not isinstance(v, (list, dict)) else dumps(v).replace("\n", "")) for k, v in r.items()})
    return buf.getvalue()


def _config(args):
    return {k: v for k, v in vars(args).items() if k not in ("out", "format")}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        results, rows, summary, code = COMMANDS[args.command](args)
    except (UsageError, SchemaError, EnumerationCapError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(summary)
    if args.out:
        if args.format == "csv":
            with open(args.out, "w", newline="") as fh:
                fh.write(_csv_text(rows))
        else:
            write_report(make_report(args.command, argv, _config(args), results, args.seed), args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
