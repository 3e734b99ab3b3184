"""Command-line front end.

Every command writes a metadata header (lines starting with ``#`` in CSV
mode) followed by a table. ``--save-config`` stores the full argument list as
JSON; ``--config`` replays it, with any extra arguments appended.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import (
    DisturbanceModel,
    OptimizerSettings,
    TransferChannel,
    bsc_lambda_min,
    capacity_averaged,
    capacity_bsc,
    capacity_numeric,
    capacity_strong_symmetric,
)
from .continuous import (
    Density,
    PerturbationFamily,
    make_perturbed,
    mim_continuous,
    mitm_continuous,
    mitm_series,
    series_convergence_order,
    triangular_decreasing,
    truncated_normal,
)
from .errors import MitmError
from .measures import (
    ProbVector,
    TransferConstraint,
    kl_divergence,
    l1_distance,
    lipschitz_check,
    mim,
    mim_weighted,
    mitm,
    to_base,
)
from .queue_analytics import (
    DEFAULT_GRID,
    INFINITE,
    QueueSpec,
    divergence_vs_infinite,
    kl_adjacent,
    kl_vs_infinite,
    ledger_csv,
    min_buffer_bound_kl,
    min_buffer_bound_mitm,
    min_buffer_search,
    mitm_adjacent,
    mitm_vs_infinite,
    steady_state,
    steady_state_infinite,
    typo_ledger,
)
from .simulator import ARRIVAL_KINDS, EXTRA_COLUMNS, SWEEP_COLUMNS, ArrivalModel, SimConfig, simulate, sweep_k, total_variation

PAPER_S = 1
PAPER_RHO = 0.9


class CliError(Exception):
    pass


# -- output ---------------------------------------------------------------------


class Report:
    def __init__(self, command: str, params: dict, seed: int | None):
        self.meta = {"tool": f"mitm {__version__}", "command": command, "params": params, "seed": seed}
        self.notes: list[str] = []
        self.columns: list[str] = []
        self.rows: list[list] = []

    def table(self, columns, rows):
        self.columns = list(columns)
        self.rows = [list(r) for r in rows]

    def render(self, fmt: str) -> str:
        if fmt == "json":
            return json.dumps(
                {"metadata": self.meta, "notes": self.notes, "rows": [dict(zip(self.columns, r)) for r in self.rows]},
                indent=2,
                default=_jsonable,
            ) + "\n"
        buf = io.StringIO()
        buf.write(f"# tool: {self.meta['tool']}\n")
        buf.write(f"# command: {self.meta['command']}\n")
        buf.write(f"# params: {json.dumps(self.meta['params'], sort_keys=True, default=_jsonable)}\n")
        buf.write(f"# seed: {self.meta['seed']}\n")
        w = csv.writer(buf, lineterminator="\n")
        if self.columns:
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([_fmt(v) for v in r])
        for note in self.notes:
            buf.write(f"# {note}\n")
        return buf.getvalue()


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


# -- argument helpers -----------------------------------------------------------


def parse_dist(text: str) -> list[float]:
    """Inline ``0.5,0.5`` or ``@path`` to a file of numbers (comma/whitespace separated)."""
    if text.startswith("@"):
        path = Path(text[1:])
        try:
            text = path.read_text()
        except OSError as exc:
            raise CliError(f"cannot read distribution file {path}: {exc}") from None
    parts = [t for t in text.replace(",", " ").split() if t]
    try:
        return [float(t) for t in parts]
    except ValueError:
        raise CliError(f"malformed distribution {text!r}") from None


def _grid(text: str) -> list[float]:
    if ":" in text:
        lo, hi, step = (float(t) for t in text.split(":"))
        n = int(round((hi - lo) / step)) + 1
        return [round(lo + i * step, 12) for i in range(n)]
    return [float(t) for t in text.split(",")]


def _k_value(text: str) -> int:
    return int(text.split("=", 1)[1] if "=" in text else text)


def _spec_from(args, k) -> QueueSpec:
    if args.arrival_rate is not None:
        return QueueSpec(args.s, k, args.arrival_rate, args.service_rate)
    return QueueSpec.from_rho(args.s, k, args.rho, args.service_rate)


def _add_queue_params(p, with_k=True):
    p.add_argument("--s", type=int, default=PAPER_S, help="number of servers")
    if with_k:
        p.add_argument("--k", type=int, default=1, help="buffer size")
    p.add_argument("--rho", type=float, default=PAPER_RHO, help="traffic intensity a/s")
    p.add_argument("--arrival-rate", type=float, default=None, help="overrides --rho")
    p.add_argument("--service-rate", type=float, default=1.0)


# -- commands -------------------------------------------------------------------


def cmd_measure(args, rep: Report):
    def dist(text):
        if text is None:
            raise CliError("missing distribution argument")
        return ProbVector(parse_dist(text), renormalize=args.renormalize)

    what = args.quantity
    rows = []
    if what == "mim":
        rows.append(("mim", mim(dist(args.dist))))
    elif what == "mim-weighted":
        v = mim_weighted(dist(args.dist), args.varpi)
        rows.append(("mim_weighted", to_base(v, args.log_base) if args.log_base else v))
    elif what == "mitm":
        rows.append(("mitm", mitm(dist(args.q), dist(args.p))))
    elif what == "kl":
        v = kl_divergence(dist(args.p), dist(args.q))
        rows.append(("kl", to_base(v, args.log_base) if args.log_base else v))
    elif what == "l1":
        rows.append(("l1", l1_distance(dist(args.p), dist(args.q))))
    elif what == "lipschitz":
        p, q = dist(args.p), dist(args.q)
        ok = lipschitz_check(mim(p), mim(q), p, q, TransferConstraint(args.lam))
        rows.append(("lipschitz_holds", ok))
    if args.log_base and what in ("mim-weighted", "kl"):
        rep.notes.append(f"log base: {args.log_base} (reporting conversion only)")
    rep.table(("quantity", "value"), rows)


def _matrix_file(path: str) -> TransferChannel:
    try:
        rows = [parse_dist(line) for line in Path(path).read_text().splitlines() if line.strip()]
    except OSError as exc:
        raise CliError(f"cannot read matrix file {path}: {exc}") from None
    if len({len(r) for r in rows}) != 1:
        raise CliError(f"matrix file {path}: rows have different lengths")
    return TransferChannel(np.array(rows))


def cmd_capacity(args, rep: Report):
    opt = OptimizerSettings(tol=args.tol, seed=args.seed or 0)
    if args.matrix:
        channels = [_matrix_file(m) for m in args.matrix]
        if len(channels) == 1 and not args.weights:
            res = capacity_numeric(channels[0], opt)
            dev = float(np.abs(res.argmax.probs - 1.0 / len(res.argmax)).max())
            rep.table(("numeric", "argmax", "argmax_deviation_from_uniform", "lambda_min", "start_spread"),
                      [(res.value, " ".join(f"{x:.9g}" for x in res.argmax), dev, res.lambda_min, res.spread)])
            return
        weights = parse_dist(args.weights) if args.weights else [1.0 / len(channels)] * len(channels)
        dm = DisturbanceModel(tuple(range(len(channels))), weights, channels)
        rep.table(("averaged_capacity",), [(capacity_averaged(dm, opt),)])
        return

    betas = [args.beta] if args.beta is not None else _grid(args.beta_grid)
    K = args.strong_symmetric or 2
    rows = []
    for b in betas:
        if K == 2:
            ch, closed = TransferChannel.binary_symmetric(b), capacity_bsc(b)
        else:
            ch, closed = TransferChannel.strongly_symmetric(K, b), capacity_strong_symmetric(K, b)
        res = capacity_numeric(ch, opt)
        dev = float(np.abs(res.argmax.probs - 1.0 / K).max())
        rows.append((b, closed, res.value, dev, res.lambda_min))
    rep.table(("beta", "closed_form", "numeric", "argmax_deviation_from_uniform", "lambda_min"), rows)
    if K == 2 and len(betas) == 1 and betas[0] != 0.5:
        rep.notes.append(f"closed-form minimal lambda: {bsc_lambda_min(betas[0])!r}")


def _density(name: str, args) -> Density:
    kw = {"n_nodes": args.nodes, "rule": args.rule}
    if name == "uniform":
        return Density.uniform(args.lo, args.hi, **kw)
    if name == "normal":
        return truncated_normal(args.lo, args.hi, **kw)
    if name == "triangular":
        return triangular_decreasing(**kw)
    raise CliError(f"unknown density {name!r}")


PERTURBATIONS = {
    "sine": lambda x: np.sin(2 * np.pi * x),
    "sine-cos": lambda x: np.sin(2 * np.pi * x) + np.cos(4 * np.pi * x),
    "zero": lambda x: np.zeros_like(x),
}


def _family(args, eps) -> PerturbationFamily:
    f0 = Density.uniform(0.0, 1.0, n_nodes=args.nodes, rule=args.rule)
    return PerturbationFamily(f0, PERTURBATIONS[args.u], args.alpha, eps)


def cmd_continuous(args, rep: Report):
    what = args.quantity
    if what == "mim":
        f = _density(args.density, args)
        rep.table(("quantity", "value", "nodes", "truncation_mass"),
                  [("mim", mim_continuous(f), f.nodes[0].size, f.truncation_mass)])
    elif what == "mitm":
        g, f = _density(args.g, args), _density(args.f, args)
        rep.table(("quantity", "value"), [("mitm", mitm_continuous(g, f))])
    elif what == "series":
        fam = _family(args, args.eps)
        res = mitm_series(fam, i_max=args.imax, orders=args.orders)
        direct = mitm_continuous(make_perturbed(fam), fam.f0)
        rep.table(("epsilon", "series", "direct", "residual", "tail_bound", "terms_first", "terms_second"),
                  [(args.eps, res.value, direct, direct - res.value, res.tail_bound, *res.terms)])
    elif what == "order":
        fam = _family(args, max(_grid(args.eps_grid)))
        co = series_convergence_order(fam, _grid(args.eps_grid), orders=args.orders)
        rep.table(("epsilon", "residual"), list(zip(co.epsilons, co.residuals)))
        rep.notes.append("slope: noise-limited" if co.noise_limited else f"slope: {co.slope!r}")


def cmd_queue(args, rep: Report):
    what = args.quantity
    if getattr(args, "rho", None) is not None and args.arrival_rate is None and args.rho > 10:
        rep.notes.append(f"warning: rho={args.rho} is far above 1; states concentrate at the buffer limit")
    if what == "steady":
        if args.infinite:
            d = steady_state_infinite(_spec_from(args, INFINITE))
            rep.notes.append(f"truncated at state {len(d) - 1}, remaining mass <= {d.truncation_mass:.3g}")
        else:
            d = steady_state(_spec_from(args, args.k))
        rep.table(("state", "probability"), list(enumerate(d.probs.tolist())))
    elif what == "divergence":
        spec = _spec_from(args, args.k)
        rows = []
        for name, r in (("mitm_adjacent", mitm_adjacent(spec, args.k)), ("mitm_vs_infinite", mitm_vs_infinite(spec, args.k))):
            rows.append((name, r.exact, r.quadratic, r.paper_closed_form))
        for name, r in (("kl_adjacent", kl_adjacent(spec, args.k)), ("kl_vs_infinite", kl_vs_infinite(spec, args.k))):
            rows.append((name, r.exact, "", r.paper_closed_form))
        rep.table(("measure", "exact", "quadratic", "printed"), rows)
    elif what == "size":
        spec = _spec_from(args, 0)
        k_star = min_buffer_search(spec, args.eps, args.measure)
        at = divergence_vs_infinite(spec, k_star, args.measure)
        before = divergence_vs_infinite(spec, k_star - 1, args.measure) if k_star > 0 else math.nan
        rows = [("search", k_star, at, before, "", "")]
        if spec.rho < 1:
            bound = (min_buffer_bound_mitm if args.measure == "mitm" else min_buffer_bound_kl)(spec, args.eps)
            rows.append(("printed_bound", "" if bound.k is None else bound.k, bound.raw, "",
                         bound.valid, bound.sufficient))
        rep.table(("method", "k", "divergence_at_k_or_raw_bound", "divergence_at_k_minus_1", "is_lower_bound", "sufficient"), rows)
    elif what == "ledger":
        grid = DEFAULT_GRID if args.grid == "default" else {"s": (PAPER_S,), "k": tuple(range(0, 11)), "rho": (PAPER_RHO,)}
        text = ledger_csv(typo_ledger(grid))
        lines = list(csv.reader(io.StringIO(text)))
        rep.table(lines[0], lines[1:])


def _sim_base(args, k) -> SimConfig:
    spec = _spec_from(args, k)
    return SimConfig(
        spec,
        ArrivalModel.for_spec(args.model if hasattr(args, "model") else "exponential", spec),
        horizon_events=args.events,
        warmup_fraction=args.warmup,
        seed=args.seed if args.seed is not None else 0,
        replications=args.reps,
    )


def cmd_simulate(args, rep: Report):
    cfg = _sim_base(args, args.k)
    res = simulate(cfg)
    analytic = steady_state(cfg.spec).probs
    rows = [(j, res.occupancy.probs[j], analytic[j]) for j in range(cfg.n_states)]
    rep.table(("state", "occupancy", "analytic"), rows)
    rep.notes.append(f"attempts={res.attempts} admissions={res.admissions} balks={res.balks} blocked={res.blocked}")
    rep.notes.append(f"tv_to_analytic={total_variation(res.occupancy, analytic)!r}")
    if res.redrawn:
        rep.notes.append(f"normal redraw rate={res.redraw_rate!r}")


def crossover(rows: list[dict], column_i="d_i_ana", column_kl="d_kl_ana") -> int | None:
    """First k from which |D_I| stays below D for the rest of the range."""
    by_k = {}
    for r in rows:
        by_k[r["k"]] = (abs(r[column_i]), r[column_kl])
    ks = sorted(by_k)
    for i, k in enumerate(ks):
        if all(by_k[j][0] < by_k[j][1] for j in ks[i:]):
            return k
    return None


def cmd_reproduce(args, rep: Report):
    base = _sim_base(args, args.k_min)
    versus = "adjacent" if args.figure == "fig2" else "infinite"
    models = tuple(args.models.split(","))
    rows = sweep_k(base, range(args.k_min, args.k_max + 1), models=models, versus=versus, workers=args.threads)
    cols = list(SWEEP_COLUMNS) + list(EXTRA_COLUMNS)
    rep.table(cols, [[r[c] for c in cols] for r in rows])
    k0 = crossover(rows)
    rep.notes.append(f"crossover: |D_I-Ana| < D-Ana for all k >= {k0}" if k0 is not None else "crossover: none in range")
    rep.summary = rep.notes[-1]


# -- parser ---------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--out", default=None, help="write output here instead of stdout")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--save-config", default=None, help="store this invocation as JSON")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="mitm", description="Message importance transfer measure toolkit")
    parser.add_argument("--version", action="version", version=f"mitm {__version__}")
    parser.add_argument("--config", default=None, help="replay a saved JSON invocation")
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("measure", parents=[common], help="discrete importance measures")
    m.add_argument("quantity", choices=("mim", "mim-weighted", "mitm", "kl", "l1", "lipschitz"))
    m.add_argument("--dist")
    m.add_argument("--p")
    m.add_argument("--q")
    m.add_argument("--varpi", type=float, default=1.0)
    m.add_argument("--lam", type=float, default=1.0)
    m.add_argument("--log-base", type=float, default=None)
    m.add_argument("--renormalize", action="store_true")
    m.set_defaults(func=cmd_measure)

    c = sub.add_parser("capacity", parents=[common], help="message importance transfer capacity")
    c.add_argument("--beta", type=float, default=None)
    c.add_argument("--beta-grid", default="0.05:0.95:0.05")
    c.add_argument("--strong-symmetric", type=_k_value, default=None, metavar="K")
    c.add_argument("--matrix", action="append", default=None, help="row-stochastic matrix file; repeat for a disturbance family")
    c.add_argument("--weights", default=None, help="disturbance weights for repeated --matrix")
    c.add_argument("--tol", type=float, default=1e-9)
    c.set_defaults(func=cmd_capacity)

    ct = sub.add_parser("continuous", parents=[common], help="continuous measures and perturbation series")
    ct.add_argument("quantity", choices=("mim", "mitm", "series", "order"))
    ct.add_argument("--density", default="uniform", choices=("uniform", "normal", "triangular"))
    ct.add_argument("--g", default="uniform", choices=("uniform", "normal", "triangular"))
    ct.add_argument("--f", default="triangular", choices=("uniform", "normal", "triangular"))
    ct.add_argument("--lo", type=float, default=0.0)
    ct.add_argument("--hi", type=float, default=1.0)
    ct.add_argument("--nodes", type=int, default=4096)
    ct.add_argument("--rule", default="simpson", choices=("simpson", "gauss"))
    ct.add_argument("--u", default="sine", choices=tuple(PERTURBATIONS))
    ct.add_argument("--alpha", type=float, default=1.0)
    ct.add_argument("--eps", type=float, default=0.1)
    ct.add_argument("--eps-grid", default="0.2,0.1,0.05,0.025")
    ct.add_argument("--imax", type=int, default=None)
    ct.add_argument("--orders", type=int, default=2, choices=(1, 2))
    ct.set_defaults(func=cmd_continuous)

    q = sub.add_parser("queue", parents=[common], help="M/M/s/k analytics and buffer sizing")
    q.add_argument("quantity", choices=("steady", "divergence", "size", "ledger"))
    _add_queue_params(q)
    q.add_argument("--infinite", action="store_true")
    q.add_argument("--eps", type=float, default=1e-3)
    q.add_argument("--measure", choices=("mitm", "kl"), default="mitm")
    q.add_argument("--grid", choices=("default", "paper"), default="default")
    q.set_defaults(func=cmd_queue)

    s = sub.add_parser("simulate", parents=[common], help="discrete-event simulation of one configuration")
    _add_queue_params(s)
    s.add_argument("--model", choices=ARRIVAL_KINDS, default="exponential")
    s.add_argument("--events", type=int, default=1_000_000, help="arrival attempts per replication")
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--warmup", type=float, default=0.1)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reproduce", parents=[common], help="figure sweeps (k vs k+1, k vs infinity)")
    r.add_argument("figure", choices=("fig2", "fig3"))
    _add_queue_params(r, with_k=False)
    r.add_argument("--k-min", type=int, default=0)
    r.add_argument("--k-max", type=int, default=12)
    r.add_argument("--models", default=",".join(ARRIVAL_KINDS))
    r.add_argument("--events", type=int, default=25_000, help="arrival attempts per replication")
    r.add_argument("--reps", type=int, default=40)
    r.add_argument("--warmup", type=float, default=0.1)
    r.set_defaults(func=cmd_reproduce)
    return parser


_NOT_ECHOED = {"func", "out", "format", "save_config", "config"}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if "--config" in argv:
        i = argv.index("--config")
        if i + 1 >= len(argv):
            print("error: --config needs a file argument", file=sys.stderr)
            return 2
        path = argv[i + 1]
        try:
            saved = json.loads(Path(path).read_text())["argv"]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            print(f"error: cannot load config {path}: {exc}", file=sys.stderr)
            return 2
        # saved arguments first so anything given on the command line wins
        argv = list(saved) + argv[:i] + argv[i + 2 :]
    args = parser.parse_args(argv)

    if args.save_config:
        clean, skip = [], False
        for tok in argv:
            if skip:
                skip = False
                continue
            if tok in ("--save-config", "--config"):
                skip = True
                continue
            clean.append(tok)
        Path(args.save_config).write_text(json.dumps({"tool": "mitm", "version": __version__, "argv": clean}, indent=2))

    params = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}
    rep = Report(args.command, params, args.seed)
    try:
        args.func(args, rep)
    except (MitmError, CliError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = rep.render(args.format)
    if args.out:
        Path(args.out).write_text(text)
        summary = getattr(rep, "summary", None)
        if summary:
            print(summary)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
