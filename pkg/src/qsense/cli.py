"""Batch experiment driver.

Four verbs mirror the main analyses: `fim` sweeps the information metrics
over the power budget, `bounds` compares the estimation bounds against the
LMMSE error, `allocate` runs the power-allocation schemes, and `simulate`
cross-checks the analytical error against the Monte-Carlo pipeline.  Every
output is a CSV whose first line records the resolved configuration hash,
so identical configurations produce identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import tempfile

import numpy as np

from . import config as cfgmod
from .channel import bit_error, transition_matrix
from .errors import ConfigError, QsenseError, SolverError
from .estimator import lmmse_mse, mse_trace
from .fim import bayesian_fim, mi_lower_bound
from .mcsim import simulate
from .powalloc import (allocate_logdet_fim, allocate_mse_min, allocate_qblue_min,
                       allocate_tr_fim, uniform_allocation)
from .quantizer import lloyd_max_quantizer, observation_std, uniform_quantizer
from .wwb import weiss_weinstein_bound

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INVARIANT = 4


class InvariantViolation(QsenseError):
    """A pre-write consistency check failed."""


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        if np.isnan(x):
            return ""
        return repr(x)
    return str(x)


def _write_rows(path, header, rows, config_hash):
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\r\n")
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    data = buf.getvalue()
    if path is None:
        sys.stdout.write(data)
        return
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".qsense-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _quantizers(net, kind):
    if kind == "uniform":
        return [uniform_quantizer(s, net.prior) for s in net.sensors]
    return [lloyd_max_quantizer(observation_std(s, net.prior), s.bits)
            for s in net.sensors]


def _alphas(net, quantizers, powers):
    return [transition_matrix(bit_error(s, float(p)), spec)
            for s, spec, p in zip(net.sensors, quantizers, powers)]


def cmd_fim(cfg):
    net = cfg.network
    rows = []
    for kind in cfg.quantizers:
        quantizers = _quantizers(net, kind)
        for db in cfg.p_tot_db:
            p_tot = 10.0 ** (db / 10.0)
            powers = np.full(net.n_sensors, p_tot / net.n_sensors)
            rep = bayesian_fim(net, quantizers, powers,
                               envelope_averaged=cfg.fading_average)
            rows.append([
                float(db), kind, rep.trace, rep.log2_det,
                float(np.trace(rep.fim_centralized)),
                float(np.trace(rep.fim_error_free)),
                mi_lower_bound(rep, net.prior),
            ])
    header = ["p_tot_db", "quantizer", "tr_J", "logdet_J", "tr_J0", "tr_J_ideal",
              "mi_lower_bound"]
    return header, rows


def cmd_bounds(cfg):
    net = cfg.network
    quantizers = _quantizers(net, cfg.quantizers[0])
    rows = []
    for db in cfg.p_tot_db:
        p_tot = 10.0 ** (db / 10.0)
        powers = np.full(net.n_sensors, p_tot / net.n_sensors)
        rep = bayesian_fim(net, quantizers, powers)
        tr_crb = float(np.trace(np.linalg.inv(rep.fim)))
        scales = cfg.wwb_scales
        sup, _ = weiss_weinstein_bound(net, quantizers, powers,
                                       scales=scales)
        tr_wwb = float(np.trace(sup))
        tr_mse = float(np.trace(lmmse_mse(net, quantizers,
                                          _alphas(net, quantizers, powers)).mse))
        if not (tr_crb <= tr_wwb + 1e-6 and tr_wwb <= tr_mse + 1e-6):
            raise InvariantViolation(
                f"bound ordering violated at {db} dB: "
                f"crb={tr_crb!r} wwb={tr_wwb!r} mse={tr_mse!r}")
        rows.append([float(db), tr_crb, tr_wwb, tr_mse])
    return ["p_tot_db", "tr_crb", "tr_wwb", "tr_mse"], rows


_ALLOCATORS = {
    "tr_fim": allocate_tr_fim,
    "logdet_fim": allocate_logdet_fim,
    "mse_min": allocate_mse_min,
    "qblue_min": allocate_qblue_min,
}


def cmd_allocate(cfg):
    net = cfg.network
    quantizers = _quantizers(net, cfg.quantizers[0])
    rows = []
    for db in cfg.p_tot_db:
        p_tot = 10.0 ** (db / 10.0)
        for scheme in cfg.schemes:
            if scheme == "uniform":
                alloc = uniform_allocation(net, p_tot)
                objective = None
            else:
                try:
                    alloc = _ALLOCATORS[scheme](net, quantizers, p_tot, cfg.options)
                    objective = alloc.objective
                except SolverError:
                    for k in range(net.n_sensors):
                        rows.append([float(db), scheme, k + 1, None, None, None,
                                     "failed"])
                    continue
            tr_d = mse_trace(net, quantizers, alloc.powers,
                             envelope_averaged=cfg.fading_average,
                             envelope_nodes=cfg.options.envelope_nodes)
            for k in range(net.n_sensors):
                p_k = float(alloc.powers[k])
                p_db = 10.0 * np.log10(p_k) if p_k > 0 else None
                rows.append([float(db), scheme, k + 1, p_db, objective, tr_d,
                             alloc.flag])
    header = ["p_tot_db", "scheme", "sensor", "p_k_db", "objective", "tr_D", "flag"]
    return header, rows


def cmd_simulate(cfg):
    net = cfg.network
    quantizers = _quantizers(net, cfg.quantizers[0])
    rows = []
    for db in cfg.p_tot_db:
        p_tot = 10.0 ** (db / 10.0)
        powers = np.full(net.n_sensors, p_tot / net.n_sensors)
        rep = simulate(net, quantizers, powers, cfg.trials, seed=cfg.seed,
                       fidelity=cfg.fidelity)
        analytical = mse_trace(net, quantizers, powers)
        if cfg.trials > 1:
            z = (rep.tr_mse - analytical) / rep.tr_mse_se
            rows.append([cfg.seed, cfg.trials, rep.tr_mse, rep.tr_mse_se,
                         analytical, z])
        else:
            rows.append([cfg.seed, cfg.trials, rep.tr_mse, None, analytical, None])
    header = ["seed", "N", "empirical_tr_mse", "std_error", "analytical_tr_d",
              "z_score"]
    return header, rows


_COMMANDS = {
    "fim": cmd_fim,
    "bounds": cmd_bounds,
    "allocate": cmd_allocate,
    "simulate": cmd_simulate,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qsense",
        description="Analyses of power-constrained distributed Gaussian estimation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default=None, help="output CSV path (default stdout)")
        p.add_argument("--seed", type=int, default=None, help="override the seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker hint for array backends")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads > 0:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    try:
        cfg = cfgmod.load_experiment(args.config,
                                     overrides={"seed": args.seed, "out": args.out})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        header, rows = _COMMANDS[args.command](cfg)
        _write_rows(cfg.out, header, rows, cfg.config_hash)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except QsenseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
