"""Command-line experiment harness.

Subcommands:
    sample   baseline target run + speculative run, samples.csv + stats.json
    sweep    NFE/acceptance vs. a swept parameter (eps, L or d), sweep.csv
    couple   single-kernel coupling diagnostics as JSON
    analyze  cost model, bounds, rejection tails and the overlap curve as JSON

Configuration is an INI file of key=value tables plus ``--set section.key=value``
overrides (flags win over the file).  The environment variable SPECDIFF_SEED
overrides the configured run seed; an explicit ``--seed`` flag beats both.
All outputs are reproducible byte-for-byte from (config, seed): reports carry
no timestamps or timing.

Exit codes: 0 success, 2 configuration error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, coupling, metrics
from .drafting import (DraftStrategy, frozen_strategy, independent_strategy,
                       mixture_strategy, picard_strategy)
from .engine import CouplingConfig, run_speculative, run_target
from .models import (GaussianKernel, GmmSpec, exact_score_model, perturbed_score_model,
                     random_gmm)
from .schedule import linear_schedule, make_grid

__all__ = ["main", "ConfigError", "load_config", "DEFAULT_CONFIG"]


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


DEFAULT_CONFIG = {
    "gmm": {"d": "2", "n_comp": "16", "seed": "7", "path": ""},
    "sampler": {"K": "200", "eps": "0.25", "t_clip": "0.999", "schedule": "linear"},
    "speculative": {
        "strategy": "frozen",
        "L": "10",
        "tau": "1.0",
        "variant": "reflection",
        "kappa": "1.0",
        "delta": "1.0",
        "draft_jitter": "0.1",
        "draft_seed": "5",
        "picard_m": "4",
        "mixture_weights": "0.5,0.5",
    },
    "run": {"n_chains": "1000", "seed": "0", "threads": "1"},
    "output": {"dir": "out", "n_proj": "128"},
    "sweep": {"strategies": "frozen,independent"},
}


def load_config(path: str | None, overrides: list[str]) -> configparser.ConfigParser:
    """Defaults, then the INI file, then --set overrides."""
    cfg = configparser.ConfigParser()
    cfg.read_dict(DEFAULT_CONFIG)
    if path:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        cfg.read(path)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, option = key.split(".", 1)
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section.strip(), option.strip(), value.strip())
    return cfg


def _get(cfg, section, option, cast):
    try:
        raw = cfg.get(section, option)
        return cast(raw)
    except (configparser.Error, ValueError) as exc:
        raise ConfigError(f"bad config value [{section}] {option}: {exc}") from exc


def _resolve_seed(cfg, args) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("SPECDIFF_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"SPECDIFF_SEED must be an integer, got {env!r}") from exc
    return _get(cfg, "run", "seed", int)


def _build_problem(cfg, d=None):
    t_clip = _get(cfg, "sampler", "t_clip", float)
    if not 0.0 < t_clip < 1.0:
        raise ConfigError(f"t_clip must lie in (0, 1), got {t_clip}")
    name = cfg.get("sampler", "schedule")
    if name != "linear":
        raise ConfigError(f"unknown schedule {name!r} (available: linear)")
    sched = linear_schedule(t_clip)
    path = cfg.get("gmm", "path")
    if path:
        if not Path(path).exists():
            raise ConfigError(f"gmm spec file not found: {path}")
        gmm = GmmSpec.from_json(Path(path).read_text())
    else:
        dim = d if d is not None else _get(cfg, "gmm", "d", int)
        gmm = random_gmm(dim, _get(cfg, "gmm", "n_comp", int), _get(cfg, "gmm", "seed", int))
    K = _get(cfg, "sampler", "K", int)
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    model = exact_score_model(gmm, sched)
    grid = make_grid(K, t_clip)
    return model, grid


def _build_strategy(cfg, model, name=None) -> DraftStrategy:
    kind = name if name is not None else cfg.get("speculative", "strategy")
    if kind == "frozen":
        return frozen_strategy()
    if kind == "independent":
        draft = perturbed_score_model(model, _get(cfg, "speculative", "draft_jitter", float),
                                      _get(cfg, "speculative", "draft_seed", int))
        return independent_strategy(draft)
    if kind == "picard":
        return picard_strategy(_get(cfg, "speculative", "picard_m", int))
    if kind == "mixture":
        weights = [float(w) for w in cfg.get("speculative", "mixture_weights").split(",")]
        draft = perturbed_score_model(model, _get(cfg, "speculative", "draft_jitter", float),
                                      _get(cfg, "speculative", "draft_seed", int))
        comps = [frozen_strategy(), independent_strategy(draft)][: len(weights)]
        return mixture_strategy(comps, weights)
    raise ConfigError(f"unknown draft strategy {kind!r}")


def _coupling_config(cfg) -> CouplingConfig:
    try:
        return CouplingConfig(
            variant=cfg.get("speculative", "variant"),
            tau=_get(cfg, "speculative", "tau", float),
            kappa=_get(cfg, "speculative", "kappa", float),
            delta=_get(cfg, "speculative", "delta", float),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _speculative_params(cfg):
    eps = _get(cfg, "sampler", "eps", float)
    L = _get(cfg, "speculative", "L", int)
    if eps <= 0.0:
        raise ConfigError("speculative runs need eps > 0 (deterministic samplers unsupported)")
    if L < 1:
        raise ConfigError(f"window size must be >= 1, got {L}")
    return eps, L


def _fmt(value) -> str:
    """Shortest round-trip decimal with a '.' separator, any locale."""
    return repr(float(value))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _out_dir(cfg, args) -> Path:
    out = Path(args.out if getattr(args, "out", None) else cfg.get("output", "dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_sample(cfg, args) -> int:
    model, grid = _build_problem(cfg)
    eps, L = _speculative_params(cfg)
    seed = _resolve_seed(cfg, args)
    n_chains = _get(cfg, "run", "n_chains", int)
    threads = int(args.threads) if args.threads else _get(cfg, "run", "threads", int)
    strategy = _build_strategy(cfg, model)
    cc = _coupling_config(cfg)

    tgt = run_target(model, grid, eps, n_chains, seed, threads=threads)
    spec = run_speculative(model, grid, strategy, cc, L, eps, n_chains, seed, threads=threads)

    n_proj = _get(cfg, "output", "n_proj", int)
    sw2 = metrics.sliced_wasserstein2(tgt.samples, spec.samples, n_proj,
                                      np.random.default_rng(seed))
    ks = [metrics.ks_two_sample(tgt.samples[:, c], spec.samples[:, c])
          for c in range(tgt.samples.shape[1])]

    out = _out_dir(cfg, args)
    stats = {
        "target": tgt.to_dict(),
        "speculative": spec.to_dict(),
        "per_step_acceptance": [None if np.isnan(v) else v
                                for v in spec.per_step_acceptance()],
        "sliced_w2": sw2,
        "ks_per_coordinate": [{"statistic": s, "p_value": p} for s, p in ks],
    }
    _write_json(out / "stats.json", stats)
    header = ["run", "chain"] + [f"x{i}" for i in range(tgt.samples.shape[1])]
    rows = [["target", i] + [_fmt(v) for v in row] for i, row in enumerate(tgt.samples)]
    rows += [["speculative", i] + [_fmt(v) for v in row] for i, row in enumerate(spec.samples)]
    _write_csv(out / "samples.csv", header, rows)
    print(f"wrote {out / 'stats.json'} and {out / 'samples.csv'}")
    return 0


def cmd_sweep(cfg, args) -> int:
    if args.param not in ("eps", "L", "d"):
        raise ConfigError(f"sweep parameter must be eps, L or d, got {args.param!r}")
    try:
        values = [float(v) if args.param == "eps" else int(v)
                  for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {args.values!r}: {exc}") from exc
    if not values:
        raise ConfigError("sweep needs at least one value")
    seed = _resolve_seed(cfg, args)
    threads = int(args.threads) if args.threads else _get(cfg, "run", "threads", int)
    n_chains = _get(cfg, "run", "n_chains", int)
    strategies = [s.strip() for s in cfg.get("sweep", "strategies").split(",") if s.strip()]
    cc = _coupling_config(cfg)
    n_proj = _get(cfg, "output", "n_proj", int)

    rows = []
    for value in values:
        model, grid = _build_problem(cfg, d=int(value) if args.param == "d" else None)
        eps, L = _speculative_params(cfg)
        if args.param == "eps":
            eps = float(value)
            if eps <= 0.0:
                raise ConfigError("swept eps values must be positive")
        elif args.param == "L":
            L = int(value)
        baseline = run_target(model, grid, eps, n_chains, seed, threads=threads)
        for name in strategies:
            strategy = _build_strategy(cfg, model, name)
            stats = run_speculative(model, grid, strategy, cc, L, eps, n_chains, seed,
                                    chain_offset=10**6, threads=threads)
            sw2 = metrics.sliced_wasserstein2(baseline.samples, stats.samples, n_proj,
                                              np.random.default_rng(seed))
            rows.append([name, args.param, _fmt(value), _fmt(stats.mean_nfe_parallel),
                         _fmt(stats.mean_nfe_total), _fmt(stats.acceptance_rate),
                         _fmt(sw2)])
    out = _out_dir(cfg, args)
    _write_csv(out / "sweep.csv",
               ["strategy", "param", "value", "mean_nfe_parallel", "mean_nfe_total",
                "mean_acceptance", "sliced_w2"], rows)
    print(f"wrote {out / 'sweep.csv'}")
    return 0


def cmd_couple(cfg, args) -> int:
    if args.sigma <= 0.0:
        raise ConfigError(f"sigma must be positive, got {args.sigma}")
    m_p = np.asarray([float(v) for v in args.mp.split(",")])
    m_q = np.asarray([float(v) for v in args.mq.split(",")])
    if m_p.shape != m_q.shape:
        raise ConfigError("m_p and m_q must have the same dimension")
    if args.tau <= 0.0:
        raise ConfigError(f"tau must be positive, got {args.tau}")
    seed = _resolve_seed(cfg, args)
    rng = np.random.default_rng(seed)
    n = int(args.n_mc)
    d = m_p.size

    z = rng.standard_normal((n, d))
    u = rng.random(n)
    if args.variant == "reflection":
        out = coupling.tempered_reflection_coupling(m_p, m_q, args.sigma, z, u, args.tau)
    elif args.variant == "projected":
        out = coupling.projected_reflection_coupling(np.eye(d), m_p, m_q, args.sigma, z, u)
    else:
        raise ConfigError(f"unknown coupling variant {args.variant!r}")
    mismatch = float(np.mean(np.any(out.x != out.y, axis=1)))
    tv = coupling.gaussian_tv(m_p, m_q, args.sigma)
    ks = [metrics.ks_two_sample(out.x[:, c],
                                m_p[c] + args.sigma * rng.standard_normal(n))
          for c in range(d)]
    ks_y = [metrics.ks_two_sample(out.y[:, c],
                                  m_q[c] + args.sigma * rng.standard_normal(n))
            for c in range(d)]
    p_kernel = GaussianKernel(mean=m_p, sigma=args.sigma)
    q_kernel = GaussianKernel(mean=m_q, sigma=args.sigma)
    trials = []
    if tv > 1e-6:
        for _ in range(min(2000, n)):
            _, t = coupling.naive_adjusted_rejection(p_kernel, q_kernel, rng)
            trials.append(t)
    report = {
        "empirical_mismatch": mismatch,
        "closed_form_tv": tv,
        "acceptance_rate": float(np.mean(out.accepted)),
        "ks_x_p_values": [p for _, p in ks],
        "ks_y_p_values": [p for _, p in ks_y],
        "naive_mean_trials": float(np.mean(trials)) if trials else None,
        "tau": args.tau,
        "n_mc": n,
    }
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "couple.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_analyze(cfg, args) -> int:
    model, grid = _build_problem(cfg)
    eps, L = _speculative_params(cfg)
    seed = _resolve_seed(cfg, args)
    rng = np.random.default_rng(seed)
    draft = perturbed_score_model(model, _get(cfg, "speculative", "draft_jitter", float),
                                  _get(cfg, "speculative", "draft_seed", int))
    n_mc = int(args.n_mc)

    t_query = 0.5
    bound, gap_mse = analysis.acceptance_lower_bound(draft, model, t_query, grid.gamma,
                                                     eps, n_mc, rng)
    acc = analysis.empirical_acceptance(draft, model, t_query, grid.gamma, eps, n_mc, rng)

    stats = run_speculative(model, grid, _build_strategy(cfg, model), _coupling_config(cfg),
                            L, eps, _get(cfg, "run", "n_chains", int), seed)
    cm = analysis.CostModel(C_p=float(args.cost_p), C_q=1.0, L=L)
    ratio, margin = analysis.cost_ratio(stats.advances, cm)

    tail = analysis.rejection_time_tail(draft, model, grid, eps, min(40, grid.K), n_mc, rng)
    overlap = [analysis.diff_covariance_overlap(0.2, 0.1, d) for d in range(1, 501)]
    alphas = [0.0, 0.25, 0.5, 0.75, 1.0]

    report = {
        "acceptance_bound": {
            "t": t_query,
            "bound": bound,
            "score_gap_mse": gap_mse,
            "empirical_mean_ratio": acc.mean_ratio,
            "empirical_mean_clipped": acc.mean_clipped,
        },
        "cost_ratio": ratio,
        "break_even_margin": margin,
        "mean_advance": stats.mean_advance,
        "advance_histogram": np.bincount(stats.advances.astype(int)).tolist(),
        "expected_advance": {repr(a): analysis.expected_advance(a, L) for a in alphas},
        "tail_curve": tail.tolist(),
        "overlap_curve_d1_500": overlap,
    }
    text = json.dumps(report, sort_keys=True, indent=2)
    out = _out_dir(cfg, args)
    (out / "analyze.json").write_text(text + "\n")
    print(f"wrote {out / 'analyze.json'}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specdiff",
                                     description="Speculative sampling for diffusion chains")
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SEC.KEY=VAL", help="override a config value")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument("--threads", type=int, default=None, help="worker thread cap")
    parser.add_argument("--out", default=None, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("sample", help="baseline + speculative run")

    p_sweep = sub.add_parser("sweep", help="sweep eps, L or d")
    p_sweep.add_argument("--param", required=True, choices=["eps", "L", "d"])
    p_sweep.add_argument("--values", required=True, help="comma-separated values")

    p_couple = sub.add_parser("couple", help="coupling diagnostics")
    p_couple.add_argument("--mp", default="0.5", help="comma-separated draft mean")
    p_couple.add_argument("--mq", default="1.5", help="comma-separated target mean")
    p_couple.add_argument("--sigma", type=float, default=0.5)
    p_couple.add_argument("--tau", type=float, default=1.0)
    p_couple.add_argument("--variant", default="reflection",
                          choices=["reflection", "projected"])
    p_couple.add_argument("--n-mc", type=int, default=100_000)

    p_an = sub.add_parser("analyze", help="theoretical diagnostics")
    p_an.add_argument("--n-mc", type=int, default=20_000)
    p_an.add_argument("--cost-p", type=float, default=0.0,
                      help="draft cost relative to C_q=1")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.command == "sample":
            return cmd_sample(cfg, args)
        if args.command == "sweep":
            return cmd_sweep(cfg, args)
        if args.command == "couple":
            return cmd_couple(cfg, args)
        return cmd_analyze(cfg, args)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, configparser.Error) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
