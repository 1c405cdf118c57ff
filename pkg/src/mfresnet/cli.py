"""Experiment runner: configuration ingestion, hierarchical seed management,
and the headline experiments (simulate / train / solve-limit / gamma /
diagnose-fpk / gradcheck).

Every experiment is a pure function of (config, seeds): reruns produce
byte-identical CSV outputs regardless of the worker count, because each
unit of work owns a seed derived from the root seed and results are
written in a fixed order.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import math
import os
import sys

import numpy as np

from .errors import ConfigInvalid, GradCheckFailed, MfresnetError
from .fpk import FixedPointConfig, estimate_G, fixed_point_solve, residual_first_order, neumann_derivatives
from .measures import (
    TestFunction,
    empirical_path,
    fpk_residual,
    wasserstein2_1d,
)
from .objective import evaluate_Jd, evaluate_JN
from .params import (
    ActivationSpec,
    ControlGrid,
    Dims,
    InitialLaw,
    ModelParams,
    TypeVector,
    validate_params,
)
from .rng import make_generator, split_seed
from .sde import dump_trajectories, simulate_limit_sde, simulate_particles
from .trainer import TrainConfig, forward_sensitivity, jn_pathwise, train


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def default_model() -> ModelParams:
    return ModelParams(
        activation=ActivationSpec(kind="tanh"),
        rho="tanh_mean", phi="decay",
        alpha=1.0, beta=1.0, lambda1=0.1, lambda2=0.1,
        T=1.0, dims=Dims(d=1, q=0, p=1, m=2, l=0), K=10.0, k_theta=5.0,
    )


def default_law() -> InitialLaw:
    tv = TypeVector(epsilon=np.array([[0.3]]), gamma=np.zeros(0), sigma=np.zeros((0, 1)))
    return InitialLaw.uniform(x_low=[0.5], x_high=[1.5], y_low=[-0.5], y_high=[0.5], type_vector=tv)


@dataclasses.dataclass
class ExperimentConfig:
    model: ModelParams
    initial_law: InitialLaw
    seed: int = 20240815
    out: str = "results"
    workers: int = 1
    n_particles: int = 100
    n_steps: int = 32
    n_list: tuple = (50, 200, 800, 3200)
    n_draws: int = 10
    m_paths: int = 100000
    seeds_per_n: int = 6
    phi_radius: float = 12.0
    dump_trajectories: bool = False
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    fixed_point: FixedPointConfig = dataclasses.field(default_factory=FixedPointConfig)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        d["initial_law"] = self.initial_law.to_dict()
        d["n_list"] = list(self.n_list)
        return d

    def config_hash(self):
        d = self.to_dict()
        # execution details do not change the results and are not hashed
        for key in ("workers", "out", "dump_trajectories"):
            d.pop(key, None)
        payload = json.dumps(d, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        model = ModelParams.from_dict(d.pop("model")) if "model" in d else default_model()
        law = InitialLaw.from_dict(d.pop("initial_law")) if "initial_law" in d else default_law()
        tr = TrainConfig(**d.pop("train")) if "train" in d else TrainConfig()
        fp = FixedPointConfig(**d.pop("fixed_point")) if "fixed_point" in d else FixedPointConfig()
        if "n_list" in d:
            d["n_list"] = tuple(int(n) for n in d["n_list"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        return cls(model=validate_params(model), initial_law=law, train=tr, fixed_point=fp, **d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _write_atomic(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(cfg, columns, rows):
    lines = [f"# config_hash={cfg.config_hash()}", ",".join(columns)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def _run_units(units, fn, workers):
    """Evaluate fn on every unit, possibly concurrently; returns results in
    unit order so output bytes do not depend on the worker count."""
    if workers <= 1:
        return [fn(u) for u in units]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, units))


def _reference_theta(p: ModelParams, n_intervals: int) -> ControlGrid:
    t = np.linspace(0.0, p.T, n_intervals + 1)
    values = np.zeros((n_intervals + 1, p.dims.m))
    values[:, 0] = 0.6 * np.cos(np.pi * t / p.T)
    if p.dims.m > 1:
        values[:, 1] = 0.3 * np.sin(np.pi * t / p.T) - 0.2
    return ControlGrid(t_grid=t, values=values, k_theta=p.k_theta)


def _nonoise_law(law: InitialLaw) -> InitialLaw:
    tv = law.type_vector
    quiet = TypeVector(epsilon=np.zeros_like(tv.epsilon), gamma=tv.gamma,
                       sigma=np.zeros_like(tv.sigma))
    return dataclasses.replace(law, type_vector=quiet)


def spearman_negative_p(values):
    """Spearman rank correlation of values against their index, with the
    exact one-sided p-value (probability of a correlation at least as
    negative under random ranking).  Small-n enumeration oracle."""
    import itertools

    values = np.asarray(values, dtype=float)
    n = values.size
    ranks = np.argsort(np.argsort(values))

    def rho(r):
        idx = np.arange(n)
        d = np.asarray(r) - idx
        return 1.0 - 6.0 * float(np.sum(d * d)) / (n * (n * n - 1))

    observed = rho(ranks)
    count = 0
    total = 0
    for perm in itertools.permutations(range(n)):
        total += 1
        if rho(perm) <= observed + 1e-12:
            count += 1
    return observed, count / total


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_simulate(cfg: ExperimentConfig):
    p = cfg.model
    samples, types = cfg.initial_law.sample(cfg.n_particles, split_seed(cfg.seed, "simulate-draw"))
    theta = _reference_theta(p, cfg.n_steps)
    ens = simulate_particles(p, theta, samples, types, cfg.n_steps, split_seed(cfg.seed, "simulate"))
    bd = evaluate_JN(ens, theta, p)
    rows = [(bd.terminal, bd.running_state, bd.control_l2, bd.control_h1, bd.total)]
    outputs = {
        "cost.csv": _csv_text(cfg, ["terminal", "running_state", "control_l2", "control_h1", "total"], rows),
    }
    summary = [
        f"simulated {cfg.n_particles} particles over {cfg.n_steps} steps",
        f"pathwise objective {bd.total!r}",
    ]
    return outputs, summary, {"ensemble": ens, "breakdown": bd}


def run_train(cfg: ExperimentConfig):
    p = cfg.model
    samples, types = cfg.initial_law.sample(cfg.n_particles, split_seed(cfg.seed, "train-draw"))
    result = train(p, samples, types, cfg.train, split_seed(cfg.seed, "train"))
    hist_rows = [
        (i, bd.total, bd.terminal, bd.running_state, bd.control_l2, bd.control_h1)
        for i, bd in enumerate(result.history)
    ]
    theta_rows = [
        (float(t),) + tuple(float(v) for v in vals)
        for t, vals in zip(result.theta_star.t_grid, result.theta_star.values)
    ]
    m = result.theta_star.m
    outputs = {
        "history.csv": _csv_text(cfg, ["iter", "total", "terminal", "running_state", "control_l2", "control_h1"], hist_rows),
        "theta.csv": _csv_text(cfg, ["t"] + [f"theta{j}" for j in range(m)], theta_rows),
    }
    summary = [
        f"trained on {cfg.n_particles} samples, {len(result.history) - 1} accepted steps",
        f"final objective {result.final_value!r}, final grad norm {result.grad_norm_final!r}",
    ]
    return outputs, summary, {"result": result}


def run_solve_limit(cfg: ExperimentConfig):
    p = cfg.model
    fp_cfg = dataclasses.replace(cfg.fixed_point, seed=split_seed(cfg.seed, "fpk"))
    theta_star, trace = fixed_point_solve(p, cfg.initial_law, fp_cfg)
    n_steps = theta_star.t_grid.size - 1
    G = estimate_G(theta_star, p, cfg.initial_law, fp_cfg.mc_paths, n_steps,
                   split_seed(cfg.seed, "limit-G"))
    jd, jd_se = evaluate_Jd(theta_star, p, cfg.initial_law, cfg.m_paths, n_steps,
                            split_seed(cfg.seed, "limit-jd"))
    m = theta_star.m
    theta_rows = [
        (float(t),) + tuple(float(v) for v in vals) + tuple(float(g) for g in gv)
        for t, vals, gv in zip(theta_star.t_grid, theta_star.values, G.values)
    ]
    trace_rows = list(enumerate(map(float, trace)))
    outputs = {
        "theta_star.csv": _csv_text(
            cfg, ["t"] + [f"theta{j}" for j in range(m)] + [f"G{j}" for j in range(m)], theta_rows),
        "trace.csv": _csv_text(cfg, ["iter", "sup_change"], trace_rows),
    }
    d0, dT = neumann_derivatives(theta_star)
    summary = [
        f"fixed point reached in {len(trace)} iterations (last change {trace[-1]!r})",
        f"limit objective estimate {jd!r} +/- {jd_se!r}",
        f"boundary derivative magnitudes {float(np.max(d0))!r}, {float(np.max(dT))!r}",
    ]
    return outputs, summary, {"theta_star": theta_star, "trace": trace, "jd": jd, "jd_se": jd_se}


def _random_gradcheck_case(case_idx, root_seed):
    gen = make_generator(root_seed, f"gradcheck-case-{case_idx}")
    d = int(gen.integers(1, 4))
    q = int(gen.integers(0, 3))
    p_noise = int(gen.integers(1, 3))
    n_samples = int(gen.integers(1, 17))
    n_intervals = int(gen.choice([8, 16, 32, 64]))
    kind = str(gen.choice(["tanh", "sigmoid", "gaussian"]))
    act = ActivationSpec(
        kind=kind,
        z_weight=float(gen.uniform(-0.5, 0.5)) if q else 0.0,
        eta_weight=float(gen.uniform(-0.5, 0.5)),
    )
    p = ModelParams(
        activation=act, rho="tanh_mean", phi="decay",
        alpha=float(gen.uniform(0.5, 2.0)), beta=float(gen.uniform(0.5, 2.0)),
        lambda1=float(gen.uniform(0.05, 0.5)), lambda2=float(gen.uniform(0.05, 0.5)),
        T=1.0, dims=Dims(d=d, q=q, p=p_noise, m=2, l=q), K=10.0, k_theta=5.0,
    )
    tv = TypeVector(
        epsilon=gen.uniform(-0.4, 0.4, size=(d, p_noise)),
        gamma=gen.uniform(0.1, 1.0, size=q),
        sigma=gen.uniform(-0.4, 0.4, size=(q, p_noise)),
    )
    law = InitialLaw.uniform(
        x_low=np.full(d, -1.0), x_high=np.full(d, 1.0),
        y_low=np.full(d, -1.0), y_high=np.full(d, 1.0),
        z_low=np.full(q, -0.5), z_high=np.full(q, 0.5), type_vector=tv,
    )
    case_seed = split_seed(root_seed, f"gradcheck-sim-{case_idx}")
    samples, types = law.sample(n_samples, case_seed)
    t = np.linspace(0.0, p.T, n_intervals + 1)
    theta = ControlGrid(t, gen.uniform(-1.0, 1.0, size=(n_intervals + 1, 2)), k_theta=p.k_theta)
    direction = ControlGrid(t, gen.uniform(-1.0, 1.0, size=(n_intervals + 1, 2)), k_theta=p.k_theta)
    return p, samples, types, theta, direction, n_intervals, case_seed


def gradcheck_case_error(case_idx, root_seed, fd_epsilon=1e-5):
    """Relative error between the forward sensitivity and a common-random-
    number central finite difference for one randomized configuration."""
    p, samples, types, theta, direction, n_steps, case_seed = _random_gradcheck_case(case_idx, root_seed)
    ens = simulate_particles(p, theta, samples, types, n_steps, case_seed)
    analytic = forward_sensitivity(ens, theta, direction, p)
    h = fd_epsilon
    up = theta.with_values(theta.values + h * direction.values)
    dn = theta.with_values(theta.values - h * direction.values)
    j_up = jn_pathwise(p, up, samples, types, n_steps, case_seed).total
    j_dn = jn_pathwise(p, dn, samples, types, n_steps, case_seed).total
    fd = (j_up - j_dn) / (2.0 * h)
    rel = abs(analytic - fd) / max(abs(fd), 1e-12)
    return rel, analytic, fd, case_seed


def run_gradcheck(cfg: ExperimentConfig, n_cases=20):
    rows = []
    results = _run_units(
        range(n_cases),
        lambda c: gradcheck_case_error(c, cfg.seed, cfg.train.fd_epsilon),
        cfg.workers,
    )
    worst = 0.0
    for c, (rel, analytic, fd, case_seed) in enumerate(results):
        rows.append((c, case_seed, analytic, fd, rel))
        worst = max(worst, rel)
    outputs = {
        "gradcheck.csv": _csv_text(cfg, ["case", "case_seed", "directional_derivative", "central_fd", "rel_error"], rows),
    }
    summary = [f"gradcheck over {n_cases} configurations, worst relative error {worst!r}"]
    if worst > 1e-3:
        raise GradCheckFailed(f"worst relative error {worst:.3e} exceeds 1e-3")
    return outputs, summary, {"worst": worst, "rows": rows}


def _gamma_unit(cfg, theta_star, n, draw):
    p = cfg.model
    law = cfg.initial_law
    draw_seed = split_seed(cfg.seed, f"gamma-{n}-{draw}")
    samples, types = law.sample(n, split_seed(draw_seed, "data"))
    result = train(p, samples, types, cfg.train, split_seed(draw_seed, "train"))
    min_jn = result.final_value
    sup_diff = float(np.max(np.abs(result.theta_star.values - theta_star.values)))
    ens = simulate_particles(p, result.theta_star, samples, types,
                             cfg.train.n_intervals, split_seed(draw_seed, "terminal"))
    return min_jn, sup_diff, ens.X[:, -1, 0]


def run_gamma(cfg: ExperimentConfig):
    """Value and minimizer convergence of the sampled problem to the limit."""
    p = cfg.model
    if not p.is_scalar_two_weight():
        raise ConfigInvalid("gamma experiment requires the scalar two-weight configuration")
    if list(cfg.n_list) != sorted(set(cfg.n_list)):
        raise ConfigInvalid("n_list must be strictly increasing")
    fp_cfg = dataclasses.replace(cfg.fixed_point, n_intervals=cfg.train.n_intervals,
                                 seed=split_seed(cfg.seed, "fpk"))
    theta_star, _ = fixed_point_solve(p, cfg.initial_law, fp_cfg)
    jd, jd_se = evaluate_Jd(theta_star, p, cfg.initial_law, cfg.m_paths,
                            cfg.train.n_intervals, split_seed(cfg.seed, "jd"))
    ref_draws = cfg.initial_law.sample(min(cfg.m_paths, 20000), split_seed(cfg.seed, "ref-cloud"))
    ref_ens = simulate_limit_sde(p, theta_star, ref_draws, cfg.train.n_intervals,
                                 split_seed(cfg.seed, "ref-cloud-sim"))
    ref_cloud = ref_ens.X[:, -1, 0]

    units = [(n, draw) for n in cfg.n_list for draw in range(cfg.n_draws)]
    results = _run_units(units, lambda u: _gamma_unit(cfg, theta_star, *u), cfg.workers)
    rows = []
    for (n, draw), (min_jn, sup_diff, cloud) in zip(units, results):
        w2 = wasserstein2_1d(cloud, ref_cloud)
        rows.append((n, draw, min_jn, abs(min_jn - jd), sup_diff, w2))
    outputs = {
        "gamma.csv": _csv_text(cfg, ["N", "draw", "min_JN", "abs_gap", "theta_supnorm_diff", "w2_terminal"], rows),
    }
    mean_gap = [float(np.mean([r[3] for r in rows if r[0] == n])) for n in cfg.n_list]
    rho, pval = spearman_negative_p(mean_gap)
    first_n, last_n = cfg.n_list[0], cfg.n_list[-1]
    diffs_first = [r[4] for r in rows if r[0] == first_n]
    diffs_last = [r[4] for r in rows if r[0] == last_n]
    frac_smaller = float(np.mean([dl < df for df, dl in zip(diffs_first, diffs_last)]))
    summary = [
        f"limit objective {jd!r} +/- {jd_se!r}",
        "mean |min_JN - Jd| per N: " + ", ".join(f"{n}:{g!r}" for n, g in zip(cfg.n_list, mean_gap)),
        f"spearman rho {rho!r}, one-sided p {pval!r}",
        f"fraction of draws with smaller theta gap at N={last_n} vs N={first_n}: {frac_smaller!r}",
    ]
    return outputs, summary, {
        "rows": rows, "mean_gap": mean_gap, "rho": rho, "pval": pval,
        "frac_smaller": frac_smaller, "jd": jd, "jd_se": jd_se, "theta_star": theta_star,
    }


def _residual_test_function(cfg):
    p = cfg.model
    d, q = p.dims.d, p.dims.q
    x_sq = tuple(2 if j == 0 else 0 for j in range(d))
    terms = [(1.0, 0, x_sq, (0,) * q), (0.5, 0, tuple(1 if j == 0 else 0 for j in range(d)), (0,) * q)]
    if q:
        terms.append((0.5, 0, tuple(1 if j == 0 else 0 for j in range(d)), tuple(1 if k == 0 else 0 for k in range(q))))
    return TestFunction(terms=tuple(terms), d=d, q=q,
                        r_plateau=cfg.phi_radius, r_support=2.0 * cfg.phi_radius)


def _diagnose_unit(cfg, phi, theta, law, label, n, seed_idx):
    p = cfg.model
    run_seed = split_seed(cfg.seed, f"diag-{label}-{n}-{seed_idx}")
    samples, types = law.sample(n, split_seed(run_seed, "data"))
    ens = simulate_particles(p, theta, samples, types, cfg.n_steps, run_seed)
    sup_res, _ = fpk_residual(empirical_path(ens), theta, phi, p)
    return sup_res, ens.X[:, -1, 0]


def run_diagnose_fpk(cfg: ExperimentConfig):
    """Residual decay of the empirical measure against the limiting equation."""
    p = cfg.model
    if list(cfg.n_list) != sorted(set(cfg.n_list)):
        raise ConfigInvalid("n_list must be strictly increasing")
    phi = _residual_test_function(cfg)
    theta = _reference_theta(p, cfg.n_steps)
    law = cfg.initial_law
    quiet_law = _nonoise_law(law)
    ref_draws = law.sample(min(cfg.m_paths, 20000), split_seed(cfg.seed, "diag-ref"))
    ref_ens = simulate_limit_sde(p, theta, ref_draws, cfg.n_steps, split_seed(cfg.seed, "diag-ref-sim"))
    ref_cloud = ref_ens.X[:, -1, 0]

    units = [(label, n, s)
             for label in ("noisy", "nonoise")
             for n in cfg.n_list
             for s in range(cfg.seeds_per_n)]

    def unit(u):
        label, n, s = u
        law_u = law if label == "noisy" else quiet_law
        return _diagnose_unit(cfg, phi, theta, law_u, label, n, s)

    results = _run_units(units, unit, cfg.workers)
    rows = []
    for (label, n, s), (sup_res, cloud) in zip(units, results):
        w2 = wasserstein2_1d(cloud, ref_cloud) if p.dims.d == 1 else float("nan")
        rows.append((label, n, s, sup_res, w2))
    outputs = {
        "diagnose_fpk.csv": _csv_text(cfg, ["case", "N", "seed", "sup_residual", "w2_terminal"], rows),
    }
    mean_res = [float(np.mean([r[3] for r in rows if r[0] == "noisy" and r[1] == n])) for n in cfg.n_list]
    slope = float(np.polyfit(np.log(np.asarray(cfg.n_list, dtype=float)), np.log(mean_res), 1)[0])
    mean_res_quiet = [float(np.mean([r[3] for r in rows if r[0] == "nonoise" and r[1] == n])) for n in cfg.n_list]
    summary = [
        "seed-mean sup residual per N: " + ", ".join(f"{n}:{v!r}" for n, v in zip(cfg.n_list, mean_res)),
        f"log-log slope {slope!r}",
        "no-noise control per N: " + ", ".join(f"{n}:{v!r}" for n, v in zip(cfg.n_list, mean_res_quiet)),
    ]
    return outputs, summary, {"rows": rows, "slope": slope,
                              "mean_res": mean_res, "mean_res_quiet": mean_res_quiet}


EXPERIMENTS = {
    "simulate": run_simulate,
    "train": run_train,
    "solve-limit": run_solve_limit,
    "gamma": run_gamma,
    "diagnose-fpk": run_diagnose_fpk,
    "gradcheck": run_gradcheck,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def run_experiment(kind: str, cfg: ExperimentConfig):
    """Run one experiment and write its CSV outputs plus summary.txt."""
    outputs, summary, payload = EXPERIMENTS[kind](cfg)
    os.makedirs(cfg.out, exist_ok=True)
    for name, text in outputs.items():
        _write_atomic(os.path.join(cfg.out, name), text)
    if kind == "simulate" and cfg.dump_trajectories:
        dump_trajectories(payload["ensemble"], os.path.join(cfg.out, "trajectories.csv"))
    summary_text = "\n".join(
        [f"experiment: {kind}", f"config_hash: {cfg.config_hash()}", f"seed: {cfg.seed}"] + summary
    ) + "\n"
    _write_atomic(os.path.join(cfg.out, "summary.txt"), summary_text)
    return payload, summary_text


def build_parser():
    parser = argparse.ArgumentParser(prog="mfresnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("config", nargs="?", help="JSON experiment configuration (defaults used if omitted)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--n-list", default=None, help="comma-separated sample sizes")
        sp.add_argument("--dump-trajectories", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = ExperimentConfig.from_json(args.config)
        else:
            cfg = ExperimentConfig(model=default_model(), initial_law=default_law())
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        if args.workers is not None:
            cfg.workers = args.workers
        if args.n_list is not None:
            cfg.n_list = tuple(int(v) for v in args.n_list.split(","))
        if args.dump_trajectories:
            cfg.dump_trajectories = True
        _, summary_text = run_experiment(args.command, cfg)
    except MfresnetError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(summary_text, end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
