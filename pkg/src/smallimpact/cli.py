"""Command-line front end.

    smallimpact solve-coefficients --config run.yaml --out out/
    smallimpact simulate --config run.yaml --seeds 0..9
    smallimpact study --config run.yaml --threads 4
    smallimpact cost --config run.yaml --strategy strat.json
    smallimpact reproduce-fig1 --out fig1/

Exit codes: 0 ok, 2 numeric fault, 3 configuration fault.  Every file
written carries the sha256 of the resolved configuration and the seed(s).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import _kernels as K
from .coeffs import (SolverFault, cache_key, limit_to_csv, prelimit_envelope_violation, prelimit_to_csv,
                     save_limit, save_prelimit, solve_B0_deterministic, solve_B0_pde,
                     solve_prelimit_deterministic, solve_prelimit_pde)
from .costs import CostBreakdown, cost_estimate_bound, cost_eta, cost_semimartingale
from .graphs import convergence_study
from .limit import ReconstructionError, build_limit_state, decompose_limit_strategy
from .model import ModelError, ModelParams, make_factor, validate
from .pathsim import SampledPath, TimeGrid, chi_hull, simulate_paths
from .statesim import IntegrationFault, check_state, integrate_states
from .strategies import RateStrategy, SemimartingaleStrategy, inventory, l2_distance, mollify

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3


class ConfigError(ValueError):
    pass


FIG1 = {
    "model": {"gamma": 3.0, "T": 1.0, "x0": 1.0, "rho_bounds": [0.1, 1.9], "lambda_bounds": [0.0, 1.0]},
    "factor": {"family": "fig1-sine", "params": {}},
    "numerics": {},
    "run": {"etas": [1e-1, 1e-2, 1e-3, 1e-4], "seeds": [0], "N": ["inf"]},
}

NUMERICS_DEFAULTS = {"n_steps": 4096, "tail": 0.05, "chi_nodes": 241, "chi_width": 6.0,
                     "delta0": 1e-2, "bound_tol": 1e-6, "eps": 0.05, "r": None, "mode": "auto"}


def parse_seeds(spec) -> list[int]:
    """``"a..b"`` (inclusive), ``"3"``, ``"1,4,9"`` or a list of ints."""
    if isinstance(spec, int):
        return [spec]
    if isinstance(spec, (list, tuple)):
        out = [int(s) for s in spec]
    else:
        s = str(spec).strip()
        if ".." in s:
            a, b = s.split("..", 1)
            a, b = int(a), int(b)
            if b < a:
                raise ConfigError(f"empty seed range {s!r}")
            out = list(range(a, b + 1))
        else:
            out = [int(x) for x in s.split(",") if x.strip()]
    if len(set(out)) != len(out):
        raise ConfigError("seeds must be distinct")
    if not out:
        raise ConfigError("no seeds given")
    return out


def _as_N(v, params: ModelParams, eta: float) -> float:
    if isinstance(v, str):
        key = v.strip().lower()
        if key in ("inf", "infinity", "strict"):
            return math.inf
        if key in ("min", "n_min"):
            return params.replace(eta=eta).N_min
        try:
            return float(key)
        except ValueError:
            raise ConfigError(f"bad penalization value {v!r}") from None
    return float(v)


@dataclass
class ExperimentConfig:
    params: ModelParams
    factor_family: str
    factor_params: dict
    numerics: dict
    etas: list
    seeds: list
    N_values: list
    out: str = "out"
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        unknown = set(d) - {"model", "factor", "numerics", "run"}
        if unknown:
            raise ConfigError(f"unknown sections {sorted(unknown)}")
        m = dict(d.get("model") or {})
        try:
            params = ModelParams(gamma=float(m.pop("gamma")), T=float(m.pop("T")), x0=float(m.pop("x0")),
                                 rho_bounds=tuple(float(v) for v in m.pop("rho_bounds", (1.0, 1.0))),
                                 lambda_bounds=tuple(float(v) for v in m.pop("lambda_bounds", (0.0, 0.0))))
        except KeyError as e:
            raise ConfigError(f"model section misses {e.args[0]!r}") from None
        except (TypeError, ValueError) as e:
            raise ConfigError(f"model section: {e}") from None
        if m:
            raise ConfigError(f"unknown model keys {sorted(m)}")
        f = dict(d.get("factor") or {})
        family = f.get("family", "constant")
        fparams = dict(f.get("params") or {})
        num = dict(NUMERICS_DEFAULTS)
        extra = set(d.get("numerics") or {}) - set(num)
        if extra:
            raise ConfigError(f"unknown numerics keys {sorted(extra)}")
        num.update(d.get("numerics") or {})
        if num["mode"] not in ("auto", "pde"):
            raise ConfigError("numerics.mode must be 'auto' or 'pde'")
        run = dict(d.get("run") or {})
        etas = [float(e) for e in run.get("etas", [1e-2])]
        if not etas or any(not e > 0 for e in etas):
            raise ConfigError("run.etas must be positive")
        seeds = parse_seeds(run.get("seeds", [0]))
        N_values = list(run.get("N", ["inf"]))
        cfg = cls(params, family, fparams, num, etas, seeds, N_values, str(run.get("out", "out")), d)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        try:
            return cls.from_dict(yaml.safe_load(text))
        except yaml.YAMLError as e:
            raise ConfigError(f"malformed YAML: {e}") from None

    def factor(self):
        try:
            return make_factor(self.factor_family, **self.factor_params)
        except TypeError as e:
            raise ConfigError(f"factor parameters: {e}") from None

    def check(self) -> None:
        try:
            factor = self.factor()
        except ModelError as e:
            raise ConfigError(str(e)) from None
        rep = validate(self.params, factor)
        if not rep:
            raise ConfigError(str(rep))
        for eta in self.etas:
            for v in self.N_values:
                N = _as_N(v, self.params, eta)
                rep = validate(self.params.replace(eta=eta, N=N))
                if not rep:
                    raise ConfigError(str(rep))

    def resolved(self) -> dict:
        """Fully resolved configuration (defaults filled in) used for hashing."""
        p = self.params
        return {
            "model": {"gamma": p.gamma, "T": p.T, "x0": p.x0, "rho_bounds": list(p.rho_bounds),
                      "lambda_bounds": list(p.lambda_bounds)},
            "factor": {"family": self.factor_family, "params": dict(sorted(self.factor_params.items()))},
            "numerics": dict(sorted(self.numerics.items())),
            "run": {"etas": self.etas, "seeds": self.seeds, "N": [str(v) for v in self.N_values]},
        }

    @property
    def hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def grid(self) -> TimeGrid:
        return TimeGrid.refined(self.params.T, int(self.numerics["n_steps"]), float(self.numerics["tail"]))

    def chi_grid(self, factor):
        return chi_hull(factor, self.params.T, float(self.numerics["chi_width"]), int(self.numerics["chi_nodes"]))

    def use_pde(self, factor) -> bool:
        return (not factor.deterministic) or self.numerics["mode"] == "pde"


# ---------------------------------------------------------------------------
# output helpers


def _stamp(path: Path, chash: str, seed) -> None:
    """Prefix a CSV with a comment line carrying the config hash and seed."""
    body = path.read_text()
    path.write_text(f"# config_sha256={chash} seed={seed}\n{body}")


def _write_json(path: Path, payload: dict, chash: str, seed) -> None:
    path.write_text(json.dumps({"config_sha256": chash, "seed": seed, **payload}, indent=2, default=float))


def _eta_tag(eta: float) -> str:
    return f"{eta:.0e}".replace("+", "")


def _N_tag(N: float) -> str:
    return "inf" if math.isinf(N) else f"{N:.6g}"


def _solve_limit(cfg: ExperimentConfig, factor, grid, bundles):
    base = cfg.params.replace(eta=0.0, N=math.inf)
    if cfg.use_pde(factor):
        return solve_B0_pde(factor, base, cfg.chi_grid(factor), grid)
    return solve_B0_deterministic(bundles[0].rho, bundles[0].lam, base)


def _solve_prelimit(cfg: ExperimentConfig, factor, grid, bundles, eta, N):
    p = cfg.params.replace(eta=eta, N=N)
    num = cfg.numerics
    if cfg.use_pde(factor):
        return solve_prelimit_pde(factor, p, cfg.chi_grid(factor), grid, float(num["delta0"]),
                                  float(num["bound_tol"]))
    return solve_prelimit_deterministic(bundles[0].rho, bundles[0].lam, p, float(num["delta0"]),
                                        float(num["bound_tol"]))


def _pairs(cfg: ExperimentConfig):
    for eta in cfg.etas:
        for v in cfg.N_values:
            yield eta, _as_N(v, cfg.params, eta)


# ---------------------------------------------------------------------------
# commands


def cmd_solve_coefficients(cfg: ExperimentConfig, out: Path, threads: int = 1) -> list[Path]:
    factor = cfg.factor()
    grid = cfg.grid()
    bundles = simulate_paths(factor, cfg.params, grid, [cfg.seeds[0]])
    chash = cfg.hash
    written = []
    lim = _solve_limit(cfg, factor, grid, bundles)
    path = out / "limit_B0.csv"
    limit_to_csv(path, lim)
    _stamp(path, chash, "none")
    save_limit(out / "limit_B0.npz", lim)
    written += [path, out / "limit_B0.npz"]
    chi = cfg.chi_grid(factor) if cfg.use_pde(factor) else None

    def one(pair):
        eta, N = pair
        return eta, N, _solve_prelimit(cfg, factor, grid, bundles, eta, N)

    pairs = list(_pairs(cfg))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, pairs))
    else:
        results = [one(p) for p in pairs]
    summary = []
    for eta, N, pre in results:
        p = cfg.params.replace(eta=eta, N=N)
        key = cache_key(p, factor, grid.t, chi, {"delta0": cfg.numerics["delta0"]})
        stem = f"prelimit_eta{_eta_tag(eta)}_N{_N_tag(N)}"
        path = out / f"{stem}.csv"
        prelimit_to_csv(path, pre)
        _stamp(path, chash, "none")
        save_prelimit(out / f"{stem}_{key}.npz", pre)
        written += [path, out / f"{stem}_{key}.npz"]
        viol = prelimit_envelope_violation(pre, p)
        worst = max(viol.values())
        summary.append({"eta": eta, "N": N, "worst_violation": worst, **viol})
        print(f"eta={eta:.1e} N={_N_tag(N):>8}  worst envelope violation {worst:.2e}")
    path = out / "bounds_summary.json"
    _write_json(path, {"bounds": summary, "backend": K.BACKEND}, chash, "none")
    written.append(path)
    return written


def cmd_simulate(cfg: ExperimentConfig, out: Path, threads: int = 1) -> list[Path]:
    factor = cfg.factor()
    grid = cfg.grid()
    bundles = simulate_paths(factor, cfg.params, grid, cfg.seeds)
    chash = cfg.hash
    written = []
    lim = _solve_limit(cfg, factor, grid, bundles)
    base = cfg.params.replace(eta=0.0, N=math.inf)
    report = {}
    for b in bundles:
        path = out / f"paths_seed{b.seed}.csv"
        b.to_csv(path)
        _stamp(path, chash, b.seed)
        st = build_limit_state(lim, b, base)
        strat = decompose_limit_strategy(st)
        path = out / f"limit_seed{b.seed}.csv"
        st.to_csv(path, strat.V_hat)
        _stamp(path, chash, b.seed)
        jpath = out / f"limit_seed{b.seed}_jumps.json"
        _write_json(jpath, {"x0": st.x0, "j_plus": [], "j_minus": [list(j) for j in strat.j_minus]},
                    chash, b.seed)
        written += [out / f"paths_seed{b.seed}.csv", path, jpath]
        report[str(b.seed)] = {"limit": {"initial_block": st.initial_block,
                                         "terminal_block": st.terminal_block}}

    def one(pair):
        eta, N = pair
        pre = _solve_prelimit(cfg, factor, grid, bundles, eta, N)
        return eta, N, integrate_states(pre, bundles, cfg.params.replace(eta=eta, N=N), check=False)

    pairs = list(_pairs(cfg))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, pairs))
    else:
        results = [one(p) for p in pairs]
    fault = None
    for eta, N, states in results:
        for st in states:
            path = out / f"state_seed{st.seed}_eta{_eta_tag(eta)}_N{_N_tag(N)}.csv"
            st.to_csv(path)
            _stamp(path, chash, st.seed)
            written.append(path)
            entry = {"X_T": float(st.Xhat.values[-1]), "ok": True}
            try:
                check_state(st.t, st.Xhat.values, st.Yhat.values, st.Zhat.values, cfg.params.x0,
                            cfg.params.gamma, seed=st.seed)
            except IntegrationFault as e:
                entry.update(ok=False, error=str(e))
                fault = fault or e
            report[str(st.seed)][f"eta={eta:g},N={_N_tag(N)}"] = entry
    path = out / "invariants.json"
    _write_json(path, {"paths": report}, chash, cfg.seeds)
    written.append(path)
    if fault is not None:
        raise fault
    return written


def cmd_study(cfg: ExperimentConfig, out: Path, threads: int = 1) -> list[Path]:
    factor = cfg.factor()
    etas = sorted(cfg.etas, reverse=True)
    num = cfg.numerics
    chi = cfg.chi_grid(factor) if cfg.use_pde(factor) else None
    rep = convergence_study(cfg.params, factor, etas, cfg.seeds, eps=float(num["eps"]), grid=cfg.grid(),
                            chi_grid=chi, r=num["r"], delta0=float(num["delta0"]), threads=threads)
    rep.meta["config_sha256"] = cfg.hash
    jpath, cpath = out / "study.json", out / "study.csv"
    rep.to_json(jpath)
    rep.to_csv(cpath)
    _stamp(cpath, cfg.hash, cfg.seeds)
    for i, eta in enumerate(rep.eta_values):
        print(f"eta={eta:.1e}  sup|B-B0|={rep.sup_distances['b'][i]:.3e}  "
              f"hausdorff mean={rep.hausdorff['mean'][i]:.4f}  within={list(rep.fraction_within.values())[0][i]:.3f}")
    return [jpath, cpath]


def _strategy_from_json(d: dict, grid: TimeGrid):
    kind = d.get("kind", "semimartingale")
    if kind in ("optimal", "mollified-optimal"):
        return kind, d
    if kind == "rate":
        t = np.asarray(d["t"], float)
        xi = SampledPath(t, np.asarray(d["xi"], float))
        return kind, RateStrategy(float(d["x0"]), xi)
    if kind == "semimartingale":
        V = None
        if d.get("V"):
            V = SampledPath(np.asarray(d["V"]["t"], float), np.asarray(d["V"]["values"], float))
        return kind, SemimartingaleStrategy(float(d["x0"]), d.get("j_plus", []), d.get("j_minus", []), V,
                                            bool(d.get("liquidating", True)))
    raise ConfigError(f"unknown strategy kind {kind!r}")


def cmd_cost(cfg: ExperimentConfig, out: Path, strategy_file, threads: int = 1) -> list[Path]:
    factor = cfg.factor()
    grid = cfg.grid()
    try:
        spec = json.loads(Path(strategy_file).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read strategy file: {e}") from None
    try:
        kind, strat = _strategy_from_json(spec, grid)
    except (KeyError, ValueError) as e:
        raise ConfigError(f"strategy file: {e}") from None
    bundles = simulate_paths(factor, cfg.params, grid, cfg.seeds)
    base = cfg.params.replace(eta=0.0, N=math.inf)
    result: dict = {"kind": kind}
    if kind == "rate":
        for eta, N in _pairs(cfg):
            c = cost_eta(strat, bundles, cfg.params.replace(eta=eta, N=N))
            result[f"J_eta={eta:g},N={_N_tag(N)}"] = c.to_dict()
        if abs(strat.inventory().values[-1]) <= 1e-10 * max(1.0, cfg.params.x0):
            result["J0_continuous_part"] = cost_semimartingale(strat.continuous_part(), bundles, base).to_dict()
    elif kind == "semimartingale":
        result["J0"] = cost_semimartingale(strat, bundles, base).to_dict()
    else:
        lim = _solve_limit(cfg, factor, grid, bundles)
        states = [build_limit_state(lim, b, base) for b in bundles]
        strategies = [decompose_limit_strategy(s) for s in states]
        thetas = [SemimartingaleStrategy(s.x0, [], s.j_minus, s.V_hat) for s in strategies]
        J_opt = cost_semimartingale(thetas, bundles, base)
        result["J0_optimal"] = J_opt.to_dict()
        if kind == "mollified-optimal":
            beta, nu, eps = float(spec["beta"]), float(spec["nu"]), float(spec["eps"])
            rates = [mollify(th, beta, nu, eps, b.W.grid) for th, b in zip(thetas, bundles)]
            conts = [r.continuous_part() for r in rates]
            J_mol = cost_semimartingale(conts, bundles, base)
            dist, norm = [], []
            for th, r, b in zip(thetas, rates, bundles):
                g = r.xi.grid
                Xt = inventory(th, g)
                Xr = r.inventory()
                keep = np.concatenate([Xt.t[1:] != Xt.t[:-1], [True]])
                post = SampledPath(g.t, Xt.values[keep])
                dist.append(l2_distance(post, Xr, g))
                norm.append(l2_distance(post, SampledPath(g.t, np.zeros(g.t.size)), g))
            d, xn = float(np.mean(dist)), float(np.mean(norm))
            bound = cost_estimate_bound(d, xn, base)
            result.update({"J0_mollified": J_mol.to_dict(), "beta": beta, "nu": nu, "eps": eps,
                           "l2_distance": d, "bound": bound,
                           "within_bound": abs(J_mol.total - J_opt.total) <= bound})
    path = out / "cost.json"
    _write_json(path, result, cfg.hash, cfg.seeds)
    for k, v in result.items():
        if isinstance(v, dict):
            print(f"{k}: total={v['total']:.6f} stderr={v['stderr']:.2e}")
    return [path]


def cmd_reproduce_fig1(cfg: ExperimentConfig, out: Path, threads: int = 1) -> list[Path]:
    """One path of the sine factor: the strict pre-limit state for each eta and the limit state."""
    factor = cfg.factor()
    grid = cfg.grid()
    seed = cfg.seeds[0]
    bundles = simulate_paths(factor, cfg.params, grid, [seed])
    lim = _solve_limit(cfg, factor, grid, bundles)
    base = cfg.params.replace(eta=0.0, N=math.inf)
    st0 = build_limit_state(lim, bundles[0], base)
    strat = decompose_limit_strategy(st0)
    etas = sorted(cfg.etas, reverse=True)

    def one(eta):
        pre = _solve_prelimit(cfg, factor, grid, bundles, eta, math.inf)
        return integrate_states(pre, bundles, cfg.params.replace(eta=eta, N=math.inf))[0]

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            states = list(pool.map(one, etas))
    else:
        states = [one(e) for e in etas]
    path = out / "fig1.csv"
    X0 = np.append(st0.Xhat0.values[:-2], 0.0)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *(f"X_eta={e:g}" for e in etas), "X0"])
        for i, t in enumerate(grid.t):
            w.writerow([repr(float(t)), *(repr(float(s.Xhat.values[i])) for s in states), repr(float(X0[i]))])
    _stamp(path, cfg.hash, seed)
    jpath = out / "fig1_limit_jumps.json"
    _write_json(jpath, {"x0": st0.x0, "initial_block": st0.initial_block,
                        "terminal_block": st0.terminal_block, "j_minus": [list(j) for j in strat.j_minus]},
                cfg.hash, seed)
    return [path, jpath]


COMMANDS = {
    "solve-coefficients": cmd_solve_coefficients,
    "simulate": cmd_simulate,
    "study": cmd_study,
    "cost": cmd_cost,
    "reproduce-fig1": cmd_reproduce_fig1,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smallimpact", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=(name != "reproduce-fig1"))
        p.add_argument("--out", type=Path, default=None)
        p.add_argument("--seeds", default=None, help="a..b inclusive, or a comma list")
        p.add_argument("--threads", type=int, default=1)
        if name == "cost":
            p.add_argument("--strategy", type=Path, required=True)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            raw = ExperimentConfig.load(args.config).raw
        else:
            raw = json.loads(json.dumps(FIG1))
        if args.seeds is not None:
            raw = {**raw, "run": {**(raw.get("run") or {}), "seeds": parse_seeds(args.seeds)}}
        cfg = ExperimentConfig.from_dict(raw)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
    except (ConfigError, ModelError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cmd = COMMANDS[args.command]
    try:
        if args.command == "cost":
            cmd(cfg, out, args.strategy, args.threads)
        else:
            cmd(cfg, out, args.threads)
    except (ConfigError, ModelError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFault, IntegrationFault, ReconstructionError, FloatingPointError) as e:
        print(f"numeric fault: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
