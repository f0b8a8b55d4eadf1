"""Command-line interface.

Subcommands: ``fit``, ``simulate``, ``study``, ``summarize``, ``prevalence``.
Configuration precedence is flags, then a JSON config file (``--config``),
then built-in defaults.  A manifest written by any command can be passed
back as ``--config`` to reproduce the run.

Exit codes: 0 success, 2 validation error, 3 chain failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from .engine import McmcConfig, run_unknown_N
from .exceptions import ChainFailure, SspsizeError, ValidationError
from .io import environment_info, load_csv, read_draws, write_csv, write_draws, write_json
from .priors import EtaPrior, SizePrior, beta_from_elicitation
from .ssproc import ss_prevalence
from .studylab import StudyDesign, generate_network, ppswor_sample, run_replication_study, simulate_rds
from .summary import density_table, split_chain_discrepancy, summarize

EXIT_OK, EXIT_VALIDATION, EXIT_CHAIN, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "fit": {
        "data": None,
        "out": None,
        "seed": 0,
        "family": "cmp",
        "hpd_level": 0.95,
        "density_step": 1,
        "prior": {
            "kind": "flat",
            "alpha": 1.0,
            "beta": None,
            "mode": None,
            "median": None,
            "mean": None,
            "lower_quartile": None,
            "l": 1,
            "N_max": None,
        },
        "eta_prior": {"mu0": 7.0, "df_mean": 1.0, "sigma0": 3.0, "df_sigma": 5.0},
        "mcmc": {"burn_in": 1000, "thin": 10, "n_draws": 2000, "parallel_chains": 1, "n_jobs": 1},
    },
    "simulate": {
        "out": None,
        "seed": 0,
        "arm": "rds",
        "design": {"N": 1000, "n": 500, "prevalence": 0.2, "mean_degree": 7.0, "omega": 1.0, "homophily": 1.0,
                   "seeds": 10, "coupons": 2, "population": "network", "size_sd": 3.0},
    },
    "study": {"out": None, "design": {}},
    "summarize": {"draws": None, "level": 0.95, "out": None},
    "prevalence": {"data": None, "draws": None, "N": None, "seed": 0, "n_sims": 2000, "n_spectra": 20,
                   "family": "cmp", "out": None,
                   "eta_prior": {"mu0": 7.0, "df_mean": 1.0, "sigma0": 3.0, "df_sigma": 5.0}},
}


def _set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {args.config} is not valid JSON: {exc}") from None
        cfg = _merge(cfg, loaded.get("config", loaded))
    for dest, value in vars(args).items():
        if dest.startswith("opt__") and value is not None:
            _set_path(cfg, dest[5:].replace("__", "."), value)
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ValidationError(f"missing required option(s): {', '.join('--' + k for k in missing)}")


def _build_size_prior(n: int, p: dict):
    kind = p["kind"]
    if kind == "flat":
        return SizePrior.flat(n, p["N_max"])
    if kind == "fjj":
        return SizePrior.factorial(n, int(p["l"]), p["N_max"])
    if kind != "beta":
        raise ValidationError(f"unknown prior kind {kind!r}; expected flat, fjj or beta")
    if p["beta"] is not None:
        alpha, beta = float(p["alpha"]), float(p["beta"])
    elif p["mean"] is not None or p["lower_quartile"] is not None:
        alpha, beta = beta_from_elicitation(n, mean=p["mean"], lower_quartile=p["lower_quartile"])
    else:
        alpha, beta = beta_from_elicitation(n, mode=p["mode"], median=p["median"], alpha=float(p["alpha"]))
    return SizePrior.beta_proportion(n, alpha, beta, p["N_max"])


def cmd_fit(cfg: dict) -> dict:
    _require(cfg, "data", "out")
    data = load_csv(cfg["data"])
    prior = _build_size_prior(data.n, cfg["prior"])
    mcmc = McmcConfig(seed=int(cfg["seed"]), **cfg["mcmc"])
    draws = run_unknown_N(data, prior, EtaPrior(**cfg["eta_prior"]), mcmc, cfg["family"])
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    write_draws(os.path.join(out, "draws.csv"), draws)
    s = summarize(draws, cfg["hpd_level"], warn=False)
    summary = {
        **s.to_dict(),
        "n": data.n,
        "acceptance_rate": draws.acceptance_rate,
        "split_chain_discrepancy": split_chain_discrepancy(draws.N, draws.chain),
        "prior": prior.describe(),
    }
    write_json(os.path.join(out, "summary.json"), summary)
    density_table(prior, draws, step=int(cfg["density_step"])).to_csv(os.path.join(out, "density.csv"))
    manifest = {
        "command": "fit",
        "config": cfg,
        "resolved_prior": prior.describe(),
        "seeds": {"seed": mcmc.seed, "chains": list(range(mcmc.parallel_chains))},
        "acceptance": {str(k): v for k, v in draws.acceptance.items()},
        "environment": environment_info(),
        "outputs": ["draws.csv", "summary.json", "density.csv"],
    }
    write_json(os.path.join(out, "manifest.json"), manifest)
    return summary


def cmd_simulate(cfg: dict) -> dict:
    _require(cfg, "out")
    design = StudyDesign(**cfg["design"], arms=(cfg["arm"],), seed=int(cfg["seed"]))
    rng = np.random.default_rng([design.seed, 0])
    if cfg["arm"] == "rds":
        net = generate_network(design, rng)
        sample = simulate_rds(net, design, np.random.default_rng([design.seed, 1]))
        prev = float(net.infected.mean())
    else:
        from .studylab import _population

        _, sizes, infected = _population(design, rng)
        sample = ppswor_sample(sizes, design.n, np.random.default_rng([design.seed, 2]), infected)
        prev = float(infected.mean())
    ids = [f"r{k}" for k in sample.nodes.tolist()]
    recs = ["" if r < 0 else f"r{r}" for r in sample.recruiter.tolist()]
    write_csv(cfg["out"], sample.data, ids, recs)
    info = {"n": sample.n, "truncated": sample.truncated, "true_N": design.N, "true_prevalence": prev,
            "max_wave": sample.max_wave}
    write_json(os.path.splitext(cfg["out"])[0] + ".manifest.json",
               {"command": "simulate", "config": cfg, "truth": info, "environment": environment_info()})
    return info


def cmd_study(cfg: dict) -> dict:
    _require(cfg, "out")
    design = StudyDesign.from_dict(cfg["design"])
    report = run_replication_study(design)
    os.makedirs(cfg["out"], exist_ok=True)
    report.to_json(os.path.join(cfg["out"], "report.json"))
    report.to_csv(os.path.join(cfg["out"], "replicates.csv"))
    write_json(os.path.join(cfg["out"], "manifest.json"),
               {"command": "study", "config": {**cfg, "design": design.to_dict()}, "environment": environment_info()})
    return report.summary()


def cmd_summarize(cfg: dict) -> dict:
    _require(cfg, "draws")
    draws = read_draws(cfg["draws"])
    result = summarize(draws.N, float(cfg["level"])).to_dict()
    if cfg.get("out"):
        write_json(cfg["out"], result)
    return result


def cmd_prevalence(cfg: dict) -> dict:
    _require(cfg, "data")
    data = load_csv(cfg["data"])
    if cfg["N"] is not None:
        N, source = int(cfg["N"]), "plug-in N"
    elif cfg["draws"] is not None:
        N, source = int(round(read_draws(cfg["draws"]).N.mean())), "posterior mean N"
    else:
        raise ValidationError("give --N or --draws")
    rng = np.random.default_rng(int(cfg["seed"]))
    config = McmcConfig(burn_in=500, thin=10, n_draws=int(cfg["n_spectra"]), seed=int(cfg["seed"]))
    est = ss_prevalence(data, N, int(cfg["n_sims"]), rng, n_spectra=int(cfg["n_spectra"]),
                        eta_prior=EtaPrior(**cfg["eta_prior"]), config=config, family=cfg["family"])
    result = {"prevalence": est, "sample_proportion": float(data.trait.mean()) if data.trait is not None else None,
              "N": N, "N_source": source}
    if cfg.get("out"):
        write_json(cfg["out"], {**result, "config": cfg})
    return result


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "study": cmd_study,
    "summarize": cmd_summarize,
    "prevalence": cmd_prevalence,
}


def _opt(p, flag, dotted, **kw):
    p.add_argument(flag, dest="opt__" + dotted.replace(".", "__"), default=None, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sspsize", description="Population size estimation from RDS data.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config or manifest")
        p.add_argument("--show-config", action="store_true", help="print the resolved config and exit")

    p = sub.add_parser("fit", help="fit the unknown-N model to a recruitment CSV")
    common(p)
    _opt(p, "--data", "data", help="CSV with respondent_id,recruiter_id,degree,order[,trait]")
    _opt(p, "--out", "out", help="output directory")
    _opt(p, "--seed", "seed", type=int)
    _opt(p, "--family", "family", choices=["cmp", "ztp", "ztnb"])
    _opt(p, "--hpd-level", "hpd_level", type=float)
    _opt(p, "--density-step", "density_step", type=int)
    _opt(p, "--prior.kind", "prior.kind", choices=["flat", "fjj", "beta"])
    for key in ("alpha", "beta", "mode", "median", "mean", "lower_quartile"):
        _opt(p, f"--prior.{key}", f"prior.{key}", type=float)
    _opt(p, "--prior.l", "prior.l", type=int)
    _opt(p, "--prior.N_max", "prior.N_max", type=int)
    for key in ("mu0", "df_mean", "sigma0", "df_sigma"):
        _opt(p, f"--eta.{key}", f"eta_prior.{key}", type=float)
    for key in ("burn_in", "thin", "n_draws", "parallel_chains", "n_jobs"):
        _opt(p, f"--mcmc.{key}", f"mcmc.{key}", type=int)

    p = sub.add_parser("simulate", help="simulate a network and an RDS (or PPSWOR) sample to CSV")
    common(p)
    _opt(p, "--out", "out", help="output CSV path")
    _opt(p, "--seed", "seed", type=int)
    _opt(p, "--arm", "arm", choices=["rds", "ppswor"])
    for key, typ in (("N", int), ("n", int), ("prevalence", float), ("mean_degree", float), ("omega", float),
                     ("homophily", float), ("seeds", int), ("coupons", int), ("population", str)):
        _opt(p, f"--{key}", f"design.{key}", type=typ)

    p = sub.add_parser("study", help="run a replication study from a JSON design")
    common(p)
    p.add_argument("--design", help="JSON study design")
    _opt(p, "--out", "out", help="output directory")

    p = sub.add_parser("summarize", help="re-summarize stored draws")
    common(p)
    _opt(p, "--draws", "draws")
    _opt(p, "--level", "level", type=float)
    _opt(p, "--out", "out")

    p = sub.add_parser("prevalence", help="successive-sampling prevalence estimate")
    common(p)
    _opt(p, "--data", "data")
    _opt(p, "--draws", "draws", help="draws CSV; its posterior mean N is plugged in")
    _opt(p, "--N", "N", type=int, help="plug-in population size")
    _opt(p, "--seed", "seed", type=int)
    _opt(p, "--n-sims", "n_sims", type=int)
    _opt(p, "--n-spectra", "n_spectra", type=int)
    _opt(p, "--family", "family", choices=["cmp", "ztp", "ztnb"])
    _opt(p, "--out", "out")
    return parser


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args)
        if args.command == "study" and args.design:
            with open(args.design) as fh:
                cfg["design"] = _merge(cfg["design"], json.load(fh))
        if args.show_config:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return EXIT_OK
        result = COMMANDS[args.command](cfg)
        print(json.dumps(result, indent=2, sort_keys=True, default=float))
        return EXIT_OK
    except ChainFailure as exc:
        return _fail(EXIT_CHAIN, exc)
    except (ValidationError, TypeError, json.JSONDecodeError) as exc:
        return _fail(EXIT_VALIDATION, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except SspsizeError as exc:
        return _fail(EXIT_VALIDATION, exc)


if __name__ == "__main__":
    sys.exit(main())
