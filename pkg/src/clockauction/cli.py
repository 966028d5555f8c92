"""``clockauct`` command line: run, eval, sweep, verify, lowerbound.

Exit codes: 0 success, 2 input error, 3 invariant or assertion failure.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import io
from .errors import CapacityError, ContractViolation, InputError
from .evaluation import (
    SWEEP_COLUMNS,
    VALUATION_KEY,
    brute_force_opt,
    compute_rstar,
    evaluate,
    lower_bound_experiment,
    ratio_sweep,
    verify_appendix_claims,
    verify_concentration,
)
from .generators import GENERATORS, generate, random_discrete_instance
from .mechanisms import MECHANISMS, WFCA, Hedging, MechanismConfig, make_mechanism
from .stats import stream

EXIT_INPUT = 2
EXIT_ASSERT = 3

MECH_KEYS = ("delta_step", "epsilon", "price_cap", "order", "sampling_grid", "estimator_trials", "alpha")


class Failure(Exception):
    """An assertion-style failure (exit code 3)."""


def _seed(flag):
    if flag is not None:
        return int(flag)
    env = os.environ.get("CLOCKAUCT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise InputError(f"CLOCKAUCT_SEED must be an integer, got {env!r}") from None
    return 0


def _parse_ks(text) -> list[int]:
    if text is None:
        return []
    if isinstance(text, int):
        return [text]
    if isinstance(text, list):
        return [int(x) for x in text]
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise InputError(f"--k expects integers separated by commas, got {text!r}") from None


def _resolve(ctx_args: dict) -> dict:
    """Merge a config file with explicit flags (flags win) and fill defaults."""
    cfg = {}
    if ctx_args.get("config"):
        cfg = io.load_config(ctx_args["config"])
    for key, val in ctx_args.items():
        if key != "config" and val is not None:
            cfg[key] = val
    cfg["seed"] = _seed(cfg.get("seed"))
    if "k" in cfg:
        cfg["k"] = _parse_ks(cfg["k"])
    return cfg


def _mech_config(cfg: dict, trials: int | None = None) -> MechanismConfig:
    kw = {k: cfg[k] for k in MECH_KEYS if k in cfg}
    if "order" in kw:
        kw["order"] = tuple(kw["order"])
    if trials is not None and "estimator_trials" not in kw:
        kw["estimator_trials"] = trials
    return MechanismConfig(seed=cfg["seed"], **kw)


def _instances(cfg: dict):
    """Yield ``(k_label, instance, fixed_valuation)`` for the configured source."""
    inst = cfg.get("instance")
    if inst is not None:
        if isinstance(inst, dict):
            i, v = io.instance_from_dict(inst)
        else:
            i, v = io.load_instance(inst)
        yield i.k, i, v
        return
    gen = cfg.get("generator")
    if gen is None:
        raise InputError("give --instance or --generator")
    ks = cfg.get("k") or [2]
    for k in ks:
        yield k, generate(gen, k, cfg["seed"]), None


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2, default=io._default)
    if out:
        Path(out).write_text(text + "\n")
    click.echo(text)


def _guard(fn):
    """Map library errors to the CLI exit-code contract."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (InputError, CapacityError) as e:
            click.echo(f"input error: {e}", err=True)
            sys.exit(EXIT_INPUT)
        except (ContractViolation, Failure) as e:
            click.echo(f"check failed: {e}", err=True)
            sys.exit(EXIT_ASSERT)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


_source = [
    click.option("--instance", type=str, default=None, help="Instance JSON file."),
    click.option("--generator", type=click.Choice(sorted(GENERATORS)), default=None, help="Named instance family."),
    click.option("--k", "k", type=str, default=None, help="k value, or a comma-separated list."),
    click.option("--seed", type=int, default=None, help="Master seed (falls back to CLOCKAUCT_SEED, then 0)."),
    click.option("--config", type=str, default=None, help="JSON config file; explicit flags win."),
]


def source_options(fn):
    for opt in reversed(_source):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Deferred-acceptance clock auctions: simulate, evaluate, verify."""


@main.command("run")
@source_options
@click.option("--mechanism", type=click.Choice(MECHANISMS), default=None)
@click.option("--out", type=str, default=None, help="Transcript JSONL path.")
@click.option("--strict", is_flag=True, default=None, help="Exit 3 on any invariant violation.")
@_guard
def cmd_run(**kw):
    """Run one auction on one valuation (the instance's fixed one, or trial 0's draw)."""
    from .engine import check_transcript
    from .evaluation import mechanism_problems

    cfg = _resolve(kw)
    name = cfg.get("mechanism")
    if name is None:
        raise InputError("--mechanism is required")
    _, inst, v = next(_instances(cfg))
    if v is None:
        v = inst.sample_matrix(stream(cfg["seed"], VALUATION_KEY, 0), 1024)[0]
    v = np.asarray(v, dtype=float)
    mech = make_mechanism(name, inst, _mech_config(cfg))
    tr = mech.run(v, 0, record=True)
    opt_set, opt = brute_force_opt(inst.feasibility, v)
    problems = check_transcript(tr, v, inst.feasibility) + mechanism_problems(mech, tr, v, opt)
    welfare = tr.welfare(v)
    summary = {
        "mechanism": name,
        "instance": inst.name,
        "seed": cfg["seed"],
        "served": list(tr.served),
        "welfare": welfare,
        "revenue": tr.revenue(),
        "opt": opt,
        "ratio": (opt / welfare) if welfare > 0 else (1.0 if opt == 0 else None),
        "violations": problems,
    }
    if isinstance(mech, (WFCA, Hedging)) and tr.meta.get("coin", "wfca") == "wfca":
        rs = compute_rstar(inst.feasibility, v, mech.config.epsilon)
        summary["rstar"] = rs
        summary["welfare_at_least_half_rstar"] = bool(welfare >= rs / 2)
    if cfg.get("out"):
        record = {"config": {**cfg, "mechanism_config": mech.config.to_dict()}, "seed": cfg["seed"], "valuation": v.tolist()}
        record.update(tr.to_dict())
        io.write_jsonl(cfg["out"], [record])
    click.echo(json.dumps(summary, sort_keys=True, default=io._default))
    if problems and cfg.get("strict"):
        raise Failure("; ".join(problems))


def _eval_rows(cfg: dict, mode_default: str):
    name = cfg.get("mechanism")
    if name is None:
        raise InputError("--mechanism is required")
    trials = int(cfg.get("trials", 1000))
    mode = cfg.get("mode", mode_default)
    rows, reports = [], []
    tx = open(cfg["transcripts"], "w") if cfg.get("transcripts") else None
    try:
        for k, inst, _ in _instances(cfg):
            mc = _mech_config(cfg, trials)
            hook = None
            if tx is not None:
                def hook(t, tr, _k=k):
                    tx.write(io.dumps({"k": _k, "seed": cfg["seed"], "trial": t, **tr.to_dict()}) + "\n")
            rep = evaluate(name, inst, trials, cfg["seed"], mc, strict=bool(cfg.get("strict")), mode=mode, on_transcript=hook)
            reports.append(rep)
            rows.append(
                {
                    "mechanism": name,
                    "k": k,
                    "trials": trials,
                    "seed": cfg["seed"],
                    "mean_welfare": rep.welfare.value,
                    "welfare_ci": rep.welfare.half_width,
                    "mean_opt": rep.opt.value,
                    "opt_ci": rep.opt.half_width,
                    "ratio": rep.ratio,
                    "violations": rep.violations,
                }
            )
    finally:
        if tx is not None:
            tx.close()
    return rows, reports


def _write_table(cfg: dict, rows: list[dict]) -> None:
    if cfg.get("out"):
        io.write_csv(cfg["out"], rows, SWEEP_COLUMNS, cfg)
    w = click.get_text_stream("stdout")
    w.write(",".join(SWEEP_COLUMNS) + "\n")
    for r in rows:
        w.write(",".join(str(io._cell(r[c])) for c in SWEEP_COLUMNS) + "\n")


_eval_opts = [
    click.option("--mechanism", type=click.Choice(MECHANISMS), default=None),
    click.option("--trials", type=int, default=None),
    click.option("--out", type=str, default=None, help="CSV report path."),
    click.option("--strict", is_flag=True, default=None),
    click.option("--mode", type=click.Choice(["transcript", "batch"]), default=None),
    click.option("--transcripts", type=str, default=None, help="JSONL path for per-trial transcripts (transcript mode)."),
]


def eval_options(fn):
    for opt in reversed(_eval_opts):
        fn = opt(fn)
    return source_options(fn)


@main.command("eval")
@eval_options
@_guard
def cmd_eval(**kw):
    """Monte-Carlo evaluation against the welfare oracle; one CSV row per k."""
    cfg = _resolve(kw)
    if cfg.get("generator") == "lowerbound" and cfg.get("mechanism") is None:
        _emit({"config": cfg, "lowerbound": lower_bound_experiment()}, cfg.get("out"))
        return
    rows, reports = _eval_rows(cfg, "transcript")
    _write_table(cfg, rows)
    if any(r.violations for r in reports) and cfg.get("strict"):
        raise Failure("invariant violations")


@main.command("sweep")
@eval_options
@_guard
def cmd_sweep(**kw):
    """Ratio sweep over k (batch mode by default), with the sanity ceiling checked."""
    from .evaluation import sanity_ceiling

    cfg = _resolve(kw)
    cfg.setdefault("k", [2, 4, 8, 16, 32, 64])
    if "instance" not in cfg:
        cfg.setdefault("generator", "disjoint-iid-uniform")
    rows, _ = _eval_rows(cfg, "batch")
    _write_table(cfg, rows)
    bad = [r for r in rows if not (r["ratio"] <= sanity_ceiling(int(r["k"]))) or r["violations"]]
    if bad:
        raise Failure(f"ratio above the sanity ceiling or violations at k = {[r['k'] for r in bad]}")


@main.command("verify")
@click.argument("check", type=click.Choice(["lemma3.2", "lemma5.2", "cor5.3", "claims-appendix"]))
@source_options
@click.option("--set-size", type=int, default=None)
@click.option("--trials", type=int, default=None)
@click.option("--count", type=int, default=None, help="Random discrete instances for claims-appendix.")
@click.option("--out", type=str, default=None)
@_guard
def cmd_verify(check, **kw):
    """Concentration and appendix-claim checks; exit 3 when one fails."""
    cfg = _resolve(kw)
    if check == "claims-appendix":
        reports = []
        if cfg.get("instance") or cfg.get("generator"):
            for _, inst, _ in _instances(cfg):
                reports.append(verify_appendix_claims(inst, int(cfg.get("trials", 100_000)), cfg["seed"]))
        else:
            rng = stream(cfg["seed"], 13)
            for _ in range(int(cfg.get("count", 50))):
                inst = random_discrete_instance(rng, n_max=6, ell=3)
                reports.append(verify_appendix_claims(inst, 1, cfg["seed"], exact=True))
        passed = all(r.passed for r in reports)
        _emit({"config": cfg, "check": check, "passed": passed, "reports": [r.to_dict() for r in reports]}, cfg.get("out"))
    else:
        ks = cfg.get("k") or [16 if check == "lemma3.2" else 8]
        rep = verify_concentration(check, ks[0], int(cfg.get("set_size", 200)), int(cfg.get("trials", 10_000)), cfg["seed"])
        passed = rep.passed
        _emit({"config": cfg, "check": check, "passed": passed, "report": rep.to_dict()}, cfg.get("out"))
    if not passed:
        raise Failure(f"{check} did not pass")


@main.command("lowerbound")
@click.option("--out", type=str, default=None)
@_guard
def cmd_lowerbound(out):
    """Exact rational welfare figures for the two-set lower-bound instance."""
    rep = lower_bound_experiment()
    _emit({"config": {"command": "lowerbound"}, "lowerbound": rep}, out)
    if rep["ratio"] != "29/27":
        raise Failure("lower-bound ratio differs from 29/27")


if __name__ == "__main__":
    main()
