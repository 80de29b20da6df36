"""``reinsim`` command-line driver.

    reinsim train-vae   --config exp.yaml [--epochs N]
    reinsim train-agent --config exp.yaml [--vae-checkpoint vae.json] [--total-timesteps N]
    reinsim benchmark   --config exp.yaml [--methods dp,mc,...] [--agent-checkpoint policy.json]
    reinsim evaluate {oos,sensitivity,stress,ks} --config exp.yaml [--agent-checkpoint policy.json]

Any config key can be overridden with ``--set section.key=value``.  Outputs go
to ``--output-dir`` (or ``output_dir`` in the config, or ``$REINSIM_OUTPUT_DIR``).
Exit codes: 0 success, 2 configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .benchmarks import dump_json, results_json, write_results_csv
from .config import ConfigError, ExperimentConfig, config_from_dict, load_config, parse_override
from .evaluation import (
    bundled_scenarios,
    ks_two_sample,
    out_of_sample_eval,
    sensitivity_sweep,
    StressScenario,
    stress_test,
    write_histogram_csv,
    write_sensitivity_csv,
)
from .claims import distribution_from_dict
from .ppo import PolicyModel, config_dict as ppo_config_dict, write_metrics
from .pipeline import (
    AgentStage,
    family_specs,
    make_env_config,
    policy_actor,
    run_benchmarks,
    train_agent_stage,
    train_vae_stage,
)
from .vae import VaeModel, write_loss_history

log = logging.getLogger("reinsim")
OUTPUT_ENV = "REINSIM_OUTPUT_DIR"
METADATA_FILE = "run_metadata.json"


class RunFailure(RuntimeError):
    pass


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class RunMetadata:
    """``run_metadata.json``: written when a command starts, finalized when it ends."""

    def __init__(self, out: Path, command: str, exp: ExperimentConfig, argv: Sequence[str], threads: int | None):
        self.path = out / METADATA_FILE
        self.out = out
        self.doc: dict[str, Any] = {
            "command": command,
            "argv": list(argv),
            "artifact_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "threads": threads,
            "config": exp.to_dict(),
            "seeds": exp.to_dict()["seeds"],
            "started_at": _now(),
            "finished_at": None,
            "status": "running",
            "outputs": {},
        }
        self._write()

    def _write(self) -> None:
        self.path.write_text(json.dumps(self.doc, indent=1, sort_keys=True) + "\n")

    def finish(self, outputs: Sequence[Path], status: str = "ok", error: str | None = None) -> None:
        self.doc["finished_at"] = _now()
        self.doc["status"] = status
        if error:
            self.doc["error"] = error
        self.doc["outputs"] = {p.name: _sha256(p) for p in sorted(outputs) if p.exists()}
        self._write()


def _write_csv_claims(path: Path, values: np.ndarray) -> None:
    path.write_text("amount\n" + "".join(f"{float(v)!r}\n" for v in values))


def read_claims_csv(path: str | Path) -> np.ndarray:
    """First column of a CSV (a non-numeric header line is skipped)."""
    p = Path(path)
    if not p.is_file():
        raise RunFailure(f"claims file not found: {p}")
    vals = []
    for i, line in enumerate(p.read_text().splitlines()):
        cell = line.split(",")[0].strip()
        if not cell:
            continue
        try:
            vals.append(float(cell))
        except ValueError:
            if i == 0:
                continue
            raise RunFailure(f"{p}:{i + 1}: not a number: {cell!r}") from None
    if not vals:
        raise RunFailure(f"{p}: no claim amounts")
    return np.array(vals)


def _load_vae(path: str | None) -> VaeModel | None:
    if path is None:
        return None
    if not Path(path).is_file():
        raise RunFailure(f"VAE checkpoint not found: {path}")
    return VaeModel.load(path)


def _load_policy(path: str | None, required: bool = True) -> PolicyModel | None:
    if path is None:
        if required:
            raise RunFailure("this command needs --agent-checkpoint")
        return None
    if not Path(path).is_file():
        raise RunFailure(f"agent checkpoint not found: {path}")
    return PolicyModel.load(path)


# Commands.  Each returns the list of files it wrote.


def cmd_train_vae(exp: ExperimentConfig, out: Path, args: argparse.Namespace) -> list[Path]:
    stage = train_vae_stage(exp)
    files = [out / "vae.json", out / "vae_loss.csv", out / "vae_ks.json", out / "vae_histogram.csv", out / "vae_generated.csv"]
    stage.model.save(files[0])
    write_loss_history(files[1], stage.history)
    dump_json(files[2], {"distribution": exp.claims.distribution, **stage.report.ks.to_dict()})
    write_histogram_csv(files[3], stage.report.edges, stage.report.densities)
    _write_csv_claims(files[4], stage.generated)
    first, last = stage.history[0].total, stage.history[-1].total
    log.info("VAE loss %.4f -> %.4f (ratio %.3f); KS %.4f", first, last, last / first, stage.report.ks.statistic)
    return files


def _agent_stage(exp: ExperimentConfig, vae: VaeModel | None) -> AgentStage:
    if vae is None and exp.vae.use_for_agent:
        log.info("no VAE checkpoint given: agent trains on parametric claims")
    return train_agent_stage(exp, vae)


def cmd_train_agent(exp: ExperimentConfig, out: Path, args: argparse.Namespace) -> list[Path]:
    vae = _load_vae(args.vae_checkpoint)
    stage = _agent_stage(exp, vae)
    files = [out / "policy.json", out / "ppo_metrics.csv"]
    stage.policy.save(files[0])
    write_metrics(files[1], stage.metrics)
    for r in stage.metrics:
        log.info(
            "timesteps %d  mean episode reward %.2f  pg loss %.5f  entropy loss %.2f",
            r.timesteps,
            r.mean_episode_reward,
            r.policy_gradient_loss,
            r.entropy_loss,
        )
    return files


def cmd_benchmark(exp: ExperimentConfig, out: Path, args: argparse.Namespace) -> list[Path]:
    methods = exp.benchmark.methods
    agent = None
    vae = _load_vae(args.vae_checkpoint)
    files = [out / "benchmark.csv", out / "benchmark.json"]
    if "rl" in methods:
        policy = _load_policy(args.agent_checkpoint, required=False)
        if policy is None:
            if vae is None and exp.vae.use_for_agent:
                stage = train_vae_stage(exp)
                vae = stage.model
                stage.model.save(out / "vae.json")
                files.append(out / "vae.json")
            agent = _agent_stage(exp, vae)
            agent.policy.save(out / "policy.json")
            files.append(out / "policy.json")
        else:
            agent = AgentStage(policy, [], make_env_config(exp), 0.0)
    results = run_benchmarks(exp, methods, agent, vae)
    write_results_csv(files[0], results)
    dump_json(
        files[1],
        {
            "methods": results_json(results),
            "eval_paths": exp.benchmark.eval_paths,
            "seeds": exp.to_dict()["seeds"],
            "benchmark_config": exp.to_dict()["benchmark"],
        },
    )
    for r in results:
        log.info("%-5s surplus %.2f  ruin %.4f  time %.2fs", r.method, r.final_surplus, r.ruin_probability, r.time_s)
    return files


def cmd_evaluate(exp: ExperimentConfig, out: Path, args: argparse.Namespace) -> list[Path]:
    ev = exp.evaluation
    seed = exp.seeds.sequence("evaluation")
    if args.what == "ks":
        return _evaluate_ks(exp, out, args)
    policy = _load_policy(args.agent_checkpoint)
    env_cfg = make_env_config(exp)
    act = policy_actor(policy)
    if args.what == "oos":
        rep = out_of_sample_eval(act, env_cfg, distribution_from_dict(ev.oos_distribution), ev.n_paths, seed, ev.ruin_threshold)
        path = out / "oos.json"
        dump_json(path, rep.summary())
        finals = out / "oos_final_surplus.csv"
        finals.write_text("path,final_surplus\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(rep.final_surplus)))
        log.info("out-of-sample mean surplus %.2f, ruin %.4f", rep.mean_surplus, rep.ruin_probability)
        return [path, finals]
    if args.what == "sensitivity":
        rows = sensitivity_sweep(act, env_cfg, ev.sensitivity_cells, ev.n_paths, seed, ev.ruin_threshold)
        path = out / "sensitivity.csv"
        write_sensitivity_csv(path, rows)
        for r in rows:
            log.info("mu %.2f sigma %.2f  mean surplus %.2f  ruin %.4f", r.mu, r.sigma, r.mean_surplus, r.ruin_probability)
        return [path]
    # stress
    st = ev.stress
    rng = exp.seeds.rng("evaluation")
    scenarios = bundled_scenarios(
        exp.episode.n_steps,
        exp.severity().mean(),
        rng,
        st.high_frequency_multiplier,
        st.pandemic_frequency_multiplier,
        st.pandemic_severity_multiplier,
        st.pandemic_fraction,
        st.catastrophe_mean_multiple,
    )
    if args.identity:
        scenarios = [StressScenario("identity")]
    reports = [stress_test(act, env_cfg, exp.severity(), s, ev.n_paths, seed, ev.ruin_threshold) for s in scenarios]
    path = out / "stress.json"
    dump_json(path, {"ruin_threshold": ev.ruin_threshold, "n_paths": ev.n_paths, "reports": [r.to_dict() for r in reports]})
    for r in reports:
        log.info("%-15s mean surplus %.2f  ruin %.4f", r.scenario.name, r.mean_surplus, r.ruin_probability)
    return [path]


def _evaluate_ks(exp: ExperimentConfig, out: Path, args: argparse.Namespace) -> list[Path]:
    if args.a or args.b:
        if not (args.a and args.b):
            raise RunFailure("ks needs both --a and --b claim files")
        res = ks_two_sample(read_claims_csv(args.a), read_claims_csv(args.b))
        path = out / "ks.json"
        dump_json(path, {"a": str(args.a), "b": str(args.b), **res.to_dict()})
        log.info("KS %.4f  p %.4g  D at %.4f", res.statistic, res.p_value, res.d_location)
        return [path]
    files = []
    summary = {}
    for name, spec in family_specs(exp).items():
        stage = train_vae_stage(exp, spec)
        hist = out / f"ks_histogram_{name}.csv"
        write_histogram_csv(hist, stage.report.edges, stage.report.densities)
        files.append(hist)
        summary[name] = {"distribution": spec.to_dict(), **stage.report.ks.to_dict()}
        log.info("%-9s KS %.4f  p %.4g  D at %.4f", name, stage.report.ks.statistic, stage.report.ks.p_value, stage.report.ks.d_location)
    path = out / "ks_families.json"
    dump_json(path, summary)
    return [path, *files]


COMMANDS: dict[str, Callable[[ExperimentConfig, Path, argparse.Namespace], list[Path]]] = {
    "train-vae": cmd_train_vae,
    "train-agent": cmd_train_agent,
    "benchmark": cmd_benchmark,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML (defaults are used when omitted)")
    common.add_argument("--output-dir", help=f"where outputs go (default: config output_dir or ${OUTPUT_ENV})")
    common.add_argument("--seed", type=int, help="master seed (seeds.master)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    common.add_argument("--threads", type=int, help="worker cap (recorded; computations are single-threaded)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="reinsim", description="Reinsurance surplus simulation and optimization.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train-vae", parents=[common], help="fit the generative claim model")
    s.add_argument("--epochs", type=int, help="vae.epochs")

    s = sub.add_parser("train-agent", parents=[common], help="train the PPO agent")
    s.add_argument("--vae-checkpoint", help="train on VAE-generated claims from this checkpoint")
    s.add_argument("--total-timesteps", type=int, help="ppo.total_timesteps")

    s = sub.add_parser("benchmark", parents=[common], help="run the method comparison")
    s.add_argument("--methods", help="comma-separated subset of dp,mc,hdmc,mo,rl (benchmark.methods)")
    s.add_argument("--agent-checkpoint", help="trained policy; trained inline when omitted")
    s.add_argument("--vae-checkpoint", help="VAE used when training the agent inline")
    s.add_argument("--eval-paths", type=int, help="benchmark.eval_paths")

    s = sub.add_parser("evaluate", parents=[common], help="out-of-sample, sensitivity, stress or KS reports")
    s.add_argument("what", choices=("oos", "sensitivity", "stress", "ks"))
    s.add_argument("--agent-checkpoint", help="trained policy (needed for oos, sensitivity, stress)")
    s.add_argument("--a", help="ks: first claims CSV")
    s.add_argument("--b", help="ks: second claims CSV")
    s.add_argument("--identity", action="store_true", help="stress: run only the unstressed identity scenario")
    s.add_argument("--n-paths", type=int, help="evaluation.n_paths")
    return p


FLAG_KEYS = {
    "epochs": "vae.epochs",
    "total_timesteps": "ppo.total_timesteps",
    "methods": "benchmark.methods",
    "eval_paths": "benchmark.eval_paths",
    "n_paths": "evaluation.n_paths",
    "seed": "seeds.master",
}


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    ov: dict[str, Any] = {}
    for item in args.set:
        k, v = parse_override(item)
        ov[k] = v
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            ov[key] = v
    return ov


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    ov = _overrides(args)
    if args.config:
        return load_config(args.config, ov)
    from .config import apply_overrides

    return config_from_dict(apply_overrides({}, ov), source="<defaults>")


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        exp = resolve_config(args)
    except ConfigError as exc:
        print(f"reinsim: config error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.output_dir or os.environ.get(OUTPUT_ENV) or exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = RunMetadata(out, args.command, exp, argv, args.threads)
    try:
        files = COMMANDS[args.command](exp, out, args)
    except RunFailure as exc:
        meta.finish([], status="failed", error=str(exc))
        print(f"reinsim: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, OSError) as exc:
        meta.finish([], status="failed", error=f"{type(exc).__name__}: {exc}")
        print(f"reinsim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    meta.finish(files)
    for f in files:
        log.info("wrote %s", f)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
