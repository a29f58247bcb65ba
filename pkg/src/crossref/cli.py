"""Command-line front end.

Exit codes: 0 success, 1 protocol or detection outcome failure, 2 usage or
config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import capacity, config as cfgmod
from .chain import DomainChain, block_hash, tamper_block, validate_chain
from .crypto import hash as digest
from .hysteresis import HysteresisChain, cross_domain_audit
from .netsim import ConfigError, SimWorld, build_world, dump_transcript
from .protocol import ProtocolError, ProtocolOutcome, run_flowchart1, run_flowchart2
from .tamper_mc import MonteCarloError, McResult, run_monte_carlo

OUTPUT_VERSION = 1

EXIT_OK = 0
EXIT_OUTCOME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _apply_overrides(cfg: dict, args) -> dict:
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        cfg["monte_carlo"]["workers"] = args.workers
    if getattr(args, "trials", None) is not None:
        cfg["monte_carlo"]["trials"] = args.trials
    return cfg


# -- simulate -------------------------------------------------------------


def audit_outcome(world: SimWorld, outcome: ProtocolOutcome) -> list[dict]:
    """Audit every completing domain's referenced block against the other completers."""
    chains = world.hysteresis_chains()
    keys = world.public_keys()
    reports = []
    for d in sorted(outcome.collected_records):
        ref = outcome.collected_records[d][d]
        local = block_hash(world.chains[d].blocks[ref.height])
        foreign = {k: chains[k] for k in outcome.collected_records if k != d}
        reports.append(cross_domain_audit(d, ref.height, local, foreign, keys).to_dict())
    return reports


def snapshot_doc(world: SimWorld) -> dict:
    doc = world.to_dict()
    doc["format"] = "crossref-snapshot"
    return doc


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(cfgmod.load(args.config), args)
    sim = cfgmod.sim_config(cfg)
    if args.flowchart == 1 and sim.failure_schedule.entries:
        raise UsageError("flowchart 1 requires an empty failure_schedule")
    try:
        world = build_world(sim)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if args.flowchart == 1:
        outcome = run_flowchart1(world, sim.initiator)
    else:
        outcome = run_flowchart2(world, sim.initiator, t=sim.t)
    t1, t2, t3 = outcome.metrics.phase_rounds
    summary = {
        "output_version": OUTPUT_VERSION,
        "flowchart": args.flowchart,
        "status": outcome.status,
        "reason": outcome.reason,
        "m": sim.m,
        "t": outcome.t,
        "l": sim.l,
        "seed": sim.seed,
        "T1": t1,
        "T2": t2,
        "T3": t3,
        "messages_total": outcome.metrics.messages_total,
        "bytes_total": outcome.metrics.bytes_total,
        "phase_messages": outcome.metrics.to_dict()["phase_messages"],
        "messages_discarded": outcome.metrics.messages_discarded,
        "completed_domains": sorted(outcome.metrics.completed_domains),
        "failed_domains": outcome.failed_domains,
        "aborted_domains": outcome.aborted_domains,
        "audits": audit_outcome(world, outcome),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "transcript.jsonl").write_text(dump_transcript(world), encoding="utf-8")
    _write_json(out / "summary.json", summary)
    _write_json(out / "snapshot.json", snapshot_doc(world))
    print(json.dumps({k: summary[k] for k in ("status", "T1", "T2", "T3", "messages_total", "completed_domains")}))
    if not outcome.success:
        print(outcome.reason, file=sys.stderr)
        return EXIT_OUTCOME
    return EXIT_OK


# -- snapshot helpers -----------------------------------------------------


def load_snapshot(path: str | None) -> dict:
    if not path:
        raise UsageError("--snapshot is required")
    p = Path(path)
    if p.is_dir():
        p = p / "snapshot.json"
    if not p.exists():
        raise UsageError(f"snapshot not found: {path}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"snapshot is not valid JSON: {exc}") from None
    if doc.get("format") != "crossref-snapshot":
        raise UsageError("not a simulation snapshot")
    return doc


def _snapshot_parts(doc: dict):
    chains = {int(d): DomainChain.from_dict(c) for d, c in doc["chains"].items()}
    hyst = {int(d): HysteresisChain.from_dict(c["hysteresis_chain"]) for d, c in doc["ccns"].items()}
    keys = {int(d): bytes.fromhex(c["public_key"]) for d, c in doc["ccns"].items()}
    return chains, hyst, keys


# -- tamper-demo ----------------------------------------------------------


def cmd_tamper_demo(args) -> int:
    doc = load_snapshot(args.snapshot)
    chains, hyst, keys = _snapshot_parts(doc)
    if args.domain not in chains:
        raise UsageError(f"unknown domain {args.domain}")
    chain = chains[args.domain]
    height = args.height
    if height is None:
        latest = hyst[args.domain].latest
        if latest is None or latest.digest_for(args.domain) is None:
            raise UsageError("domain has no cross-referenced block; pass --height")
        height = latest.digest_for(args.domain).height
    if not 0 <= height <= chain.tip_height:
        raise UsageError(f"height {height} out of range 0..{chain.tip_height}")

    forged_payload = digest(b"forged" + chain.blocks[height].payload_summary)
    tampered = tamper_block(chain, height, forged_payload, remine=not args.no_remine, rng_seed=doc["config"]["seed"])
    validation = validate_chain(tampered)
    report = {
        "domain": args.domain,
        "height": height,
        "remine": not args.no_remine,
        "local_validation": {
            "valid": validation.valid,
            "first_invalid_height": validation.first_invalid_height,
            "cause": validation.cause,
        },
    }
    if not validation.valid:
        print(f"local validation failed at height {validation.first_invalid_height} ({validation.cause})", file=sys.stderr)

    foreign = {d: c for d, c in hyst.items() if d != args.domain}
    audits = []
    for h in range(height, tampered.tip_height + 1):
        audit = cross_domain_audit(args.domain, h, block_hash(tampered.blocks[h]), foreign, keys)
        if h == height or audit.agreeing_domains or audit.conflicting_domains:
            audits.append(audit.to_dict())
    conflicting = sorted({d for a in audits for d in a["conflicting_domains"]})
    detected = bool(conflicting) or not validation.valid
    if conflicting:
        verdict = "conflict"
    elif all(a["verdict"] == "no_evidence" for a in audits):
        verdict = "no_evidence"
    else:
        verdict = "consistent"
    report.update(
        {
            "audits": audits,
            "conflicting_domains": conflicting,
            "verdict": verdict,
            "detected": detected,
        }
    )
    print(json.dumps(report, sort_keys=True, indent=2))
    return EXIT_OK if detected else EXIT_OUTCOME


def cmd_dump_chain(args) -> int:
    doc = load_snapshot(args.snapshot)
    key = str(args.domain)
    if key not in doc["chains"]:
        raise UsageError(f"unknown domain {args.domain}")
    if args.hysteresis:
        body = doc["ccns"][key]["hysteresis_chain"]
    else:
        body = doc["chains"][key]
    print(json.dumps(body, sort_keys=True, indent=2))
    return EXIT_OK


# -- capacity -------------------------------------------------------------


def parse_sweep(text: str) -> tuple[float, float, float]:
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"malformed --tau-sweep {text!r}; expected lo:hi:step") from None
    if not (lo > 0 and hi >= lo and step > 0):
        raise UsageError(f"malformed --tau-sweep {text!r}; need 0 < lo <= hi and step > 0")
    return lo, hi, step


def cmd_capacity(args) -> int:
    cfg = cfgmod.load(args.config)
    base = cfgmod.capacity_params(cfg)
    c_txs = args.c_txs if args.c_txs is not None else base.c_txs
    tau_fork = args.tau_fork if args.tau_fork is not None else base.tau_fork
    lo, hi, step = parse_sweep(args.tau_sweep)
    rows = []
    for tau in capacity.tau_sweep(lo, hi, step):
        p = capacity.CapacityParams(float(tau), tau_fork, c_txs)
        rows.append(
            {
                "kind": "sweep",
                "tau": float(tau),
                "fork_probability": capacity.fork_probability(p),
                "fork_probability_approx": capacity.fork_probability_approx(p),
                "unfork_probability": capacity.unfork_probability(p),
                "capacity_tps": capacity.capacity_tps(p),
            }
        )
    if tau_fork > 0:
        p = capacity.CapacityParams(tau_fork, tau_fork, c_txs)
        tau_opt = capacity.optimal_tau(p)
        rows.append(
            {
                "kind": "optimum",
                "tau": tau_opt,
                "fork_probability": capacity.fork_probability(p),
                "fork_probability_approx": capacity.fork_probability_approx(p),
                "unfork_probability": capacity.unfork_probability(p),
                "capacity_tps": capacity.max_capacity_tps(p),
            }
        )
    if args.scale:
        base_tps, size_ratio, interval_ratio, m = args.scale
        factors = capacity.ScalingFactors(base_tps, size_ratio, interval_ratio, int(m))
        rows.append({"kind": "scaled", "capacity_tps": capacity.scaled_capacity(factors)})
        # extension: same scaling but keeping the fork penalty per domain
        scaled = capacity.CapacityParams(base.tau / interval_ratio, tau_fork, c_txs * size_ratio)
        rows.append(
            {
                "kind": "fork_adjusted",
                "tau": scaled.tau,
                "fork_probability": capacity.fork_probability(scaled),
                "fork_probability_approx": capacity.fork_probability_approx(scaled),
                "unfork_probability": capacity.unfork_probability(scaled),
                "capacity_tps": capacity.fork_adjusted_capacity(scaled, int(m)),
            }
        )
    if args.format == "json":
        print(json.dumps({"output_version": OUTPUT_VERSION, "c_txs": c_txs, "tau_fork": tau_fork, "rows": rows}, indent=2))
        return EXIT_OK
    cols = ["kind", "tau", "fork_probability", "fork_probability_approx", "unfork_probability", "capacity_tps"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([row.get(c, "") if c == "kind" else (_fmt(row[c]) if c in row else "") for c in cols])
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


# -- Monte Carlo ----------------------------------------------------------


def _tag(x: float) -> str:
    return f"{x:g}"


def _write_result_files(out: Path, stem: str, result: McResult, write_r: bool, raw: bool) -> None:
    if write_r:
        (out / f"R_{stem}.csv").write_text(result.summary_R().histogram.to_csv(), encoding="utf-8")
    x = _tag(result.config.top_x_percent)
    (out / f"Rp_{stem}_x{x}.csv").write_text(result.summary_R_prime().histogram.to_csv(), encoding="utf-8")
    if raw:
        lines = ["trial,A,A_prime,B,B_prime,R,R_prime,failed"]
        for i, s in enumerate(result.samples()):
            failed = " ".join(str(d) for d in result.failed[i])
            lines.append(f"{i},{s.A!r},{s.A_prime!r},{s.B!r},{s.B_prime!r},{s.R!r},{s.R_prime!r},{failed}")
        (out / f"samples_{stem}_x{x}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _rp_note(results: list[dict]) -> dict:
    medians = [r["R_prime"]["median"] for r in results]
    return {
        "all_R_prime_le_1": all(r["fraction_R_prime_le_1"] == 1.0 for r in results),
        "max_R_prime_median": max(medians) if medians else None,
        "note": "with equal selection counts the per-domain top-X% sum cannot exceed the global top-X% sum, "
        "so R' <= 1; a peak slightly above one is not produced by this selection rule",
    }


def cmd_tamper_mc(args) -> int:
    cfg = _apply_overrides(cfgmod.load(args.config), args)
    mc = cfg["monte_carlo"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for alpha in mc["alpha_values"]:
        for m in mc["m_values"]:
            stem = f"m{m}_a{_tag(alpha)}"
            for i, x in enumerate(mc["x_values"]):
                result = run_monte_carlo(cfgmod.mc_config(cfg, m, alpha, x), workers=mc["workers"])
                _write_result_files(out, stem, result, write_r=(i == 0), raw=mc["raw_samples"])
                entries.append(result.summary())
    _write_json(
        out / "summary.json",
        {"output_version": OUTPUT_VERSION, "runs": entries, "R_prime_check": _rp_note(entries)},
    )
    print(f"wrote {len(entries)} configurations to {out}")
    return EXIT_OK


def cmd_failure_mc(args) -> int:
    cfg = _apply_overrides(cfgmod.load(args.config), args)
    mc = cfg["monte_carlo"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    alpha = mc["failure_alpha"]
    entries = []
    for m in mc["failure_m_values"]:
        for f in [0] + [f for f in mc["f_values"] if f != 0]:
            stem = f"m{m}_a{_tag(alpha)}_f{f}"
            for i, x in enumerate(mc["x_values"]):
                result = run_monte_carlo(cfgmod.mc_config(cfg, m, alpha, x, f), workers=mc["workers"])
                if f in mc["f_values"]:
                    _write_result_files(out, stem, result, write_r=(i == 0), raw=mc["raw_samples"])
                entries.append(result.summary())
    _write_json(
        out / "summary.json",
        {"output_version": OUTPUT_VERSION, "failure_mode": mc["failure_mode"], "runs": entries},
    )
    print(f"wrote {len(entries)} configurations to {out}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossref", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one cross-referencing round")
    p.add_argument("--config")
    p.add_argument("--flowchart", type=int, choices=(1, 2), default=1)
    p.add_argument("--out", default="sim-out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tamper-demo", help="tamper a block in a snapshot and audit it")
    p.add_argument("--snapshot", help="snapshot.json written by simulate (or its directory)")
    p.add_argument("--domain", type=int, default=0)
    p.add_argument("--height", type=int)
    p.add_argument("--no-remine", action="store_true")
    p.set_defaults(func=cmd_tamper_demo)

    p = sub.add_parser("dump-chain", help="print a domain chain from a snapshot")
    p.add_argument("--snapshot")
    p.add_argument("--domain", type=int, default=0)
    p.add_argument("--hysteresis", action="store_true", help="dump the hysteresis chain instead")
    p.set_defaults(func=cmd_dump_chain)

    p = sub.add_parser("capacity", help="G(tau) table over a tau sweep")
    p.add_argument("--config")
    p.add_argument("--tau-sweep", default="6:1200:6")
    p.add_argument("--c-txs", type=float)
    p.add_argument("--tau-fork", type=float)
    p.add_argument("--scale", type=float, nargs=4, metavar=("BASE_TPS", "SIZE_RATIO", "INTERVAL_RATIO", "DOMAINS"))
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_capacity)

    for name, func, helptext in (
        ("tamper-mc", cmd_tamper_mc, "R and R' distributions over the (m, alpha, X) grid"),
        ("failure-mc", cmd_failure_mc, "R and R' distributions under stop failures"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config")
        p.add_argument("--out", default=f"{name}-out")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--trials", type=int)
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, cfgmod.ConfigFileError, ConfigError, MonteCarloError, capacity.CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OUTCOME


if __name__ == "__main__":
    sys.exit(main())
