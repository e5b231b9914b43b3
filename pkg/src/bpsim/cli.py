"""Command-line driver: compile, simulate, estimate, sweep the design space,
and tabulate the analog noise model.

Exit status: 0 success, 1 user error, 2 infeasible, 3 internal invariant failure.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .analog import CapacitorBank, finetune_weights, ideal_acc_voltage, nonideal_acc_voltage, thermal_sigma
from .compiler import compile_model, load_model, optimize
from .config import ConfigError, RunConfig, load_config
from .energy import macc_energy_8b
from .errors import (
    AccumulatorOverflow,
    CapacityError,
    ContractViolation,
    DecodeError,
    InfeasibleError,
    ModelError,
    PipelineError,
    ScheduleError,
)
from .isa import decode, encode, validate
from .reference import evaluate, initial_dram
from .sim import simulate

EXIT_OK, EXIT_USER, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 1, 2, 3

DSE_HEADER = ("point,sweep,partition_bits,n_lanes,m_cycles,cores_per_vault,status,cycles,energy_j,"
              "energy_delay,macc_8b_fj,adc_rate_required_hz")


class UserError(Exception):
    pass


def corpus_paths() -> list[Path]:
    root = resources.files("bpsim").joinpath("data/corpus")
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".model"))


def _config(args) -> RunConfig:
    return load_config(args.config, args.set or [])


def _write(path, text: str | bytes) -> None:
    if path in (None, "-"):
        sys.stdout.write(text if isinstance(text, str) else text.hex() + "\n")
        return
    p = Path(path)
    if isinstance(text, bytes):
        p.write_bytes(text)
    else:
        p.write_text(text)


def cmd_compile(args) -> int:
    cfg = _config(args)
    dfg = load_model(args.model)
    schedule, program = compile_model(dfg, cfg.chip, cfg.energy)
    diags = validate(program, cfg.chip)
    if diags:
        raise ContractViolation("compiler emitted an invalid program: " + "; ".join(map(str, diags[:5])))
    _write(args.output, encode(program))
    _write(args.summary, schedule.summary())
    return EXIT_OK


def _digest(outputs: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(outputs):
        h.update(name.encode())
        h.update(np.ascontiguousarray(outputs[name]).tobytes())
    return h.hexdigest()[:16]


def cmd_simulate(args) -> int:
    cfg = _config(args)
    sim = cfg.simulation
    if args.seed is not None:
        sim = replace(sim, seed=args.seed)
    if args.mode is not None:
        sim = replace(sim, mode=args.mode)
    if args.trace:
        sim = replace(sim, trace=True)
    try:
        program = decode(Path(args.program).read_bytes())
    except OSError as e:
        raise UserError(f"cannot read program {args.program}: {e}") from None
    diags = validate(program, cfg.chip)
    if diags:
        raise UserError("program does not validate against this chip: " + "; ".join(map(str, diags[:5])))
    result = simulate(program, cfg.chip, sim, cfg.analog, cfg.energy)
    ref, _ = evaluate(program, initial_dram(program, sim.data_seed), cfg.chip.scheme)
    match = all(np.array_equal(ref[k], result.outputs[k]) for k in ref)
    stats = result.stats.to_csv()
    stats += f"mode,{sim.mode}\nseed,{sim.seed}\noutput_digest,{_digest(result.outputs)}\n"
    stats += f"reference_match,{'pass' if match else 'fail'}\n"
    _write(args.stats, stats)
    _write(args.energy, result.energy.to_csv())
    if args.outputs:
        np.savez(args.outputs, **result.outputs)
    if args.trace:
        _write(args.trace, "cycle,unit,event\n" + "".join(line + "\n" for line in result.trace))
    if sim.mode == "ideal" and not match:
        return EXIT_INTERNAL
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _config(args)
    schedule = optimize(load_model(args.model), cfg.chip, cfg.energy)
    text = schedule.summary()
    text += f"total,,,,,,,,,{schedule.cycles},{schedule.energy:.9e}\n"
    _write(args.output, text)
    return EXIT_OK


def dse_points(cfg: RunConfig, which: str) -> list[tuple[str, dict]]:
    """Grid points in deterministic order. Each sweep varies one axis around the defaults."""
    sw = cfg.sweep
    points = []
    if which in ("partition", "all"):
        points += [("partition", {"partition_bits": b}) for b in sw.partition_bits]
    if which in ("lanes", "all"):
        points += [("lanes", {"n_lanes": n, "m_cycles": m}) for n, m in sw.lanes_cycles]
    if which in ("cores", "all"):
        points += [("cores", {"cores_per_vault": c}) for c in sw.cores_per_vault]
    if which == "default":
        points = [("default", {})]
    return points


def evaluate_point(cfg: RunConfig, changes: dict, models: list[str], adc_stall: bool = False) -> dict:
    """Compile and time every model at one design point; timing-only simulation.

    A point whose windows are shorter than one conversion of the configured
    converter is infeasible unless ``adc_stall`` lets the lanes wait for it.
    """
    row = {"status": "ok", "cycles": 0, "energy": 0.0}
    try:
        chip = replace(cfg.chip, **changes)
        row["macc_8b_fj"] = macc_energy_8b(cfg.energy, chip.scheme, chip.n_lanes, chip.m_cycles)
        row["adc_rate"] = chip.adc_rate_required
        if not chip.adc_keeps_up and not adc_stall:
            row["status"] = "infeasible:adc_rate"
            return row
        for path in models:
            _, program = compile_model(load_model(path), chip, cfg.energy)
            res = simulate(program, chip, cfg.simulation, cfg.analog, cfg.energy, functional=False)
            row["cycles"] += res.stats.total_cycles
            row["energy"] += res.energy.total
    except InfeasibleError as e:
        row["status"] = f"infeasible:{e.buffer}"
    except ContractViolation as e:
        row["status"] = "invalid:" + str(e).replace(",", ";")
    return row


def _point_job(job):
    return evaluate_point(*job)


def run_dse(cfg: RunConfig, which: str = "all", models: list[str] | None = None, workers: int = 1,
            adc_stall: bool = False) -> str:
    models = [str(p) for p in (models or corpus_paths())]
    points = dse_points(cfg, which)
    jobs = [(cfg, changes, models, adc_stall) for _, changes in points]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_point_job, jobs))
    else:
        rows = [_point_job(j) for j in jobs]
    lines = [DSE_HEADER]
    best = None
    for i, ((sweep, changes), row) in enumerate(zip(points, rows)):
        chip = cfg.chip
        vals = {k: changes.get(k, getattr(chip, k)) for k in ("partition_bits", "n_lanes", "m_cycles",
                                                             "cores_per_vault")}
        ok = row["status"] == "ok"
        edp = row["cycles"] * row["energy"] if ok else math.nan
        metric = {"energy_delay": edp, "energy": row["energy"], "cycles": row["cycles"]}.get(cfg.sweep.metric, edp)
        macc = row.get("macc_8b_fj", math.nan)
        rate = row.get("adc_rate", math.nan)
        line = (f"{i},{sweep},{vals['partition_bits']},{vals['n_lanes']},{vals['m_cycles']},"
                f"{vals['cores_per_vault']},{row['status']},{row['cycles'] if ok else ''},"
                f"{row['energy']:.9e},{edp:.9e},{macc:.6g},{rate:.6g}")
        if not ok:
            line = (f"{i},{sweep},{vals['partition_bits']},{vals['n_lanes']},{vals['m_cycles']},"
                    f"{vals['cores_per_vault']},{row['status']},,,,{macc:.6g},{rate:.6g}")
        lines.append(line)
        if ok and (best is None or metric < best[0]):
            best = (metric, i, line)
    if best is not None:
        lines.append("best," + best[2].split(",", 1)[1])
    return "\n".join(lines) + "\n"


def cmd_dse(args) -> int:
    cfg = _config(args)
    if cfg.sweep.metric not in ("energy_delay", "energy", "cycles"):
        raise UserError(f"unknown sweep metric {cfg.sweep.metric!r}")
    _write(args.output, run_dse(cfg, args.sweep, args.models, args.workers, args.adc_stall))
    return EXIT_OK


def noise_table(cfg: RunConfig, alphas, betas, ms, ns, temps, seed: int = 0, trials: int = 64) -> str:
    """Thermal sigma and recurrence-versus-finetuned equivalence over a grid."""
    rng = np.random.default_rng(seed)
    dmax = cfg.chip.scheme.digit_max
    vdd = cfg.analog.vdd_nominal
    lines = ["alpha,beta,m,n,temperature_k,sigma_v,sigma_units,gain_full_scale,finetune_max_rel_err"]
    for a in alphas:
        for b in betas:
            bank = CapacitorBank.from_ratios(a, b, cfg.analog.cw)
            unit = vdd / (9 * a)
            for m in ms:
                full = [dmax] * m
                gain = nonideal_acc_voltage(full, full, bank, vdd) / ideal_acc_voltage(full, full, bank, vdd)
                err = 0.0
                for _ in range(trials):
                    W = rng.integers(0, dmax + 1, m).tolist()
                    X = rng.integers(0, dmax + 1, m).tolist()
                    direct = nonideal_acc_voltage(W, X, bank, vdd)
                    tuned = math.fsum(w * x for w, x in zip(finetune_weights(W, bank, vdd), X))
                    if direct:
                        err = max(err, abs(tuned - direct) / abs(direct))
                for n in ns:
                    for T in temps:
                        s = thermal_sigma(bank, T, m, n, dmax)
                        lines.append(f"{a:g},{b:g},{m},{n},{T:g},{s:.6e},{s / unit:.6e},{gain:.6f},{err:.3e}")
    return "\n".join(lines) + "\n"


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise UserError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    vals = _floats(text)
    if any(v != int(v) or v < 1 for v in vals):
        raise UserError(f"expected positive integers, got {text!r}")
    return [int(v) for v in vals]


def cmd_noise_report(args) -> int:
    cfg = _config(args)
    text = noise_table(cfg, _floats(args.alpha), _floats(args.beta), _ints(args.m), _ints(args.n),
                       _floats(args.temperature), args.seed)
    _write(args.output, text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bpsim", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one configuration value (repeatable, wins over --config)")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", parents=[common], help="compile a model to a program binary")
    c.add_argument("model")
    c.add_argument("-o", "--output", required=True, help="program binary path")
    c.add_argument("--summary", default="-", help="schedule summary CSV path (default stdout)")
    c.set_defaults(func=cmd_compile)

    s = sub.add_parser("simulate", parents=[common], help="run a program binary")
    s.add_argument("program")
    s.add_argument("--seed", type=int)
    s.add_argument("--mode", choices=["ideal", "nonideal"])
    s.add_argument("--stats", default="-", help="statistics CSV path (default stdout)")
    s.add_argument("--energy", default="-", help="energy CSV path (default stdout)")
    s.add_argument("--outputs", help="write layer outputs to this .npz file")
    s.add_argument("--trace", help="write the event trace CSV here")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", parents=[common], help="analytic estimate without simulation")
    e.add_argument("model")
    e.add_argument("-o", "--output", default="-")
    e.set_defaults(func=cmd_estimate)

    d = sub.add_parser("dse", parents=[common], help="sweep the design space over a model set")
    d.add_argument("--sweep", choices=["partition", "lanes", "cores", "all", "default"], default="all")
    d.add_argument("--models", nargs="+", help="model files (default: bundled corpus)")
    d.add_argument("--workers", type=int, default=1)
    d.add_argument("--adc-stall", action="store_true",
                   help="evaluate points whose converter is slower than m+1 cycles, stalling the lanes")
    d.add_argument("-o", "--output", default="-")
    d.set_defaults(func=cmd_dse)

    n = sub.add_parser("noise-report", parents=[common], help="tabulate thermal noise and recurrence checks")
    n.add_argument("--alpha", default="4,8,16")
    n.add_argument("--beta", default="3")
    n.add_argument("--m", default="8,32")
    n.add_argument("--n", default="4,8")
    n.add_argument("--temperature", default="300,329,358")
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("-o", "--output", default="-")
    n.set_defaults(func=cmd_noise_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "workers", 1) < 1:
            raise UserError("--workers must be at least 1")
        return args.func(args)
    except InfeasibleError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UserError, ConfigError, ModelError, DecodeError, FileNotFoundError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except (ContractViolation, ScheduleError, CapacityError, AccumulatorOverflow, PipelineError) as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
