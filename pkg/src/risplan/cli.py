"""Command-line entry point: synth / optimize / snrmap.

Exit codes: 0 success, 2 partial (some thresholds failed), 3 input error,
4 internal or solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, channel, optimizer, radio, scene

ENV_PREFIX = "RISPLAN_"

EXIT_OK = 0
EXIT_PARTIAL = 2
EXIT_INPUT = 3
EXIT_INTERNAL = 4

# scalar scene-document keys that may be overridden via RISPLAN_<KEY> env vars
_ENV_KEYS = {
    "rows": int,
    "seats_per_row": int,
    "carrier_hz": float,
    "bandwidth_hz": float,
    "tx_power_dbm": float,
    "noise_figure_db": float,
    "bs_antennas_per_side": int,
}


class InputError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str = __version__
    outputs: list[str] = field(default_factory=list)
    stage_seconds: dict[str, float] = field(default_factory=dict)

    def write(self, path):
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2)
            f.write("\n")


class _StageTimer:
    def __init__(self, manifest: RunManifest, name: str):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.manifest.stage_seconds[self.name] = time.perf_counter() - self.t0
        return False


def _apply_env_overrides(doc: dict) -> dict:
    out = dict(doc)
    for key, cast in _ENV_KEYS.items():
        raw = os.environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            try:
                out[key] = cast(float(raw)) if cast is int else cast(raw)
            except ValueError:
                raise InputError(f"bad value for {ENV_PREFIX}{key.upper()}: {raw!r}")
    return out


def _load_scene_doc(path: str | None) -> tuple[scene.CabinScene, scene.RadioConfig, dict]:
    if path is None:
        sc = scene.build_default_cabin(16)
        doc = scene.scene_to_dict(sc, scene.RadioConfig())
    else:
        if not os.path.exists(path):
            raise InputError(f"config file not found: {path}")
        with open(path) as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as err:
                raise InputError(f"{path}: not valid JSON ({err})")
    doc = _apply_env_overrides(doc)
    try:
        sc, rc = scene.scene_from_dict(doc)
    except (KeyError, TypeError, ValueError) as err:
        raise InputError(f"{path or '<default>'}: bad scene document ({err})")
    return sc, rc, doc


def _load_channels(path: str) -> channel.ChannelSet:
    if not os.path.exists(path):
        raise InputError(f"channel file not found: {path}")
    try:
        return channel.import_cir(path)
    except channel.CirFormatError as err:
        raise InputError(f"{path}: {err}")


def _parse_thresholds(text: str) -> list[float]:
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InputError(f"bad threshold list: {text!r}")
    if not values:
        raise InputError("no thresholds given")
    if values != sorted(values):
        raise InputError("thresholds must be sorted ascending")
    if any(v < 0 for v in values):
        raise InputError("thresholds must be nonnegative")
    return values


def cmd_synth(args) -> int:
    sc, rc, doc = _load_scene_doc(args.config)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    manifest = RunManifest(command="synth", config={"scene": doc, "seed": args.seed},
                           seed=args.seed)
    manifest_path = args.out + ".manifest.json"
    manifest.write(manifest_path)

    model = channel.SynthModel(seed=args.seed,
                               blockage_loss_per_row_db=args.blockage_db,
                               zero_floor_db=args.zero_floor_db)
    with _StageTimer(manifest, "synthesize"):
        channels = channel.synth_channel_set(sc, rc, model)
    with _StageTimer(manifest, "export"):
        channel.export_cir(channels, args.out)
    manifest.outputs = [args.out]
    manifest.write(manifest_path)
    K, L, M, N = channels.dims
    print(f"wrote {args.out} (K={K} L={L} M={M} N={N})")
    return EXIT_OK


def cmd_optimize(args) -> int:
    channels = _load_channels(args.channels)
    K, L, M, N = channels.dims
    if args.ris_elements is not None and args.ris_elements != M:
        raise InputError(
            f"--ris-elements {args.ris_elements} does not match channel file (M={M})")
    _, rc, _ = _load_scene_doc(args.config)
    thresholds = _parse_thresholds(args.thresholds)

    os.makedirs(args.out, exist_ok=True)
    config = optimizer.FppScaConfig(seed=args.seed, epsilon=args.epsilon,
                                    max_iters=args.max_iters,
                                    node_limit=args.node_limit)
    manifest = RunManifest(
        command="optimize",
        config={"channels": args.channels, "thresholds_bps": thresholds,
                "epsilon": args.epsilon, "max_iters": args.max_iters,
                "node_limit": args.node_limit, "seed": args.seed,
                "radio": {"carrier_hz": rc.carrier_hz, "bandwidth_hz": rc.bandwidth_hz,
                          "tx_power_dbm": rc.tx_power_dbm,
                          "noise_figure_db": rc.noise_figure_db,
                          "bs_antennas_per_side": rc.bs_antennas_per_side}},
        seed=args.seed,
    )
    manifest_path = os.path.join(args.out, "manifest.json")
    manifest.write(manifest_path)

    sweep_lines = ["threshold_bps,num_ris,selected_indices,min_rate_bps,iters"]
    failures = 0
    for thr in thresholds:
        with _StageTimer(manifest, f"optimize_{thr:g}"):
            try:
                sol, state = optimizer.fpp_sca(channels, thr, rc, config)
            except optimizer.DeploymentError as err:
                failures += 1
                print(f"threshold {thr:g} bit/s: FAILED ({err})", file=sys.stderr)
                sweep_lines.append(f"{thr!r},-1,,nan,{err.state.r if err.state else 0}")
                if err.state is not None:
                    trace = os.path.join(args.out, f"convergence_{thr:g}.csv")
                    with open(trace, "w") as f:
                        f.write(optimizer.convergence_trace_csv(err.state))
                    manifest.outputs.append(trace)
                continue
        sel = " ".join(str(i) for i in sol.selected_indices)
        min_rate = float(np.min(sol.certified_rates))
        sweep_lines.append(f"{thr!r},{sol.num_selected},{sel},{min_rate!r},{state.r}")
        trace = os.path.join(args.out, f"convergence_{thr:g}.csv")
        with open(trace, "w") as f:
            f.write(optimizer.convergence_trace_csv(state))
        sol_path = os.path.join(args.out, f"solution_{thr:g}.json")
        with open(sol_path, "w") as f:
            json.dump(sol.to_dict(np.full(K, thr)), f)
            f.write("\n")
        manifest.outputs += [trace, sol_path]
        print(f"threshold {thr:g} bit/s: {sol.num_selected} RIS, "
              f"min rate {min_rate:.4g} bit/s, {state.r} iterations")

    sweep_path = os.path.join(args.out, "sweep.csv")
    with open(sweep_path, "w") as f:
        f.write("\n".join(sweep_lines) + "\n")
    manifest.outputs.append(sweep_path)
    manifest.write(manifest_path)
    if failures == len(thresholds):
        return EXIT_INTERNAL
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_snrmap(args) -> int:
    channels = _load_channels(args.channels)
    K, L, M, N = channels.dims
    _, rc, _ = _load_scene_doc(args.config)

    solution = None
    thresholds = np.zeros(K)
    if args.solution:
        if not os.path.exists(args.solution):
            raise InputError(f"solution file not found: {args.solution}")
        with open(args.solution) as f:
            doc = json.load(f)
        solution = radio.DeploymentSolution.from_dict(doc)
        if solution.phases.dims != (L, K, M):
            raise InputError(
                f"solution dims {solution.phases.dims} do not match channels {(L, K, M)}")
        if "thresholds_bps" in doc:
            thresholds = np.asarray(doc["thresholds_bps"], dtype=float)

    if args.baseline == "no-ris":
        sol = radio.DeploymentSolution(
            alpha=np.zeros(L, dtype=bool),
            phases=radio.PhaseConfig.ones((L, K, M)),
            tau=np.full(K, 1.0 / K),
        )
    elif args.baseline == "random-phase":
        if solution is None:
            raise InputError("--baseline random-phase needs --solution for the deployment")
        sol = radio.DeploymentSolution(
            alpha=solution.alpha,
            phases=radio.random_phases(args.seed, (L, K, M)),
            tau=solution.tau,
        )
    else:
        if solution is None:
            raise InputError("either --solution or --baseline is required")
        sol = solution

    manifest = RunManifest(
        command="snrmap",
        config={"channels": args.channels, "solution": args.solution,
                "baseline": args.baseline, "seed": args.seed},
        seed=args.seed,
    )
    reports = radio.evaluate_solution(channels, sol, rc, thresholds)
    with open(args.out, "w") as f:
        f.write(radio.reports_to_csv(reports))
    manifest.outputs = [args.out]
    manifest.write(args.out + ".manifest.json")
    print(f"wrote {args.out} ({K} UEs, {sol.num_selected} RIS active)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="risplan",
        description="Plan minimum-RIS deployments for mmWave cabin coverage.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic channel set and export it")
    sp.add_argument("--config", help="scene/radio JSON (default: built-in cabin)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--blockage-db", type=float, default=15.0,
                    help="per-row blockage loss on the direct link (dB)")
    sp.add_argument("--zero-floor-db", type=float, default=180.0,
                    help="total attenuation above which a link is exactly zero")
    sp.add_argument("--out", required=True, help="output CIR path")
    sp.set_defaults(func=cmd_synth)

    op = sub.add_parser("optimize", help="run the deployment optimizer over thresholds")
    op.add_argument("--channels", required=True, help="CIR file")
    op.add_argument("--config", help="scene/radio JSON for radio parameters")
    op.add_argument("--thresholds", required=True,
                    help="comma-separated per-UE rate thresholds in bit/s, ascending")
    op.add_argument("--ris-elements", type=int,
                    help="expected elements per RIS; checked against the channel file")
    op.add_argument("--epsilon", type=float, default=1e-3)
    op.add_argument("--max-iters", type=int, default=25)
    op.add_argument("--node-limit", type=int, default=100_000)
    op.add_argument("--seed", type=int, default=0)
    op.add_argument("--out", required=True, help="output directory")
    op.set_defaults(func=cmd_optimize)

    sm = sub.add_parser("snrmap", help="per-UE SNR report for a deployment or baseline")
    sm.add_argument("--channels", required=True)
    sm.add_argument("--config", help="scene/radio JSON for radio parameters")
    sm.add_argument("--solution", help="solution JSON from 'optimize'")
    sm.add_argument("--baseline", choices=["no-ris", "random-phase"])
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--out", required=True, help="output CSV path")
    sm.set_defaults(func=cmd_snrmap)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (channel.ScenarioError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except optimizer.DeploymentError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
