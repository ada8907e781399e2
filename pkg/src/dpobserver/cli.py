"""Command-line harness: calibrate, verify-contraction, synthesize-gain,
simulate, report.

Config precedence: CLI flags > --config JSON file > built-in defaults.  The
fully resolved config is echoed and embedded in every metadata artifact so a
run can be reproduced from its outputs alone.  Outputs are written atomically
(temp file + rename); reruns with the same seed are byte-identical.

Exit codes: 0 success/valid, 1 certificate invalid, 2 synthesis infeasible,
64 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .contraction import JacobianField, verify_contraction, verify_contraction_lmi
from .linalg import ONE, TWO, SpdMat, weighted
from .models import (
    BlockmodelParams,
    SirParams,
    adjacent_pair,
    blockmodel_calibrate,
    blockmodel_observer_spec,
    generate_synthetic,
    simulate,
    sir_pipeline,
    sir_synthesis_samples,
)
from .privacy import (
    AdjacencyParams,
    PrivacyBudget,
    calibrate_laplace,
    identity_sensitivity,
    sample_noise,
)
from .synthesis import (
    InfeasibleProblem,
    SynthesisProblem,
    SynthesisResult,
    synthesize,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_INFEASIBLE = 2
EXIT_USAGE = 64

OUT_ENV = "DPOBSERVER_OUT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_atomic(path: Path, data: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, obj):
    _write_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list, columns: list):
    rows = [",".join(header)]
    n = len(columns[0])
    for i in range(n):
        rows.append(",".join(_fmt(col[i]) for col in columns))
    _write_atomic(path, "\n".join(rows) + "\n")


def _out_dir(args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "."))


def _resolve(args, defaults: dict, config_path) -> dict:
    """CLI flag > config file > default, collected into one echoed dict."""
    file_cfg = {}
    if config_path:
        file_cfg = json.loads(Path(config_path).read_text())
    resolved = {}
    for key, default in defaults.items():
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            resolved[key] = cli_val
        elif key in file_cfg:
            resolved[key] = file_cfg[key]
        else:
            resolved[key] = default
    return resolved


def _echo_config(cfg: dict):
    print("resolved config:", json.dumps(cfg, sort_keys=True))


def _load_synthesis(path) -> SynthesisResult:
    d = json.loads(Path(path).read_text())
    if "synthesis" in d:
        d = d["synthesis"]
    return SynthesisResult.from_dict(d)


def _run_synthesis(cfg: dict) -> tuple:
    params = SirParams(mu=cfg["mu"], r0=cfg["R0"], tau=cfg["tau"])
    prob = SynthesisProblem(
        sir_synthesis_samples(params, cfg["grid_step"]),
        np.array([[0.0, 1.0]]),
        beta=cfg["beta"],
        c=cfg["c"],
        c_prime=cfg["c_prime"],
    )
    return params, prob, synthesize(prob)


# ---------------------------------------------------------------------------
# subcommands


def cmd_calibrate(args) -> int:
    defaults = {
        "model": None, "identity": False, "f": 0.95, "l": 0.3,
        "a": float(np.log(19.0)), "K": 1e-3, "alpha": 0.25, "p": 1,
        "eps": 1.0, "delta": 0.0, "grid_step": 0.01,
        "mu": 0.1, "R0": 3.0, "tau": 0.1, "beta": 1 - 1e-5, "c": 1.0,
        "c_prime": 0.0, "M": 5e-4, "synthesis": None,
    }
    cfg = _resolve(args, defaults, args.config)
    _echo_config(cfg)
    out = _out_dir(args)

    if cfg["identity"]:
        norm = ONE if cfg["p"] == 1 else TWO
        adj = AdjacencyParams(cfg["K"], cfg["alpha"], norm)
        sens = identity_sensitivity(adj, cfg["p"])
        budget = PrivacyBudget(cfg["eps"], cfg["delta"])
        if cfg["p"] == 1:
            cal = calibrate_laplace(sens, budget)
        else:
            from .privacy import calibrate_gaussian

            cal = calibrate_gaussian(sens, budget, SpdMat(np.eye(1)))
        payload = {"config": cfg, "calibration": cal.to_dict()}
        _write_json(out / "calibration.json", payload)
        print(f"identity mechanism: sensitivity={_fmt(sens.value)}")
        print(f"wrote {out / 'calibration.json'}")
        return EXIT_OK

    if cfg["model"] == "blockmodel":
        params = BlockmodelParams(f=cfg["f"], l=cfg["l"], a=cfg["a"])
        adj = AdjacencyParams(cfg["K"], cfg["alpha"])
        cal, cert = blockmodel_calibrate(
            params, adj, PrivacyBudget(cfg["eps"], 0.0), cfg["grid_step"]
        )
        payload = {
            "config": cfg,
            "calibration": cal.to_dict(),
            "certificate": cert.to_dict(),
        }
        _write_json(out / "calibration.json", payload)
        print(
            f"gamma={_fmt(cal.gamma)} rho={_fmt(cal.rho)} "
            f"sensitivity={_fmt(cal.sensitivity)} b={_fmt(cal.b)}"
        )
        print(f"wrote {out / 'calibration.json'}")
        return EXIT_OK

    if cfg["model"] == "sir":
        if cfg["synthesis"]:
            synth = _load_synthesis(cfg["synthesis"])
            params = SirParams(mu=cfg["mu"], r0=cfg["R0"], tau=cfg["tau"])
        else:
            try:
                params, _, synth = _run_synthesis(cfg)
            except InfeasibleProblem as exc:
                print(f"synthesis infeasible: {exc.report.message}", file=sys.stderr)
                return EXIT_INFEASIBLE
        from .contraction import observer_coupling_gain
        from .privacy import calibrate_gaussian, observer_l2_sensitivity

        adj = AdjacencyParams(cfg["M"], cfg["alpha"])
        k_prime = observer_coupling_gain(synth.L, weighted(synth.P), TWO, adj.K)
        beta_norm = math.sqrt(synth.beta)
        rho = k_prime / (beta_norm - adj.alpha)
        sens = observer_l2_sensitivity(k_prime, adj.alpha, beta_norm, rho)
        cal = calibrate_gaussian(sens, PrivacyBudget(cfg["eps"], cfg["delta"]), synth.P)
        cov = cal.covariance()
        payload = {
            "config": cfg,
            "calibration": cal.to_dict(),
            "covariance": cov.tolist(),
            "synthesis": synth.to_dict(),
        }
        _write_json(out / "calibration.json", payload)
        print(
            f"gamma={_fmt(cal.gamma)} rho={_fmt(cal.rho)} "
            f"sensitivity={_fmt(cal.sensitivity)} sigma={_fmt(cal.sigma)}"
        )
        print(f"wrote {out / 'calibration.json'}")
        return EXIT_OK

    print("error: pass --identity or --model {blockmodel,sir}", file=sys.stderr)
    return EXIT_USAGE


def cmd_verify(args) -> int:
    defaults = {
        "model": "blockmodel", "f": 0.95, "l": 0.3, "a": float(np.log(19.0)),
        "rate": None, "grid_step": 0.01, "synthesis": None,
        "mu": 0.1, "R0": 3.0, "tau": 0.1,
    }
    cfg = _resolve(args, defaults, args.config)
    _echo_config(cfg)
    out = _out_dir(args)

    if cfg["model"] == "blockmodel":
        params = BlockmodelParams(f=cfg["f"], l=cfg["l"], a=cfg["a"])
        rate = cfg["rate"] if cfg["rate"] is not None else params.beta
        cert = verify_contraction(
            params.observer_jacobian(), params.domain(), TWO, rate, cfg["grid_step"]
        )
    elif cfg["model"] == "sir":
        if not cfg["synthesis"]:
            print("error: --model sir verification needs --synthesis", file=sys.stderr)
            return EXIT_USAGE
        synth = _load_synthesis(cfg["synthesis"])
        params = SirParams(mu=cfg["mu"], r0=cfg["R0"], tau=cfg["tau"])
        rate = cfg["rate"] if cfg["rate"] is not None else synth.beta
        from .models import sir_jacobian

        base = sir_jacobian(params)
        L = synth.L
        jac = JacobianField(
            lambda x, k: base(x, k) - L @ np.array([[0.0, 1.0]]), dim=2
        )
        cert = verify_contraction_lmi(
            jac, params.domain(), synth.P, rate, cfg["grid_step"],
            rate_convention="multiplier",
        )
    else:
        print(f"error: unknown model {cfg['model']!r}", file=sys.stderr)
        return EXIT_USAGE

    payload = {"config": cfg, "certificate": cert.to_dict()}
    _write_json(out / "certificate.json", payload)
    status = "valid" if cert.valid else "INVALID"
    print(
        f"{status}: rate={_fmt(cert.rate)} margin={_fmt(cert.margin)} "
        f"samples={cert.sample_count}"
    )
    if not cert.valid and cert.witness is not None:
        print(f"witness: {[_fmt(w) for w in cert.witness]}")
    print(f"wrote {out / 'certificate.json'}")
    return EXIT_OK if cert.valid else EXIT_INVALID


def cmd_synthesize(args) -> int:
    defaults = {
        "mu": 0.1, "R0": 3.0, "tau": 0.1, "beta": 1 - 1e-5,
        "c": 1.0, "c_prime": 0.0, "grid_step": 0.01,
    }
    cfg = _resolve(args, defaults, args.config)
    _echo_config(cfg)
    out = _out_dir(args)
    try:
        params, prob, synth = _run_synthesis(cfg)
    except InfeasibleProblem as exc:
        print(f"synthesis infeasible: {exc.report.message}", file=sys.stderr)
        return EXIT_INFEASIBLE
    from .models import sir_jacobian

    base = sir_jacobian(params)
    L = synth.L
    jac = JacobianField(lambda x, k: base(x, k) - L @ np.array([[0.0, 1.0]]), dim=2)
    cert = verify_contraction_lmi(
        jac, params.domain(), synth.P, cfg["beta"], cfg["grid_step"],
        rate_convention="multiplier",
    )
    payload = {
        "config": cfg,
        "synthesis": synth.to_dict(),
        "reverification": cert.to_dict(),
    }
    _write_json(out / "synthesis.json", payload)
    print(
        f"converged={synth.converged} objective={_fmt(synth.objective)} "
        f"L={[_fmt(v) for v in synth.L.ravel()]} min_margin={_fmt(synth.min_margin)}"
    )
    print(f"reverification valid={cert.valid} margin={_fmt(cert.margin)}")
    print(f"wrote {out / 'synthesis.json'}")
    return EXIT_OK if cert.valid else EXIT_INVALID


def _simulate_blockmodel(cfg) -> tuple:
    params = BlockmodelParams(
        f=cfg["f"], l=cfg["l"], a=cfg["a"],
        sigma_w=cfg["sigma_w"], sigma_v=cfg["sigma_v"],
    )
    adj = AdjacencyParams(cfg["K"], cfg["alpha"])
    budget = PrivacyBudget(cfg["eps"], 0.0)
    cal, cert = blockmodel_calibrate(params, adj, budget, cfg["grid_step"])
    truth = generate_synthetic(params, [cfg["x0"]], cfg["n_steps"], cfg["seed"])
    spec = blockmodel_observer_spec(params)
    z, exits = simulate(spec, truth.y, cfg["n_steps"])
    if cfg["no_noise"]:
        zhat = z.copy()
    else:
        zhat = z + sample_noise(cal, 1, cfg["seed"] + 1, cfg["n_steps"])
    header = ["k", "x_1", "y_1", "z_1", "zhat_1"]
    cols = [np.arange(cfg["n_steps"]), truth.x[:, 0], truth.y[:, 0], z[:, 0], zhat[:, 0]]
    meta = {
        "model": "blockmodel",
        "config": cfg,
        "calibration": cal.to_dict(),
        "certificate": cert.to_dict(),
        "exit_steps": list(exits),
    }
    if cfg["adjacent"]:
        k0 = cfg["k0"]
        y_t, _ = adjacent_pair(truth.y, adj, k0, cfg["seed"] + 2, worst_case=cfg["worst_case"])
        z_t, _ = simulate(spec, y_t, cfg["n_steps"])
        gap = np.abs(z - z_t)[:, 0]
        ks = np.arange(cfg["n_steps"])
        j = np.maximum(ks - k0, 0)
        bound = cal.rho * (cal.gamma**j - adj.alpha**j)
        bound[ks < k0] = 0.0
        header += ["ytilde_1", "ztilde_1", "gap", "bound"]
        cols += [y_t[:, 0], z_t[:, 0], gap, bound]
        meta["k0"] = k0
    return header, cols, meta


def _simulate_sir(cfg) -> tuple:
    params = SirParams(
        mu=cfg["mu"], r0=cfg["R0"], tau=cfg["tau"],
        sigma_v=cfg["sigma_v"], sigma_w=cfg["sigma_w"],
    )
    if cfg["synthesis"]:
        synth = _load_synthesis(cfg["synthesis"])
    else:
        prob = SynthesisProblem(
            sir_synthesis_samples(params, cfg["grid_step"]),
            np.array([[0.0, 1.0]]),
            beta=cfg["beta"], c=cfg["c"], c_prime=cfg["c_prime"],
        )
        synth = synthesize(prob)
    adj = AdjacencyParams(cfg["M"], cfg["alpha"])
    budget = None if cfg["no_noise"] else PrivacyBudget(cfg["eps"], cfg["delta"])
    traj = sir_pipeline(
        params, synth, adj, budget, cfg["seed"], cfg["n_steps"],
        x0=tuple(cfg["x0"]), no_model_noise=cfg["no_noise"],
    )
    n = cfg["n_steps"]
    header = ["k", "x_1", "x_2", "y_1", "z_1", "z_2", "zhat_1", "zhat_2"]
    cols = [
        np.arange(n), traj.x[:, 0], traj.x[:, 1], traj.y[:, 0],
        traj.z[:, 0], traj.z[:, 1], traj.zhat[:, 0], traj.zhat[:, 1],
    ]
    meta = {
        "model": "sir",
        "config": cfg,
        "exit_steps": list(traj.exits),
        **traj.meta,
    }
    if cfg["adjacent"]:
        k0 = cfg["k0"]
        y_t, _ = adjacent_pair(traj.y, adj, k0, cfg["seed"] + 2, worst_case=cfg["worst_case"])
        from .models import ObserverSpec

        spec = ObserverSpec(
            f=lambda x, k: params.step(x),
            g=lambda x, k: params.observe(x),
            gain=synth.L,
            domain=params.domain(),
            initial_estimate=(0.5, 0.25),
        )
        z_t, _ = simulate(spec, y_t, n)
        err = traj.z - z_t
        P = synth.P.entries
        gap = np.sqrt(np.einsum("ki,ij,kj->k", err, P, err))
        beta_norm = math.sqrt(synth.beta)
        l_p = math.sqrt(float((synth.L.T @ P @ synth.L).item()))
        rho = adj.K * l_p / (beta_norm - adj.alpha)
        ks = np.arange(n)
        j = np.maximum(ks - k0, 0)
        bound = rho * (beta_norm**j - adj.alpha**j)
        bound[ks < k0] = 0.0
        header += ["ztilde_1", "ztilde_2", "gap", "bound"]
        cols += [z_t[:, 0], z_t[:, 1], gap, bound]
        meta["k0"] = k0
    return header, cols, meta


def cmd_simulate(args) -> int:
    common = {
        "seed": 0, "n_steps": None, "no_noise": False,
        "adjacent": False, "k0": 100, "worst_case": False, "grid_step": 0.01,
    }
    if args.system == "blockmodel":
        defaults = {
            **common, "n_steps": 600, "f": 0.95, "l": 0.3,
            "a": float(np.log(19.0)), "sigma_w": 0.05, "sigma_v": 0.01,
            "K": 1e-3, "alpha": 0.25, "eps": 1.0, "x0": 0.0,
        }
    else:
        defaults = {
            **common, "n_steps": 600, "mu": 0.1, "R0": 3.0, "tau": 0.1,
            "sigma_v": 0.02, "sigma_w": None, "M": 5e-4, "alpha": 0.25,
            "eps": 2.0, "delta": 0.05, "beta": 1 - 1e-5, "c": 1.0,
            "c_prime": 0.0, "synthesis": None, "x0": (0.9, 0.05),
        }
    cfg = _resolve(args, defaults, args.config)
    if isinstance(cfg.get("x0"), tuple):
        cfg["x0"] = list(cfg["x0"])
    _echo_config(cfg)
    out = _out_dir(args)
    try:
        if args.system == "blockmodel":
            header, cols, meta = _simulate_blockmodel(cfg)
        else:
            header, cols, meta = _simulate_sir(cfg)
    except InfeasibleProblem as exc:
        print(f"synthesis infeasible: {exc.report.message}", file=sys.stderr)
        return EXIT_INFEASIBLE
    csv_path = out / f"{args.system}_trajectory.csv"
    meta_path = out / f"{args.system}_metadata.json"
    _write_csv(csv_path, header, cols)
    _write_json(meta_path, meta)
    print(f"wrote {csv_path}")
    print(f"wrote {meta_path}")
    if getattr(args, "plot", False):
        from .plotting import render_report

        for p in render_report(csv_path, meta_path, out):
            print(f"wrote {p}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .plotting import render_report

    meta = args.meta
    if meta is None:
        guess = Path(args.csv).with_name(
            Path(args.csv).stem.replace("_trajectory", "_metadata") + ".json"
        )
        if not guess.exists():
            print("error: pass --meta (metadata JSON not found next to CSV)", file=sys.stderr)
            return EXIT_USAGE
        meta = guess
    out = _out_dir(args)
    for p in render_report(args.csv, meta, out):
        print(f"wrote {p}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_common(sp):
    sp.add_argument("--config", default=None, help="JSON config file")
    sp.add_argument("--out", default=None, help="output directory (default $%s or .)" % OUT_ENV)


def _num(sp, name, **kw):
    sp.add_argument(name, type=float, default=None, **kw)


def build_parser() -> _Parser:
    ap = _Parser(prog="dpobserver", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("calibrate", help="noise calibration for a model or the identity map")
    _add_common(sp)
    sp.add_argument("--model", choices=["blockmodel", "sir"], default=None)
    sp.add_argument("--identity", action="store_true", default=None)
    sp.add_argument("--p", type=int, choices=[1, 2], default=None)
    for flag in ("--f", "--l", "--a", "--K", "--alpha", "--eps", "--delta",
                 "--grid-step", "--mu", "--R0", "--tau", "--beta", "--c",
                 "--c-prime", "--M"):
        _num(sp, flag)
    sp.add_argument("--synthesis", default=None, help="reuse a synthesis JSON")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("verify-contraction", help="grid contraction certificate")
    _add_common(sp)
    sp.add_argument("--model", choices=["blockmodel", "sir"], default=None)
    for flag in ("--f", "--l", "--a", "--rate", "--grid-step", "--mu", "--R0", "--tau"):
        _num(sp, flag)
    sp.add_argument("--synthesis", default=None)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("synthesize-gain", help="solve the sampled-LMI gain design")
    _add_common(sp)
    for flag in ("--mu", "--R0", "--tau", "--beta", "--c", "--c-prime", "--grid-step"):
        _num(sp, flag)
    sp.set_defaults(func=cmd_synthesize)

    sp = sub.add_parser("simulate", help="run a reproducible simulation")
    sp.add_argument("system", choices=["blockmodel", "sir"])
    _add_common(sp)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--n-steps", type=int, default=None)
    sp.add_argument("--no-noise", action="store_true", default=None)
    sp.add_argument("--adjacent", action="store_true", default=None)
    sp.add_argument("--worst-case", action="store_true", default=None)
    sp.add_argument("--k0", type=int, default=None)
    sp.add_argument("--plot", action="store_true", default=False)
    sp.add_argument("--synthesis", default=None)
    for flag in ("--f", "--l", "--a", "--sigma-w", "--sigma-v", "--K", "--alpha",
                 "--eps", "--delta", "--mu", "--R0", "--tau", "--M", "--beta",
                 "--c", "--c-prime", "--grid-step"):
        _num(sp, flag)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("report", help="render figures from a trajectory CSV")
    _add_common(sp)
    sp.add_argument("--csv", required=True)
    sp.add_argument("--meta", default=None)
    sp.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        code = args.func(args)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return code


if __name__ == "__main__":
    sys.exit(main())
