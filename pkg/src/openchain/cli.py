"""Batch front-end: validate configs, run analytics and simulations, emit figure data.

Config document (JSON, schema 1):

    {
      "schema": 1,
      "model": {
        "jump_matrix": [[...], ...] | {"path": "matrix.json|.csv"},
        "protocol": {"variant": "...", ...}
      },
      "run": {"horizon": 500000, "burn_in": null, "seed": 7, "lags": [1, 2, 5, 10]},
      "sweep": {"grid": {"p": [0.0, 0.1]}},        # optional; "$p" placeholders
      "output": {"directory": "out"}               # optional
    }

Exit codes: 0 ok, 1 usage/parse error, 2 invalid model/config, 3 comparison failure.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import cumulants, mgf, stats
from ._rng import derive_seed
from .chain import OpenChainModel, _adjacency, _graph_period, _is_irreducible, spectral_radius, validate_jump_matrix
from .errors import ConfigError, OpenChainError, SeriesTooShort
from .protocols import (
    Constant,
    IidProduct,
    IncomingProtocol,
    JointTable,
    MarkovModulated,
    ProtocolSchedule,
    three_state_example,
)
from .simulate import run
from .stats import ComparisonEntry, TolerancePolicy, compare, entries_from_arrays

SCHEMA_VERSION = 1
DEFAULT_LAGS = (1, 2, 5, 10)
DEFAULT_FIGURE_SEED = 20170927
FIGURE_HORIZON = 500_000

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_COMPARISON = 3


# ---------------------------------------------------------------------------
# config handling


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    if doc.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema {doc.get('schema')!r}; expected {SCHEMA_VERSION}")
    if not isinstance(doc.get("model"), dict):
        raise ConfigError("config needs a 'model' object")
    return doc


def _load_matrix(spec, base_dir: Path):
    if isinstance(spec, dict):
        rel = spec.get("path")
        if not isinstance(rel, str):
            raise ConfigError("jump_matrix object form needs a 'path' string")
        p = base_dir / rel
        if p.suffix == ".csv":
            return np.loadtxt(p, delimiter=",", ndmin=2)
        if p.suffix == ".json":
            return json.loads(p.read_text())
        raise ConfigError(f"unsupported matrix file type: {p.suffix!r}")
    if isinstance(spec, list):
        return spec
    raise ConfigError("jump_matrix must be an array of arrays or {'path': ...}")


def build_protocol(spec: dict):
    if not isinstance(spec, dict) or "variant" not in spec:
        raise ConfigError("protocol must be an object with a 'variant' key")
    variant = spec["variant"]
    try:
        if variant == "constant":
            return Constant(np.asarray(spec["vector"]))
        if variant == "iid_product":
            return IidProduct(tuple(tuple((v, p) for v, p in table) for table in spec["tables"]))
        if variant == "iid_bernoulli":
            return IidProduct.bernoulli(spec["ps"])
        if variant == "joint_table":
            return JointTable(np.asarray(spec["support"]), np.asarray(spec["probabilities"]))
        if variant == "markov_modulated":
            regimes = tuple(
                JointTable(np.asarray(r["support"]), np.asarray(r["probabilities"]))
                for r in spec["regimes"]
            )
            return MarkovModulated(np.asarray(spec["transition"], dtype=float), regimes)
        if variant == "three_state_example":
            return three_state_example(float(spec["p"]))
        if variant == "schedule":
            segments = tuple(
                (int(seg["duration"]), build_protocol(seg["protocol"]))
                for seg in spec["segments"]
            )
            return ProtocolSchedule(segments)
    except KeyError as exc:
        raise ConfigError(f"protocol variant {variant!r} is missing field {exc}") from exc
    raise ConfigError(f"unknown protocol variant {variant!r}")


def _substitute(node, values: dict):
    if isinstance(node, str) and node.startswith("$"):
        name = node[1:]
        if name in values:
            return values[name]
        raise ConfigError(f"sweep placeholder '${name}' has no grid values")
    if isinstance(node, list):
        return [_substitute(x, values) for x in node]
    if isinstance(node, dict):
        return {k: _substitute(v, values) for k, v in node.items()}
    return node


def sweep_points(doc: dict) -> list:
    """(label, model_block) per grid point; a single unlabeled point without a sweep."""
    sweep = doc.get("sweep")
    if not sweep:
        return [("", doc["model"])]
    grid = sweep.get("grid")
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("sweep needs a nonempty 'grid' object")
    names = list(grid.keys())
    combos = itertools.product(*(grid[n] for n in names))
    points = []
    for combo in combos:
        values = dict(zip(names, combo))
        label = "_".join(f"{n}={values[n]!r}" for n in names)
        points.append((label, _substitute(doc["model"], values)))
    return points


def build_model(model_block: dict, base_dir: Path):
    """Returns (OpenChainModel | None, protocol_or_schedule, jump_matrix)."""
    if "jump_matrix" not in model_block or "protocol" not in model_block:
        raise ConfigError("model needs 'jump_matrix' and 'protocol'")
    raw = _load_matrix(model_block["jump_matrix"], base_dir)
    protocol = build_protocol(model_block["protocol"])
    jump = validate_jump_matrix(raw)
    if isinstance(protocol, ProtocolSchedule):
        if protocol.dimension != jump.size:
            raise ConfigError("schedule dimension does not match the jump matrix")
        return None, protocol, jump
    from .chain import escape_profile

    model = OpenChainModel(jump=jump, escape=escape_profile(jump), protocol=protocol)
    return model, protocol, jump


# ---------------------------------------------------------------------------
# output helpers


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header, rows, preamble: str = "") -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if preamble:
            fh.write(preamble + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _thread_cap() -> int:
    env = os.environ.get("OPENCHAIN_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _run_points(work, n_points: int):
    cap = min(_thread_cap(), n_points)
    if cap == 1:
        return [work(i) for i in range(n_points)]
    with ThreadPoolExecutor(max_workers=cap) as pool:
        return list(pool.map(work, range(n_points)))


# ---------------------------------------------------------------------------
# analytics assembly


def _analytics_doc(model: OpenChainModel, lags) -> dict:
    state = cumulants.stationary_state(model.protocol, model.jump)
    kappa = cumulants.spatial_correlation(state.covariance)
    out = cumulants.outgoing_moments(state, model.escape)
    time_corr = {
        int(s): cumulants.time_correlation(state.covariance, model.jump, int(s)).tolist()
        for s in lags
    }
    evaluator = mgf.stationary_log_mgf_evaluator(model, tol=1e-13)
    fd_mean, fd_cov = mgf.numeric_cumulants(evaluator)
    return {
        "model": {
            "fingerprint": model.fingerprint(),
            "spectral_radius": model.jump.rho,
            "escape_vector": model.escape.escape_vector.tolist(),
            "states": model.size,
        },
        "stationary": {
            "mean": state.mean.tolist(),
            "covariance": state.covariance.tolist(),
        },
        "kappa": kappa.tolist(),
        "time_correlation": {str(s): m for s, m in time_corr.items()},
        "outgoing": {
            "mean_per_state": out.mean_per_state.tolist(),
            "covariance": out.covariance.tolist(),
            "mean_total": out.mean_total,
            "var_total": out.var_total,
        },
        "mgf_check": {
            "truncation_depth": evaluator.truncation_depth,
            "mean_max_abs_err": float(np.abs(fd_mean - state.mean).max()),
            "covariance_max_abs_err": float(np.abs(fd_cov - state.covariance).max()),
        },
    }


def _analytics_csvs(out_dir: Path, doc: dict, preamble: str) -> None:
    mean = doc["stationary"]["mean"]
    cov = doc["stationary"]["covariance"]
    kappa = doc["kappa"]
    S = len(mean)
    _write_csv(
        out_dir / "stationary_mean.csv",
        ["state", "mean"],
        [(i + 1, mean[i]) for i in range(S)],
        preamble,
    )
    _write_csv(
        out_dir / "stationary_covariance.csv",
        ["i", "j", "covariance"],
        [(i + 1, j + 1, cov[i][j]) for i in range(S) for j in range(S)],
        preamble,
    )
    _write_csv(
        out_dir / "kappa.csv",
        ["i", "j", "kappa"],
        [(i + 1, j + 1, kappa[i][j]) for i in range(S) for j in range(S)],
        preamble,
    )
    rows = []
    for s, m in sorted(doc["time_correlation"].items(), key=lambda kv: int(kv[0])):
        for i in range(S):
            for j in range(S):
                rows.append((int(s), i + 1, j + 1, m[i][j]))
    _write_csv(out_dir / "time_correlation.csv", ["s", "i", "j", "value"], rows, preamble)


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    doc = load_config(args.config)
    base = Path(args.config).resolve().parent
    points = sweep_points(doc)
    code = EXIT_OK
    for label, block in points:
        if label:
            print(f"[{label}]")
        raw = np.asarray(_load_matrix(block.get("jump_matrix"), base), dtype=float)
        if raw.ndim == 2 and raw.shape[0] == raw.shape[1] and np.all(np.isfinite(raw)) and np.all(raw >= 0):
            try:
                rho = spectral_radius(raw)
                print(f"spectral_radius: {rho!r}")
            except OpenChainError as exc:
                print(f"spectral_radius: unavailable ({exc})")
            print(f"escape_vector: {[float(x) for x in np.clip(1.0 - raw.sum(axis=1), 0.0, None)]}")
            adj = _adjacency(raw)
            print(f"irreducible: {str(_is_irreducible(adj)).lower()}")
            print(f"aperiodic: {str(_graph_period(adj) == 1).lower()}")
        try:
            build_model(block, base)
        except (OpenChainError, ValueError, OverflowError) as exc:
            print(f"{type(exc).__name__}: {exc}")
            print("valid: false")
            code = EXIT_INVALID
            continue
        print("valid: true")
    return code


def _require_stationary(model, protocol):
    if model is None or isinstance(protocol, ProtocolSchedule):
        raise OpenChainError(
            "stationary analytics require a stationary protocol, not a schedule"
        )


def cmd_analyze(args) -> int:
    doc = load_config(args.config)
    base = Path(args.config).resolve().parent
    out_root = Path(args.out or doc.get("output", {}).get("directory", "."))
    lags = _lags_from(args, doc)
    config_hash = _sha256_file(Path(args.config))
    points = sweep_points(doc)

    def work(k: int):
        label, block = points[k]
        model, protocol, _ = build_model(block, base)
        _require_stationary(model, protocol)
        out_dir = out_root / (f"point_{k:03d}_{label}" if label else "")
        adoc = _analytics_doc(model, lags)
        adoc["schema"] = SCHEMA_VERSION
        adoc["config_sha256"] = config_hash
        adoc["lags"] = list(lags)
        if label:
            adoc["sweep_label"] = label
        _write_json(out_dir / "analytics.json", adoc)
        preamble = f"# config_sha256={config_hash}"
        _analytics_csvs(out_dir, adoc, preamble)
        return adoc

    _run_points(work, len(points))
    return EXIT_OK


def _lags_from(args, doc) -> list:
    if getattr(args, "lags", None):
        return [int(x) for x in args.lags.split(",")]
    lags = doc.get("run", {}).get("lags")
    if lags is None:
        return list(DEFAULT_LAGS)
    return [int(x) for x in lags]


def cmd_simulate(args) -> int:
    doc = load_config(args.config)
    base = Path(args.config).resolve().parent
    run_block = doc.get("run")
    if not isinstance(run_block, dict) or "horizon" not in run_block:
        raise ConfigError("simulate needs a 'run' object with a horizon")
    horizon = int(run_block["horizon"])
    burn_in = run_block.get("burn_in")
    burn_in = horizon // 10 if burn_in is None else int(burn_in)
    seed = args.seed if args.seed is not None else run_block.get("seed")
    if seed is None:
        raise OpenChainError("a seed is required to simulate (config run.seed or --seed)")
    seed = int(seed)
    lags = _lags_from(args, doc)
    max_lag = max([0] + lags)
    if horizon <= burn_in + max_lag + 10 * stats.DEFAULT_BATCH_COUNT:
        raise SeriesTooShort(
            f"horizon {horizon} cannot support burn_in {burn_in}, "
            f"max lag {max_lag}, and {stats.DEFAULT_BATCH_COUNT} batches"
        )
    out_root = Path(args.out or doc.get("output", {}).get("directory", "."))
    config_hash = _sha256_file(Path(args.config))
    policy = TolerancePolicy(abs_tol=args.tol)
    points = sweep_points(doc)

    def work(k: int):
        label, block = points[k]
        model, protocol, _ = build_model(block, base)
        _require_stationary(model, protocol)
        point_seed = seed if len(points) == 1 else derive_seed(seed, k)
        out_dir = out_root / (f"point_{k:03d}_{label}" if label else "")
        out_dir.mkdir(parents=True, exist_ok=True)

        record = run(model, horizon, seed=point_seed, burn_in=burn_in)
        record.to_csv(out_dir / "record.csv", extra_comment=f"config_sha256={config_hash}")
        record.write_manifest(
            out_dir / "manifest.json",
            extra={"config_sha256": config_hash, "base_seed": seed, "point_index": k},
        )

        summary = stats.summarize(record, lags=lags)
        sdoc = summary.to_dict()
        sdoc["config_sha256"] = config_hash
        sdoc["seed"] = point_seed
        _write_json(out_dir / "summary.json", sdoc)

        state = cumulants.stationary_state(model.protocol, model.jump)
        diagnostic_lags = isinstance(model.protocol, MarkovModulated)
        entries = entries_from_arrays("mean", state.mean, summary.sample_mean, summary.mean_se)
        entries += entries_from_arrays(
            "covariance",
            state.covariance,
            summary.sample_covariance,
            summary.covariance_se,
            symmetric=True,
        )
        for s in lags:
            if s == 0:
                continue
            analytic = cumulants.lag_covariance(state.covariance, model.jump, s)
            entries += entries_from_arrays(
                f"lag_cov[s={s}]",
                analytic,
                summary.lag_covariances[s],
                summary.lag_se[s],
                gating=not diagnostic_lags,
            )
        report = compare(entries, policy)
        rdoc = report.to_dict()
        rdoc["config_sha256"] = config_hash
        rdoc["seed"] = point_seed
        if diagnostic_lags:
            rdoc["note"] = (
                "lag-covariance rows are diagnostic: the modulated protocol violates "
                "the independence assumption behind Sigma Q^s"
            )
        _write_json(out_dir / "comparison.json", rdoc)
        (out_dir / "comparison.txt").write_text(
            f"# config_sha256={config_hash} seed={point_seed}\n" + report.render_table() + "\n"
        )
        return report.passed

    results = _run_points(work, len(points))
    return EXIT_OK if all(results) else EXIT_COMPARISON


def _three_state_model(p: float, q: float) -> OpenChainModel:
    return OpenChainModel.from_matrix(
        [[0.0, q, q], [q, 0.0, q], [q, q, 0.0]], three_state_example(p)
    )


def cmd_figure(args) -> int:
    out_dir = Path(args.out or ".")
    seed = args.seed if args.seed is not None else DEFAULT_FIGURE_SEED
    horizon = args.horizon or FIGURE_HORIZON
    params_hash = hashlib.sha256(
        json.dumps({"figure": args.name, "seed": seed, "horizon": horizon}).encode()
    ).hexdigest()
    preamble = f"# config_sha256={params_hash} seed={seed}"

    if args.name == "fig4":
        qs = (0.25, 0.45)
        ps = [round(0.1 * i, 1) for i in range(11)]
        grid = [(q, p) for q in qs for p in ps]

        def work(k: int):
            q, p = grid[k]
            model = _three_state_model(p, q)
            record = run(model, horizon, seed=derive_seed(seed, k))
            summary = stats.summarize(record, lags=())
            kappa = stats.empirical_correlations(summary)[0]
            kappa_se = stats.correlation_standard_errors(summary)[0]
            k12a, k13a = cumulants.three_state_kappa(p, q)
            return (
                q, p, k12a, k13a,
                kappa[0, 1], kappa_se[0, 1],
                kappa[0, 2], kappa_se[0, 2],
                kappa[1, 2], kappa_se[1, 2],
            )

        rows = _run_points(work, len(grid))
        _write_csv(
            out_dir / "fig4.csv",
            [
                "q", "p", "kappa12_analytic", "kappa13_analytic",
                "kappa12_sim", "kappa12_se", "kappa13_sim", "kappa13_se",
                "kappa23_sim", "kappa23_se",
            ],
            rows,
            preamble,
        )
        _write_json(
            out_dir / "fig4_manifest.json",
            {
                "figure": "fig4",
                "config_sha256": params_hash,
                "seed": seed,
                "horizon": horizon,
                "q_values": list(qs),
                "p_values": ps,
            },
        )
        return EXIT_OK

    if args.name == "fig5":
        p, q = 0.40, 0.45
        lags = list(range(0, 31))
        model = _three_state_model(p, q)
        record = run(model, horizon, seed=derive_seed(seed, 0))
        summary = stats.summarize(record, lags=lags)
        _, time_corr = stats.empirical_correlations(summary)
        _, time_se = stats.correlation_standard_errors(summary)
        state = cumulants.stationary_state(model.protocol, model.jump)
        rows = []
        for s in lags:
            analytic = cumulants.time_correlation(state.covariance, model.jump, s)
            rows.append(
                (
                    s,
                    analytic[0, 0], time_corr[s][0, 0], time_se[s][0, 0],
                    analytic[0, 1], time_corr[s][0, 1], time_se[s][0, 1],
                )
            )
        _write_csv(
            out_dir / "fig5.csv",
            ["s", "c11_analytic", "c11_sim", "c11_se", "c12_analytic", "c12_sim", "c12_se"],
            rows,
            preamble,
        )
        _write_json(
            out_dir / "fig5_manifest.json",
            {
                "figure": "fig5",
                "config_sha256": params_hash,
                "seed": seed,
                "horizon": horizon,
                "p": p,
                "q": q,
                "lags": lags,
            },
        )
        return EXIT_OK

    raise ConfigError(f"unknown figure {args.name!r}")


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="openchain",
        description="Open Markov chains: model validation, analytics, simulation, figure data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="validate a model config")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate)

    p_an = sub.add_parser("analyze", help="write stationary analytics reports")
    p_an.add_argument("--config", required=True)
    p_an.add_argument("--out", default=None, help="output directory")
    p_an.add_argument("--lags", default=None, help="comma-separated lags")
    p_an.set_defaults(func=cmd_analyze)

    p_sim = sub.add_parser("simulate", help="run the simulator and compare to analytics")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--seed", type=int, default=None, help="overrides config run.seed")
    p_sim.add_argument("--out", default=None)
    p_sim.add_argument("--lags", default=None)
    p_sim.add_argument("--tol", type=float, default=None, help="absolute tolerance for verdicts")
    p_sim.set_defaults(func=cmd_simulate)

    p_fig = sub.add_parser("figure", help="emit plot-ready CSV data for a paper figure")
    p_fig.add_argument("name", choices=["fig4", "fig5"])
    p_fig.add_argument("--out", default=None)
    p_fig.add_argument("--seed", type=int, default=None)
    p_fig.add_argument("--horizon", type=int, default=None)
    p_fig.set_defaults(func=cmd_figure)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OpenChainError, ValueError, OverflowError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
