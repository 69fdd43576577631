"""``hsic-attr`` command line.

Subcommands: explain, interactions, fidelity, converge, baseline, catalog.
Options may also come from a JSON file (``--config``) whose keys mirror the
long flag names; flags given on the command line win.

Exit codes: 0 ok, 1 invalid configuration, 2 model transport error, 3 I/O
error. Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import design as designs
from .hsic import AttributionResult
from .images import load_input, write_heatmap
from .kernel import OutputKernel
from .metrics import (
    UndefinedCorrelationError,
    convergence_study,
    fidelity_report,
    occlusion_attribution,
    reference_attribution,
    rise_attribution,
)
from .model import IMAGE, MASK, ModelEndpoint, TransportError, builtin_catalog, parse_model_spec
from .perturb import NEAREST, PerturbConfig
from .pipeline import explain

EXIT_CONFIG, EXIT_TRANSPORT, EXIT_IO = 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: Optional[str] = None
    input: Optional[str] = None
    grid: str = "7x7"
    samples: int = 764
    sampler: str = "lhs"
    prob: float = 0.5
    seed: int = 0
    baseline: str = "0"
    output_kernel: str = "rbf:median"
    upsampling: str = NEAREST
    exhaustive: bool = False
    model_input: str = IMAGE
    batch_limit: int = 64
    workers: int = 1
    timeout: float = 60.0

    def digest(self) -> dict:
        """Settings that determine the scores (excludes execution knobs)."""
        out = asdict(self)
        for key in ("workers", "batch_limit", "timeout"):
            out.pop(key)
        return out

    @property
    def grid_dims(self) -> tuple:
        return parse_grid(self.grid)


def parse_grid(text) -> tuple:
    if isinstance(text, (list, tuple)):
        w, h = text
    else:
        w, sep, h = str(text).lower().partition("x")
        if not sep:
            raise ConfigError(f"grid must look like WxH, got {text!r}")
    try:
        w, h = int(w), int(h)
    except ValueError:
        raise ConfigError(f"grid must look like WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise ConfigError(f"grid dims must be positive, got {text!r}")
    return w, h


def parse_baseline(text):
    values = [float(v) for v in str(text).split(",")]
    return values[0] if len(values) == 1 else tuple(values)


def _int_list(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


# -- argument parsing ----------------------------------------------------------


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("run configuration")
    g.add_argument("--config", help="JSON file mirroring these flags")
    g.add_argument("--model", help="builtin:name?k=v, cmd:<command> or http(s)://url")
    g.add_argument("--input", help="PNG image or raw float tensor")
    g.add_argument("--grid", help="patch grid WxH (default 7x7)")
    g.add_argument("--samples", type=int, help="number of masks p (default 764)")
    g.add_argument("--sampler", choices=["lhs", "bernoulli"])
    g.add_argument("--prob", type=float, help="Bernoulli keep probability")
    g.add_argument("--seed", type=int)
    g.add_argument("--baseline", help="baseline value, or comma-separated per channel")
    g.add_argument("--output-kernel", help="rbf:median, rbf:median-values, rbf:<sigma> or linear")
    g.add_argument("--upsampling", choices=["nearest", "bilinear"])
    g.add_argument("--exhaustive", action="store_true", default=None, help="all 2^d masks (d <= 20)")
    g.add_argument("--model-input", choices=[IMAGE, MASK], help="input kind for external models")
    g.add_argument("--batch-limit", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--timeout", type=float)
    g.add_argument("--save-design")
    g.add_argument("--load-design")
    o = parser.add_argument_group("outputs")
    o.add_argument("--out-scores", help="JSON result (stdout when omitted)")
    o.add_argument("--out-csv")
    o.add_argument("--out-heatmap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hsic-attr", description="HSIC black-box attribution")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="per-patch HSIC scores")
    _common(p)

    p = sub.add_parser("interactions", help="pairwise interaction scores")
    _common(p)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.0)

    p = sub.add_parser("fidelity", help="deletion / insertion / muFidelity of a scores file")
    _common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--metrics", default="deletion,insertion,mufidelity")
    p.add_argument("--steps", type=int)
    p.add_argument("--subsets", type=int, default=200)
    p.add_argument("--k-fraction", type=float, default=0.2)
    p.add_argument("--metric-seed", type=int, default=0)
    p.add_argument("--out-plot")

    p = sub.add_parser("converge", help="Spearman vs a large-p reference")
    _common(p)
    p.add_argument("--schedule", default="64,128,256,512")
    p.add_argument("--reference", type=int, default=13000)
    p.add_argument("--seeds", type=int, default=20, help="number of independent seeds")
    p.add_argument("--out-plot")

    p = sub.add_parser("baseline", help="RISE or Occlusion attribution")
    _common(p)
    p.add_argument("--method", required=True)

    sub.add_parser("catalog", help="list builtin models")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            values = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
        values = {k.replace("-", "_"): v for k, v in values.items()}
    names = {f.name for f in fields(RunConfig)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in names:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if isinstance(values.get("grid"), (list, tuple)):
        values["grid"] = "{}x{}".format(*values["grid"])
    cfg = RunConfig(**values)
    parse_grid(cfg.grid)
    if cfg.model is None:
        raise ConfigError("--model is required")
    if cfg.workers < 1 or cfg.batch_limit < 1:
        raise ConfigError("--workers and --batch-limit must be >= 1")
    if cfg.sampler not in ("lhs", "bernoulli"):
        raise ConfigError(f"unknown sampler {cfg.sampler!r}")
    return cfg


# -- helpers -------------------------------------------------------------------


def _perturb_config(cfg: RunConfig) -> PerturbConfig:
    try:
        return PerturbConfig(cfg.grid_dims, parse_baseline(cfg.baseline), cfg.upsampling)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _endpoint(cfg: RunConfig) -> ModelEndpoint:
    try:
        model = parse_model_spec(cfg.model, cfg.grid_dims, cfg.model_input, cfg.timeout)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ModelEndpoint(model, batch_limit=cfg.batch_limit, workers=cfg.workers)


def _input(cfg: RunConfig, endpoint: ModelEndpoint):
    if cfg.input is None:
        if endpoint.input_kind == IMAGE:
            raise ConfigError("--input is required for image-level models")
        return None
    return load_input(cfg.input)


def _design(cfg: RunConfig, args, p: Optional[int] = None, seed: Optional[int] = None):
    d = cfg.grid_dims[0] * cfg.grid_dims[1]
    if args.load_design:
        result = designs.load_design(args.load_design)
        if result.d != d:
            raise ConfigError(f"loaded design has d={result.d}, grid has {d} cells")
    elif cfg.exhaustive:
        if d > designs.MAX_EXHAUSTIVE_D:
            raise ConfigError(f"exhaustive design refused for d={d}")
        result = designs.exhaustive_design(d)
    else:
        p = cfg.samples if p is None else p
        if p < 2:
            raise ConfigError("p >= 2 required")
        try:
            result = designs.make_design(cfg.sampler, p, d, cfg.seed if seed is None else seed, cfg.prob)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if result.p < 2:
        raise ConfigError("p >= 2 required")
    if args.save_design:
        designs.save_design(result, args.save_design)
    return result


def _kernel(cfg: RunConfig) -> OutputKernel:
    try:
        return OutputKernel.parse(cfg.output_kernel)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _emit(path: Optional[str], text: str) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _heatmap(args, cfg: RunConfig, x, scores) -> None:
    if not args.out_heatmap:
        return
    if x is not None:
        h, w = x.shape[:2]
    else:
        w, h = cfg.grid_dims[0] * 32, cfg.grid_dims[1] * 32
    write_heatmap(args.out_heatmap, scores, cfg.grid_dims, w, h)


def _write_result(args, cfg: RunConfig, result: AttributionResult, x) -> None:
    result.config = {**cfg.digest(), **{k: v for k, v in result.config.items() if k not in cfg.digest()}}
    _emit(args.out_scores, _dumps(result.to_dict()))
    if args.out_csv:
        Path(args.out_csv).write_text(result.to_csv())
    _heatmap(args, cfg, x, result.scores)


# -- commands ------------------------------------------------------------------


def cmd_explain(args, cfg: RunConfig) -> None:
    with _endpoint(cfg) as endpoint:
        x = _input(cfg, endpoint)
        result, _ = explain(endpoint, x, _design(cfg, args), _perturb_config(cfg), _kernel(cfg))
    _write_result(args, cfg, result, x)


def cmd_interactions(args, cfg: RunConfig) -> None:
    with _endpoint(cfg) as endpoint:
        x = _input(cfg, endpoint)
        result, analysis = explain(endpoint, x, _design(cfg, args), _perturb_config(cfg), _kernel(cfg))
    matrix = analysis.interaction_matrix()
    matrix.grid = cfg.grid_dims
    payload = matrix.to_dict(args.top_k, args.threshold)
    payload["scores"] = [float(v) for v in result.scores]
    payload["config"] = {**cfg.digest(), "bandwidth": analysis.bandwidth}
    _emit(args.out_scores, _dumps(payload))
    if args.out_csv:
        Path(args.out_csv).write_text(matrix.to_csv())
    _heatmap(args, cfg, x, result.scores)


def cmd_fidelity(args, cfg: RunConfig) -> None:
    try:
        scores = AttributionResult.from_dict(json.loads(Path(args.scores).read_text()))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scores file is not valid JSON: {exc}") from None
    if tuple(scores.grid) != cfg.grid_dims:
        raise ConfigError(f"scores grid {list(scores.grid)} does not match --grid {cfg.grid}")
    metrics = [m.strip().lower() for m in args.metrics.split(",") if m.strip()]
    with _endpoint(cfg) as endpoint:
        x = _input(cfg, endpoint)
        try:
            report = fidelity_report(
                endpoint, x, scores.scores, _perturb_config(cfg), metrics,
                args.steps, args.k_fraction, args.subsets, args.metric_seed,
            )
        except ValueError as exc:
            if isinstance(exc, UndefinedCorrelationError):
                raise
            raise ConfigError(str(exc)) from None
    for line in report.diagnostics:
        print(json.dumps({"diagnostic": line}), file=sys.stderr)
    payload = report.to_dict()
    payload["config"] = {**cfg.digest(), **payload["config"]}
    _emit(args.out_scores, _dumps(payload))
    if args.out_csv:
        Path(args.out_csv).write_text(report.to_csv())
    if args.out_plot:
        _plot_curves(args.out_plot, report)


def cmd_converge(args, cfg: RunConfig) -> None:
    try:
        schedule = _int_list(args.schedule)
    except ValueError:
        raise ConfigError(f"bad schedule {args.schedule!r}") from None
    if not schedule or schedule != sorted(schedule) or min(schedule) < 2:
        raise ConfigError("schedule must be ascending with every p >= 2")
    if max(schedule) > args.reference:
        raise ConfigError("schedule must not exceed the reference sample count")
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    pcfg, kernel = _perturb_config(cfg), _kernel(cfg)
    with _endpoint(cfg) as endpoint:
        x = _input(cfg, endpoint)
        ref_design = _design(cfg, args, p=args.reference)
        reference, _ = explain(endpoint, x, ref_design, pcfg, kernel)
        seeds = [cfg.seed] if args.seeds == 1 else [cfg.seed + 1 + k for k in range(args.seeds)]
        table = np.array([
            [rho for _, rho in convergence_study(
                endpoint, x, pcfg, schedule, args.reference, seed=s, sampler=cfg.sampler,
                kernel=kernel, reference=reference.scores)]
            for s in seeds
        ])
    rows = ["p,median,q1,q3,seeds"]
    for k, p in enumerate(schedule):
        q1, med, q3 = np.percentile(table[:, k], [25, 50, 75])
        rows.append(f"{p},{float(med)!r},{float(q1)!r},{float(q3)!r},{len(seeds)}")
    text = "\n".join(rows) + "\n"
    _emit(args.out_csv or args.out_scores, text)
    if args.out_plot:
        _plot_convergence(args.out_plot, schedule, table)


def cmd_baseline(args, cfg: RunConfig) -> None:
    method = args.method.lower()
    if method not in ("rise", "occlusion"):
        raise ConfigError(f"unknown baseline method {args.method!r}")
    pcfg = _perturb_config(cfg)
    with _endpoint(cfg) as endpoint:
        x = _input(cfg, endpoint)
        if method == "occlusion":
            result = occlusion_attribution(endpoint, x, pcfg)
        else:
            result = rise_attribution(endpoint, x, _design(cfg, args), pcfg)
    _write_result(args, cfg, result, x)


def _plot_curves(path, report) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, curve in (("deletion", report.deletion), ("insertion", report.insertion)):
        if curve is not None:
            ax.plot(curve.fractions, curve.values, label=f"{name} (AUC {curve.auc:.3f})")
    ax.set_xlabel("fraction of cells")
    ax.set_ylabel("model score")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _plot_convergence(path, schedule, table) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    q1, med, q3 = np.percentile(table, [25, 50, 75], axis=0)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(schedule, med, marker="o")
    ax.fill_between(schedule, q1, q3, alpha=0.3)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("forward passes p")
    ax.set_ylabel("Spearman vs reference")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


COMMANDS = {
    "explain": cmd_explain,
    "interactions": cmd_interactions,
    "fidelity": cmd_fidelity,
    "converge": cmd_converge,
    "baseline": cmd_baseline,
}


def _fail(kind: str, code: int, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "catalog":
        for entry in builtin_catalog():
            print(f"{entry['name']}: {entry['description']}")
        return 0
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except TransportError as exc:
        return _fail("transport", EXIT_TRANSPORT, str(exc))
    except UndefinedCorrelationError as exc:
        return _fail("undefined-correlation", EXIT_CONFIG, str(exc))
    except (ConfigError, ValueError, TypeError) as exc:
        return _fail("invalid-config", EXIT_CONFIG, str(exc))
    except OSError as exc:
        return _fail("io", EXIT_IO, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
