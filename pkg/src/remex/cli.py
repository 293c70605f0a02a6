"""Command-line entry point: ``remex {explain,grid,verify,fit}``.

Exit codes: 0 ok, 1 verification failure, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import behavior as bh
from . import removal as rm
from .core import FeatureSubset, SetFunction, check_extension, derive_seed, full_mask
from .data import CATEGORICAL, ColumnSpec, DatasetSchema, LabeledDataset, load_csv, load_schema
from .errors import ConfigError, ParseError, RemexError, SchemaMismatch
from .explain import DEFAULT_SAMPLES, run_method
from .models import (
    fit_linear,
    fit_logistic,
    fit_subset_model_table,
    fit_tree,
    load_model,
    model_to_dict,
    save_model,
)
from .registry import grid_report, method_spec, preset, with_overrides
from .summary import shapley_exact

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
MODEL_FAMILIES = ("auto", "linear", "logistic", "tree")
VERIFY_MAX_DIM = 8


def _write_json(doc: dict, path: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_component(tokens, flag: str):
    if not tokens:
        return None, {}
    cid, params = tokens[0], {}
    for tok in tokens[1:]:
        key, sep, val = tok.partition("=")
        if not sep or not key:
            raise ConfigError(f"{flag}: expected key=value, got {tok!r}")
        params[key] = _parse_value(val)
    return cid, params


def _schema_from_args(args) -> DatasetSchema:
    if args.schema:
        if not os.path.exists(args.schema):
            raise ConfigError(f"--schema: file not found: {args.schema}")
        return load_schema(args.schema)
    if args.columns:
        cols = []
        for item in args.columns.split(","):
            name, _, kind = item.partition(":")
            cols.append(ColumnSpec(name.strip(), (kind or "continuous").strip()))
        return DatasetSchema(tuple(cols), args.label)
    raise ConfigError("--schema: a schema file or --columns is required")


def _load_data(args) -> LabeledDataset:
    if not args.data:
        raise ConfigError("--data: a CSV path is required")
    if not os.path.exists(args.data):
        raise ConfigError(f"--data: file not found: {args.data}")
    return load_csv(args.data, _schema_from_args(args))


def _binary_labels(data: LabeledDataset) -> bool:
    return data.labels is not None and set(np.unique(data.labels)) <= {0.0, 1.0}


def _fit_family(family: str, data: LabeledDataset, max_depth: int = 3):
    if data.labels is None:
        raise ConfigError("--model: fitting a model needs a label column")
    if family == "linear":
        return fit_linear(data)
    if family == "logistic":
        return fit_logistic(data)
    if family == "tree":
        return fit_tree(data, max_depth=max_depth)
    raise ConfigError(f"--model: unknown family {family!r}")


def _resolve_model(source: str, data: LabeledDataset, removal_id: str):
    """Returns (model, resolved source string)."""
    if source == "auto":
        if removal_id == "tree_distribution":
            source = "tree"
        elif data.label_kind == CATEGORICAL and _binary_labels(data):
            source = "logistic"
        else:
            source = "linear"
    if source in MODEL_FAMILIES:
        return _fit_family(source, data), source
    if not os.path.exists(source):
        raise ConfigError(f"--model: not a model family ({', '.join(MODEL_FAMILIES)}) or an existing file: {source}")
    try:
        return load_model(source), source
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"--model: cannot load {source}: {exc}") from None


def _build_spec(args):
    if args.preset:
        overrides = {}
        for axis in ("removal", "behavior", "summary"):
            # with a preset, each axis flag carries only key=value overrides
            _, params = _parse_component(["-"] + list(getattr(args, axis) or []), f"--{axis}")
            overrides[axis] = params
        return with_overrides(preset(args.preset, args.variant), **overrides)
    parts = {}
    for axis in ("removal", "behavior", "summary"):
        cid, params = _parse_component(getattr(args, axis), f"--{axis}")
        if cid is None:
            raise ConfigError(f"--{axis}: required unless --preset is given")
        parts[axis] = (cid, params)
    return method_spec(parts["removal"][0], parts["behavior"][0], parts["summary"][0],
                       parts["removal"][1], parts["behavior"][1], parts["summary"][1])


def _float_list(values):
    return None if values is None else [float(v) for v in values]


def explain_report(args) -> dict:
    """Run ``explain`` and return the report document."""
    t0 = time.perf_counter()
    if args.samples < 1:
        raise ConfigError("--samples: must be >= 1")
    if args.threads < 1:
        raise ConfigError("--threads: must be >= 1")
    spec = _build_spec(args)
    data = _load_data(args)
    model, source = (None, "subset_table") if spec.removal.id == "separate_models" and args.model == "auto" \
        else _resolve_model(args.model, data, spec.removal.id)
    result = run_method(spec, model, data, args.instance, args.output_index, args.seed, args.samples, args.threads)
    exp = result.explanation
    names = list(data.feature_names)
    doc = {
        "method": result.spec.to_dict(),
        "model": {"source": source, "type": type(result.model).__name__, "out_dim": result.model.out_dim},
        "data": {"path": args.data, "n": data.n, "d": data.dim, "feature_names": names},
        "seed": args.seed,
        "samples": args.samples,
        "instance": args.instance,
        "output_index": result.output_index,
        "kind": exp.kind,
        "evaluations_used": exp.evaluations_used,
        "game": {"u_full": result.game.full_value, "u_empty": result.game.empty_value},
        "stderr": _float_list(exp.stderr),
    }
    if exp.kind == "attribution":
        doc["attributions"] = _float_list(exp.scores)
        stderr = exp.stderr if exp.stderr is not None else [None] * len(names)
        doc["plot_data"] = [{"feature": n, "score": float(s), "stderr": None if e is None else float(e)}
                            for n, s, e in zip(names, exp.scores, stderr)]
        if "intercept" in exp.extras:
            doc["intercept"] = exp.extras["intercept"]
        if "normalize" in result.spec.summary.params:
            doc["normalized_attributions"] = _float_list(result.normalized)
            if result.notes.get("normalization"):
                doc["normalization_note"] = result.notes["normalization"]
    else:
        idx = list(exp.selected.indices())
        doc["selection"] = {"indices": idx, "features": [names[i] for i in idx],
                            "objective": exp.extras["objective"]}
    doc["wall_time_ms"] = round((time.perf_counter() - t0) * 1000.0, 3)
    return doc


def cmd_explain(args) -> int:
    _write_json(explain_report(args), args.out)
    return EXIT_OK


def cmd_grid(args) -> int:
    _write_json(grid_report(), args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    data = _load_data(args)
    family = args.model
    if family == "auto":
        family = "logistic" if data.label_kind == CATEGORICAL and _binary_labels(data) else "linear"
    model = _fit_family(family, data, args.max_depth)
    if args.out in (None, "-"):
        _write_json(model_to_dict(model), None)
    else:
        save_model(model, args.out)
    return EXIT_OK


# Verification ------------------------------------------------------------


def verification_strategies(model, data: LabeledDataset, seed: int = 0) -> dict:
    """One subset function per removal strategy, built on ``model`` and ``data``."""
    bg = data.background()
    n_prod = float(bg.n) ** data.dim
    out = {
        "fixed_baseline": rm.fixed_baseline_removal(model, bg.rows.mean(axis=0)),
        "marginal": rm.marginal_removal(model, bg),
        "product_of_marginals": rm.product_of_marginals_removal(
            model, bg, *((rm.EXACT, None) if n_prod <= 1e5 else (rm.SAMPLED, 64))),
        "uniform": rm.uniform_removal(model, rm.FeatureBounds.from_data(bg), 32),
        "replacement_distribution": rm.replacement_distribution_removal(
            model, rm.ReplacementDistributionSet.from_background(bg), 32),
        "conditional_gaussian": rm.conditional_gaussian_removal(model, rm.GaussianSpec.from_data(bg)),
        "conditional_empirical": rm.conditional_empirical_removal(model, bg),
    }
    if data.labels is not None:
        out["tree_distribution"] = rm.tree_distribution_removal(fit_tree(data, max_depth=3))
        out["separate_models"] = rm.separate_models_removal(fit_subset_model_table(data, "linear"))
    return out


def _probe_subsets(F, data: LabeledDataset, rng: np.random.Generator) -> int:
    d = data.dim
    if isinstance(F, rm.ConditionalEmpiricalRemoval):
        # empirical conditioning is defined only on categorical subsets
        cat = [j for j, k in enumerate(data.column_kinds) if k == CATEGORICAL]
        return int(sum(1 << j for j in cat if rng.random() < 0.5))
    return int(rng.integers(0, 1 << d))


def invariance_discrepancy(F, data: LabeledDataset, n_probes: int, seed: int) -> float:
    """Max ``|F(x, S) - F(x', S)|`` over probes where ``x`` and ``x'`` agree on ``S``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        bits = _probe_subsets(F, data, rng)
        s = FeatureSubset(bits, data.dim)
        x = data.features[rng.integers(data.n)]
        other = data.features[rng.integers(data.n)]
        x_alt = np.where(s.mask, x, other)
        probe_seed = int(rng.integers(2**31))
        a, b = F(x, s, probe_seed), F(x_alt, s, probe_seed)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


def extension_discrepancy(F, model, data: LabeledDataset) -> float:
    full = full_mask(data.dim)
    return float(np.max(np.abs(F(data.features, full) - model.predict(data.features))))


def _axiom_residuals(u: SetFunction, seed: int) -> dict:
    """Shapley efficiency, symmetry, null-player and linearity residuals on ``u`` and derived games."""
    d = u.dim
    t = u.table()
    phi = shapley_exact(u).scores
    out = {"efficiency": abs(phi.sum() - (t[-1] - t[0]))}
    rng = np.random.default_rng(seed)
    masks = np.arange(1 << d)
    # null player: a game that ignores feature 0
    null = SetFunction.from_table(t[masks & ~1])
    out["null_player"] = abs(shapley_exact(null).scores[0])
    # symmetry: a game invariant to swapping features 0 and 1
    if d >= 2:
        b0, b1 = masks & 1, (masks >> 1) & 1
        swapped = (masks & ~3) | (b0 << 1) | b1
        sym = SetFunction.from_table(t + t[swapped])
        p = shapley_exact(sym).scores
        out["symmetry"] = abs(p[0] - p[1])
    else:
        out["symmetry"] = 0.0
    other = rng.normal(size=1 << d)
    alpha, beta = rng.normal(size=2)
    combo = shapley_exact(SetFunction.from_table(alpha * t + beta * other)).scores
    lin = alpha * phi + beta * shapley_exact(SetFunction.from_table(other)).scores
    out["linearity"] = float(np.max(np.abs(combo - lin)))
    return out


def run_verify(data: LabeledDataset, model, seed: int = 0, n_probes: int = 200, strategies: dict | None = None,
               emit=print) -> bool:
    """Run invariance, extension, behavior-identity and Shapley-axiom checks; True iff all pass."""
    if data.dim > VERIFY_MAX_DIM:
        raise ConfigError(f"--data: verification is limited to d <= {VERIFY_MAX_DIM}, got {data.dim}")
    strategies = dict(strategies) if strategies is not None else verification_strategies(model, data, seed)
    ok = True
    tol = 1e-12

    def line(name, value, passed, note=""):
        nonlocal ok
        ok &= passed
        status = "pass" if passed else "FAIL"
        emit(f"{name}: {status} max discrepancy {value:.3e}{'  ' + note if note else ''}")

    for name, F in strategies.items():
        f = F.extension_of
        if f is None:
            line(f"check_extension[{name}]", float("inf"), False, "no model extended")
        else:
            line(f"check_extension[{name}]", extension_discrepancy(F, f, data),
                 check_extension(F, f, data.features[: min(data.n, 50)]))
        worst = invariance_discrepancy(F, data, n_probes, seed)
        if not F.is_invariant:
            emit(f"check_invariance[{name}]: non-invariant (expected) max discrepancy {worst:.3e}")
            continue
        line(f"check_invariance[{name}]", worst, worst == 0.0)

    if data.labels is not None:
        loss = bh.LossFunction(bh.CROSS_ENTROPY if model.out_dim >= 2 else bh.SQUARED_ERROR)
        sub = LabeledDataset(data.features[:10], data.labels[:10], column_kinds=data.column_kinds)
        bg = data.background()
        for name, F in (("deterministic", rm.marginal_removal(model, bg)),
                        ("stochastic", rm.uniform_removal(model, rm.FeatureBounds.from_data(bg), 16))):
            report = bh.verify_behavior_identities(F, sub, loss, seed)
            for key, val in report.items():
                line(f"identity[{name}].{key}", val, val < tol)

    F = strategies.get("marginal") or next(iter(strategies.values()))
    u = bh.behavior_prediction(F, data.features[0], 0, seed=seed)
    for key, val in _axiom_residuals(u, derive_seed(seed, 2)).items():
        line(f"shapley_axiom.{key}", val, val < 1e-10)
    emit("verify: " + ("all checks passed" if ok else "FAILED"))
    return ok


def cmd_verify(args) -> int:
    data = _load_data(args)
    model, _ = _resolve_model(args.model, data, "")
    return EXIT_OK if run_verify(data, model, args.seed, args.probes) else EXIT_VERIFY


# Argument parsing --------------------------------------------------------


def _add_data_args(p):
    p.add_argument("--data", help="CSV file")
    p.add_argument("--schema", help="sidecar JSON schema")
    p.add_argument("--columns", help="inline schema: name:kind,name:kind,...")
    p.add_argument("--label", help="label column name (with --columns)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="remex", description="Removal-based feature explanations")
    sub = parser.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("explain", help="explain a model with a preset or an explicit triple")
    _add_data_args(ex)
    ex.add_argument("--model", default="auto", help="family (auto, linear, logistic, tree) or a model JSON file")
    ex.add_argument("--preset", help="published method name, e.g. SAGE or KernelSHAP")
    ex.add_argument("--variant", help="preset variant, e.g. marginal for SHAP")
    for axis in ("removal", "behavior", "summary"):
        ex.add_argument(f"--{axis}", nargs="+", metavar="ID_OR_KEY=VALUE",
                        help=f"{axis} id followed by key=value parameters")
    ex.add_argument("--instance", type=int, help="row index for local behaviors")
    ex.add_argument("--output-index", type=int, help="model output to explain (default: positive class)")
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="default Monte Carlo budget")
    ex.add_argument("--threads", type=int, default=1)
    ex.add_argument("--out", help="report path (default stdout)")
    ex.set_defaults(func=cmd_explain)

    gr = sub.add_parser("grid", help="write the method grid and neighbor listing")
    gr.add_argument("--out")
    gr.set_defaults(func=cmd_grid)

    ve = sub.add_parser("verify", help="run invariance, extension, identity and axiom checks")
    _add_data_args(ve)
    ve.add_argument("--model", default="auto")
    ve.add_argument("--seed", type=int, default=0)
    ve.add_argument("--probes", type=int, default=200)
    ve.set_defaults(func=cmd_verify)

    fi = sub.add_parser("fit", help="fit a model and write it as JSON")
    _add_data_args(fi)
    fi.add_argument("--model", default="auto", choices=MODEL_FAMILIES)
    fi.add_argument("--max-depth", type=int, default=3)
    fi.add_argument("--out")
    fi.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, ParseError, SchemaMismatch) as exc:
        print(f"remex: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RemexError as exc:
        print(f"remex: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
