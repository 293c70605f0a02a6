"""Run a MethodSpec end to end: build F, then u, then the summary."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import behavior as bh
from . import removal as rm
from . import summary as sm
from .core import PredictionModel, SetFunction, derive_seed
from .data import CATEGORICAL, LabeledDataset
from .errors import ConfigError, NegativeEntry, ZeroSum
from .models import DecisionTreeModel, LogisticModel, fit_subset_model_table
from .registry import AUTO, Component, MethodSpec

# size thresholds used when resolving "auto" parameters
EXACT_MARGINAL_BUDGET = 200_000  # rows x background rows per subset
EXACT_ENUM_DIM = 12
DEFAULT_SAMPLES = 256


@dataclass
class RunResult:
    explanation: sm.Explanation
    spec: MethodSpec
    model: PredictionModel
    game: SetFunction
    output_index: int | None
    normalized: np.ndarray | None = None
    notes: dict = field(default_factory=dict)


def _auto(value, resolved):
    return resolved if value == AUTO else value


def _int_param(comp: Component, key: str, value) -> int:
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{comp.id}.{key}: expected an integer, got {value!r}") from None
    if out < 1:
        raise ConfigError(f"{comp.id}.{key}: must be >= 1")
    return out


def _float_param(comp: Component, key: str, value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{comp.id}.{key}: expected a number, got {value!r}") from None


def _is_classifier(model: PredictionModel) -> bool:
    return model.out_dim >= 2


def _build_removal(comp: Component, model, data: LabeledDataset, n_eval_rows: int, samples: int, threads: int):
    """Returns (subset function, model actually explained, resolved params)."""
    p = dict(comp.params)
    bg = data.background()
    kind = comp.id
    if kind == "separate_models":
        family = p["family"]
        if family == AUTO:
            categorical = data.label_kind == CATEGORICAL
            family = "logistic" if isinstance(model, LogisticModel) or (model is None and categorical) else "linear"
        if family not in ("linear", "logistic"):
            raise ConfigError(f"separate_models.family: expected linear or logistic, got {family!r}")
        p["family"] = family
        F = rm.separate_models_removal(fit_subset_model_table(data, family, threads=threads))
        return F, F.extension_of, p
    if kind == "tree_distribution":
        if not isinstance(model, DecisionTreeModel):
            raise ConfigError("model: tree_distribution removal needs a decision tree model")
        return rm.tree_distribution_removal(model), model, p
    if model is None:
        raise ConfigError("model: no model supplied")
    if model.dim != data.dim:
        raise ConfigError(f"model: expects {model.dim} features, data has {data.dim}")
    if "n_samples" in p:
        p["n_samples"] = _int_param(comp, "n_samples", _auto(p["n_samples"], samples))
    if kind == "fixed_baseline":
        base = p["baseline"]
        if base == "zeros":
            values = np.zeros(data.dim)
        elif base == "mean":
            values = bg.rows.mean(axis=0)
        else:
            values = np.asarray(base, dtype=float)
        return rm.fixed_baseline_removal(model, values), model, p
    if kind == "marginal":
        p["mode"] = _auto(p["mode"], rm.EXACT if n_eval_rows * bg.n <= EXACT_MARGINAL_BUDGET else rm.SAMPLED)
        if p["mode"] == rm.EXACT:
            p["n_samples"] = None
        return rm.marginal_removal(model, bg, p["mode"], p["n_samples"]), model, p
    if kind == "product_of_marginals":
        terms = float(bg.n) ** data.dim
        p["mode"] = _auto(p["mode"], rm.EXACT if n_eval_rows * terms <= EXACT_MARGINAL_BUDGET else rm.SAMPLED)
        if p["mode"] == rm.EXACT:
            p["n_samples"] = None
        return rm.product_of_marginals_removal(model, bg, p["mode"], p["n_samples"]), model, p
    if kind == "uniform":
        return rm.uniform_removal(model, rm.FeatureBounds.from_data(bg), p["n_samples"]), model, p
    if kind == "replacement_distribution":
        p["n_bins"] = _int_param(comp, "n_bins", p["n_bins"])
        q = rm.ReplacementDistributionSet.from_background(bg, p["n_bins"])
        return rm.replacement_distribution_removal(model, q, p["n_samples"]), model, p
    if kind == "conditional":
        if p["method"] == "empirical":
            p.pop("n_samples")
            p.pop("mode")
            return rm.conditional_empirical_removal(model, bg), model, p
        if p["method"] != "gaussian":
            raise ConfigError(f"conditional.method: expected gaussian or empirical, got {p['method']!r}")
        if p["mode"] == rm.MEAN_PLUGIN:
            p["n_samples"] = None
        elif p["mode"] != rm.SAMPLED:
            raise ConfigError(f"conditional.mode: expected mean or sampled, got {p['mode']!r}")
        g = rm.GaussianSpec.from_data(bg)
        return rm.conditional_gaussian_removal(model, g, p["mode"], p["n_samples"]), model, p
    raise ConfigError(f"removal: unknown id {kind!r}")


def _loss(comp: Component, p: dict, model) -> bh.LossFunction:
    name = _auto(p["loss"], bh.CROSS_ENTROPY if _is_classifier(model) else bh.SQUARED_ERROR)
    if name not in (bh.SQUARED_ERROR, bh.CROSS_ENTROPY):
        raise ConfigError(f"{comp.id}.loss: expected squared_error or cross_entropy, got {name!r}")
    p["loss"] = name
    return bh.LossFunction(name)


def _build_behavior(comp: Component, F, model, data: LabeledDataset, instance, output_index, seed, threads):
    p = dict(comp.params)
    kind = comp.id
    if kind in ("prediction", "prediction_loss", "prediction_mean_loss"):
        if instance is None:
            raise ConfigError(f"instance: behavior {kind!r} explains one input and needs an instance index")
        if not 0 <= instance < data.n:
            raise ConfigError(f"instance: index {instance} out of range for {data.n} rows")
        x = data.features[instance]
    elif instance is not None:
        raise ConfigError(f"instance: behavior {kind!r} is dataset-level and takes no instance index")
    if kind == "prediction":
        link = _auto(p["link"], bh.LOGODDS if _is_classifier(model) else bh.IDENTITY)
        if link not in (bh.IDENTITY, bh.LOGODDS):
            raise ConfigError(f"prediction.link: expected identity or logodds, got {link!r}")
        p["link"] = link
        if not 0 <= output_index < F.out_dim:
            raise ConfigError(f"output_index: {output_index} out of range for {F.out_dim} outputs")
        return bh.behavior_prediction(F, x, output_index, bh.LinkFunction(link), seed, threads), p
    if data.labels is None and kind != "dataset_loss_output":
        raise ConfigError(f"data: behavior {kind!r} needs labels")
    loss = _loss(comp, p, model)
    if kind == "prediction_loss":
        return bh.behavior_prediction_loss(F, x, data.labels[instance], loss, seed, threads), p
    if kind == "prediction_mean_loss":
        if data.label_distribution is not None:
            p["label_distribution"] = "supplied"
            return bh.behavior_prediction_mean_loss(F, x, data.label_distribution[instance], loss, seed, threads), p
        # no distribution supplied: point mass at the observed label
        p["label_distribution"] = "point_mass"
        y = data.labels[instance]
        return bh.behavior_prediction_mean_loss(F, x, [1.0], loss, seed, threads, support=[y]), p
    if kind == "dataset_loss_label":
        return bh.behavior_dataset_loss_label(F, data, loss, seed, threads), p
    if kind == "dataset_loss_output":
        return bh.behavior_dataset_loss_output(F, data, loss, seed, threads), p
    raise ConfigError(f"behavior: unknown id {kind!r}")


def _solver(comp: Component, p: dict, d: int) -> str:
    solver = _auto(p["solver"], sm.EXHAUSTIVE if d <= EXACT_ENUM_DIM else sm.GREEDY)
    if solver not in (sm.EXHAUSTIVE, sm.GREEDY):
        raise ConfigError(f"{comp.id}.solver: expected exhaustive or greedy, got {solver!r}")
    p["solver"] = solver
    return solver


def _run_summary(comp: Component, u: SetFunction, samples: int, plan_seed: int):
    p = dict(comp.params)
    p.pop("normalize", None)
    d = u.dim
    kind = comp.id
    if "n_samples" in p:
        p["n_samples"] = _int_param(comp, "n_samples", _auto(p["n_samples"], samples))
    plan = sm.SamplingPlan(p["n_samples"], plan_seed) if "n_samples" in p else None

    def scale():
        return abs(u.full_value - u.empty_value) / d

    if kind == "shapley":
        solver = _auto(p["solver"], "exact" if d <= EXACT_ENUM_DIM else "permutation")
        p["solver"] = solver
        if solver == "exact":
            p["n_samples"] = None
            return sm.shapley_exact(u), p
        if solver == "permutation":
            plan = sm.SamplingPlan(max(plan.n_samples, 2), plan_seed)
            p["n_samples"], p["seed"] = plan.n_samples, plan_seed
            return sm.shapley_permutation_sample(u, plan), p
        if solver == "kernel":
            mode = sm.FULL if d <= sm.MAX_REGRESSION_DIM else sm.SAMPLED
            p["mode"] = mode
            if mode == sm.FULL:
                p["n_samples"] = None
            else:
                p["seed"] = plan_seed
            return sm.shapley_kernel_regression(u, mode, plan), p
        raise ConfigError(f"shapley.solver: expected exact, permutation or kernel, got {solver!r}")
    if kind == "remove_individual":
        return sm.remove_individual(u), p
    if kind == "include_individual":
        return sm.include_individual(u), p
    if kind == "lime_linear":
        mode = _auto(p["mode"], sm.FULL if d <= EXACT_ENUM_DIM else sm.SAMPLED)
        p["mode"] = mode
        if mode == sm.FULL:
            p["n_samples"] = None
        else:
            p["seed"] = plan_seed
        try:
            weights = sm.KernelWeights(p["kernel"])
            reg = sm.Regularizer(p["regularizer"], _float_param(comp, "lam", p["lam"]))
        except ValueError as exc:
            raise ConfigError(f"lime_linear: {exc}") from None
        intercept, exp = sm.lime_linear(u, weights, reg, mode, plan)
        return exp, p
    if kind == "mean_when_included":
        prob = _float_param(comp, "p", p["p"])
        if not 0 < prob < 1:
            raise ConfigError("mean_when_included.p: must lie in (0, 1)")
        if p["mode"] == "exact":
            p["n_samples"] = None
            return sm.mean_when_included(u, sm.EXACT, prob), p
        if p["mode"] != "sampled":
            raise ConfigError(f"mean_when_included.mode: expected exact or sampled, got {p['mode']!r}")
        p["seed"] = plan_seed
        return sm.mean_when_included(u, sm.SAMPLED, plan=sm.SamplingPlan(plan.n_samples, plan_seed, prob)), p
    if kind == "low_value_subset":
        solver = _solver(comp, p, d)
        p["lam"] = _float_param(comp, "penalty", p["penalty"]) * scale()
        return sm.low_value_subset(u, p["lam"], solver), p
    if kind == "minimal_subset_threshold":
        solver = _solver(comp, p, d)
        frac = _float_param(comp, "threshold_fraction", p["threshold_fraction"])
        # keep at least ``frac`` of the gap between the empty and full game values
        p["threshold"] = u.full_value - (1.0 - frac) * abs(u.full_value - u.empty_value)
        return sm.minimal_subset_threshold(u, p["threshold"], solver), p
    if kind == "high_value_subset_constrained":
        solver = _solver(comp, p, d)
        k = _auto(p["k"], max(1, d // 2))
        try:
            p["k"] = int(k)
        except (TypeError, ValueError):
            raise ConfigError(f"high_value_subset_constrained.k: expected an integer, got {k!r}") from None
        if not 0 <= p["k"] <= d:
            raise ConfigError(f"high_value_subset_constrained.k: must lie in [0, {d}]")
        return sm.high_value_subset_constrained(u, p["k"], solver), p
    if kind == "high_value_subset_regularized":
        solver = _solver(comp, p, d)
        p["lam"] = _float_param(comp, "penalty", p["penalty"]) * scale()
        return sm.high_value_subset_regularized(u, p["lam"], solver), p
    if kind == "partitioned_subsets":
        solver = _solver(comp, p, d)
        lam = _float_param(comp, "lam", p["lam"])
        p["gamma"] = _float_param(comp, "penalty", p["penalty"]) * scale()
        return sm.partitioned_subsets(u, lam, p["gamma"], solver), p
    raise ConfigError(f"summary: unknown id {kind!r}")


def run_method(spec: MethodSpec, model: PredictionModel | None, data: LabeledDataset, instance: int | None = None,
               output_index: int | None = None, seed: int = 0, samples: int = DEFAULT_SAMPLES,
               threads: int = 1) -> RunResult:
    """Execute ``spec`` and return the explanation plus the fully resolved spec."""
    local = spec.is_local
    n_eval_rows = 1 if local else data.n
    F, f, rp = _build_removal(spec.removal, model, data, n_eval_rows, samples, threads)
    if output_index is None:
        output_index = 1 if F.out_dim == 2 else 0
    u, bp = _build_behavior(spec.behavior, F, f, data, instance, output_index, seed, threads)
    exp, sp = _run_summary(spec.summary, u, samples, derive_seed(seed, 1))

    normalized = None
    notes = {}
    norm = spec.summary.params.get("normalize")
    if norm not in (None, False, "false", "no"):
        sp["normalize"] = norm
        if exp.scores is None:
            raise ConfigError("normalize: only attribution summaries can be normalized")
        try:
            normalized = sm.normalize_attributions(exp.scores)
        except (ZeroSum, NegativeEntry) as exc:
            if norm != AUTO:
                raise
            notes["normalization"] = str(exc)

    resolved = replace(
        spec,
        removal=Component(spec.removal.id, rp),
        behavior=Component(spec.behavior.id, bp),
        summary=Component(spec.summary.id, sp),
        resolved=True,
    )
    return RunResult(exp, resolved, f, u, output_index if spec.behavior.id == "prediction" else None,
                     normalized, notes)
