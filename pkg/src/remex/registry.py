"""Named method presets and the grid of (removal, behavior, summary) choices."""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Any

from .errors import ConfigError, UnknownPreset

# Axis vocabularies, in grid order. Labels are the ones used to tabulate
# published methods; ``None`` marks a removal label with no tabular implementation.
REMOVAL_LABELS = {
    "Zeros": "fixed_baseline",
    "Default values": "fixed_baseline",
    "Marginalize (marginal)": "marginal",
    "Marginalize (marginals product)": "product_of_marginals",
    "Marginalize (uniform)": "uniform",
    "Marginalize (replacement dist.)": "replacement_distribution",
    "Marginalize (conditional)": "conditional",
    "Tree distribution": "tree_distribution",
    "Separate models": "separate_models",
    "Missingness during training": None,
    "Extend pixel values": None,
    "Blurring": None,
    "Generative model": None,
}
BEHAVIOR_LABELS = {
    "Prediction": "prediction",
    "Prediction loss": "prediction_loss",
    "Prediction mean loss": "prediction_mean_loss",
    "Dataset loss (label)": "dataset_loss_label",
    "Dataset loss (output)": "dataset_loss_output",
}
SUMMARY_LABELS = {
    "Shapley value": "shapley",
    "Remove individual": "remove_individual",
    "Include individual": "include_individual",
    "Linear model": "lime_linear",
    "Mean when included": "mean_when_included",
    "High-value subset": "high_value_subset_constrained",
    "Low-value subset": "low_value_subset",
    "Partitioned subsets": "partitioned_subsets",
}

# removal labels that differ only in which fixed values are plugged in
_FIXED_VALUE_LABELS = ("Zeros", "Default values")

REMOVAL_IDS = ("fixed_baseline", "marginal", "product_of_marginals", "uniform", "replacement_distribution",
               "conditional", "tree_distribution", "separate_models")
BEHAVIOR_IDS = tuple(BEHAVIOR_LABELS.values())
SUMMARY_IDS = ("shapley", "remove_individual", "include_individual", "lime_linear", "mean_when_included",
               "low_value_subset", "minimal_subset_threshold", "high_value_subset_constrained",
               "high_value_subset_regularized", "partitioned_subsets")
LOCAL_BEHAVIORS = ("prediction", "prediction_loss", "prediction_mean_loss")
DATASET_BEHAVIORS = ("dataset_loss_label", "dataset_loss_output")

AUTO = "auto"

# parameters every component accepts, with their unresolved defaults
REMOVAL_DEFAULTS: dict[str, dict[str, Any]] = {
    "fixed_baseline": {"baseline": "mean"},
    "marginal": {"mode": AUTO, "n_samples": AUTO},
    "product_of_marginals": {"mode": AUTO, "n_samples": AUTO},
    "uniform": {"n_samples": AUTO},
    "replacement_distribution": {"n_samples": AUTO, "n_bins": 4},
    "conditional": {"method": "gaussian", "mode": "mean", "n_samples": AUTO},
    "tree_distribution": {},
    "separate_models": {"family": AUTO},
}
BEHAVIOR_DEFAULTS: dict[str, dict[str, Any]] = {
    "prediction": {"link": "identity"},
    "prediction_loss": {"loss": AUTO},
    "prediction_mean_loss": {"loss": AUTO},
    "dataset_loss_label": {"loss": AUTO},
    "dataset_loss_output": {"loss": "squared_error"},
}
SUMMARY_DEFAULTS: dict[str, dict[str, Any]] = {
    "shapley": {"solver": AUTO, "n_samples": AUTO},
    "remove_individual": {},
    "include_individual": {},
    "lime_linear": {"kernel": "uniform", "regularizer": "none", "lam": 0.0, "mode": AUTO, "n_samples": AUTO},
    "mean_when_included": {"mode": "exact", "p": 0.5, "n_samples": AUTO},
    "low_value_subset": {"penalty": 0.5, "solver": AUTO},
    "minimal_subset_threshold": {"threshold_fraction": 0.9, "solver": AUTO},
    "high_value_subset_constrained": {"k": AUTO, "solver": AUTO},
    "high_value_subset_regularized": {"penalty": 0.5, "solver": AUTO},
    "partitioned_subsets": {"lam": 1.0, "penalty": 0.5, "solver": AUTO},
}
_DEFAULTS = {"removal": REMOVAL_DEFAULTS, "behavior": BEHAVIOR_DEFAULTS, "summary": SUMMARY_DEFAULTS}


@dataclass(frozen=True)
class Component:
    """An executable choice along one axis: an id plus its parameters."""

    id: str
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"id": self.id, "params": dict(sorted(self.params.items()))}


@dataclass(frozen=True, order=True)
class GridPosition:
    removal: str
    behavior: str
    summary: str

    def to_dict(self) -> dict:
        return {"removal": self.removal, "behavior": self.behavior, "summary": self.summary}


@dataclass(frozen=True)
class MethodSpec:
    """A (removal, behavior, summary) triple, optionally naming a published method.

    ``tabulated`` holds the method's labels as published; ``position`` is the
    grid cell used for neighbor queries (it differs only where the published
    removal lists alternatives). ``substituted`` marks presets whose original
    removal or explainer is not tabular and is replaced by a stand-in.
    """

    removal: Component
    behavior: Component
    summary: Component
    name: str | None = None
    tabulated: GridPosition | None = None
    position: GridPosition | None = None
    substituted: bool = False
    note: str = ""
    variant: str | None = None
    resolved: bool = False  # parameters carry run-time values, not user input

    def __post_init__(self):
        for axis, ids in (("removal", REMOVAL_IDS), ("behavior", BEHAVIOR_IDS), ("summary", SUMMARY_IDS)):
            comp = getattr(self, axis)
            if comp.id not in ids:
                raise ConfigError(f"{axis}: unknown id {comp.id!r}; choose from {', '.join(ids)}")
            unknown = set(comp.params) - set(_DEFAULTS[axis][comp.id]) - {"normalize"}
            if unknown and not self.resolved:
                raise ConfigError(f"{axis}: unknown parameter(s) {sorted(unknown)} for {comp.id!r}")
        if self.substituted and not self.note:
            raise ConfigError("a substituted preset needs a substitution note")
        if self.position is None:
            object.__setattr__(self, "position", position_of(self.removal, self.behavior, self.summary))

    @property
    def is_local(self) -> bool:
        return self.behavior.id in LOCAL_BEHAVIORS

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "variant": self.variant,
            "tabulated": self.tabulated.to_dict() if self.tabulated else None,
            "position": self.position.to_dict(),
            "removal": self.removal.to_dict(),
            "behavior": self.behavior.to_dict(),
            "summary": self.summary.to_dict(),
            "substituted": self.substituted,
            "substitution_note": self.note or None,
        }


def component(axis: str, cid: str, **params) -> Component:
    """Component with every parameter present, defaults filled in."""
    table = _DEFAULTS[axis]
    if cid not in table:
        raise ConfigError(f"{axis}: unknown id {cid!r}")
    merged = {**table[cid], **params}
    return Component(cid, merged)


def position_of(removal: Component, behavior: Component, summary: Component) -> GridPosition:
    """Grid labels for an explicit triple."""
    if removal.id == "fixed_baseline":
        r = "Zeros" if removal.params.get("baseline") == "zeros" else "Default values"
    else:
        r = next(k for k, v in REMOVAL_LABELS.items() if v == removal.id)
    b = next(k for k, v in BEHAVIOR_LABELS.items() if v == behavior.id)
    s_id = summary.id
    if s_id in ("minimal_subset_threshold", "high_value_subset_constrained", "high_value_subset_regularized"):
        s = "High-value subset"
    else:
        s = next(k for k, v in SUMMARY_LABELS.items() if v == s_id)
    return GridPosition(r, b, s)


def method_spec(removal: str, behavior: str, summary: str, removal_params=None, behavior_params=None,
                summary_params=None) -> MethodSpec:
    """An unnamed spec from explicit component ids."""
    return MethodSpec(
        component("removal", removal, **(removal_params or {})),
        component("behavior", behavior, **(behavior_params or {})),
        component("summary", summary, **(summary_params or {})),
    )


# Presets -----------------------------------------------------------------

_MEAN_BASELINE_NOTE = "image-specific removal replaced by a fixed baseline at the column means"


def _row(name, tab_r, tab_b, tab_s, removal, behavior, summary, *, pos_r=None, substituted=False, note=""):
    return name, GridPosition(tab_r, tab_b, tab_s), GridPosition(pos_r or tab_r, tab_b, tab_s), \
        removal, behavior, summary, substituted, note


def _c(cid, axis, **params):
    return component(axis, cid, **params)


def _r(cid, **p):
    return _c(cid, "removal", **p)


def _b(cid, **p):
    return _c(cid, "behavior", **p)


def _s(cid, **p):
    return _c(cid, "summary", **p)


_PRESET_ROWS = [
    _row("IME (2009)", "Separate models", "Prediction", "Shapley value",
         _r("separate_models"), _b("prediction"), _s("shapley")),
    _row("IME (2010)", "Marginalize (uniform)", "Prediction", "Shapley value",
         _r("uniform"), _b("prediction"), _s("shapley")),
    _row("QII", "Marginalize (marginals product)", "Prediction", "Shapley value",
         _r("product_of_marginals"), _b("prediction"), _s("shapley")),
    _row("SHAP", "Marginalize (conditional/marginal)", "Prediction", "Shapley value",
         _r("conditional"), _b("prediction"), _s("shapley"), pos_r="Marginalize (conditional)"),
    _row("KernelSHAP", "Marginalize (marginal)", "Prediction", "Shapley value",
         _r("marginal"), _b("prediction"), _s("shapley", solver="kernel")),
    _row("TreeSHAP", "Tree distribution", "Prediction", "Shapley value",
         _r("tree_distribution"), _b("prediction"), _s("shapley")),
    _row("LossSHAP", "Marginalize (conditional)", "Prediction loss", "Shapley value",
         _r("conditional"), _b("prediction_loss"), _s("shapley")),
    _row("SAGE", "Marginalize (conditional)", "Dataset loss (label)", "Shapley value",
         _r("conditional"), _b("dataset_loss_label"), _s("shapley")),
    _row("Shapley Net Effects", "Separate models", "Dataset loss (label)", "Shapley value",
         _r("separate_models"), _b("dataset_loss_label"), _s("shapley")),
    _row("Shapley Effects", "Marginalize (conditional)", "Dataset loss (output)", "Shapley value",
         _r("conditional"), _b("dataset_loss_output"), _s("shapley")),
    _row("Permutation Test", "Marginalize (marginal)", "Dataset loss (label)", "Remove individual",
         _r("marginal"), _b("dataset_loss_label"), _s("remove_individual")),
    _row("Conditional Perm. Test", "Marginalize (conditional)", "Dataset loss (label)", "Remove individual",
         _r("conditional"), _b("dataset_loss_label"), _s("remove_individual")),
    _row("Feature Ablation (LOCO)", "Separate models", "Dataset loss (label)", "Remove individual",
         _r("separate_models"), _b("dataset_loss_label"), _s("remove_individual")),
    _row("Univariate Predictors", "Separate models", "Dataset loss (label)", "Include individual",
         _r("separate_models"), _b("dataset_loss_label"), _s("include_individual")),
    _row("L2X", "Missingness during training", "Prediction mean loss", "High-value subset",
         _r("marginal"), _b("prediction_mean_loss"), _s("high_value_subset_constrained"), substituted=True,
         note="train-time missingness replaced by marginal removal; the amortized selector is replaced by direct optimization"),
    _row("INVASE", "Missingness during training", "Prediction mean loss", "High-value subset",
         _r("marginal"), _b("prediction_mean_loss"), _s("high_value_subset_regularized"), substituted=True,
         note="train-time missingness replaced by marginal removal; the amortized selector is replaced by direct optimization"),
    _row("LIME (Images)", "Default values", "Prediction", "Linear model",
         _r("fixed_baseline", baseline="mean"), _b("prediction"), _s("lime_linear")),
    _row("LIME (Tabular)", "Marginalize (replacement dist.)", "Prediction", "Linear model",
         _r("replacement_distribution"), _b("prediction"), _s("lime_linear")),
    _row("PredDiff", "Marginalize (conditional)", "Prediction", "Remove individual",
         _r("conditional"), _b("prediction", link=AUTO), _s("remove_individual")),
    _row("Occlusion", "Zeros", "Prediction", "Remove individual",
         _r("fixed_baseline", baseline="zeros"), _b("prediction"), _s("remove_individual")),
    _row("CXPlain", "Zeros", "Prediction loss", "Remove individual",
         _r("fixed_baseline", baseline="zeros"), _b("prediction_loss"), _s("remove_individual", normalize=AUTO),
         substituted=True,
         note="the learned explainer is replaced by direct computation of the normalized remove-individual scores"),
    _row("RISE", "Zeros", "Prediction", "Mean when included",
         _r("fixed_baseline", baseline="zeros"), _b("prediction"), _s("mean_when_included", mode="sampled")),
    _row("MM", "Default values", "Prediction", "Partitioned subsets",
         _r("fixed_baseline", baseline="mean"), _b("prediction"), _s("partitioned_subsets"), substituted=True,
         note="default values taken as column means; the amortized masking model is replaced by direct optimization"),
    _row("MIR", "Extend pixel values", "Prediction", "High-value subset",
         _r("fixed_baseline", baseline="mean"), _b("prediction"), _s("minimal_subset_threshold"),
         substituted=True, note=_MEAN_BASELINE_NOTE),
    _row("MP", "Blurring", "Prediction", "Low-value subset",
         _r("fixed_baseline", baseline="mean"), _b("prediction"), _s("low_value_subset"),
         substituted=True, note=_MEAN_BASELINE_NOTE),
    _row("EP", "Blurring", "Prediction", "High-value subset",
         _r("fixed_baseline", baseline="mean"), _b("prediction"), _s("high_value_subset_constrained"),
         substituted=True, note=_MEAN_BASELINE_NOTE),
    _row("FIDO-CA", "Generative model", "Prediction", "High-value subset",
         _r("fixed_baseline", baseline="mean"), _b("prediction"), _s("high_value_subset_regularized"),
         substituted=True, note="generative in-filling replaced by a fixed baseline at the column means"),
]

# alternative removals a preset can be run with, by variant name
_VARIANTS = {
    "SHAP": {"conditional": _r("conditional"), "marginal": _r("marginal")},
    "IME (2010)": {"uniform": _r("uniform"), "marginal": _r("marginal")},
}

_ALIASES = {
    "loco": "Feature Ablation (LOCO)",
    "featureablation": "Feature Ablation (LOCO)",
    "permutationtests": "Permutation Test",
    "conditionalpermutationtest": "Conditional Perm. Test",
    "conditionalpermutationtests": "Conditional Perm. Test",
    "conditionalpermtests": "Conditional Perm. Test",
    "univariatepredictor": "Univariate Predictors",
    "fido": "FIDO-CA",
}


def normalize_name(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.lower())


PRESETS: dict[str, MethodSpec] = {}
for _name, _tab, _pos, _rem, _beh, _sum, _sub, _note in _PRESET_ROWS:
    PRESETS[_name] = MethodSpec(_rem, _beh, _sum, name=_name, tabulated=_tab, position=_pos,
                                substituted=_sub, note=_note,
                                variant=next(iter(_VARIANTS[_name])) if _name in _VARIANTS else None)
_LOOKUP = {normalize_name(k): k for k in PRESETS}
_LOOKUP.update(_ALIASES)


def preset_names() -> list[str]:
    return list(PRESETS)


def canonical_name(name: str) -> str:
    try:
        return _LOOKUP[normalize_name(name)]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}") from None


def preset(name: str, variant: str | None = None) -> MethodSpec:
    """The MethodSpec for a published method (case, space and punctuation insensitive).

    ``variant`` selects an alternative removal where the method admits one
    (``SHAP``: conditional or marginal; ``IME (2010)``: uniform or marginal).
    """
    spec = PRESETS[canonical_name(name)]
    if variant is None or variant == spec.variant:
        return spec
    options = _VARIANTS.get(spec.name, {})
    if variant not in options:
        raise ConfigError(f"preset {spec.name!r} has no variant {variant!r}")
    return replace(spec, removal=options[variant], variant=variant)


def with_overrides(spec: MethodSpec, removal=None, behavior=None, summary=None) -> MethodSpec:
    """Copy of ``spec`` with extra parameters merged into each axis."""
    def merge(comp, extra):
        return Component(comp.id, {**comp.params, **extra}) if extra else comp
    return replace(spec, removal=merge(spec.removal, removal), behavior=merge(spec.behavior, behavior),
                   summary=merge(spec.summary, summary))


# Grid ----------------------------------------------------------------------


@dataclass(frozen=True)
class GridCell:
    position: GridPosition
    presets: tuple[str, ...]
    constructible: bool

    def to_dict(self) -> dict:
        return {**self.position.to_dict(), "presets": list(self.presets), "constructible": self.constructible}


def enumerate_grid() -> list[GridCell]:
    """Every (removal, behavior, summary) label combination with its occupying presets."""
    occupants: dict[GridPosition, list[str]] = {}
    for name, spec in PRESETS.items():
        occupants.setdefault(spec.position, []).append(name)
    cells = []
    for r, rid in REMOVAL_LABELS.items():
        for b in BEHAVIOR_LABELS:
            for s in SUMMARY_LABELS:
                pos = GridPosition(r, b, s)
                cells.append(GridCell(pos, tuple(occupants.get(pos, ())), rid is not None))
    return cells


def _removal_family(label: str) -> str:
    return "fixed values" if label in _FIXED_VALUE_LABELS else label


def differing_axes(a: GridPosition, b: GridPosition) -> list[str]:
    """Axes on which two positions differ; zeros and default values count as one removal choice."""
    out = []
    if _removal_family(a.removal) != _removal_family(b.removal):
        out.append("removal")
    if a.behavior != b.behavior:
        out.append("behavior")
    if a.summary != b.summary:
        out.append("summary")
    return out


def neighbors(spec: MethodSpec | str) -> list[tuple[MethodSpec, str | None]]:
    """Presets that differ from ``spec`` along exactly one axis.

    Presets sharing all three choices are also listed, with axis ``None``.
    """
    if isinstance(spec, str):
        spec = preset(spec)
    out = []
    for name, other in PRESETS.items():
        if name == spec.name:
            continue
        diff = differing_axes(spec.position, other.position)
        if len(diff) == 1:
            out.append((other, diff[0]))
        elif not diff:
            out.append((other, None))
    return out


def grid_report() -> dict:
    """Occupancy and neighbor listing in a deterministic order."""
    cells = enumerate_grid()
    return {
        "axes": {
            "removal": [{"label": k, "implemented": v is not None} for k, v in REMOVAL_LABELS.items()],
            "behavior": list(BEHAVIOR_LABELS),
            "summary": list(SUMMARY_LABELS),
        },
        "size": len(cells),
        "cells": [c.to_dict() for c in cells],
        "presets": [
            {**PRESETS[name].to_dict(),
             "neighbors": [{"name": o.name, "axis": axis} for o, axis in neighbors(PRESETS[name])]}
            for name in PRESETS
        ],
    }
