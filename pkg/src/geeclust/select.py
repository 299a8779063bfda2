"""Two-phase model selection over working correlations and covariate sets.

Phase 1 ranks (covariate subset x correlation structure) candidates by QIC;
the structure of the lowest-QIC candidate wins.  Phase 2 freezes that
structure and ranks covariate subsets by QICu.  Both phases run either
exhaustively over all subsets up to a size cap or as a greedy forward walk
that stops when adding a covariate no longer lowers the criterion.
"""

import logging
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .data import build_design, complete_cases
from .errors import (
    AllCandidatesFailed,
    ConstantFactor,
    NoConvergence,
    NotPositiveDefinite,
    PerfectSeparation,
    RankDeficient,
)
from .gee import (
    AR1,
    Exchangeable,
    Independent,
    MDependent,
    Unstructured,
    fit_gee,
)
from .inference import qic, qic_u

log = logging.getLogger("geeclust.select")

# canonical listing order of the correlation structures
KIND_ORDER = ("independent", "mdependent", "exchangeable", "ar1", "unstructured", "fixed")


@dataclass(frozen=True)
class CandidateSpec:
    """One (covariate subset, structure) combination to fit."""

    covariates: tuple
    structure: object


@dataclass(frozen=True)
class Candidate:
    """Fitted candidate: criterion values plus a convergence flag."""

    structure: str
    covariates: tuple
    p: int
    qic: float
    qic_u: float
    converged: bool


@dataclass(frozen=True)
class SelectionReport:
    """Ranked candidates with the two-phase winners and the step log."""

    candidates: tuple
    best_structure: str
    best_model: tuple
    trace: tuple


def _kind_rank(structure) -> int:
    return KIND_ORDER.index(structure.kind)


def enumerate_candidates(terms, structures, max_size):
    """All non-empty covariate subsets up to `max_size` crossed with structures.

    Deterministic order: subset size, then position-lexicographic subset,
    then structure in canonical listing order.
    """
    names = [t.name for t in terms]
    if not 1 <= max_size <= len(names):
        raise ValueError(f"max_size must be in 1..{len(names)}")
    ranked = sorted(structures, key=_kind_rank)
    specs = []
    for size in range(1, max_size + 1):
        for subset in combinations(range(len(names)), size):
            for structure in ranked:
                specs.append(
                    CandidateSpec(tuple(names[i] for i in subset), structure)
                )
    return specs


def default_structures(ds, mdep_order=2):
    """The five estimable structures, sized to the dataset's occasions."""
    return [
        Independent(),
        MDependent(mdep_order),
        Exchangeable(),
        AR1(),
        Unstructured(ds.max_position),
    ]


def fit_candidate(ds, f, terms, subset, structure, options=None):
    """Fit one candidate; returns a Candidate with NaN criteria on failure."""
    chosen = [t for t in terms if t.name in subset]
    try:
        sub_ds, _ = complete_cases(ds, [t.name for t in chosen])
        x = build_design(sub_ds, chosen)
        fit = fit_gee(x, sub_ds, f, structure, options)
        return Candidate(
            structure=structure.kind,
            covariates=tuple(subset),
            p=x.p,
            qic=qic(fit, x, sub_ds, f),
            qic_u=qic_u(fit, x.p),
            converged=True,
        )
    except (NoConvergence, RankDeficient, NotPositiveDefinite,
            PerfectSeparation, ConstantFactor) as exc:
        log.info("candidate %s/%s failed: %s", structure.kind, subset, exc)
        return Candidate(
            structure=structure.kind,
            covariates=tuple(subset),
            p=len(subset) + 1,
            qic=float("nan"),
            qic_u=float("nan"),
            converged=False,
        )


def _argmin(candidates, key):
    """Lowest criterion among converged candidates; ties favor smaller p,
    then the lexicographically earlier subset."""
    alive = [c for c in candidates if c.converged and np.isfinite(key(c))]
    if not alive:
        return None
    return min(alive, key=lambda c: (key(c), c.p, c.covariates))


def run_selection(ds, f, terms, structures=None, mode="exhaustive",
                  max_size=None, options=None) -> SelectionReport:
    """Run the two-phase search.

    Parameters
    ----------
    ds : ClusteredDataset
        Response already recoded to the modeled event.
    terms : sequence of TermCoding
        Candidate covariate pool.
    structures : sequence of CorrelationStructure, optional
        Defaults to the five estimable kinds.
    mode : "exhaustive" or "stepwise"
        Exhaustive fits every subset-structure pair; stepwise grows the
        subset greedily, stopping when the criterion stops improving.

    Returns
    -------
    SelectionReport
        Every fitted candidate, the winning structure (lowest QIC), the
        winning covariate set under it (lowest QICu), and the step log.
    """
    if mode not in ("exhaustive", "stepwise"):
        raise ValueError("mode must be 'exhaustive' or 'stepwise'")
    if structures is None:
        structures = default_structures(ds)
    names = [t.name for t in terms]
    if max_size is None:
        max_size = len(names)

    if mode == "exhaustive":
        specs = enumerate_candidates(terms, structures, max_size)
        candidates = [
            fit_candidate(ds, f, terms, spec.covariates, spec.structure, options)
            for spec in specs
        ]
        phase1 = _argmin(candidates, lambda c: c.qic)
        if phase1 is None:
            raise AllCandidatesFailed("no candidate converged")
        best_structure = phase1.structure
        under = [c for c in candidates if c.structure == best_structure]
        phase2 = _argmin(under, lambda c: c.qic_u)
        trace = (
            f"Phase 1 (working correlation by QIC): {best_structure} "
            f"at {_fmt_subset(phase1.covariates)} QIC={phase1.qic:.3f}",
            f"Phase 2 (model by QICu): {_fmt_subset(phase2.covariates)} "
            f"QICu={phase2.qic_u:.3f}",
        )
        return SelectionReport(tuple(candidates), best_structure,
                               phase2.covariates, trace)

    # stepwise: greedy forward walk, phase 1 over QIC across all structures
    candidates = []
    trace = []
    structure_by_kind = {s.kind: s for s in sorted(structures, key=_kind_rank)}

    def grow(pool_structures, criterion, label):
        current: tuple = ()
        current_best = float("inf")
        winner = None
        step = 0
        while len(current) < max_size:
            step += 1
            round_candidates = []
            for name in names:
                if name in current:
                    continue
                subset = tuple(n for n in names if n in current or n == name)
                for structure in pool_structures:
                    cand = fit_candidate(ds, f, terms, subset, structure, options)
                    candidates.append(cand)
                    round_candidates.append(cand)
            best = _argmin(round_candidates, criterion)
            if best is None or criterion(best) >= current_best:
                trace.append(
                    f"STEP {step}: no {label} improvement over "
                    f"{current_best:.3f}; stop with {_fmt_subset(current)}"
                )
                break
            added = next(n for n in best.covariates if n not in current)
            current = best.covariates
            current_best = criterion(best)
            winner = best
            trace.append(
                f"STEP {step}: add {added} -> {_fmt_subset(current)} "
                f"[{best.structure}] {label}={current_best:.3f}"
            )
        return winner

    trace.append("Phase 1 (working correlation by QIC)")
    phase1 = grow(list(structure_by_kind.values()), lambda c: c.qic, "QIC")
    if phase1 is None:
        raise AllCandidatesFailed("no candidate converged")
    best_structure = phase1.structure
    trace.append(f"Phase 1 winner: {best_structure}")
    trace.append("Phase 2 (model by QICu)")
    phase2 = grow([structure_by_kind[best_structure]], lambda c: c.qic_u, "QICu")
    trace.append(f"Phase 2 winner: {_fmt_subset(phase2.covariates)}")
    return SelectionReport(
        tuple(candidates), best_structure, phase2.covariates, tuple(trace)
    )


def _fmt_subset(subset) -> str:
    return "(" + ", ".join(subset) + ")" if subset else "(none)"
