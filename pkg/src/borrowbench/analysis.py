"""Run a set of methods on one study and attach EHSS to each borrowing analysis."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Optional, Sequence

from .data import Endpoint, StudySet
from .errors import MissingSigmaRef
from .ess import EssResult, MixtureApprox, posterior_ess
from .inference import ChainSpec
from .methods import CANONICAL_ORDER, METHODS, check_method, fit_method
from .methods.base import PosteriorResult

log = logging.getLogger(__name__)


@dataclass
class MethodRun:
    result: PosteriorResult
    ess: Optional[EssResult] = None
    mixture: Optional[MixtureApprox] = None

    @property
    def method(self) -> str:
        return self.result.method


def resolve_methods(methods: str | Sequence[str]) -> list[str]:
    """``"all"`` expands to the figure order; otherwise names are validated
    and de-duplicated in the given order."""
    if isinstance(methods, str):
        methods = list(CANONICAL_ORDER) if methods.strip() == "all" else [m.strip() for m in methods.split(",")]
    out = []
    for m in methods:
        if m == "all":
            out.extend(x for x in CANONICAL_ORDER if x not in out)
        elif check_method(m) not in out:
            out.append(m)
    if not out:
        raise ValueError("no methods selected")
    return out


def resolve_sigma_ref(data: StudySet, sigma_ref: Optional[float]) -> Optional[float]:
    """Continuous default: the observed SD of the current control arm."""
    if data.endpoint is Endpoint.BINARY:
        return None
    if sigma_ref is None:
        sigma_ref = getattr(data.current_control, "sd", None)
    if sigma_ref is None or not sigma_ref > 0:
        raise MissingSigmaRef("sigma_ref is required for a continuous endpoint (no current-control sd available)")
    return float(sigma_ref)


def run_method(name: str, data: StudySet, spec: ChainSpec, cfg: Any = None,
               sigma_ref: Optional[float] = None, mixture_components: int = 3,
               em_restarts: int = 20) -> MethodRun:
    result = fit_method(name, data, spec, cfg)
    if name == "current_only":
        return MethodRun(result)
    ess, approx = posterior_ess(result.theta_cc_draws, data.endpoint, data.n_cc,
                                resolve_sigma_ref(data, sigma_ref), mixture_components, em_restarts, spec.seed)
    return MethodRun(result, ess, approx)


def run_methods(data: StudySet, methods: str | Sequence[str] = "all", spec: ChainSpec = ChainSpec(),
                configs: Optional[dict[str, Any]] = None, sigma_ref: Optional[float] = None,
                mixture_components: int = 3, em_restarts: int = 20) -> list[MethodRun]:
    """Fit each method in turn. Chains inside a fit may run in parallel; fits
    themselves run one after another."""
    configs = configs or {}
    names = resolve_methods(methods)
    sigma_ref = resolve_sigma_ref(data, sigma_ref)
    runs = []
    for name in names:
        log.info("fitting %s", name)
        runs.append(run_method(name, data, spec, configs.get(name), sigma_ref, mixture_components, em_restarts))
    return runs


__all__ = ["METHODS", "MethodRun", "resolve_methods", "resolve_sigma_ref", "run_method", "run_methods"]
