"""Borrowing methods and the current-only reference analysis."""

from __future__ import annotations

from typing import Any, Callable, Optional

from ..data import StudySet
from ..errors import UnknownMethod
from ..inference import ChainSpec
from .base import CANONICAL_ORDER, METHODS, PosteriorResult, SourceSummary
from .current import fit_current_only
from .dmpp import DmppConfig, dmpp_gamma_log_posterior, fit_dmpp
from .dp import DpConfig, DpState, compute_sbi, fit_ddpm, fit_dpm
from .map import DpmMapConfig, MapConfig, fit_dpm_map, fit_map, fit_robust_map, mixture_posterior
from .mem import MemConfig, MemState, fit_mem
from .pbm import PbmConfig, PbmState, fit_pbm_hs
from .uip import UipConfig, fit_uip

FITTERS: dict[str, Callable[..., PosteriorResult]] = {
    "current_only": fit_current_only,
    "map": fit_map,
    "robust_map": fit_robust_map,
    "dpm_map": fit_dpm_map,
    "dmpp": fit_dmpp,
    "uip": fit_uip,
    "pbm_hs": fit_pbm_hs,
    "mem": fit_mem,
    "dpm": fit_dpm,
    "ddpm": fit_ddpm,
}

CONFIG_TYPES: dict[str, Optional[type]] = {
    "current_only": None,
    "map": MapConfig,
    "robust_map": MapConfig,
    "dpm_map": DpmMapConfig,
    "dmpp": DmppConfig,
    "uip": UipConfig,
    "pbm_hs": PbmConfig,
    "mem": MemConfig,
    "dpm": DpConfig,
    "ddpm": DpConfig,
}


def check_method(name: str) -> str:
    if name not in FITTERS:
        raise UnknownMethod(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return name


def default_config(name: str) -> Any:
    cls = CONFIG_TYPES[check_method(name)]
    return None if cls is None else cls()


def fit_method(name: str, data: StudySet, spec: ChainSpec = ChainSpec(), cfg: Any = None) -> PosteriorResult:
    """Run one method by name; ``cfg`` None means its defaults."""
    fit = FITTERS[check_method(name)]
    if CONFIG_TYPES[name] is None:
        return fit(data, spec)
    return fit(data, spec, cfg if cfg is not None else default_config(name))


__all__ = [
    "CANONICAL_ORDER", "CONFIG_TYPES", "FITTERS", "METHODS", "DmppConfig", "DpConfig", "DpState", "DpmMapConfig",
    "MapConfig", "MemConfig", "MemState", "PbmConfig", "PbmState", "PosteriorResult", "SourceSummary", "UipConfig",
    "check_method", "compute_sbi", "default_config", "dmpp_gamma_log_posterior", "fit_current_only", "fit_ddpm",
    "fit_dmpp", "fit_dpm", "fit_dpm_map", "fit_map", "fit_mem", "fit_method", "fit_pbm_hs", "fit_robust_map",
    "fit_uip", "mixture_posterior",
]
