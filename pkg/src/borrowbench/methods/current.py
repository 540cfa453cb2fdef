from __future__ import annotations

import math

import numpy as np

from ..conjugate import beta_posterior_update, normal_posterior_update
from ..data import Endpoint, StudySet
from ..inference import ChainSpec, chain_seeds, make_rng
from .base import UNIFORM_BETA, VAGUE_NORMAL, PosteriorResult, diagnose, treatment_draws


def fit_current_only(data: StudySet, spec: ChainSpec = ChainSpec()) -> PosteriorResult:
    """Reference analysis using the current trial alone (no borrowing)."""
    cc = data.current_control
    if data.endpoint is Endpoint.BINARY:
        post = beta_posterior_update(UNIFORM_BETA, cc.n, cc.y)

        def draw(rng):
            return rng.beta(post.a, post.b, spec.n_keep)
        meta = {"posterior": {"family": "beta", "a": post.a, "b": post.b}}
    else:
        post = normal_posterior_update(VAGUE_NORMAL, cc.mean, cc.se)
        sd = math.sqrt(post.v)

        def draw(rng):
            return rng.normal(post.m, sd, spec.n_keep)
        meta = {"posterior": {"family": "normal", "mean": post.m, "var": post.v}}
    chains = np.stack([draw(make_rng(s)) for s in chain_seeds(spec.seed, spec.n_chains)])
    return PosteriorResult(
        method="current_only",
        endpoint=data.endpoint,
        source_labels=data.labels,
        theta_cc_draws=chains.reshape(-1),
        theta_ct_draws=treatment_draws(data, spec),
        diagnostics=diagnose({"theta_cc": chains}),
        metadata=meta,
    )
