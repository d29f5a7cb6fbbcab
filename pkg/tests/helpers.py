"""Shared builders and reference constants for the test suite."""

import numpy as np

from meantau.problem import (
    ControlPolicy,
    ControlSegment,
    ControlSet,
    CostSpec,
    LinearDynamics,
    ProblemSpec,
    TargetCoefficients,
    TargetDiffusion,
)

# Reference values for the default wealth-target parameters, frozen from an
# independent high-precision root solve of the mean-wealth equation.
TAU_REF = 10.922845913817808
T1_REF = 3.209596297578117
T2_REF = 7.672467323862309


def scalar_spec(
    a=0.5,
    b=1.0,
    c_coef=0.0,
    d_coef=0.1,
    x0=1.0,
    e1=0.0,
    e2=-1.0,
    e3=0.0,
    e4=0.5,
    y0=2.0,
    g_state=0.0,
    g_control=0.0,
    lower=0.2,
    upper=1.5,
    horizon=6.0,
    eps=0.0,
    cost=None,
) -> ProblemSpec:
    """One-state, one-control, one-noise problem with adjustable rows."""
    dynamics = LinearDynamics(A=[[a]], B=[[b]], C=[[[c_coef]]], D=[[[d_coef]]], x0=[x0])
    diffusion = None
    if g_state or g_control:
        diffusion = TargetDiffusion(
            coef_mean=[[0.0]], coef_state=[[g_state]], coef_control=[[g_control]]
        )
    target = TargetCoefficients(E1=[e1], E2=[e2], E3=[e3], E4=[e4], y0=y0, diffusion=diffusion)
    if cost is None:
        cost = CostSpec.time_optimal(1, 1)
    return ProblemSpec(dynamics, target, cost, ControlSet([lower], [upper]), horizon, eps)


def never_crossing_spec(horizon=1.0) -> ProblemSpec:
    """Monitoring level far above anything the drift can remove in time."""
    return scalar_spec(a=0.1, b=0.5, e2=0.0, e4=-0.01, y0=50.0, horizon=horizon)


def piecewise_constant(values, edges) -> ControlPolicy:
    """Step policy taking values[i] on [edges[i], edges[i+1])."""
    segs = [
        ControlSegment.constant(a, b, np.atleast_1d(v))
        for v, a, b in zip(values, edges[:-1], edges[1:])
    ]
    return ControlPolicy(segs)
