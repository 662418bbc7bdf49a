import numpy as np
import pytest
from hypothesis import strategies as st

from smgres.model import DROOP, INTEGRAL_DROOP, BranchParams, SmgParams, derivative, table1_params
from smgres.tf import RationalTf

TABLE1_V_STAR = 5962.400245981509  # bisection on the scalar balance, 200 halvings
TABLE1_ZBUS_DC = 0.04512149918919975  # 1 / (sum 1/R_t - P/V*^2)


@pytest.fixture
def table1():
    return table1_params(C_eq=0.02, P_load_base=5e6)


@st.composite
def feasible_systems(draw):
    """Random droop networks with an operating load below half their capability."""
    n_droop = draw(st.integers(1, 4))
    n_int = draw(st.integers(0, 2))
    pos = lambda lo, hi: st.floats(lo, hi, allow_nan=False, allow_infinity=False)  # noqa: E731
    branches = []
    for k in range(n_droop):
        branches.append(BranchParams(f"d{k}", DROOP, L=draw(pos(1e-4, 1e-2)), R=draw(pos(0.02, 1.0)),
                                     r=draw(pos(0.0, 0.1))))
    for k in range(n_int):
        branches.append(BranchParams(f"h{k}", INTEGRAL_DROOP, L=draw(pos(1e-4, 1e-2)),
                                     C_h=draw(pos(0.5, 20.0)), r=draw(pos(0.01, 0.1))))
    v_ref = draw(pos(500.0, 10000.0))
    p = SmgParams(branches, C_eq=draw(pos(0.005, 0.2)), v_ref=v_ref, v_n=v_ref)
    frac = draw(pos(0.0, 0.5))
    p_load = frac * p.droop_conductance * v_ref ** 2 / 4.0
    return p, p_load


def random_system(rng):
    n_droop = rng.integers(1, 5)
    n_int = rng.integers(0, 3)
    branches = [BranchParams(f"d{k}", DROOP, L=10 ** rng.uniform(-4, -2), R=rng.uniform(0.02, 1.0),
                             r=rng.uniform(0.0, 0.1)) for k in range(n_droop)]
    branches += [BranchParams(f"h{k}", INTEGRAL_DROOP, L=10 ** rng.uniform(-4, -2),
                              C_h=rng.uniform(0.5, 20.0), r=rng.uniform(0.01, 0.1)) for k in range(n_int)]
    v_ref = rng.uniform(500, 10000)
    p = SmgParams(branches, C_eq=10 ** rng.uniform(-2.3, -0.7), v_ref=v_ref, v_n=v_ref)
    p_load = rng.uniform(0.0, 0.5) * p.droop_conductance * v_ref ** 2 / 4.0
    return p, p_load


def random_stable_tf(rng, max_order=12):
    """Random strictly proper stable TF with real poles and conjugate pairs."""
    order = int(rng.integers(1, max_order + 1))
    poles, res = [], []
    while len(poles) < order:
        if order - len(poles) >= 2 and rng.random() < 0.6:
            w = 10 ** rng.uniform(-1, 3)
            sigma = -w * 10 ** rng.uniform(-1.5, 0.5)
            r = complex(rng.normal(), rng.normal()) * w
            poles += [complex(sigma, w), complex(sigma, -w)]
            res += [r, r.conjugate()]
        else:
            poles.append(-10 ** rng.uniform(-1, 3))
            res.append(rng.normal() * abs(poles[-1]))
    return RationalTf(poles, res)


def fd_jacobian(params, eq):
    """Central-difference Jacobian of the nonlinear right-hand side.

    Only the bus row is nonlinear (P/v), so a step tied to v_ref keeps truncation
    error ~1e-8 while staying clear of cancellation in the loop equations.
    """
    x0 = eq.state().as_vector()
    n = x0.size
    J = np.zeros((n, n))
    for j in range(n):
        h = 1e-4 * max(abs(x0[j]), params.v_ref)
        xp, xm = x0.copy(), x0.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (derivative(xp, params, eq.P_load_star) - derivative(xm, params, eq.P_load_star)) / (2 * h)
    return J


def linear_step_response(lm, t, du, col=0):
    """Exact LTI step response through the eigendecomposition of A."""
    lam, V = np.linalg.eig(lm.A)
    beta = np.linalg.solve(V, lm.B[:, col]) * du
    c = lm.C[0] @ V
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.expm1(np.outer(t, lam)) / lam
    return (phi * beta * c).sum(axis=1).real


# -- acceptance verdict lines ------------------------------------------------------

def pytest_configure(config):
    config._acceptance_verdicts = []


@pytest.fixture
def verdict(request):
    """Record ``verdict(label, ok, detail)``; lines are printed in the terminal summary."""
    def record(label, ok, detail=""):
        line = f"{label}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else "")
        request.config._acceptance_verdicts.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_verdicts", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
