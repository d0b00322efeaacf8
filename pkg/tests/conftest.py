import math

import pytest

from spinreadout.core import EmitterParams

GAMMA = 1.0 / 4.5e-9
LAMBDA = 2244.0


def signal_eta(target: float, p: float = 3130.0, p_sat: float = 313.0, tau: float = 50e-6,
               gamma: float = GAMMA, lam: float = LAMBDA) -> float:
    """Efficiency giving ``target`` mean signal clicks in a bright readout."""
    s = p / p_sat
    R = gamma / 2 * s / (1 + s)
    return target / ((lam + 1) * -math.expm1(-R / (lam + 1) * tau))


@pytest.fixture
def emitter():
    return EmitterParams(gamma=GAMMA, lambda_cyc=LAMBDA, p_sat=313.0, eta=0.992e-3, noise_a=4000.0)
