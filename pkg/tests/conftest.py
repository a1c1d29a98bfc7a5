import pytest
from hypothesis import HealthCheck, settings

from winddaq.model import Config, TurbineGeometry, make_record

# one slow CPU: no per-example deadline, no complaints about slow generation
settings.register_profile("ci", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture
def config():
    return Config(geometry=TurbineGeometry(0.5, 1.0))


def rec(t, seq=0, flags=0, cp=0.25, tsr=2.0, wind=6.0, power=30.0):
    """Plausible record with the fields a test usually cares about."""
    return make_record(t, seq, wind, 100.0, 10.472, 5.236, power / 5.236, power,
                       15.0, 101325.0, 75.0, 1.225, cp, tsr, flags)


@pytest.fixture
def make_rec():
    return rec
