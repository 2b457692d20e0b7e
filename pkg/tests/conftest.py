import pytest
from hypothesis import settings

from mqttguard.pipeline import Pipeline
from mqttguard.tables import MQTT_ACL, AclRule

settings.register_profile("default", max_examples=200, deadline=None)
settings.load_profile("default")


@pytest.fixture
def open_pipeline():
    """Pipeline with one permit-everything PUBLISH rule."""
    p = Pipeline()
    p.tables.install_rule(MQTT_ACL, AclRule(src_prefix="0.0.0.0/0"))
    return p
