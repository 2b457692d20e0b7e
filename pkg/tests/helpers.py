"""Frame shorthands shared by the test modules."""

from mqttguard import frames as fb
from mqttguard.parser import RawFrame

T0 = 1_700_000_000 * 1_000_000_000
SEC = 1_000_000_000


def at(data: bytes, seconds: float = 0.0) -> RawFrame:
    return RawFrame(data, T0 + int(round(seconds * SEC)))


def connect(src="10.0.0.4", ka=60, t=0.0):
    return at(fb.mqtt_frame(src, fb.mqtt_connect("c", ka)), t)


def publish(src="10.0.0.4", topic="device/sensor/t1", qos=0, t=0.0, payload=b"x" * 8, **kw):
    return at(fb.mqtt_frame(src, fb.mqtt_publish(topic, payload, qos, 1, **kw)), t)


def pingreq(src="10.0.0.4", t=0.0):
    return at(fb.mqtt_frame(src, fb.mqtt_pingreq()), t)


def disconnect(src="10.0.0.4", t=0.0):
    return at(fb.mqtt_frame(src, fb.mqtt_disconnect()), t)
