"""MQTT-aware ingress enforcement pipeline with a deterministic traffic harness."""

from .control import ControlAPI
from .meter import Color, MeterConfig
from .parser import ParsedPacket, RawFrame, parse_frame
from .pipeline import CloneRecord, DiagMeta, Pipeline, Reason, Verdict, VerdictAction
from .state import ClientState, StateStore, client_index
from .tables import AclRule, GlobalLimits, Ipv4AclEntry, PolicyTables

__version__ = "0.1.0"

__all__ = [
    "AclRule", "ClientState", "CloneRecord", "Color", "ControlAPI", "DiagMeta", "GlobalLimits",
    "Ipv4AclEntry", "MeterConfig", "ParsedPacket", "Pipeline", "PolicyTables", "RawFrame", "Reason",
    "StateStore", "Verdict", "VerdictAction", "client_index", "parse_frame",
]
