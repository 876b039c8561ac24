"""Load balancing with sparse server-to-balancer communication."""

from .approx import ApproxAlgo, EmulatedQueue, approximation_error
from .comm import CommPattern, MessageEvent, relative_communication
from .env import EnvConfig, run, run_event_engine, run_slot_engine
from .metrics import MetricsLog, ccdf, workload_gap
from .routing import Policy, PolicyBundle

__version__ = "0.1.0"
