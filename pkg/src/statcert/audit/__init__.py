from .config import (AuditConfig, DatasetBinding, DriftSettings,
                     FairnessRequirement, LeakageSettings, MprRequirement,
                     OodScenario, OodSettings, RobustnessSettings,
                     UncertaintySettings, load_config)
from .ledger import AuditLedger, FallbackState, entry_hash, verify_ledger
from .report import SCHEMA_VERSION, AuditReport, render_markdown
from .runner import MonitorOutcome, monitor_step, recertify, run_audit

__all__ = [
    "AuditConfig", "AuditLedger", "AuditReport", "DatasetBinding",
    "DriftSettings", "FairnessRequirement", "FallbackState", "LeakageSettings",
    "MonitorOutcome", "MprRequirement", "OodScenario", "OodSettings",
    "RobustnessSettings", "SCHEMA_VERSION", "UncertaintySettings",
    "entry_hash", "load_config", "monitor_step", "recertify",
    "render_markdown", "run_audit", "verify_ledger",
]
