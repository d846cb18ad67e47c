"""Command-line entry point.

Exit codes are stable for CI use: 0 the requirement is demonstrated (or
the monitor saw nothing alarming), 1 not demonstrated (failed, inconclusive,
or an unexplained shift), 2 invalid input or configuration, 3 ledger
integrity failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import NoReturn

import click

from .audit.config import load_config
from .audit.ledger import AuditLedger, verify_ledger
from .audit.report import AuditReport, SCHEMA_VERSION, render_markdown
from .audit.runner import monitor_step, recertify, run_audit
from .core import canonical_json, load_dataset
from .errors import (ConfigInvalid, DataLoadError, FamilyAlphaExhausted,
                     LedgerCorrupt, StatcertError)

EXIT_PASS = 0
EXIT_NOT_DEMONSTRATED = 1
EXIT_INVALID_INPUT = 2
EXIT_LEDGER_INTEGRITY = 3


def _fail(code: int, message: str) -> NoReturn:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _inconclusive_report(config, reason: str) -> AuditReport:
    return AuditReport({
        "schema_version": SCHEMA_VERSION,
        "verdict": "inconclusive",
        "model_id": config.model_id,
        "reason": reason,
    })


@click.group()
def main() -> None:
    """Statistical certification audits for ML systems."""


@main.command("run")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
def run_cmd(config_path: str) -> None:
    """Initial certification from a config file."""
    try:
        config = load_config(config_path)
    except ConfigInvalid as e:
        _fail(EXIT_INVALID_INPUT, str(e))
    try:
        report = run_audit(config)
    except FamilyAlphaExhausted as e:
        report = _inconclusive_report(config, str(e))
        report.write(config.report_path)
        click.echo(f"inconclusive: {e}")
        sys.exit(EXIT_NOT_DEMONSTRATED)
    except (ConfigInvalid, DataLoadError) as e:
        _fail(EXIT_INVALID_INPUT, str(e))
    except LedgerCorrupt as e:
        _fail(EXIT_LEDGER_INTEGRITY, str(e))
    except StatcertError as e:
        _fail(EXIT_INVALID_INPUT, str(e))
    report.write(config.report_path)
    click.echo(f"verdict: {report.verdict}")
    click.echo(f"report: {config.report_path}")
    click.echo(f"ledger: {config.ledger_path}")
    sys.exit(EXIT_PASS if report.verdict == "pass" else EXIT_NOT_DEMONSTRATED)


@main.command("recertify")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--ledger", "ledger_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Existing certification ledger to extend.")
def recertify_cmd(config_path: str, ledger_path: str) -> None:
    """Test an updated model at the next fallback alpha."""
    try:
        config = load_config(config_path)
    except ConfigInvalid as e:
        _fail(EXIT_INVALID_INPUT, str(e))
    try:
        report, _ = recertify(AuditLedger(ledger_path), config)
    except FamilyAlphaExhausted as e:
        report = _inconclusive_report(config, str(e))
        report.write(config.report_path)
        click.echo(f"inconclusive: {e}")
        sys.exit(EXIT_NOT_DEMONSTRATED)
    except LedgerCorrupt as e:
        _fail(EXIT_LEDGER_INTEGRITY, str(e))
    except (ConfigInvalid, DataLoadError) as e:
        _fail(EXIT_INVALID_INPUT, str(e))
    except StatcertError as e:
        _fail(EXIT_INVALID_INPUT, str(e))
    report.write(config.report_path)
    click.echo(f"verdict: {report.verdict}")
    click.echo(f"report: {config.report_path}")
    sys.exit(EXIT_PASS if report.verdict == "pass" else EXIT_NOT_DEMONSTRATED)


@main.command("monitor")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--window", "window_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Production window (feature columns of the drift reference).")
@click.option("--point-check", "point_check_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Labeled data for classifying a detected shift.")
def monitor_cmd(config_path: str, window_path: str,
                point_check_path: str | None) -> None:
    """One monitoring cycle against the registered reference batch."""
    try:
        config = load_config(config_path)
    except ConfigInvalid as e:
        _fail(EXIT_INVALID_INPUT, str(e))
    try:
        if config.drift is None:
            _fail(EXIT_INVALID_INPUT, "config declares no drift section")
        ref_binding = config.datasets[config.drift.reference]
        window = load_dataset(window_path, ref_binding.feature_columns())
        point_check = None
        if point_check_path is not None:
            primary = config.datasets[config.mprs[0].dataset]
            point_check = load_dataset(point_check_path, primary.columns)
        outcome = monitor_step(AuditLedger(config.ledger_path), config,
                               window, point_check)
    except LedgerCorrupt as e:
        _fail(EXIT_LEDGER_INTEGRITY, str(e))
    except FamilyAlphaExhausted as e:
        _fail(EXIT_NOT_DEMONSTRATED, str(e))
    except StatcertError as e:
        _fail(EXIT_INVALID_INPUT, str(e))
    click.echo(canonical_json(outcome.as_plain()))
    ok = outcome.verdict in ("ok", "shift_benign")
    sys.exit(EXIT_PASS if ok else EXIT_NOT_DEMONSTRATED)


@main.command("verify-ledger")
@click.argument("ledger_path", type=click.Path(dir_okay=False))
def verify_ledger_cmd(ledger_path: str) -> None:
    """Replay the hash chain and alpha recurrence of a ledger."""
    result = verify_ledger(ledger_path)
    click.echo(canonical_json(result))
    sys.exit(EXIT_PASS if result["consistent"] else EXIT_LEDGER_INTEGRITY)


@main.command("report")
@click.option("--path", "report_path", default="audit_report.json",
              type=click.Path(exists=True, dir_okay=False),
              help="Report JSON produced by run/recertify.")
@click.option("--format", "fmt", type=click.Choice(["json", "markdown"]),
              default="json", show_default=True)
def report_cmd(report_path: str, fmt: str) -> None:
    """Render an existing report as JSON or markdown."""
    try:
        payload = json.loads(Path(report_path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        _fail(EXIT_INVALID_INPUT, f"cannot read report: {e}")
    if fmt == "json":
        click.echo(canonical_json(payload))
    else:
        if payload.get("verdict") == "inconclusive" and "checks" not in payload:
            click.echo(f"# Audit report: {payload.get('model_id', '')}\n\n"
                       f"**Verdict: INCONCLUSIVE** — {payload.get('reason', '')}")
        else:
            click.echo(render_markdown(payload))


if __name__ == "__main__":
    main()
