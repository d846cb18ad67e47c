"""End-to-end audit orchestration.

A run is one logical transaction: leakage screens first (a violation gates
everything and spends no alpha), then the requirement family at the alpha
the ledger's fallback recurrence allocates to this entry, then the
informational sections. Reports carry no timestamps, so identical inputs
reproduce identical bytes; wall-clock provenance lives in the ledger.
"""

from __future__ import annotations

import json
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..core import Dataset, canonical_json, load_dataset, sha256_hex
from ..drift import (EncodedBatch, ShiftClassification, ShiftVerdict,
                     batch_from_dataset, classify_shift, multivariate_shift_test)
from ..errors import (ConfigInvalid, DataLoadError, FamilyAlphaExhausted,
                      FamilyMismatch, LedgerCorrupt, NoReferenceBatch,
                      StaleDataReuse, StatcertError)
from ..fairness import GroupedOutcomes, fairness_mpr_check
from ..leakage import (duplicate_check, group_leakage_check, target_proxy_screen,
                       temporal_split_check)
from ..robustness import (SubprocessPredictor, calibrate_threshold, evaluate_ood,
                          fit_ood_scorer, robust_accuracy)
from ..sampling import splitmix64
from ..stattest import evaluate_mpr
from ..uncertainty import (decompose, evaluate_uncertainty_quality, load_ensembles,
                           uncertainty_fallback)
from .config import AuditConfig, load_config
from .ledger import AuditLedger, FallbackState, verify_ledger
from .report import SCHEMA_VERSION, AuditReport


def _load_bound_datasets(config: AuditConfig) -> dict[str, Dataset]:
    out = {}
    for name, binding in config.datasets.items():
        try:
            out[name] = load_dataset(binding.path, binding.columns)
        except (StatcertError, OSError, ValueError) as e:
            raise DataLoadError(f"dataset {name!r} at {binding.path}: {e}") from e
    return out


def _leakage_section(config: AuditConfig, datasets: dict[str, Dataset]):
    settings = config.leakage
    if not settings.enabled:
        return False, {"gate": "skipped", "reports": []}
    train = datasets[settings.train]
    test = datasets[settings.test]
    reports = [duplicate_check(train, test, key=settings.duplicate_key)]
    if settings.group_check:
        reports.append(group_leakage_check(train, test))
    if settings.temporal_check:
        reports.append(temporal_split_check(train, test))
    if settings.proxy_screen:
        reports.append(target_proxy_screen(train, seed=config.seed))
    failed = any(r.severity == "violation" for r in reports)
    return failed, {"gate": "failed" if failed else "passed",
                    "reports": [r.as_plain() for r in reports]}


def _requirement_sections(config: AuditConfig, datasets: dict[str, Dataset],
                          entry_alpha: float):
    """Run every gating requirement at its share of the entry alpha."""
    mpr_rows, fairness_rows, decisions = [], [], []
    all_demonstrated = True
    for j, req in enumerate(config.mprs):
        alpha_j = entry_alpha * req.spec.alpha_share
        metric, test = evaluate_mpr(datasets[req.dataset], req.spec, alpha_j,
                                    seed=splitmix64(config.seed, 1000 + j))
        demonstrated = test.rejected
        all_demonstrated = all_demonstrated and demonstrated
        mpr_rows.append({
            "name": req.name,
            "dataset": req.dataset,
            "metric": req.spec.metric_id,
            "direction": req.spec.direction,
            "observed": metric.value,
            "threshold": req.spec.threshold,
            "n": metric.n,
            "demonstrated": demonstrated,
            "test": test.as_plain(),
        })
        decisions.append({"name": req.name, "p_value": test.p_value,
                          "alpha_used": test.alpha_used, "decision": test.decision})
    for j, req in enumerate(config.fairness):
        alpha_j = entry_alpha * req.alpha_share
        outcomes = GroupedOutcomes.from_dataset(datasets[req.dataset])
        test = fairness_mpr_check(
            outcomes, [(req.metric, req.max_violation)],
            n_bootstrap=req.n_bootstrap, alpha=alpha_j,
            seed=splitmix64(config.seed, 2000 + j))[req.metric]
        demonstrated = test.rejected
        all_demonstrated = all_demonstrated and demonstrated
        fairness_rows.append({
            "name": req.name,
            "dataset": req.dataset,
            "metric": req.metric,
            "observed": test.statistic,
            "threshold": req.max_violation,
            "n": test.n,
            "demonstrated": demonstrated,
            "test": test.as_plain(),
        })
        decisions.append({"name": req.name, "p_value": test.p_value,
                          "alpha_used": test.alpha_used, "decision": test.decision})
    return all_demonstrated, mpr_rows, fairness_rows, decisions


def _scenario_columns(config: AuditConfig) -> dict[str, str]:
    binding = config.datasets[config.ood.validation]
    if config.ood.method == "max_softmax":
        return {c: r for c, r in binding.columns.items() if r == "score"}
    return binding.feature_columns()


def _aux_sections(config: AuditConfig, datasets: dict[str, Dataset]) -> dict:
    checks: dict = {"drift": None, "uncertainty": None, "ood": None,
                    "robustness": None}

    if config.drift is not None:
        ref = datasets[config.drift.reference]
        checks["drift"] = {
            "method": config.drift.method,
            "alpha": config.drift.alpha,
            "reference": config.drift.reference,
            "reference_hash": ref.content_hash,
            "n_reference": ref.n_rows,
            "n_permutations": config.drift.n_permutations,
        }

    if config.uncertainty is not None:
        ensembles = load_ensembles(config.uncertainty.ensembles)
        decomps = [decompose(e) for e in ensembles]
        thresholds = config.uncertainty.abstain_thresholds
        abstained = sum(uncertainty_fallback(e, thresholds) == "abstain"
                        for e in ensembles) if thresholds else 0
        section = {
            "n_predictions": len(decomps),
            "mean_total": float(np.mean([d.total for d in decomps])),
            "mean_aleatoric": float(np.mean([d.aleatoric for d in decomps])),
            "mean_epistemic": float(np.mean([d.epistemic for d in decomps])),
            "abstain_thresholds": dict(sorted(thresholds.items())),
            "abstain_rate": abstained / len(decomps) if decomps else 0.0,
            "flag_quality_auroc": None,
        }
        flags = _correctness_flags(config.uncertainty.ensembles)
        if flags is not None and len(flags) == len(decomps):
            wrong = [not f for f in flags]
            if 2 <= sum(wrong) <= len(wrong) - 2:
                quality = evaluate_uncertainty_quality(
                    decomps, wrong, task="misclassification_detection")
                section["flag_quality_auroc"] = quality.auroc
        checks["uncertainty"] = section

    if config.ood is not None:
        scorer = fit_ood_scorer(datasets[config.ood.reference], config.ood.method,
                                config.ood.params)
        threshold = calibrate_threshold(scorer, datasets[config.ood.validation],
                                        config.ood.target_tpr)
        rows = []
        for sc in config.ood.scenarios:
            ood_ds = load_dataset(sc.path, _scenario_columns(config))
            ev = evaluate_ood(scorer, datasets[config.ood.validation], ood_ds)
            rows.append({"scenario": sc.name, "narrative": sc.narrative,
                         "data_hash": ood_ds.content_hash,
                         "calibrated_threshold": threshold, **ev.as_plain()})
        checks["ood"] = rows

    if config.robustness is not None:
        rs = config.robustness
        command = [str(config.base_dir / c) if (config.base_dir / c).is_file() else c
                   for c in rs.predictor_command]
        with SubprocessPredictor(command) as predictor:
            result = robust_accuracy(predictor, datasets[rs.dataset], rs.epsilon,
                                     rs.norm, rs.attack, rs.budget, seed=config.seed)
        checks["robustness"] = result.as_plain()

    return checks


def _correctness_flags(path: Path) -> list[bool] | None:
    flags = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        value = json.loads(line).get("correct")
        if not isinstance(value, bool):
            return None
        flags.append(value)
    return flags or None


def _build_payload(config: AuditConfig, verdict: str, checks: dict,
                   dataset_hashes: dict, entry_index: int, entry_alpha: float,
                   carried_in: float) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "verdict": verdict,
        "model_id": config.model_id,
        "seed": config.seed,
        "sadd": {**config.as_plain()["sadd"], "content_hash": config.sadd.content_hash},
        "config": config.as_plain(),
        "family": config.family_snapshot(),
        "entry": {"index": entry_index, "alpha_allocated": entry_alpha,
                  "alpha_carried_in": carried_in},
        "dataset_hashes": dict(sorted(dataset_hashes.items())),
        "checks": checks,
        "environment": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def _certification_pass(config: AuditConfig, datasets: dict[str, Dataset],
                        entry_alpha: float):
    """Shared certification body: gate, family, auxiliary sections."""
    gate_failed, leak_section = _leakage_section(config, datasets)
    checks: dict = {"leakage": leak_section, "mpr": [], "fairness": [],
                    "drift": None, "uncertainty": None, "ood": None,
                    "robustness": None}
    if gate_failed:
        return checks, "fail", None, []
    all_demonstrated, mpr_rows, fairness_rows, decisions = _requirement_sections(
        config, datasets, entry_alpha)
    checks["mpr"] = mpr_rows
    checks["fairness"] = fairness_rows
    checks.update(_aux_sections(config, datasets))
    return checks, ("pass" if all_demonstrated else "fail"), all_demonstrated, decisions


def run_audit(config: AuditConfig | str | Path) -> AuditReport:
    """Initial certification: evaluate everything, write ledger entry 0.

    Re-running against an existing ledger is idempotent when the family and
    the bound data are unchanged (the report is regenerated, no entry is
    appended and no alpha is re-spent); anything else is an error, because
    entry 0 is already taken — subsequent evidence goes through recertify.
    """
    if not isinstance(config, AuditConfig):
        config = load_config(config)
    datasets = _load_bound_datasets(config)
    ledger = AuditLedger(config.ledger_path)
    family = config.family_snapshot()
    dataset_hashes = {k: d.content_hash for k, d in datasets.items()}

    rerun = False
    if len(ledger):
        integrity = verify_ledger(ledger)
        if not integrity["consistent"]:
            raise LedgerCorrupt(
                f"entry {integrity['first_inconsistency']}: {integrity['detail']}")
        if ledger.family() != family:
            raise FamilyMismatch("requirement family differs from the one frozen "
                                 "at ledger entry 0")
        if ledger.entries[0]["dataset_hashes"] != dict(sorted(dataset_hashes.items())):
            raise ConfigInvalid("ledger already holds an initial certification on "
                                "different data; use recertify")
        rerun = True

    entry_alpha = FallbackState(0, 0.0).next_alpha(config.family_alpha,
                                                   config.family_weights)
    if entry_alpha <= 0.0:
        raise FamilyAlphaExhausted("first family weight allocates zero alpha")

    checks, verdict, demonstrated, decisions = _certification_pass(
        config, datasets, entry_alpha)
    test_bearing = demonstrated is not None
    if not rerun:
        ledger.append(
            kind="certification",
            model_id=config.model_id,
            family=family,
            dataset_hashes=dataset_hashes,
            gating_hashes=[datasets[n].content_hash
                           for n in config.gating_dataset_names()] if test_bearing else [],
            seed=config.seed,
            test_bearing=test_bearing,
            alpha_allocated=entry_alpha if test_bearing else 0.0,
            alpha_carried_in=0.0,
            alpha_carried_out=entry_alpha if (test_bearing and demonstrated) else 0.0,
            decisions=decisions,
            demonstrated=demonstrated,
            verdict=verdict,
        )
    payload = _build_payload(config, verdict, checks, dataset_hashes,
                             entry_index=0, entry_alpha=entry_alpha, carried_in=0.0)
    return AuditReport(payload)


def recertify(ledger: AuditLedger | str | Path, config: AuditConfig | str | Path,
              updated_model_data: Dataset | None = None) -> tuple[AuditReport, AuditLedger]:
    """Test an updated model at the alpha the fallback recurrence allocates.

    The gating data must be fresh: a content-hash collision with any data a
    prior entry spent alpha on is refused. When updated_model_data is given
    it replaces every gating dataset binding; otherwise the bindings are
    reloaded from disk.
    """
    if not isinstance(config, AuditConfig):
        config = load_config(config)
    if not isinstance(ledger, AuditLedger):
        ledger = AuditLedger(ledger)
    integrity = verify_ledger(ledger)
    if not integrity["consistent"]:
        raise LedgerCorrupt(
            f"entry {integrity['first_inconsistency']}: {integrity['detail']}")
    if len(ledger) == 0:
        raise ConfigInvalid("ledger is empty; run the initial certification first")
    family = config.family_snapshot()
    if ledger.family() != family:
        raise FamilyMismatch("requirement family differs from the one frozen at "
                             "ledger entry 0")

    datasets = _load_bound_datasets(config)
    if updated_model_data is not None:
        for name in config.gating_dataset_names():
            datasets[name] = updated_model_data
    dataset_hashes = {k: d.content_hash for k, d in datasets.items()}
    gating_hashes = {datasets[n].content_hash for n in config.gating_dataset_names()}
    stale = gating_hashes & ledger.prior_gating_hashes()
    if stale:
        raise StaleDataReuse("gating data reuses content already consumed by a "
                             f"prior entry: {sorted(h[:12] for h in stale)}")

    state = ledger.replay_state()
    entry_alpha = state.next_alpha(config.family_alpha, config.family_weights)
    if entry_alpha <= 0.0:
        raise FamilyAlphaExhausted(
            f"fallback allocates zero alpha to test {state.tests_done}; family "
            "weights are spent and nothing was carried forward")

    checks, verdict, demonstrated, decisions = _certification_pass(
        config, datasets, entry_alpha)
    test_bearing = demonstrated is not None
    ledger.append(
        kind="recertification",
        model_id=config.model_id,
        family=family,
        dataset_hashes=dataset_hashes,
        gating_hashes=sorted(gating_hashes) if test_bearing else [],
        seed=config.seed,
        test_bearing=test_bearing,
        alpha_allocated=entry_alpha if test_bearing else 0.0,
        alpha_carried_in=state.carry,
        alpha_carried_out=(entry_alpha if demonstrated else 0.0) if test_bearing
        else state.carry,
        decisions=decisions,
        demonstrated=demonstrated,
        verdict=verdict,
    )
    payload = _build_payload(config, verdict, checks, dataset_hashes,
                             entry_index=len(ledger) - 1, entry_alpha=entry_alpha,
                             carried_in=state.carry)
    return AuditReport(payload), ledger


@dataclass(frozen=True)
class MonitorOutcome:
    verdict: str  # ok | shift_benign | shift_malignant | shift_unclassified
    shift: ShiftVerdict
    classification: ShiftClassification | None
    entry: dict

    def as_plain(self) -> dict:
        out = {"verdict": self.verdict, "shift": self.shift.as_plain(),
               "entry_index": self.entry["index"]}
        if self.classification is not None:
            out["point_check"] = {
                "label": self.classification.label,
                "observed": self.classification.metric.value,
                "test": self.classification.test.as_plain(),
            }
        return out


def _batch_hash(batch: EncodedBatch) -> str:
    return sha256_hex(canonical_json({"data": batch.data.tolist(),
                                      "source": batch.source}))


def monitor_step(ledger: AuditLedger | str | Path, config: AuditConfig | str | Path,
                 production_window: Dataset | EncodedBatch,
                 point_check: Dataset | None = None) -> MonitorOutcome:
    """One monitoring cycle: shift test, then optional labeled point check.

    No shift: verdict ok, nothing spent. Shift without labels: verdict
    shift_unclassified (still recorded). Shift with a labeled point check:
    the primary requirement is re-tested at the next fallback alpha, giving
    shift_benign or shift_malignant; that entry is test-bearing and consumes
    family alpha like a recertification.
    """
    if not isinstance(config, AuditConfig):
        config = load_config(config)
    if not isinstance(ledger, AuditLedger):
        ledger = AuditLedger(ledger)
    integrity = verify_ledger(ledger)
    if not integrity["consistent"]:
        raise LedgerCorrupt(
            f"entry {integrity['first_inconsistency']}: {integrity['detail']}")
    if len(ledger) == 0:
        raise ConfigInvalid("ledger is empty; run the initial certification first")
    family = config.family_snapshot()
    if ledger.family() != family:
        raise FamilyMismatch("requirement family differs from the one frozen at "
                             "ledger entry 0")
    if config.drift is None:
        raise NoReferenceBatch("config declares no drift section, so no reference "
                               "batch is registered")

    datasets = _load_bound_datasets(config)
    reference = batch_from_dataset(datasets[config.drift.reference], "reference")
    if isinstance(production_window, EncodedBatch):
        window = production_window
        window_hash = _batch_hash(window)
    else:
        window = batch_from_dataset(production_window, "production")
        window_hash = production_window.content_hash
    shift = multivariate_shift_test(
        reference, window, alpha=config.drift.alpha, method=config.drift.method,
        seed=config.seed, n_perm=config.drift.n_permutations,
        categorical_dims=config.drift.categorical_dims)

    state = ledger.replay_state()
    classification = None
    decisions: list[dict] = []
    dataset_hashes = {"reference": datasets[config.drift.reference].content_hash,
                      "window": window_hash}
    if shift.aggregate == "no_shift":
        verdict = "ok"
        test_bearing, demonstrated = False, None
        entry_alpha, carried_out = 0.0, state.carry
        gating: list[str] = []
    elif point_check is None:
        verdict = "shift_unclassified"
        test_bearing, demonstrated = False, None
        entry_alpha, carried_out = 0.0, state.carry
        gating = []
    else:
        entry_alpha = state.next_alpha(config.family_alpha, config.family_weights)
        if entry_alpha <= 0.0:
            raise FamilyAlphaExhausted("no alpha available for a point check")
        if point_check.content_hash in ledger.prior_gating_hashes():
            raise StaleDataReuse("point-check data reuses content already consumed "
                                 "by a prior entry")
        primary = config.mprs[0]
        classification = classify_shift(
            shift, point_check, primary.spec, entry_alpha,
            seed=splitmix64(config.seed, 3000 + len(ledger)))
        verdict = "shift_benign" if classification.label == "benign" else "shift_malignant"
        test_bearing = True
        demonstrated = classification.test.rejected
        carried_out = entry_alpha if demonstrated else 0.0
        gating = [point_check.content_hash]
        dataset_hashes["point_check"] = point_check.content_hash
        decisions.append({"name": primary.name,
                          "p_value": classification.test.p_value,
                          "alpha_used": classification.test.alpha_used,
                          "decision": classification.test.decision})

    entry = ledger.append(
        kind="monitor",
        model_id=config.model_id,
        family=family,
        dataset_hashes=dataset_hashes,
        gating_hashes=gating,
        seed=config.seed,
        test_bearing=test_bearing,
        alpha_allocated=entry_alpha if test_bearing else 0.0,
        alpha_carried_in=state.carry,
        alpha_carried_out=carried_out,
        decisions=decisions,
        demonstrated=demonstrated,
        verdict=verdict,
    )
    return MonitorOutcome(verdict, shift, classification, entry)
