"""Scenario files, sweep execution, metrics records, and replay.

Scenario file (JSON, schema_version 1):

    {
      "schema_version": 1,
      "protocol": "ba-with-predictions",
      "variant": "unauthenticated",
      "value_domain": [0, 1],
      "params": {},
      "axes": {
        "n": [4, 7],
        "t": "max",                    # or list of ints
        "f": [0, 1, "half", "max"],    # ints, "half" (t//2), "max" (t)
        "error_budget": [0, "n", "4n"],# ints or "<k>n"
        "allocation": ["adversarial-worst"],
        "adversary": "catalog",        # or list of names / {name, params}
        "inputs": ["alternating"],     # pattern or explicit list
        "fault_placement": ["lowest"],
        "seeds": [1, 2, 3, 4, 5]
      }
    }

The sweep is the cross-product of the axes.  Infeasible points (budget not
realizable, f > t, duplicate f after resolution) are reported and skipped,
never silently dropped.  One metrics record (schema_version 1) is emitted
per executed point as a JSON line; records are byte-reproducible from the
point alone, which `replay` checks.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from . import predictions
from .adversaries import strategy_catalog
from .agreement import (
    compute_alpha,
    conditional_round_budget,
    wrapper_phase_count,
    wrapper_rounds_through_phase,
)
from .blocks import es_rounds_needed
from .engine import run_execution
from .errors import ConfigurationError, ScenarioFileError
from .scenario import AUTHENTICATED, UNAUTHENTICATED, AdversarySpec, Scenario
from .verify import Verdict, all_pass, verify_execution

SCHEMA_VERSION = 1
WORKERS_ENV = "BYZPRED_WORKERS"

INPUT_PATTERNS = ("unanimous-0", "unanimous-1", "alternating", "split-half")


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return 1


# ---------------------------------------------------------------------------
# Sweep point expansion
# ---------------------------------------------------------------------------

@dataclass
class SweepPoint:
    index: int
    scenario: Scenario
    protocol: str
    params: Dict[str, Any]

    def to_json_dict(self):
        return {
            "index": self.index,
            "scenario": self.scenario.to_json_dict(),
            "protocol": self.protocol,
            "params": self.params,
        }


@dataclass
class SkippedPoint:
    index: int
    reason: str
    description: Dict[str, Any]


def resolve_t(spec, n: int, variant: str) -> int:
    if spec == "max":
        if variant == UNAUTHENTICATED:
            return (n - 1) // 3
        return max((n - 1) // 2 - 1, 0)
    return int(spec)


def resolve_f(spec, t: int) -> int:
    if spec == "half":
        return t // 2
    if spec == "max":
        return t
    return int(spec)


def resolve_budget(spec, n: int) -> int:
    if isinstance(spec, str):
        m = re.fullmatch(r"(\d*)n", spec)
        if not m:
            raise ScenarioFileError(f"bad error budget spec {spec!r}")
        return (int(m.group(1)) if m.group(1) else 1) * n
    return int(spec)


def fault_ids(n: int, f: int, placement: str) -> frozenset:
    if f == 0:
        return frozenset()
    if placement == "lowest":
        return frozenset(range(1, f + 1))
    if placement == "highest":
        return frozenset(range(n - f + 1, n + 1))
    if placement == "spread":
        ids = sorted({1 + (i * n) // f for i in range(f)})
        pool = [p for p in range(1, n + 1) if p not in ids]
        while len(ids) < f:
            ids.append(pool.pop(0))
        return frozenset(ids[:f])
    raise ScenarioFileError(f"unknown fault placement {placement!r}")


def input_vector(spec, n: int, domain: Tuple[Any, ...]) -> Tuple[Any, ...]:
    if isinstance(spec, (list, tuple)):
        if len(spec) != n:
            raise ScenarioFileError(f"explicit inputs need {n} entries, got {len(spec)}")
        return tuple(spec)
    if spec == "unanimous-0":
        return (domain[0],) * n
    if spec == "unanimous-1":
        return (domain[-1],) * n
    if spec == "alternating":
        return tuple(domain[i % len(domain)] for i in range(n))
    if spec == "split-half":
        return tuple(domain[0] if i < n // 2 else domain[-1] for i in range(n))
    raise ScenarioFileError(f"unknown input pattern {spec!r}")


def resolve_adversaries(spec) -> List[AdversarySpec]:
    if spec == "catalog":
        return strategy_catalog()
    out = []
    for item in spec:
        if isinstance(item, str):
            out.append(AdversarySpec.make(item))
        else:
            out.append(AdversarySpec.make(item["name"], item.get("params")))
    return out


def load_sweep_file(path: str) -> Dict[str, Any]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioFileError(str(exc.msg), line=exc.lineno, column=exc.colno) from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ScenarioFileError(
            f"unsupported schema_version {doc.get('schema_version')!r}, expected {SCHEMA_VERSION}"
        )
    return doc


def expand_sweep(doc: Dict[str, Any]) -> Tuple[List[SweepPoint], List[SkippedPoint]]:
    protocol = doc.get("protocol", "ba-with-predictions")
    variants = doc.get("variant", UNAUTHENTICATED)
    if isinstance(variants, str):
        variants = [variants]
    domain = tuple(doc.get("value_domain", (0, 1)))
    params = doc.get("params", {})
    axes = doc.get("axes", {})
    ns = axes.get("n", [4])
    t_specs = axes.get("t", "max")
    if not isinstance(t_specs, list):
        t_specs = [t_specs]
    f_specs = axes.get("f", [0])
    budgets = axes.get("error_budget", [0])
    allocations = axes.get("allocation", ["concentrated-on-faulty"])
    adversaries = resolve_adversaries(axes.get("adversary", ["silent"]))
    inputs = axes.get("inputs", ["alternating"])
    placements = axes.get("fault_placement", ["lowest"])
    seeds = axes.get("seeds", [0])

    points: List[SweepPoint] = []
    skipped: List[SkippedPoint] = []
    index = 0
    for variant in variants:
        for n in ns:
            for t_spec in t_specs:
                t = resolve_t(t_spec, n, variant)
                fs = []
                for f_spec in f_specs:
                    f = resolve_f(f_spec, t)
                    if f not in fs:
                        fs.append(f)
                for f in fs:
                    for budget_spec in budgets:
                        budget = resolve_budget(budget_spec, n)
                        for allocation in allocations:
                            for adv in adversaries:
                                for input_spec in inputs:
                                    for placement in placements:
                                        for seed in seeds:
                                            desc = {
                                                "variant": variant,
                                                "n": n,
                                                "t": t,
                                                "f": f,
                                                "error_budget": budget,
                                                "allocation": allocation,
                                                "adversary": adv.name,
                                                "inputs": input_spec,
                                                "fault_placement": placement,
                                                "seed": seed,
                                            }
                                            try:
                                                scenario = Scenario(
                                                    n=n,
                                                    t=t,
                                                    fault_set=fault_ids(n, f, placement),
                                                    inputs=input_vector(input_spec, n, domain),
                                                    error_budget=budget,
                                                    error_allocation=allocation,
                                                    adversary=adv,
                                                    seed=seed,
                                                    variant=variant,
                                                    value_domain=domain,
                                                )
                                            except ConfigurationError as exc:
                                                skipped.append(
                                                    SkippedPoint(index, str(exc), desc)
                                                )
                                                index += 1
                                                continue
                                            points.append(
                                                SweepPoint(index, scenario, protocol, dict(params))
                                            )
                                            index += 1
    return points, skipped


# ---------------------------------------------------------------------------
# Metrics records
# ---------------------------------------------------------------------------

def run_point(point: SweepPoint, mutants: Tuple[str, ...] = ()) -> Dict[str, Any]:
    """Execute one point and build its metrics record."""
    result = run_execution(point.scenario, point.protocol, point.params, mutants=mutants)
    verdicts = verify_execution(result)
    scenario = point.scenario
    classifications = {
        int(p): predictions.bits_from_string(b)
        for p, b in (result.trace.get("classifications") or {}).items()
        if int(p) not in scenario.fault_set
    }
    if classifications:
        mis = predictions.misclassification_report(
            classifications, scenario.n, set(scenario.fault_set)
        )
        mis_record = {
            "k_A": mis.num_total,
            "k_H": mis.num_honest,
            "k_F": mis.num_faulty,
        }
    else:
        mis_record = None
    decisions = [result.decisions.get(p) for p in scenario.honest]
    distinct = {repr(v) for v in decisions}
    record = {
        "schema_version": SCHEMA_VERSION,
        "index": point.index,
        "scenario": scenario.to_json_dict(),
        "protocol": point.protocol,
        "params": point.params,
        "mutants": list(mutants),
        "realized_budget": result.trace.get("prediction_report"),
        "misclassification": mis_record,
        "rounds_elapsed": result.rounds_elapsed,
        "honest_messages_total": result.honest_messages_total,
        "honest_messages_by_protocol": dict(sorted(result.honest_messages_by_protocol.items())),
        "alpha": result.alpha,
        "decision": decisions[0] if len(distinct) == 1 else None,
        "decisions_distinct": len(distinct),
        "verdicts": [v.as_dict() for v in verdicts],
        "ok": all_pass(verdicts),
    }
    return record


def record_bytes(record: Dict[str, Any]) -> bytes:
    return json.dumps(record, sort_keys=True, separators=(",", ":")).encode()


def _run_point_json(args) -> Dict[str, Any]:
    point_dict, mutants = args
    point = SweepPoint(
        index=point_dict["index"],
        scenario=Scenario.from_json_dict(point_dict["scenario"]),
        protocol=point_dict["protocol"],
        params=point_dict["params"],
    )
    return run_point(point, tuple(mutants))


@dataclass
class SweepSummary:
    executed: int = 0
    skipped: int = 0
    violations: int = 0
    first_violation: Optional[Dict[str, Any]] = None
    by_axis: Dict[str, Dict[str, Dict[str, float]]] = field(default_factory=dict)

    def as_text(self) -> str:
        lines = [
            f"points executed: {self.executed}",
            f"points skipped:  {self.skipped}",
            f"violations:      {self.violations}",
        ]
        for axis in sorted(self.by_axis):
            lines.append(f"-- by {axis}:")
            for key in sorted(self.by_axis[axis], key=str):
                agg = self.by_axis[axis][key]
                lines.append(
                    f"   {key}: runs={agg['runs']:.0f} mean_rounds={agg['mean_rounds']:.1f} "
                    f"max_rounds={agg['max_rounds']:.0f} mean_msgs={agg['mean_msgs']:.1f}"
                )
        return "\n".join(lines)


def run_sweep(
    doc: Dict[str, Any],
    output_path: Optional[str] = None,
    workers: Optional[int] = None,
    mutants: Tuple[str, ...] = (),
    stop_on_violation: bool = True,
    progress=None,
) -> Tuple[List[Dict[str, Any]], SweepSummary]:
    points, skipped = expand_sweep(doc)
    workers = workers or default_workers()
    records: List[Dict[str, Any]] = []

    if workers > 1 and len(points) > 1:
        import multiprocessing

        with multiprocessing.Pool(workers) as pool:
            jobs = [(p.to_json_dict(), list(mutants)) for p in points]
            for record in pool.imap(_run_point_json, jobs, chunksize=1):
                records.append(record)
                if progress:
                    progress(record)
    else:
        for point in points:
            record = run_point(point, mutants)
            records.append(record)
            if progress:
                progress(record)

    summary = summarize(records, skipped)
    if output_path:
        with open(output_path, "w") as fh:
            for record in records:
                fh.write(record_bytes(record).decode() + "\n")
    if stop_on_violation and summary.violations:
        bad = summary.first_violation
        raise ConfigurationError(
            "property violation; reproducing scenario: "
            + json.dumps(bad["scenario"], sort_keys=True)
            + " verdicts: "
            + json.dumps([v for v in bad["verdicts"] if not v["ok"]], sort_keys=True)
        )
    return records, summary


def summarize(records: List[Dict[str, Any]], skipped: List[SkippedPoint]) -> SweepSummary:
    summary = SweepSummary(executed=len(records), skipped=len(skipped))
    axes = ("n", "f", "error_budget", "adversary", "variant")
    acc: Dict[str, Dict[str, List[Tuple[int, int]]]] = {a: {} for a in axes}
    for record in records:
        if not record["ok"]:
            summary.violations += 1
            if summary.first_violation is None:
                summary.first_violation = record
        sc = record["scenario"]
        keyvals = {
            "n": sc["n"],
            "f": len(sc["fault_set"]),
            "error_budget": sc["error_budget"],
            "adversary": sc["adversary"]["name"],
            "variant": sc["variant"],
        }
        for axis, key in keyvals.items():
            acc[axis].setdefault(str(key), []).append(
                (record["rounds_elapsed"], record["honest_messages_total"])
            )
    for axis, groups in acc.items():
        summary.by_axis[axis] = {}
        for key, vals in groups.items():
            rounds = [r for r, _m in vals]
            msgs = [m for _r, m in vals]
            summary.by_axis[axis][key] = {
                "runs": len(vals),
                "mean_rounds": sum(rounds) / len(rounds),
                "max_rounds": max(rounds),
                "mean_msgs": sum(msgs) / len(msgs),
            }
    return summary


def replay_record(record: Dict[str, Any]) -> bool:
    """Re-execute a record's point; True iff byte-identical."""
    point = SweepPoint(
        index=record["index"],
        scenario=Scenario.from_json_dict(record["scenario"]),
        protocol=record["protocol"],
        params=record["params"],
    )
    fresh = run_point(point, tuple(record.get("mutants", ())))
    return record_bytes(fresh) == record_bytes(record)


def load_records(path: str) -> List[Dict[str, Any]]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ScenarioFileError(str(exc.msg), line=lineno, column=exc.colno) from exc
    return records


# ---------------------------------------------------------------------------
# Standalone conditional-BA runs (classification derived from a real vote round)
# ---------------------------------------------------------------------------

def run_conditional_standalone(
    scenario: Scenario,
    k: Optional[int] = None,
    T: Optional[int] = None,
):
    """Run the classify round, then the conditional BA with the resulting
    per-process classifications as parameters.

    Returns (classify_result, conditional_result, k).  When k is None the
    smallest k covering the realized misclassification count is chosen.
    """
    cls_result = run_execution(scenario, "classify")
    vectors = {int(p): bits for p, bits in cls_result.decisions.items()}
    report = predictions.misclassification_report(
        {p: predictions.bits_from_string(b) for p, b in vectors.items()},
        scenario.n,
        set(scenario.fault_set),
    )
    if k is None:
        k = max(report.num_total, 1)
    truth = predictions.bits_to_string(
        predictions.correct_classification(scenario.n, set(scenario.fault_set))
    )
    table = {str(p): vectors.get(p, truth) for p in range(1, scenario.n + 1)}
    params = {"k": k, "classifications": table}
    if T is not None:
        params["T"] = T
    cond_result = run_execution(scenario, "ba-classification", params)
    return cls_result, cond_result, k


# ---------------------------------------------------------------------------
# Round-envelope prediction (criterion 6 support)
# ---------------------------------------------------------------------------

def size_condition_holds(variant: str, n: int, t: int, k: int) -> bool:
    if variant == UNAUTHENTICATED:
        return (2 * k + 1) * (3 * k + 1) + k <= n - t
    return 2 * k + 1 <= n - t - k


def misclassification_proof_bound(n: int, f: int, realized_budget: int) -> float:
    denom = math.ceil(n / 2) - f
    if denom <= 0:
        return math.inf
    return realized_budget / denom


def predicted_exit_phase(scenario: Scenario) -> int:
    """Earliest wrapper phase whose sub-protocol guarantees fire, plus the
    one helper phase, capped at the phase count.  Uses the proof-level
    misclassification bound, not the realized one."""
    variant, n, t, f = scenario.variant, scenario.n, scenario.t, scenario.f
    _vectors, report = predictions.generate_predictions(
        n, set(scenario.fault_set), scenario.error_budget, scenario.error_allocation
    )
    k_a_bound = misclassification_proof_bound(n, f, report.total)
    alpha = compute_alpha(variant, t)
    phases = wrapper_phase_count(t)
    for phase in range(1, phases + 1):
        k = 2 ** (phase - 1)
        T = alpha * k
        es_ok = T >= es_rounds_needed(variant, t, f)
        cond_ok = (
            k >= k_a_bound
            and size_condition_holds(variant, n, t, k)
            and T >= conditional_round_budget(variant, k)
        )
        if es_ok or cond_ok:
            return min(phase + 1, phases)
    return phases


def round_envelope(scenario: Scenario, slack_phases: int = 1) -> int:
    """Upper bound on wrapper rounds from component formulas, with the
    stated tolerance of one extra doubling phase."""
    phase = min(predicted_exit_phase(scenario) + slack_phases, wrapper_phase_count(scenario.t))
    return wrapper_rounds_through_phase(scenario.variant, scenario.t, phase)
