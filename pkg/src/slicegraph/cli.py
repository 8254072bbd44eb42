"""Command-line entry point: run, compare, gen-users, oracle-check.

Exit codes: 0 success, 1 validation error, 2 backend or transport error,
3 internal invariant violation. Human-readable messages go to stderr;
stdout carries only paths and machine-readable summaries.
"""

from __future__ import annotations

import csv
import math
import random
import sys
from importlib import resources
from pathlib import Path

import click

from slicegraph import report
from slicegraph.agent import DEFAULT_TEMPLATES, load_templates
from slicegraph.domain import (
    Scenario,
    ValidationError,
    dump_users_jsonl,
    load_scenario,
    load_users_jsonl,
)
from slicegraph.graphflow import GraphError, export_trace
from slicegraph.knowledge import default_kb, load_kb
from slicegraph.llm import BackendConfig, BackendError, HttpBackend, ReplayBackend
from slicegraph.optimizer import (
    Infeasible,
    brute_force_oracle,
    fill_throughput,
    greedy_fill,
    random_instance,
)
from slicegraph.radio import apply_snr_overrides, load_snr_overrides
from slicegraph.sim import (
    Metrics,
    RunAborted,
    default_request_pool,
    generate_users,
    monte_carlo,
    run_scenario,
    scenario_users,
)

EXIT_VALIDATION = 1
EXIT_BACKEND = 2
EXIT_INTERNAL = 3


def bundled_scenario_path() -> Path:
    return Path(str(resources.files("slicegraph.data").joinpath("case_study.json")))


@click.group()
def main() -> None:
    """Network-slicing simulator: rule-based, agent workflow, prompt baseline."""


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _has_backend_cause(exc: BaseException) -> bool:
    seen: BaseException | None = exc
    while seen is not None:
        if isinstance(seen, BackendError):
            return True
        seen = seen.__cause__
    return False


def _guard(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValidationError, FileNotFoundError, ValueError) as exc:
        _fail(EXIT_VALIDATION, str(exc))
    except (BackendError, RunAborted, GraphError) as exc:
        if _has_backend_cause(exc):
            _fail(EXIT_BACKEND, str(exc))
        _fail(EXIT_INTERNAL, str(exc))
    except Exception as exc:  # pragma: no cover
        _fail(EXIT_INTERNAL, f"{type(exc).__name__}: {exc}")


def _load_inputs(scenario_path, users_path, snr_path, kb_path, templates_path):
    scenario = load_scenario(scenario_path)
    users = None
    if users_path:
        users = load_users_jsonl(users_path)
    if snr_path:
        overrides = load_snr_overrides(snr_path)
        base = users if users is not None else scenario_users(scenario)
        users = apply_snr_overrides(base, overrides)
    kb = load_kb(kb_path) if kb_path else default_kb()
    templates = load_templates(templates_path) if templates_path else DEFAULT_TEMPLATES
    return scenario, users, kb, templates


def _shared_backend(backend_kind, base_url, model, cassette, timeout_s, retries):
    """Replay and http backends are single instances shared across trials;
    mock backends are built per trial from the trial's users.
    """
    if backend_kind == "mock":
        return None
    if backend_kind == "replay":
        if not cassette:
            raise ValidationError("replay backend requires --cassette")
        return ReplayBackend(cassette)
    config = BackendConfig(
        kind="http",
        base_url=base_url,
        model=model,
        timeout_s=timeout_s,
        max_retries=retries,
    )
    return HttpBackend(config)


_COMMON_OPTIONS = [
    click.option("--scenario", "scenario_path", type=click.Path(exists=False), default=None,
                 help="Scenario JSON; defaults to the bundled case study."),
    click.option("--backend", "backend_kind", type=click.Choice(["mock", "replay", "http"]),
                 default="mock", show_default=True),
    click.option("--base-url", default=None, help="OpenAI-compatible endpoint base URL."),
    click.option("--model", default=None, help="Model name for the http backend."),
    click.option("--cassette", type=click.Path(), default=None,
                 help="Cassette JSONL for the replay backend."),
    click.option("--timeout", "timeout_s", type=float, default=30.0, show_default=True),
    click.option("--retries", type=int, default=2, show_default=True),
    click.option("--seed", type=int, default=None, help="Base seed; defaults to the scenario's."),
    click.option("--out", "out_dir", type=click.Path(), default="out", show_default=True),
    click.option("--kb", "kb_path", type=click.Path(), default=None,
                 help="Knowledge-base JSON; defaults to the bundled corpus."),
    click.option("--users", "users_path", type=click.Path(), default=None,
                 help="Users JSONL overriding the scenario's users."),
    click.option("--snr-file", "snr_path", type=click.Path(), default=None,
                 help="JSON map user_id -> snr_db overriding channel values."),
    click.option("--templates", "templates_path", type=click.Path(), default=None,
                 help="Prompt template file overriding the embedded defaults."),
    click.option("--figures/--no-figures", default=True, show_default=True,
                 help="Render matplotlib figures next to the CSV output."),
]


def _with_common_options(fn):
    for option in reversed(_COMMON_OPTIONS):
        fn = option(fn)
    return fn


@main.command("run")
@_with_common_options
@click.option("--method", type=click.Choice(["rule", "agent", "prompt", "all"]),
              default="all", show_default=True)
@click.option("--trials", type=int, default=1, show_default=True)
def cmd_run(scenario_path, backend_kind, base_url, model, cassette, timeout_s, retries,
            seed, out_dir, kb_path, users_path, snr_path, templates_path, figures,
            method, trials) -> None:
    """Monte Carlo runs; writes metrics.csv, agent traces, and figures."""

    def body():
        if trials < 1:
            raise ValidationError("trials must be >= 1")
        path = scenario_path or bundled_scenario_path()
        scenario, users, kb, templates = _load_inputs(
            path, users_path, snr_path, kb_path, templates_path
        )
        if users is not None:
            scenario = Scenario(
                radio=scenario.radio, slices=scenario.slices, users=tuple(users),
                seed=scenario.seed, generator=None,
            )
        shared = _shared_backend(backend_kind, base_url, model, cassette, timeout_s, retries)
        factory = (lambda _users: shared) if shared is not None else None
        base_seed = scenario.seed if seed is None else seed
        methods = ["rule", "agent", "prompt"] if method == "all" else [method]

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for m in methods:
            result = monte_carlo(
                scenario, m, trials, base_seed,
                backend_factory=factory, kb=kb, templates=templates,
            )
            for trial in result.trials:
                row = {"method": m, "trial": trial.trial, "seed": trial.seed}
                row.update(trial.metrics.scalars())
                rows.append(row)
                if trial.traces:
                    traces_dir = out / "traces"
                    traces_dir.mkdir(exist_ok=True)
                    trace_path = traces_dir / f"{m}_seed{trial.seed}.jsonl"
                    with trace_path.open("w", encoding="utf-8") as fp:
                        for slot, (user_id, entries) in enumerate(trial.traces, 1):
                            export_trace(list(entries), fp, slot=slot)
            click.echo(f"{m}: {trials} trial(s) done", err=True)

        metrics_path = out / "metrics.csv"
        _write_csv(metrics_path, rows, ["method", "trial", "seed", *Metrics.SCALAR_FIELDS])
        click.echo(str(metrics_path))
        if figures:
            fig_path = out / "utilization.png"
            report.save_utilization_figure(rows, fig_path)
            click.echo(str(fig_path))

    _guard(body)


@main.command("compare")
@_with_common_options
def cmd_compare(scenario_path, backend_kind, base_url, model, cassette, timeout_s, retries,
                seed, out_dir, kb_path, users_path, snr_path, templates_path, figures) -> None:
    """All three methods on one identical user sequence; per-user-count CSV."""

    def body():
        path = scenario_path or bundled_scenario_path()
        scenario, users, kb, templates = _load_inputs(
            path, users_path, snr_path, kb_path, templates_path
        )
        use_seed = scenario.seed if seed is None else seed
        if users is None:
            users = scenario_users(scenario, seed=use_seed)
        if not users:
            raise ValidationError("no users to process")
        shared = _shared_backend(backend_kind, base_url, model, cassette, timeout_s, retries)

        total_budget = math.fsum(s.budget_mhz for s in scenario.slices)
        per_method = {}
        for m in ("rule", "agent", "prompt"):
            result = run_scenario(
                scenario, m, backend=shared, kb=kb, templates=templates, users=users
            )
            per_method[m] = result.metrics.per_slot

        table = []
        for i, _user in enumerate(users):
            row = {"users": i + 1}
            for m, slots in per_method.items():
                snap = slots[i]
                allocated = snap.allocated_embb_mhz + snap.allocated_urllc_mhz
                row[f"throughput_{m}"] = snap.throughput_mbps
                row[f"idle_{m}"] = 1.0 - allocated / total_budget
            table.append(row)

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        compare_path = out / "compare.csv"
        header = ["users"] + [f"throughput_{m}" for m in ("rule", "agent", "prompt")] + [
            f"idle_{m}" for m in ("rule", "agent", "prompt")
        ]
        _write_csv(compare_path, table, header)
        click.echo(str(compare_path))
        if figures:
            fig_path = out / "comparison.png"
            report.save_comparison_figure(table, fig_path)
            click.echo(str(fig_path))

    _guard(body)


@main.command("gen-users")
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--radius", type=float, default=500.0, show_default=True)
@click.option("--min-distance", type=float, default=1.0, show_default=True)
@click.option("--scenario", "scenario_path", type=click.Path(), default=None,
              help="Take radio parameters (and generator geometry) from a scenario.")
@click.option("--out", "out_path", type=click.Path(), required=True)
def cmd_gen_users(n, seed, radius, min_distance, scenario_path, out_path) -> None:
    """Write a generated users JSONL file."""

    def body():
        if scenario_path:
            scenario = load_scenario(scenario_path)
            radio = scenario.radio
        else:
            scenario = load_scenario(bundled_scenario_path())
            radio = scenario.radio
        users = generate_users(
            n=n, seed=seed, radio=radio, pool=default_request_pool(),
            radius_m=radius, min_distance_m=min_distance,
        )
        dump_users_jsonl(users, out_path)
        click.echo(str(out_path))

    _guard(body)


@main.command("oracle-check")
@click.option("--instances", type=int, default=200, show_default=True)
@click.option("--grid", type=float, default=0.25, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_oracle_check(instances, grid, seed) -> None:
    """Greedy fill versus brute-force enumeration on random instances."""

    def body():
        if instances < 1:
            raise ValidationError("instances must be >= 1")
        if grid <= 0:
            raise ValidationError("grid must be positive")
        rng = random.Random(seed)
        max_deviation = 0.0
        checked = 0
        for _ in range(instances):
            intervals, budget = random_instance(rng, grid)
            greedy = greedy_fill(intervals, budget)
            brute = brute_force_oracle(intervals, budget, grid)
            if isinstance(greedy, Infeasible) or isinstance(brute, Infeasible):
                if type(greedy) is not type(brute):
                    raise AssertionError("feasibility disagreement between solvers")
                continue
            checked += 1
            c_max = max(iv.coefficient for iv in intervals)
            deviation = abs(brute[0] - fill_throughput(intervals, greedy)) / c_max
            max_deviation = max(max_deviation, deviation)
        if max_deviation > grid:
            raise AssertionError(
                f"greedy fill deviates from the oracle by {max_deviation} MHz-equivalent"
            )
        click.echo(
            f"instances={instances} checked={checked} grid={grid} "
            f"max_deviation_mhz={max_deviation!r}"
        )

    _guard(body)


def _write_csv(path: Path, rows: list[dict], header: list[str]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fp:
        writer = csv.DictWriter(fp, fieldnames=header, lineterminator="\r\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


if __name__ == "__main__":
    main()
