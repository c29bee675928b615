"""Command-line front end.

Exit codes follow one convention everywhere: 0 when the requested work
finished and the target is clean (or the command has no clean/leaky notion),
2 when leakage points remain, 3 for operational failures (bad config,
missing tools, gateway errors).
"""

from __future__ import annotations

import json
import shlex
import shutil
import sys
from dataclasses import dataclass
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Optional

import click

from .detectors import MalformedReport, UnparsableDisassembly
from .gateway import (
    GatewayError,
    HttpChatBackend,
    ModelConfig,
    ReplayBackend,
)
from .patching import (
    CommandNotFound,
    CommandTimeout,
    PatchCandidate,
    TargetSpec,
    apply_patch,
)
from .prompts import (
    PromptMode,
    render_driver_request,
    render_generation_request,
    render_system_prompt,
)
from .session import (
    BaselineBroken,
    HarnessUnavailable,
    LoopPolicy,
    bench_csv,
    bench_table,
    estimate_session_cost,
    run_bench,
    run_detect,
    run_patch_session,
    summarize_report,
)

_OPERATIONAL_ERRORS = (
    BaselineBroken,
    CommandNotFound,
    CommandTimeout,
    GatewayError,
    HarnessUnavailable,
    MalformedReport,
    UnparsableDisassembly,
    OSError,
    ValueError,
    KeyError,
)


def load_model_presets() -> dict:
    text = resources.files("leakpatch").joinpath("data/models.json").read_text()
    return json.loads(text)


@dataclass
class PipelineConfig:
    """Everything one run needs, loaded from a single JSON file."""

    target: Optional[TargetSpec]
    policy: LoopPolicy
    model: Optional[ModelConfig]
    backend_spec: Optional[dict]
    base_dir: Path

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        raw = json.loads(path.read_text())
        base_dir = path.parent.resolve()

        target = None
        if "target" in raw:
            target = TargetSpec.from_dict(raw["target"], base_dir)
        policy = LoopPolicy.from_dict(raw.get("policy", {}))

        model = None
        if "model" in raw:
            model_raw = dict(raw["model"])
            preset = model_raw.pop("preset", None)
            if preset is not None:
                presets = load_model_presets()
                if preset not in presets:
                    raise ValueError(f"unknown model preset: {preset}")
                merged = dict(presets[preset])
                merged.update(model_raw)
                model_raw = merged
            model = ModelConfig.from_dict(model_raw)

        backend_spec = raw.get("backend")
        return cls(target, policy, model, backend_spec, base_dir)

    def make_backend(self):
        if not self.backend_spec:
            raise ValueError("config has no backend section")
        kind = self.backend_spec.get("kind")
        if kind == "replay":
            script_path = self.base_dir / self.backend_spec["script"]
            return ReplayBackend.from_script(script_path.read_text())
        if kind == "http":
            return HttpChatBackend(
                base_url=self.backend_spec["base_url"],
                api_key_env=self.backend_spec.get("api_key_env", "LLM_API_KEY"),
                timeout_s=float(self.backend_spec.get("timeout_s", 60)),
                attempts=int(self.backend_spec.get("attempts", 3)),
            )
        raise ValueError(f"unknown backend kind: {kind!r}")


def missing_commands(spec: TargetSpec) -> list[str]:
    """Names of command templates whose executables cannot be found."""
    templates = {
        "build_cmd": spec.build_cmd,
        "test_cmd": spec.test_cmd,
    }
    if spec.trace_cmd:
        templates["trace_cmd"] = spec.trace_cmd
    if spec.formatter_cmd:
        templates["formatter_cmd"] = spec.formatter_cmd
    if spec.map_cmd:
        templates["map_cmd"] = spec.map_cmd
    for det in spec.detector_cmds:
        templates[f"detector[{det.tool.value}]"] = det.cmd

    missing = []
    for name, template in templates.items():
        try:
            argv0 = shlex.split(template)[0]
        except (ValueError, IndexError):
            missing.append(name)
            continue
        if "{" in argv0:
            continue  # program itself is a placeholder; resolved at run time
        if Path(argv0).is_absolute():
            if not Path(argv0).exists():
                missing.append(f"{name} ({argv0})")
        elif "/" in argv0:
            # relative to the staging copy and possibly a build product
            # (e.g. test_cmd "build/target"), so only the run can tell
            continue
        elif shutil.which(argv0) is None:
            missing.append(f"{name} ({argv0})")
    return missing


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(3)


def _require_target(cfg: PipelineConfig) -> TargetSpec:
    if cfg.target is None:
        _fail("config has no target section")
    missing = missing_commands(cfg.target)
    if missing:
        _fail("missing executables for: " + ", ".join(missing))
    return cfg.target


@click.group()
def main() -> None:
    """Side-channel leakage detection and model-driven patching."""


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the detection report JSON here.")
def detect(config: str, out: Optional[str]) -> None:
    """Trace the target and list its leakage points."""
    try:
        cfg = PipelineConfig.load(config)
        spec = _require_target(cfg)
        report = run_detect(spec, cfg.policy)
    except _OPERATIONAL_ERRORS as err:
        _fail(str(err))
    doc = json.dumps(report, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(doc + "\n")
    else:
        click.echo(doc)
    points = report["points"]
    click.echo(f"{len(points)} leakage point(s) found", err=True)
    sys.exit(0 if report["secure"] else 2)


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the session report JSON here.")
@click.option("--write-back", is_flag=True,
              help="On a secure outcome, apply the winning patch to the "
                   "real source tree.")
def patch(config: str, out: Optional[str], write_back: bool) -> None:
    """Run a full patching session against the target."""
    try:
        cfg = PipelineConfig.load(config)
        spec = _require_target(cfg)
        if cfg.model is None:
            _fail("config has no model section")
        backend = cfg.make_backend()
        report = run_patch_session(spec, cfg.policy, cfg.model, backend)
    except _OPERATIONAL_ERRORS as err:
        _fail(str(err))
    doc = report.to_json()
    if out:
        Path(out).write_text(doc + "\n")
    click.echo(report.summary_text())
    if write_back and report.status == "secure" and report.best_candidate:
        candidate = PatchCandidate(
            function_text=report.best_candidate["function_text"],
            raw_response="",
        )
        apply_patch(spec, candidate, spec.root)
        click.echo(f"patched {spec.function_name} in place", err=True)
    sys.exit(0 if report.status == "secure" else 2)


@main.command()
@click.option("--harness", required=True,
              help="Cycle-harness command; must support --list and "
                   "`<case> <variant>` invocations.")
@click.option("--cwd", type=click.Path(exists=True, file_okay=False),
              default=".", help="Directory to run the harness in.")
@click.option("--csv", "csv_out", type=click.Path(dir_okay=False),
              default=None, help="Also write the rows as CSV here.")
@click.option("--case", "cases", multiple=True,
              help="Limit to these case names (repeatable).")
def bench(harness: str, cwd: str, csv_out: Optional[str], cases: tuple) -> None:
    """Time every (case, variant) pair the harness advertises."""
    try:
        rows = run_bench(harness, Path(cwd), only_cases=cases)
    except _OPERATIONAL_ERRORS as err:
        _fail(str(err))
    click.echo(bench_table(rows), nl=False)
    if csv_out:
        Path(csv_out).write_text(bench_csv(rows))
    sys.exit(0)


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
def cost(config: str) -> None:
    """Print the worst-case spend for a session under this config."""
    try:
        cfg = PipelineConfig.load(config)
        if cfg.model is None:
            _fail("config has no model section")
        bound = estimate_session_cost(cfg.policy, cfg.model)
    except _OPERATIONAL_ERRORS as err:
        _fail(str(err))
    click.echo(f"model: {cfg.model.model_id}")
    click.echo(f"calls allowed: {cfg.policy.max_total_iterations}")
    click.echo(f"worst-case cost: ${bound.quantize(Decimal('0.01'))}")
    sys.exit(0)


@main.command("gen-driver")
@click.option("--config", "config_path",
              type=click.Path(exists=True, dir_okay=False), default=None,
              help="Needed only with --complete.")
@click.option("--complete", "do_complete", is_flag=True,
              help="Send the request to the configured backend and print "
                   "the generated driver.")
def gen_driver(config_path: Optional[str], do_complete: bool) -> None:
    """Emit the trace-harness driver request (or a completed driver)."""
    request = render_driver_request()
    if not do_complete:
        click.echo(request)
        sys.exit(0)
    try:
        if config_path is None:
            _fail("--complete needs --config")
        cfg = PipelineConfig.load(config_path)
        if cfg.model is None:
            _fail("config has no model section")
        backend = cfg.make_backend()
        from .gateway import complete as run_completion
        from .prompts import ConversationContext, Role

        ctx = ConversationContext(token_budget=cfg.policy.token_budget)
        language = cfg.target.language if cfg.target else "C"
        specifics = cfg.target.specifics if cfg.target else ""
        ctx.add(Role.SYSTEM,
                render_system_prompt(language, specifics, PromptMode.DRIVER))
        ctx.add(Role.USER, request)
        exchange = run_completion(backend, cfg.model, ctx)
    except _OPERATIONAL_ERRORS as err:
        _fail(str(err))
    click.echo(exchange.response_text)
    sys.exit(0)


@main.command("gen-crypto")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--algorithm", required=True,
              help="Primitive to generate, e.g. AES-128.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the assembled source here instead of stdout.")
def gen_crypto(config: str, algorithm: str, out: Optional[str]) -> None:
    """Generate a primitive from scratch (live backend only)."""
    try:
        cfg = PipelineConfig.load(config)
        if cfg.model is None:
            _fail("config has no model section")
        if not cfg.backend_spec or cfg.backend_spec.get("kind") != "http":
            _fail("gen-crypto needs a live http backend")
        backend = cfg.make_backend()
        text = _generate_primitive(cfg, backend, algorithm)
    except _OPERATIONAL_ERRORS as err:
        _fail(str(err))
    if out:
        Path(out).write_text(text)
        click.echo(f"wrote {out}", err=True)
    else:
        click.echo(text)
    sys.exit(0)


def _generate_primitive(cfg: PipelineConfig, backend, algorithm: str) -> str:
    """Enumerate the functions an algorithm needs, then generate each one."""
    from .gateway import complete as run_completion
    from .prompts import ConversationContext, Role

    language = cfg.target.language if cfg.target else "C"
    ctx = ConversationContext(token_budget=cfg.policy.token_budget)
    ctx.add(Role.SYSTEM,
            render_system_prompt(language, "", PromptMode.GENERATE))
    ctx.add(Role.USER,
            render_generation_request("enumerate", algorithm=algorithm))
    listing = run_completion(backend, cfg.model, ctx)
    ctx.add(Role.ASSISTANT, listing.response_text)

    pieces = []
    for name in _listed_functions(listing.response_text):
        ctx.add(Role.USER, render_generation_request("implement", function=name))
        part = run_completion(backend, cfg.model, ctx)
        ctx.add(Role.ASSISTANT, part.response_text)
        pieces.append(part.response_text)
    ctx.add(Role.USER, render_generation_request("main"))
    entry = run_completion(backend, cfg.model, ctx)
    pieces.append(entry.response_text)
    return "\n\n".join(pieces) + "\n"


def _listed_functions(text: str) -> list[str]:
    names = []
    for line in text.splitlines():
        line = line.strip().lstrip("-*").strip()
        line = line.lstrip("0123456789.)").strip()
        if not line:
            continue
        token = line.split("(")[0].strip().split()[-1] if line.split() else ""
        if token.isidentifier() and token not in names:
            names.append(token)
    return names


@main.command()
@click.argument("report_path", metavar="REPORT",
                type=click.Path(exists=True, dir_okay=False))
def report(report_path: str) -> None:
    """Summarize a stored session report."""
    try:
        doc = json.loads(Path(report_path).read_text())
        text = summarize_report(doc)
    except _OPERATIONAL_ERRORS as err:
        _fail(str(err))
    click.echo(text)
    sys.exit(0 if doc.get("status") == "secure" else 2)


if __name__ == "__main__":
    main()
