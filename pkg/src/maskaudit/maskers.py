"""Masker contract, built-in reference maskers, external adapters, scoring.

A masker turns text into a ``MaskOutput``: the masked text plus the redacted
character spans in the *original* text.  An instance counts as detected only
when the union of redacted spans fully covers every expected name token;
partially masked tokens are misses.

External systems are reached through an adapter subprocess speaking
line-delimited JSON on stdin/stdout.  Request: ``{"id": <int>, "text":
<string>}``.  Response: ``{"id": <int>, "masked": <string>, "spans":
[[start, end], ...]}`` with offsets in Unicode scalar values into the
request text.  One response line per request line; order may differ; the
adapter must exit 0 after its input stream closes.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import re
import subprocess
import threading
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .templates import TestInstance

logger = logging.getLogger(__name__)

REPLACEMENT_TOKEN = "[NAME]"

Span = tuple[int, int]


class AdapterError(RuntimeError):
    """The adapter process crashed or broke the response protocol."""

    def __init__(self, message: str, unserved: Sequence[int] = ()):
        if unserved:
            message = f"{message}; unserved instance ids: {sorted(unserved)}"
        super().__init__(message)
        self.unserved = tuple(sorted(unserved))


class MalformedResponseError(AdapterError):
    """An adapter emitted a line that is not a valid response."""

    def __init__(self, reason: str, raw_line: str):
        super().__init__(f"malformed adapter response ({reason}): {raw_line!r}")
        self.raw_line = raw_line


def _merge_spans(spans: Iterable[Span]) -> tuple[Span, ...]:
    ordered = sorted((int(s), int(e)) for s, e in spans)
    merged: list[Span] = []
    for start, end in ordered:
        if start > end:
            raise ValueError(f"span ({start}, {end}) has start > end")
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return tuple(merged)


@dataclass(frozen=True)
class MaskOutput:
    """Masked text plus redacted spans against the original text."""

    masked_text: str
    redacted_spans: tuple[Span, ...]

    @classmethod
    def build(cls, text: str, spans: Iterable[Span]) -> "MaskOutput":
        """Normalize spans (sort, merge overlaps, bounds-check) and splice
        the replacement token into the text."""
        merged = _merge_spans(spans)
        for start, end in merged:
            if start < 0 or end > len(text):
                raise ValueError(f"span ({start}, {end}) outside text of length {len(text)}")
        pieces = []
        cursor = 0
        for start, end in merged:
            pieces.append(text[cursor:start])
            pieces.append(REPLACEMENT_TOKEN)
            cursor = end
        pieces.append(text[cursor:])
        return cls(masked_text="".join(pieces), redacted_spans=merged)


@dataclass(frozen=True)
class MaskOutcome:
    """Per-instance detection verdict for one masker.

    Carries enough of the instance for downstream aggregation, so persisted
    outcome records are self-contained.
    """

    instance_id: int
    template_id: int
    name: str
    group: str
    gender: str
    low_support: bool
    masker_id: str
    detected: bool
    token_coverage: tuple[bool, ...]


def mask_with_lexicon(text: str, name_list: Sequence[str]) -> MaskOutput:
    """Redact every maximal case-insensitive whole-word match of a listed name."""
    if not name_list:
        raise ValueError("name list is empty")
    # Longest entries first so 'Young Kim' wins over 'Young'.
    alternatives = sorted(set(name_list), key=lambda n: (-len(n), n))
    pattern = re.compile(
        r"(?<!\w)(?:" + "|".join(re.escape(n) for n in alternatives) + r")(?!\w)",
        re.IGNORECASE,
    )
    spans = [(m.start(), m.end()) for m in pattern.finditer(text)]
    return MaskOutput.build(text, spans)


@dataclass(frozen=True)
class Rule:
    """One redaction rule: a regex whose 'name' group gets redacted."""

    name: str
    pattern: str

    def compiled(self) -> re.Pattern:
        try:
            compiled = re.compile(self.pattern)
        except re.error as exc:
            raise ValueError(f"rule {self.name!r} has an invalid pattern: {exc}") from exc
        if "name" not in compiled.groupindex:
            raise ValueError(f"rule {self.name!r} pattern lacks a (?P<name>...) group")
        return compiled


# A capitalized token run: 'Ana', 'Young Kim', 'Anne-Marie Osei'.
_CAP_SEQ = r"[A-Z][\w'’-]*(?: [A-Z][\w'’-]*)*"

DEFAULT_RULES: tuple[Rule, ...] = (
    Rule("self_introduction", rf"\b(?:[Mm]y name is|[Hh]i,? [Ii]'?m|hi im)\s+(?P<name>{_CAP_SEQ})"),
    Rule("greeting", rf"\b(?:Hi|Hello|Dear)\s+(?P<name>{_CAP_SEQ})"),
    Rule("thanks", rf"\b(?:[Tt]hank (?:you|u)(?: very much| so much)?,?|[Tt]hanks,?)\s+(?P<name>{_CAP_SEQ})"),
    Rule("signature", rf"\b(?:signed|from)\s+(?P<name>{_CAP_SEQ})"),
    Rule("handoff", rf"\b(?:working with|chat(?:ting)? with|order is under|receive)\s+(?P<name>{_CAP_SEQ})"),
)


def load_rules(specs: Sequence[dict]) -> list[Rule]:
    """Build a rule set from {'name', 'pattern'} mappings, validating patterns."""
    rules = []
    for spec in specs:
        rule = Rule(name=str(spec["name"]), pattern=str(spec["pattern"]))
        rule.compiled()  # fail at load time, not mid-run
        rules.append(rule)
    return rules


def mask_with_rules(text: str, rule_set: Sequence[Rule] = DEFAULT_RULES) -> MaskOutput:
    """Apply rules in order; the first rule to claim a span wins."""
    claimed: list[Span] = []
    for rule in rule_set:
        for match in rule.compiled().finditer(text):
            span = match.span("name")
            if any(span[0] < e and s < span[1] for s, e in claimed):
                continue
            claimed.append(span)
    return MaskOutput.build(text, claimed)


def score_instance(
    instance: TestInstance, mask_output: MaskOutput, masker_id: str = ""
) -> MaskOutcome:
    """Detected iff every expected span is fully covered by redacted spans."""
    text_len = len(instance.rendered_text)
    for start, end in mask_output.redacted_spans:
        if start < 0 or end > text_len or start > end:
            raise ValueError(
                f"redacted span ({start}, {end}) outside instance text of length {text_len}"
            )
    coverage = []
    for start, end in instance.expected_spans:
        covered = all(
            any(s <= pos < e for s, e in mask_output.redacted_spans)
            for pos in range(start, end)
        )
        coverage.append(covered)
    return MaskOutcome(
        instance_id=instance.instance_id,
        template_id=instance.template_id,
        name=instance.name.name,
        group=instance.name.group.label,
        gender=instance.name.gender,
        low_support=instance.name.group.low_support,
        masker_id=masker_id,
        detected=all(coverage),
        token_coverage=tuple(coverage),
    )


# ---------------------------------------------------------------------------
# Built-in reference maskers.  Deliberately simple: they exercise the harness
# and calibrate the metrics, and make no claim to parity with real systems.


class LexiconMasker:
    kind = "lexicon"

    def __init__(self, names: Sequence[str]):
        self.names = list(names)

    def mask(self, instance: TestInstance) -> MaskOutput:
        return mask_with_lexicon(instance.rendered_text, self.names)


class RulesMasker:
    kind = "rules"

    def __init__(self, rules: Sequence[Rule] = DEFAULT_RULES):
        self.rules = list(rules)

    def mask(self, instance: TestInstance) -> MaskOutput:
        return mask_with_rules(instance.rendered_text, self.rules)


class OracleMasker:
    """Redacts exactly the expected spans; calibrates FNR = 0."""

    kind = "oracle"

    def mask(self, instance: TestInstance) -> MaskOutput:
        return MaskOutput.build(instance.rendered_text, instance.expected_spans)


class IdentityMasker:
    """Redacts nothing; calibrates FNR = 1."""

    kind = "identity"

    def mask(self, instance: TestInstance) -> MaskOutput:
        return MaskOutput.build(instance.rendered_text, ())


# ---------------------------------------------------------------------------
# External adapter transport.


@dataclass(frozen=True)
class AdapterConfig:
    """How to launch and talk to an external masker adapter."""

    command: tuple[str, ...]
    timeout: float = 10.0  # seconds allowed per instance since last response
    retries: int = 1  # extra attempts for timed-out instances

    def __post_init__(self):
        if not self.command:
            raise ValueError("adapter command is empty")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


@dataclass(frozen=True)
class ExternalMaskResult:
    """Adapter outputs by instance id, plus ids that timed out."""

    outputs: dict[int, MaskOutput]
    errored: tuple[int, ...]


def _sanitized_env() -> dict[str, str]:
    keep = ("PATH", "HOME", "LANG", "LC_ALL", "PYTHONPATH", "TMPDIR", "SYSTEMROOT")
    return {k: os.environ[k] for k in keep if k in os.environ}


_EOF = object()


def _reader_thread(stream, out_queue: queue.Queue):
    try:
        for line in stream:
            out_queue.put(line)
    finally:
        out_queue.put(_EOF)


def _writer_thread(stream, lines: list[str]):
    try:
        for line in lines:
            stream.write(line)
        stream.close()
    except (BrokenPipeError, OSError):
        pass  # crash is detected on the read side


def _parse_response(raw: str, texts: dict[int, str]) -> tuple[int, MaskOutput]:
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedResponseError(f"invalid JSON: {exc}", raw)
    if not isinstance(payload, dict):
        raise MalformedResponseError("response is not an object", raw)
    try:
        instance_id = payload["id"]
        masked = payload["masked"]
        spans = payload["spans"]
    except KeyError as exc:
        raise MalformedResponseError(f"missing key {exc}", raw)
    if not isinstance(instance_id, int) or instance_id not in texts:
        raise MalformedResponseError(f"unknown instance id {instance_id!r}", raw)
    if not isinstance(masked, str) or not isinstance(spans, list):
        raise MalformedResponseError("bad field types", raw)
    try:
        output = MaskOutput.build(texts[instance_id], [(s, e) for s, e in spans])
    except (TypeError, ValueError) as exc:
        raise MalformedResponseError(str(exc), raw)
    return instance_id, output


def _run_adapter_once(
    config: AdapterConfig, instances: Sequence[TestInstance]
) -> tuple[dict[int, MaskOutput], set[int]]:
    """One adapter pass.  Returns (served outputs, timed-out ids); raises
    AdapterError on crash or protocol violation."""
    texts = {inst.instance_id: inst.rendered_text for inst in instances}
    request_lines = [
        json.dumps({"id": inst.instance_id, "text": inst.rendered_text}) + "\n"
        for inst in instances
    ]
    try:
        proc = subprocess.Popen(
            list(config.command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            env=_sanitized_env(),
        )
    except OSError as exc:
        raise AdapterError(f"failed to launch adapter {config.command!r}: {exc}")

    lines: queue.Queue = queue.Queue()
    threading.Thread(target=_writer_thread, args=(proc.stdin, request_lines), daemon=True).start()
    threading.Thread(target=_reader_thread, args=(proc.stdout, lines), daemon=True).start()

    outputs: dict[int, MaskOutput] = {}
    pending = set(texts)
    timed_out = False
    try:
        while pending:
            try:
                item = lines.get(timeout=config.timeout)
            except queue.Empty:
                timed_out = True
                break
            if item is _EOF:
                break
            raw = item.strip()
            if not raw:
                continue
            instance_id, output = _parse_response(raw, texts)
            if instance_id in outputs:
                raise MalformedResponseError("duplicate response for id", raw)
            outputs[instance_id] = output
            pending.discard(instance_id)
    finally:
        if proc.poll() is None:
            proc.kill()
        returncode = proc.wait()

    if pending and timed_out:
        logger.warning(
            "adapter %s timed out with %d instances pending", config.command[0], len(pending)
        )
        return outputs, pending
    if pending:
        # Stream ended before every request was answered: either a crash
        # (nonzero exit) or a protocol violation (clean exit, missing ids).
        if returncode != 0:
            raise AdapterError(
                f"adapter {config.command[0]} exited with code {returncode}", pending
            )
        raise AdapterError(
            f"adapter {config.command[0]} closed its output without answering all requests",
            pending,
        )
    return outputs, set()


def mask_external(
    instances: Sequence[TestInstance], adapter_config: AdapterConfig
) -> ExternalMaskResult:
    """Mask instances through an external adapter process.

    Responses are matched by id, so transport order does not matter.
    Instances that time out are retried in fresh adapter processes up to
    ``retries`` times and, if still unserved, reported as errored (they are
    excluded from rate denominators and counted separately).
    """
    remaining = {inst.instance_id: inst for inst in instances}
    outputs: dict[int, MaskOutput] = {}
    for _attempt in range(1 + adapter_config.retries):
        if not remaining:
            break
        served, timed_out = _run_adapter_once(adapter_config, list(remaining.values()))
        outputs.update(served)
        for instance_id in served:
            remaining.pop(instance_id, None)
        if not timed_out:
            break
    return ExternalMaskResult(outputs=outputs, errored=tuple(sorted(remaining)))
