"""Prompt rendering and conversation-context management.

Every prompt the pipeline sends is rendered from a text asset under
``templates/`` by literal ``<placeholder>`` substitution, so rendering is
byte-deterministic and the wording lives in exactly one place. The golden
files under tests/fixtures/prompts/ pin every byte; change a template and
the goldens must change with it, on purpose.

Patch-request wording comes in four flavors, historically numbered:
option 1 asks to remove a secret-dependent array access, option 2 a
secret-dependent condition, option 3 a secret-dependent loop bound, and
option 4 is the retry used after a broken response. Speculative-execution
sessions swap option 2's wording for a speculation-specific one and use a
system prompt that says "secure" where the constant-time one says
"constant-time".
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Callable, Union


class UnknownMode(ValueError):
    pass


class MissingField(ValueError):
    pass


class MessageTooLarge(ValueError):
    """The message cannot fit in the budget even after maximal eviction."""


# Functional failures get a fixed retry reason; syntax failures feed the
# compiler/parser diagnostics through instead.
NOT_WORKING_REASON = "The code is not working correctly."

# Diagnostics are clipped to this many bytes before prompt insertion.
DIAGNOSTIC_LIMIT = 2000


def _load(name: str) -> str:
    text = resources.files(__package__).joinpath("templates", name).read_text("utf-8")
    return text[:-1] if text.endswith("\n") else text


def _fill(template: str, **fields: str) -> str:
    out = template
    for key, value in fields.items():
        out = out.replace(f"<{key}>", value)
    return out


class PromptMode(Enum):
    CONSTANT_TIME = "constant-time"
    SPECTRE = "spectre"
    GENERATE = "generate"
    DRIVER = "driver"


def render_system_prompt(language_tag: str, specifics: str, mode: PromptMode) -> str:
    """System message for a session. `specifics` carries target-private notes
    (e.g. keep instrumentation calls); empty means no trailing residue."""
    if not isinstance(mode, PromptMode):
        raise UnknownMode(f"not a prompt mode: {mode!r}")
    if not language_tag:
        raise MissingField("language_tag must be non-empty")
    if mode in (PromptMode.GENERATE, PromptMode.DRIVER):
        return _fill(_load("system_generate.txt"), language=language_tag)
    template = _load("system_patch.txt")
    if mode is PromptMode.SPECTRE:
        template = template.replace("constant-time", "secure")
    rendered = _fill(template, language=language_tag)
    if specifics:
        return rendered.replace("<specifics>", specifics)
    return rendered.replace(" <specifics>", "")


@dataclass(frozen=True)
class MemoryAccessPrompt:
    arrays: str
    line: int


@dataclass(frozen=True)
class ConditionalPrompt:
    statement: str


@dataclass(frozen=True)
class LoopBoundPrompt:
    statement: str


@dataclass(frozen=True)
class RetryPrompt:
    crash_reason: str


@dataclass(frozen=True)
class SpectreConditionalPrompt:
    statement: str


PatchPrompt = Union[
    MemoryAccessPrompt,
    ConditionalPrompt,
    LoopBoundPrompt,
    RetryPrompt,
    SpectreConditionalPrompt,
]

OPTION_NUMBER = {
    MemoryAccessPrompt: 1,
    ConditionalPrompt: 2,
    LoopBoundPrompt: 3,
    RetryPrompt: 4,
    SpectreConditionalPrompt: 1,  # the speculative flavor of a condition fix
}


def _require(value: str, field_name: str) -> str:
    if not value or not value.strip():
        raise MissingField(f"{field_name} must be non-empty")
    return value


def render_patch_prompt(prompt: PatchPrompt, function_source: str = "") -> str:
    """User message for one patch request. All but the retry wording embed
    the current function text above the instruction."""
    if isinstance(prompt, MemoryAccessPrompt):
        if prompt.line < 1:
            raise MissingField("line must be >= 1")
        return _fill(
            _load("option_memory_access.txt"),
            function=_require(function_source, "function_source"),
            arrays=_require(prompt.arrays, "arrays"),
            line=str(prompt.line),
        )
    if isinstance(prompt, ConditionalPrompt):
        return _fill(
            _load("option_conditional.txt"),
            function=_require(function_source, "function_source"),
            statement=_require(prompt.statement, "statement"),
        )
    if isinstance(prompt, LoopBoundPrompt):
        return _fill(
            _load("option_loop_bound.txt"),
            function=_require(function_source, "function_source"),
            statement=_require(prompt.statement, "statement"),
        )
    if isinstance(prompt, RetryPrompt):
        return _fill(
            _load("option_retry.txt"),
            crash_reason=clip_diagnostics(_require(prompt.crash_reason, "crash_reason")),
        )
    if isinstance(prompt, SpectreConditionalPrompt):
        return _fill(
            _load("option_spectre_conditional.txt"),
            function=_require(function_source, "function_source"),
            statement=_require(prompt.statement, "statement"),
        )
    raise MissingField(f"not a patch prompt: {prompt!r}")


def render_driver_request() -> str:
    return _load("driver_request.txt")


def render_generation_request(step: str, *, algorithm: str = "", function: str = "") -> str:
    """User messages for from-scratch generation: 'enumerate' the parts,
    'implement' one function, or write the 'main' harness."""
    if step == "enumerate":
        return _fill(_load("generate_enumerate.txt"), algorithm=_require(algorithm, "algorithm"))
    if step == "implement":
        return _fill(_load("generate_implement.txt"), function=_require(function, "function"))
    if step == "main":
        return _load("generate_main.txt")
    raise UnknownMode(f"unknown generation step: {step!r}")


def clip_diagnostics(text: str, limit: int = DIAGNOSTIC_LIMIT) -> str:
    raw = text.encode("utf-8")
    if len(raw) <= limit:
        return text
    return raw[:limit].decode("utf-8", errors="ignore")


# ---------------------------------------------------------------------------
# conversation context


class Role(Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


def count_tokens(text: str) -> int:
    """Conservative default: one token per 4 UTF-8 bytes, rounded up."""
    return -(-len(text.encode("utf-8")) // 4)


@dataclass(frozen=True)
class Message:
    role: Role
    text: str
    token_estimate: int


class ConversationContext:
    """Transcript with a token budget and a fixed eviction policy.

    The first message (system) and the second (the request carrying the
    original function) are pinned forever. When an append pushes the total
    over budget, the oldest unpinned messages (index 2 onward) are dropped
    until it fits; the just-appended message is never dropped. If the pinned
    pair plus the new message alone exceed the budget, the append fails with
    MessageTooLarge and the context is left unchanged.
    """

    def __init__(
        self,
        token_budget: int,
        estimator: Callable[[str], int] = count_tokens,
    ) -> None:
        if token_budget < 1:
            raise ValueError("token_budget must be positive")
        self.token_budget = token_budget
        self.estimator = estimator
        self.messages: list[Message] = []

    def message(self, role: Role, text: str) -> Message:
        return Message(role=role, text=text, token_estimate=self.estimator(text))

    @property
    def total_tokens(self) -> int:
        return sum(m.token_estimate for m in self.messages)

    def append_and_truncate(self, message: Message) -> "ConversationContext":
        if not self.messages and message.role is not Role.SYSTEM:
            raise ValueError("first message must be the system prompt")
        pinned = sum(m.token_estimate for m in self.messages[:2])
        if pinned + message.token_estimate > self.token_budget:
            # would not fit even with everything unpinned evicted
            raise MessageTooLarge(
                f"{message.token_estimate} tokens cannot fit beside the pinned"
                f" messages within budget {self.token_budget}"
            )
        self.messages.append(message)
        while self.total_tokens > self.token_budget:
            del self.messages[2]
        return self

    def add(self, role: Role, text: str) -> "ConversationContext":
        return self.append_and_truncate(self.message(role, text))

    def as_wire_messages(self) -> list[dict[str, str]]:
        return [{"role": m.role.value, "content": m.text} for m in self.messages]
