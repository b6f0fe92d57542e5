"""Prompt templates and their rendering.

Templates use ``{{name}}`` placeholders and nothing else: no nesting, no
conditionals. Rendering is a single substitution pass, so bound values are
embedded verbatim and never re-expanded.
"""

from __future__ import annotations

import hashlib
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

PLACEHOLDER = re.compile(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}")

TEMPLATE_NAMES = ("video_caption", "cot_extraction", "direct_audio", "subtask_v2o", "subtask_o2e", "subtask_e2c")


class PromptError(ValueError):
    pass


class MissingVariable(PromptError):
    def __init__(self, name: str, template: str):
        super().__init__(f"template {template!r}: placeholder {{{{{name}}}}} is unbound")
        self.name = name


class UnknownVariable(PromptError):
    def __init__(self, name: str, template: str):
        super().__init__(f"template {template!r}: binding {name!r} is not used")
        self.name = name


class UnknownVariableWarning(UserWarning):
    pass


def placeholders(body: str) -> frozenset[str]:
    return frozenset(PLACEHOLDER.findall(body))


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def required_vars(self) -> frozenset[str]:
        return placeholders(self.body)


@dataclass(frozen=True)
class RenderedPrompt:
    name: str
    text: str

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


def render(template: PromptTemplate, bindings: Mapping[str, str], *, strict: bool = False) -> RenderedPrompt:
    """Substitute every placeholder of ``template`` from ``bindings``.

    Unused bindings emit :class:`UnknownVariableWarning`, or raise
    :class:`UnknownVariable` when ``strict`` is set.
    """
    required = template.required_vars
    for name in sorted(required):
        if name not in bindings:
            raise MissingVariable(name, template.name)
    for name in sorted(set(bindings) - required):
        if strict:
            raise UnknownVariable(name, template.name)
        warnings.warn(str(UnknownVariable(name, template.name)), UnknownVariableWarning, stacklevel=2)
    text = PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), template.body)
    return RenderedPrompt(template.name, text)


_CAPTION_GROUNDING = "Video description:\n{{video_caption}}\n\n"

# Default wording. Every template is overridable from a TOML file.
_DEFAULT_BODIES = {
    "video_caption": (
        "Describe this video in detail. Mention the scene, every visible object and person, "
        "and the actions taking place over time."
    ),
    "cot_extraction": (
        "You are given a description of a video and a description of the audio that accompanies it.\n\n"
        "Video description:\n{{video_caption}}\n\n"
        "Audio description:\n{{audio_caption}}\n\n"
        "Identify (1) the objects visible in the video that are likely to produce the sounds in the "
        "audio, and (2) the sound events that those objects produce.\n"
        "Reply with exactly two lines and nothing else:\n"
        "video_objects: <comma-separated list of sound-producing objects>\n"
        "sound_events: <comma-separated list of sound events>"
    ),
    "direct_audio": (
        "This video has no sound. Based on what you see, describe in one sentence the audio that "
        "would accompany it."
    ),
    "subtask_v2o": (
        "This video has no sound. List the objects visible in the video that are likely to produce "
        "sound, as a comma-separated list."
    ),
    "subtask_o2e": (
        "This video has no sound. The following objects are visible in it and are likely to produce "
        "sound:\n{{video_objects}}\n\n"
        "Based on the video and these objects, infer the sound events that would occur, as a "
        "comma-separated list."
    ),
    "subtask_e2c": (
        "This video has no sound. The following sound events would occur in it:\n{{sound_events}}\n\n"
        "Based on the video and these sound events, write one sentence describing the audio."
    ),
}

# Templates whose input includes the video itself; for caption grounding the
# attachment is replaced by the caption text.
VIDEO_GROUNDED = frozenset({"direct_audio", "subtask_v2o", "subtask_o2e", "subtask_e2c"})


def default_templates() -> dict[str, PromptTemplate]:
    return {name: PromptTemplate(name, _DEFAULT_BODIES[name]) for name in TEMPLATE_NAMES}


def for_caption_grounding(template: PromptTemplate) -> PromptTemplate:
    """Variant of a video-grounded template that reads the video caption instead of frames."""
    if template.name not in VIDEO_GROUNDED:
        raise PromptError(f"template {template.name!r} is not video-grounded")
    if "video_caption" in template.required_vars:
        return template
    body = template.body.replace("This video has no sound.", "A silent video is described below.", 1)
    return PromptTemplate(template.name, _CAPTION_GROUNDING + body)


def load_templates(path: str | Path | None = None, overrides: Mapping[str, Mapping] | None = None) -> dict[str, PromptTemplate]:
    """Defaults, with bodies replaced from a TOML file and/or an already-parsed table."""
    templates = default_templates()
    tables: dict[str, Mapping] = {}
    if path is not None:
        with open(path, "rb") as fh:
            tables.update(tomllib.load(fh))
    if overrides:
        tables.update(overrides)
    for name, table in tables.items():
        if name not in templates:
            raise PromptError(f"unknown template {name!r} in override file")
        if "body" not in table:
            raise PromptError(f"template {name!r} override has no body")
        templates[name] = PromptTemplate(name, str(table["body"]))
    return templates
