"""Service and app label sets for the two classification tasks."""

from __future__ import annotations

import enum


class ServiceClass(enum.IntEnum):
    AudioStreaming = 0
    VideoStreaming = 1
    VideoCall = 2


class AppClass(enum.IntEnum):
    Spotify = 0
    GoogleMusic = 1
    YouTube = 2
    Vimeo = 3
    Skype = 4
    WhatsApp = 5

    def service(self) -> ServiceClass:
        return _APP_SERVICE[self]


_APP_SERVICE = {
    AppClass.Spotify: ServiceClass.AudioStreaming,
    AppClass.GoogleMusic: ServiceClass.AudioStreaming,
    AppClass.YouTube: ServiceClass.VideoStreaming,
    AppClass.Vimeo: ServiceClass.VideoStreaming,
    AppClass.Skype: ServiceClass.VideoCall,
    AppClass.WhatsApp: ServiceClass.VideoCall,
}

TASKS = {"service": ServiceClass, "app": AppClass}


def parse_label(text: str | None) -> AppClass | ServiceClass | None:
    """Resolve a stored label name; app names win over service names."""
    if text is None or text == "":
        return None
    if text in AppClass.__members__:
        return AppClass[text]
    if text in ServiceClass.__members__:
        return ServiceClass[text]
    raise ValueError(f"unknown label {text!r}")


def label_index(label, task: str) -> int:
    """Class index of ``label`` for the ``service`` or ``app`` task."""
    if task == "app":
        if not isinstance(label, AppClass):
            raise ValueError(f"app task needs an app label, got {label!r}")
        return int(label)
    if task == "service":
        if isinstance(label, AppClass):
            return int(label.service())
        if isinstance(label, ServiceClass):
            return int(label)
        raise ValueError(f"no service label in {label!r}")
    raise ValueError(f"unknown task {task!r}")


def class_names(task: str) -> list[str]:
    return [c.name for c in TASKS[task]]
