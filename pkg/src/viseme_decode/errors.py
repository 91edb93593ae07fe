"""Exception hierarchy shared by all pipeline stages."""


class VisemeDecodeError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class ValidationError(VisemeDecodeError, ValueError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class IntegrityError(ValidationError):
    pass


class UnsupportedFormatError(ValidationError):
    pass


class UnmappedPhonemeError(ValidationError, KeyError):
    def __init__(self, labels):
        self.labels = list(labels)
        super().__init__(f"unmapped phoneme(s): {', '.join(map(repr, self.labels))}")

    def __str__(self):
        return self.args[0]


class ConfigError(ValidationError):
    pass


class StageMissingError(ValidationError):
    """A pipeline stage ran before the stage that produces its inputs."""

    def __init__(self, stage, needed):
        self.stage = stage
        self.needed = needed
        super().__init__(f"'{stage}' needs outputs of '{needed}'; run `viseme-decode {needed}` first")
