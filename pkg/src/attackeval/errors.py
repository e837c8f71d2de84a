"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps :class:`UserError` subclasses to exit status 1 and
:class:`DataError` subclasses to exit status 2.
"""


class AttackEvalError(Exception):
    """Base class for all errors raised by this package."""


class UserError(AttackEvalError):
    """Bad invocation or configuration supplied by the caller."""


class ConfigError(UserError):
    """Unknown round, missing table entry, inconsistent flags."""


class DataError(AttackEvalError):
    """Input data is malformed, corrupt, or unreachable."""


class ParseError(DataError):
    def __init__(self, message, source=None, index=None):
        self.source = source
        self.index = index
        where = ""
        if source is not None:
            where = f"{source}"
            if index is not None:
                where += f":{index}"
            where += ": "
        super().__init__(where + message)


class FetchError(DataError):
    def __init__(self, url, reason):
        self.url = url
        super().__init__(f"failed to retrieve {url}: {reason}")


class IntegrityError(DataError):
    """Checksum mismatch against the lockfile."""


class UnmappedLabel(AttackEvalError):
    def __init__(self, label, round_id):
        self.label = label
        self.round_id = round_id
        super().__init__(f"label {label!r} has no mapping for round {round_id}")


class EmptyScopeError(AttackEvalError):
    def __init__(self, scope):
        self.scope = scope
        super().__init__(f"no substeps match scope {scope}")


class UndefinedScoreError(AttackEvalError):
    """Raised when reading the value of a ratio whose denominator is zero."""


class UnclassifiedStepError(ConfigError):
    def __init__(self, step_id, technique_id):
        self.step_id = step_id
        self.technique_id = technique_id
        super().__init__(
            f"step {step_id}: technique {technique_id} is not in the classification "
            "table and the step has no entity action; add a table entry or a kind"
        )
