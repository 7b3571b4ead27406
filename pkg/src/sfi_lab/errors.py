class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class DegenerateInputError(ValueError):
    """Input is well-formed but carries no information for the estimate (e.g. zero variance)."""


class ConfigError(ValueError):
    """Configuration failed validation.

    ``problems`` lists every violated constraint, each naming the offending field.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
