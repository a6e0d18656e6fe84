class DuelError(ValueError):
    """Base class for every error raised by this package."""


class RevealUnmasked(DuelError):
    pass


class InvalidToken(DuelError):
    pass


class InvalidPartition(DuelError):
    pass


class EmptyCorpus(DuelError):
    pass


class LengthMismatch(DuelError):
    pass


class NonUniformLength(DuelError):
    def __init__(self, line_number, expected, got):
        super().__init__(
            f"line {line_number}: sequence has length {got}, expected {expected}"
        )
        self.line_number = line_number
        self.expected = expected
        self.got = got


class NoMaskedPositions(DuelError):
    pass


class EmptySelection(DuelError):
    """A rule returned no positions, or positions that are not masked."""


class EnumerationCap(DuelError):
    pass


class BlockMismatch(DuelError):
    pass


class IllDefinedGap(DuelError):
    pass


class RuleSyntaxError(DuelError):
    pass
