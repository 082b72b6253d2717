"""Exception hierarchy.

``DataError`` subclasses signal problems with the input data (CLI exit 2);
``MethodError`` subclasses signal that an inferential method cannot be
carried out on otherwise valid data (CLI exit 3).
"""


class ClusterKitError(Exception):
    pass


class DataError(ClusterKitError):
    pass


class MethodError(ClusterKitError):
    pass


class MissingColumn(DataError):
    pass


class NonNumericCell(DataError):
    pass


class EmptyFile(DataError):
    pass


class TooFewClusters(DataError):
    pass


class InvalidNesting(DataError):
    pass


class RankDeficient(MethodError):
    pass


class AllDeletionsSingular(MethodError):
    pass


class NotComputable(MethodError):
    pass


class TooFewDeletions(MethodError):
    pass


class ZeroVariance(MethodError):
    pass


class ZeroPartialVariance(MethodError):
    pass


class DegenerateTreatment(MethodError):
    """Raised when a treatment column is all treated or all control."""


class TooManyDegenerate(MethodError):
    pass


class NoBracket(MethodError):
    pass


class TooFewAssignments(MethodError):
    pass
