"""Exception hierarchy. Each error knows its owning module and kind so the
CLI can print ``error:<module>:<kind>`` lines."""


class IsmpError(Exception):
    module = "ismp"

    @property
    def kind(self):
        return type(self).__name__


class GeometryError(IsmpError):
    module = "geometry"


class ParseError(GeometryError):
    pass


class EmptyCloud(GeometryError):
    pass


class BadCount(GeometryError):
    pass


class RegistrationError(IsmpError):
    module = "registration"


class RegistrationFailed(RegistrationError):
    def __init__(self, message, inlier_fraction=0.0):
        super().__init__(message)
        self.inlier_fraction = inlier_fraction


class DescriptorError(IsmpError):
    module = "descriptors"


class MissingNormals(DescriptorError):
    pass


class ShapeMismatch(DescriptorError):
    pass


class RowMismatch(DescriptorError):
    pass


class FilteringError(IsmpError):
    module = "filtering"


class TooFewRows(FilteringError):
    pass


class DegenerateWeights(FilteringError):
    pass


class ScoringError(IsmpError):
    module = "scoring"


class EmptyTraining(ScoringError):
    pass


class LengthMismatch(ScoringError):
    pass


class FormatError(ScoringError):
    pass


class VersionMismatch(ScoringError):
    pass


class EvaluationError(IsmpError):
    module = "evaluation"


class OneClassOnly(EvaluationError):
    pass


class LayoutError(EvaluationError):
    pass


class LabelLengthMismatch(EvaluationError):
    pass
