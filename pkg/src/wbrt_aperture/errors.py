"""Exception types shared across the pipeline."""


class FormatError(ValueError):
    """A container, image file, or config document is malformed."""


class MissingStructureError(FormatError):
    """A structure label required by the active configuration is absent."""

    def __init__(self, label: str, detail: str = ""):
        self.label = label
        msg = f"required structure '{label}' is missing"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class PhantomValidationError(ValueError):
    """A phantom spec violates one or more containment invariants."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(violations))


class SegmentationFailureError(RuntimeError):
    """Threshold segmentation produced nothing for a required label."""


class DegeneratePerturbationError(RuntimeError):
    """A perturbation emptied a required silhouette."""


class LandmarkInfeasibleError(RuntimeError):
    """Computed landmarks violate their ordering invariants."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("landmark ordering violated: " + "; ".join(violations))


class ApertureDegenerateError(RuntimeError):
    """Polygon assembly produced a self-intersecting or empty shape."""


class PipelineError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
