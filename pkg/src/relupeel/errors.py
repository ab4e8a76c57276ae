"""Exception types raised across the extraction toolkit."""


class ReluPeelError(Exception):
    """Base class for all toolkit-specific failures."""


class CriticalAtAnchor(ReluPeelError):
    """A neuron sits exactly on its hinge at the requested anchor point."""

    def __init__(self, layer, index, value):
        super().__init__(f"neuron ({layer},{index}) is critical at anchor (pre-act {value:.3e})")
        self.layer = layer
        self.index = index
        self.value = value


class InsufficientRank(ReluPeelError):
    """The reachable subspace at the anchor is too small for the requested solve."""


class ZeroProjection(ReluPeelError):
    """Target direction is orthogonal to the reachable subspace at this anchor."""


class ZeroDenominator(ReluPeelError):
    """Every candidate pivot coordinate of a ratio vector is numerically zero."""


class NotFirstLayer(ReluPeelError):
    """Axis probing around the hinge is inconsistent with a single first-layer toggle."""


class RankDeficient(ReluPeelError):
    """A least-squares system stayed rank deficient after resampling."""


class AmbiguousCluster(ReluPeelError):
    """Two row clusters can be merged either way; more hinge points are needed."""


class NeuronAlwaysOff(ReluPeelError):
    """No hinge for the target neuron was found within the search budget."""

    def __init__(self, layer, index, attempts):
        super().__init__(f"neuron ({layer},{index}) produced no hinge in {attempts} attempts")
        self.layer = layer
        self.index = index
        self.attempts = attempts


class NumericallyAmbiguous(ReluPeelError):
    """A solved coefficient falls inside the grey zone around the zero threshold."""


class LinearityViolation(ReluPeelError):
    """A probe that assumed one linear neighborhood toggled something else."""


class NonBinarySolution(ReluPeelError):
    """Selector unknowns of the output-layer system did not round to 0/1."""


class RankDeficientSystem(ReluPeelError):
    """The output-layer linear system does not determine the selectors."""


class Unrecoverable(ReluPeelError):
    """A neuron's sign stayed undecided after all re-analysis rounds."""


class TransportFailure(ReluPeelError):
    """A wire-oracle round trip failed; the request may be retried."""


class HandshakeError(ReluPeelError):
    """The remote oracle endpoint did not present a usable greeting."""
