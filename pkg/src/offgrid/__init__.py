"""Off-grid stochastic inverse scattering for ultrasound RF data.

The package fits a set of point scatterers with continuous positions, together
with the physical parameters of the measurement model, directly to raw RF
channel data by stochastic gradient descent. Delay-and-sum, minimum-variance,
delay-multiply-and-sum and regularized (RED) beamformers are included as
baselines.
"""

from .core import (ModelParams, NumericalError, RFDataCube, ScattererField, TransducerGeometry,
                   TransmitScheme, ValidationError, validate_acquisition)

__version__ = "0.1.0"

__all__ = [
    "ModelParams", "NumericalError", "RFDataCube", "ScattererField", "TransducerGeometry",
    "TransmitScheme", "ValidationError", "validate_acquisition", "__version__",
]
