__version__ = "0.1.0"

from .covariance import CovarianceModel
from .cox import PointPattern, sample_pattern
from .distances import IntegrationSpec, renyi_distance, shannon_distance
from .field import FieldRealization, TimeGrid, simulate_coefficients
from .manifold import SpherePoint
from .summaries import KGrid, k_empirical, k_model, k_scale
