"""Uncertainty-aware linear triangulation, its baselines, and camera-center resection."""

from .errors import (AllSourcesZero, CheiralityError, DegenerateParallax, MissingScale,
                     RankDeficient, SchemaError, TriangulationError, TwoViewOnly)
from .geometry import (CameraIntrinsics, CameraPose, Observation, PoseUncertainty, Scene,
                       Track, View, los_direction, project, sample_noisy_view)
from .kernels import BACKEND
from .resection import estimate_camera_center
from .residuals import (ALL_SOURCES, INTERSECTION_SOURCES, RESECTION_SOURCES, jac_center,
                        jac_intrinsic_entry, jac_pixel, jac_point, jac_rotation, residual,
                        residual_covariance)
from .sceneio import dump_scene, load_scene
from .triangulation import (LostWeights, Method, PointEstimate, bootstrap_range, lost_weights,
                            point_covariance, triangulate, triangulate_dlt, triangulate_hs,
                            triangulate_lost, triangulate_lostu, triangulate_midpoint)

__version__ = "0.1.0"
