"""Turn coarse tabletop layouts into simulation-ready ones."""

from .errors import *  # noqa: F401,F403
from .layout import (LayoutScene, ObjectRecord, TableSpec, apply_pose_vector, make_scene, parse_layout,
                     serialize_layout, to_pose_vector)
from .assets import Catalog, build_catalog, retrieve_asset
from .sdf import SdfGrid, build_sdf_grid, query_sdf, query_sdf_gradient
from .physics import GeometryLibrary, PhysicsWeights, SceneInstance

__version__ = "0.1.0"
