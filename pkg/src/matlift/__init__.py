"""matlift: lift per-view material-similarity maps into a queryable 3D cloud.

Pipeline: render views of an asset, query a similarity oracle for a click,
back-project the similarity maps through depth into a 3D point cloud, index
it (IVF-flat), and reconstruct multiview-consistent selection masks from any
viewpoint by kNN majority voting.
"""

from .errors import (
    MatliftError, MeshLoadError, OracleError, UnselectableMaterialError,
    ValidationError,
)
from .lift import (
    IvfIndex, SelectionParams, SelectionSession, SimilarityCloud, backproject,
    build_index, knn_query, reconstruct_view, select, vote,
)
from .oracle import (
    Click, FileOracle, NoiseModel, OracleRequest, SimilarityOracle,
    SyntheticOracle, duplicate_click_frame, sample_click,
)
from .render import Bvh, UvMap, ViewBundle, bake_uv, build_bvh, hit_point, render_view
from .scene import (
    Camera, Mesh, ViewManifest, fibonacci_cameras, load_mesh, sort_cameras,
    subsample_views, trajectory_cameras,
)

__version__ = "0.1.0"

__all__ = [
    "Bvh", "Camera", "Click", "FileOracle", "IvfIndex", "MatliftError",
    "Mesh", "MeshLoadError", "NoiseModel", "OracleError", "OracleRequest",
    "SelectionParams", "SelectionSession", "SimilarityCloud",
    "SimilarityOracle", "SyntheticOracle", "UnselectableMaterialError",
    "UvMap", "ValidationError", "ViewBundle", "ViewManifest", "backproject",
    "bake_uv", "build_bvh", "build_index", "duplicate_click_frame",
    "fibonacci_cameras", "hit_point", "knn_query", "load_mesh",
    "reconstruct_view", "render_view", "sample_click", "select",
    "sort_cameras", "subsample_views", "trajectory_cameras", "vote",
]
