"""meshwarp: geometric texture transfer between camera views of a body mesh.

Given per-frame body meshes, cameras for a real and a virtual view, and the
real view's RGB frames, this package re-synthesizes the rough foreground
appearance of the virtual view: face-index rasterization, visible-texture
accumulation, geodesic nearest-neighbor fill with a symmetric body-part
fallback, mesh-derived backward flow with warping/compositing, and the
matching evaluation metrics.
"""

from .geodesy import (EUCLIDEAN, GEODESIC, NeighborTable, build_neighbor_table,
                      face_adjacency_graph, load_table, nearest_faces, save_table)
from .mesh import (BodyMesh, MeshSequence, SymmetricPartMap, load_face_labels,
                   load_mesh, load_mesh_sequence, load_obj, load_sym_pairs,
                   mirror_label, save_mesh_sequence, save_obj)
from .metrics import MetricReport, evaluate_sequence, huber, masked_metric, psnr, ssim
from .motion import FlowField, composite, flow_between, flow_to_rgb, temporal_compose, warp
from .pipeline import JobConfig, ablation_report, run_pipeline
from .raster import (Camera, FaceBuffer, from_weak_perspective, mask_of, paint_faces,
                     rasterize, segmentation_of, shade, depth_of)
from .synthetic import Humanoid, SceneSpec, build_humanoid, face_color_chart, make_synthetic
from .transfer import (BACKGROUND, DIRECT, MODES, NEIGHBOR, SENTINEL, SENTINEL_COLOR,
                       SYMMETRIC, TextureAccumulator, TransferResult, provenance_image,
                       step1_accumulate, step2_fill, step3_symmetric, transfer_sequence)

__version__ = "0.1.0"
