"""Geometry-aware camera/LiDAR BEV fusion with spatially-aware state-space scans."""

from .aware_ssm import aware_ssm_forward, init_aware_ssm, scan_chunked, scan_sequential
from .bev_block import block_forward, init_block
from .bev_encoding import bev_encoding
from .gm_fusion import gm_fusion_forward, init_gm_fusion, init_network, network_forward
from .pillars import GridConfig, PointCloud, pillarize
from .scan_order import deserialize, scan_order, serialize
from .tensor import GradTape, Tensor, backward

__version__ = "0.1.0"
