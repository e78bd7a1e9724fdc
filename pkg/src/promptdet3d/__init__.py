"""Desk-scale promptable monocular 3D object detection with an AP3D evaluation kit."""
from .geometry import Box3D, Intrinsics, iou3d, iou3d_mc, make_rays, project_box, rot6d_to_matrix
from .interpreter import Prompt, PromptSet
from .kernels import BACKEND
from .model import PromptDet3D

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Box3D",
    "Intrinsics",
    "Prompt",
    "PromptDet3D",
    "PromptSet",
    "iou3d",
    "iou3d_mc",
    "make_rays",
    "project_box",
    "rot6d_to_matrix",
]
