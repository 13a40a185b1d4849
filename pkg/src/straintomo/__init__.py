"""Strain tensor tomography from scanning precession electron diffraction.

Modules
-------
crystal      reciprocal lattices, Bragg peaks, zone-axis orientations
deformation  piecewise-affine and dislocation phantoms, beam averages
diffraction  kinematical, precessed and high-energy pattern simulators
peaks        centre-of-mass and registration disk detection
tomo         transverse/longitudinal ray transforms and acquisition geometry
recon        TV-regularized reconstruction and error analysis
io           TVF containers and text/raster outputs
cli          ``python -m straintomo`` pipeline
"""
from .crystal import IdealCrystal, enumerate_peaks, silicon
from .deformation import (DeformationField, DislocationSpec, PhantomSpec, dislocation_field,
                          sample_layered_phantom)
from .diffraction import (DetectorGrid, DiffractionPattern, PrecessionConfig, Probe,
                          simulate_precessed, spot_shape)
from .grid import Grid
from .peaks import centres_to_tensor, detect, disk_set, recommend_alpha
from .recon import ReconConfig, error_report, extract_strain, reconstruct_tv
from .tomo import (AcquisitionGeometry, RayTransform, TensorSinogram, TensorVolume,
                   VectorVolume, trt_adjoint, trt_forward, zone_axis_geometry)

__version__ = "0.1.0"
