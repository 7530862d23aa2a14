"""Regenerate the format fixtures with nibabel and pynrrd.

Run from this directory: python3 generate.py
"""
import numpy as np
import nibabel as nib
import nrrd

# 2x2x2 int16 volume, voxel value == canonical index i + 2*(j + 2*k)
data = np.arange(8, dtype=np.int16).reshape((2, 2, 2), order="F")
affine = np.array(
    [[1.5, 0.0, 0.0, -10.0], [0.0, 2.0, 0.0, 20.0], [0.0, 0.0, 2.5, 30.0], [0, 0, 0, 1]]
)
img = nib.Nifti1Image(data, affine)
img.header.set_data_dtype(np.int16)
nib.save(img, "ramp_2x2x2_i16.nii")
nib.save(img, "ramp_2x2x2_i16.nii.gz")

# float32 with intensity scaling: stored = raw, loaded = raw * 2 + 1
img = nib.Nifti1Image(data.astype(np.int16), affine)
img.header.set_slope_inter(2.0, 1.0)
nib.save(img, "ramp_scaled.nii")

# Complex voxels must be rejected.
c = np.zeros((2, 2, 2), dtype=np.complex64)
nib.save(nib.Nifti1Image(c, np.eye(4)), "complex.nii")

# NRRD, raw encoding, 1x1x3 constant 5
nrrd.write("const_1x1x3.nrrd", np.full((1, 1, 3), 5, dtype=np.uint8), {"encoding": "raw"})

# NRRD, gzip, LPS space with directions; same ramp as above
hdr = {
    "encoding": "gzip",
    "space": "left-posterior-superior",
    "space directions": np.array([[1.5, 0, 0], [0, 2.0, 0], [0, 0, 2.5]]),
    "space origin": np.array([10.0, -20.0, 30.0]),
}
nrrd.write("ramp_lps.nrrd", data.astype(np.float32), hdr, index_order="F")
