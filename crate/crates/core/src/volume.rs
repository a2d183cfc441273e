//! Domain types for diffusion datasets: the 4D signal, its gradient table,
//! brain masks and rectangular regions, plus file I/O for each.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array3, Array4, ArrayView3, Axis, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::nifti::{read_nifti, write_nifti, NiftiImage};

pub const DEFAULT_B0_THRESHOLD: f64 = 50.0;

const IDENTITY: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// 4D signal indexed `(x, y, z, volume)` with its voxel geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionVolume {
    data: Array4<f64>,
    voxel_size: [f64; 3],
    affine: [[f64; 4]; 4],
}

impl DiffusionVolume {
    pub fn new(data: Array4<f64>, voxel_size: [f64; 3], affine: [[f64; 4]; 4]) -> Result<Self> {
        if data.shape().iter().any(|&d| d == 0) {
            return Err(arg_err!("volume has an empty dimension: {:?}", data.shape()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(arg_err!("volume contains NaN or Inf"));
        }
        Ok(Self {
            data,
            voxel_size,
            affine,
        })
    }

    /// Volume with 1 mm isotropic voxels and an identity affine.
    pub fn from_data(data: Array4<f64>) -> Result<Self> {
        Self::new(data, [1.0; 3], IDENTITY)
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f64> {
        self.data
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn affine(&self) -> &[[f64; 4]; 4] {
        &self.affine
    }

    pub fn shape(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn spatial_shape(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    pub fn n_volumes(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn channel(&self, v: usize) -> ArrayView3<'_, f64> {
        self.data.index_axis(Axis(3), v)
    }

    /// Replaces the geometry, keeping the data.
    pub fn with_geometry(mut self, voxel_size: [f64; 3], affine: [[f64; 4]; 4]) -> Self {
        self.voxel_size = voxel_size;
        self.affine = affine;
        self
    }

    /// New data on the same geometry.
    pub fn with_data(&self, data: Array4<f64>) -> Result<Self> {
        Self::new(data, self.voxel_size, self.affine)
    }
}

/// b-values (s/mm²) and unit gradient directions, one per volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientTable {
    bvals: Vec<f64>,
    bvecs: Vec<[f64; 3]>,
    b0_threshold: f64,
}

impl GradientTable {
    pub fn new(bvals: Vec<f64>, bvecs: Vec<[f64; 3]>, b0_threshold: f64) -> Result<Self> {
        if bvals.len() != bvecs.len() {
            return Err(arg_err!(
                "{} b-values but {} b-vectors",
                bvals.len(),
                bvecs.len()
            ));
        }
        if bvals.is_empty() {
            return Err(arg_err!("empty gradient table"));
        }
        if !(b0_threshold >= 0.0) {
            return Err(arg_err!("b0 threshold must be >= 0, got {b0_threshold}"));
        }
        for (i, (&b, g)) in bvals.iter().zip(&bvecs).enumerate() {
            if !b.is_finite() || b < 0.0 {
                return Err(arg_err!("b-value {i} is {b}, expected a finite value >= 0"));
            }
            if b > b0_threshold {
                let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                if !(1.0 - 1e-3..=1.0 + 1e-3).contains(&n) {
                    return Err(arg_err!(
                        "b-vector {i} has norm {n:.6}, expected unit length for b = {b}"
                    ));
                }
            }
        }
        if !bvals.iter().any(|&b| b <= b0_threshold) {
            return Err(arg_err!(
                "no b=0 volume (no b-value <= {b0_threshold})"
            ));
        }
        Ok(Self {
            bvals,
            bvecs,
            b0_threshold,
        })
    }

    /// `n_b0` unweighted volumes followed by `n_dirs` directions spread over a
    /// hemisphere with a Fibonacci lattice, all at `bval`.
    pub fn single_shell(n_b0: usize, n_dirs: usize, bval: f64) -> Result<Self> {
        let mut bvals = vec![0.0; n_b0];
        let mut bvecs = vec![[0.0; 3]; n_b0];
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        for i in 0..n_dirs {
            let z = 1.0 - (i as f64 + 0.5) / n_dirs as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            bvals.push(bval);
            bvecs.push([r * phi.cos(), r * phi.sin(), z]);
        }
        Self::new(bvals, bvecs, DEFAULT_B0_THRESHOLD)
    }

    pub fn len(&self) -> usize {
        self.bvals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bvals.is_empty()
    }

    pub fn bvals(&self) -> &[f64] {
        &self.bvals
    }

    pub fn bvecs(&self) -> &[[f64; 3]] {
        &self.bvecs
    }

    pub fn b0_threshold(&self) -> f64 {
        self.b0_threshold
    }

    pub fn is_b0(&self, i: usize) -> bool {
        self.bvals[i] <= self.b0_threshold
    }

    pub fn b0_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_b0(i)).collect()
    }

    pub fn dwi_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_b0(i)).collect()
    }

    /// Parses FSL text: one row of b-values, three rows of vector components.
    pub fn from_fsl_text(bvals: &str, bvecs: &str, b0_threshold: f64) -> Result<Self> {
        let parse_row = |line: &str, what: &str| -> Result<Vec<f64>> {
            line.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::Format(format!("{what}: cannot parse {t:?}")))
                })
                .collect()
        };
        let bval_rows: Vec<Vec<f64>> = bvals
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| parse_row(l, "bvals"))
            .collect::<Result<_>>()?;
        let bvals: Vec<f64> = match bval_rows.len() {
            1 => bval_rows.into_iter().next().unwrap(),
            // a single column is also common
            n if bval_rows.iter().all(|r| r.len() == 1) && n > 1 => {
                bval_rows.into_iter().map(|r| r[0]).collect()
            }
            n => return Err(Error::Format(format!("bvals: expected 1 row, found {n}"))),
        };
        let rows: Vec<Vec<f64>> = bvecs
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| parse_row(l, "bvecs"))
            .collect::<Result<_>>()?;
        if rows.len() != 3 {
            return Err(Error::Format(format!(
                "bvecs: expected 3 rows, found {}",
                rows.len()
            )));
        }
        if rows.iter().any(|r| r.len() != bvals.len()) {
            return Err(Error::Format(format!(
                "bvecs rows have lengths {:?} but there are {} b-values",
                rows.iter().map(Vec::len).collect::<Vec<_>>(),
                bvals.len()
            )));
        }
        let bvecs = (0..bvals.len())
            .map(|i| [rows[0][i], rows[1][i], rows[2][i]])
            .collect();
        Self::new(bvals, bvecs, b0_threshold).map_err(|e| match e {
            Error::Argument(m) => Error::Format(m),
            other => other,
        })
    }

    pub fn to_fsl_text(&self) -> (String, String) {
        let join = |it: &mut dyn Iterator<Item = f64>| {
            let mut s = String::new();
            for (i, v) in it.enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{v}");
            }
            s.push('\n');
            s
        };
        let bvals = join(&mut self.bvals.iter().copied());
        let mut bvecs = String::new();
        for c in 0..3 {
            bvecs.push_str(&join(&mut self.bvecs.iter().map(|g| g[c])));
        }
        (bvals, bvecs)
    }

    pub fn read_fsl(
        bvals_path: impl AsRef<Path>,
        bvecs_path: impl AsRef<Path>,
        b0_threshold: f64,
    ) -> Result<Self> {
        let (bp, gp) = (bvals_path.as_ref(), bvecs_path.as_ref());
        let bvals = fs::read_to_string(bp).map_err(|e| Error::io(bp, e))?;
        let bvecs = fs::read_to_string(gp).map_err(|e| Error::io(gp, e))?;
        Self::from_fsl_text(&bvals, &bvecs, b0_threshold)
    }

    pub fn write_fsl(&self, bvals_path: impl AsRef<Path>, bvecs_path: impl AsRef<Path>) -> Result<()> {
        let (bvals, bvecs) = self.to_fsl_text();
        let (bp, gp) = (bvals_path.as_ref(), bvecs_path.as_ref());
        fs::write(bp, bvals).map_err(|e| Error::io(bp, e))?;
        fs::write(gp, bvecs).map_err(|e| Error::io(gp, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrainMask {
    mask: Array3<bool>,
}

impl BrainMask {
    pub fn new(mask: Array3<bool>) -> Result<Self> {
        if !mask.iter().any(|&m| m) {
            return Err(arg_err!("empty mask"));
        }
        Ok(Self { mask })
    }

    pub fn full(shape: [usize; 3]) -> Self {
        Self {
            mask: Array3::from_elem(shape, true),
        }
    }

    pub fn array(&self) -> &Array3<bool> {
        &self.mask
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.mask.shape();
        [s[0], s[1], s[2]]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn contains(&self, [x, y, z]: [usize; 3]) -> bool {
        self.mask[[x, y, z]]
    }
}

/// Axis-aligned box of voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub offset: [usize; 3],
    pub shape: [usize; 3],
}

impl Region {
    pub fn new(offset: [usize; 3], shape: [usize; 3]) -> Result<Self> {
        if shape.iter().any(|&s| s == 0) {
            return Err(arg_err!("region shape {shape:?} is empty"));
        }
        Ok(Self { offset, shape })
    }

    pub fn check_within(&self, spatial: [usize; 3]) -> Result<()> {
        if self.shape.iter().any(|&s| s == 0) {
            return Err(arg_err!("region shape {:?} is empty", self.shape));
        }
        for a in 0..3 {
            if self.offset[a] + self.shape[a] > spatial[a] {
                return Err(arg_err!(
                    "region {:?}+{:?} exceeds volume shape {spatial:?}",
                    self.offset,
                    self.shape
                ));
            }
        }
        Ok(())
    }

    pub fn n_voxels(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.offset[a] && p[a] < self.offset[a] + self.shape[a])
    }

    /// Voxel coordinates in x-fastest order.
    pub fn voxels(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [ox, oy, oz] = self.offset;
        let [sx, sy, sz] = self.shape;
        (oz..oz + sz).flat_map(move |z| {
            (oy..oy + sy).flat_map(move |y| (ox..ox + sx).map(move |x| [x, y, z]))
        })
    }
}

fn image_to_4d(img: NiftiImage) -> Result<Array4<f64>> {
    let mut d = img.dims.clone();
    while d.len() > 4 && d.last() == Some(&1) {
        d.pop();
    }
    if d.len() > 4 {
        return Err(Error::Format(format!("expected at most 4 dimensions, got {:?}", img.dims)));
    }
    d.resize(4, 1);
    Array4::from_shape_vec((d[0], d[1], d[2], d[3]).f(), img.data)
        .map_err(|e| Error::Format(format!("voxel data does not match dims: {e}")))
}

pub fn load_volume(
    path: impl AsRef<Path>,
    bvals_path: impl AsRef<Path>,
    bvecs_path: impl AsRef<Path>,
) -> Result<(DiffusionVolume, GradientTable)> {
    load_volume_with_threshold(path, bvals_path, bvecs_path, DEFAULT_B0_THRESHOLD)
}

pub fn load_volume_with_threshold(
    path: impl AsRef<Path>,
    bvals_path: impl AsRef<Path>,
    bvecs_path: impl AsRef<Path>,
    b0_threshold: f64,
) -> Result<(DiffusionVolume, GradientTable)> {
    let img = read_nifti(path)?;
    let (pixdim, affine) = (img.pixdim, img.affine);
    let data = image_to_4d(img)?;
    let gtab = GradientTable::read_fsl(bvals_path, bvecs_path, b0_threshold)?;
    if gtab.len() != data.shape()[3] {
        return Err(Error::Format(format!(
            "volume has {} volumes but gradient table has {} entries",
            data.shape()[3],
            gtab.len()
        )));
    }
    let vol = DiffusionVolume::new(data, pixdim, affine).map_err(|e| Error::Format(e.to_string()))?;
    Ok((vol, gtab))
}

pub fn save_volume(vol: &DiffusionVolume, path: impl AsRef<Path>) -> Result<()> {
    let shape = vol.shape();
    // reversed-axes view iterates x fastest
    let data = vol.data().t().iter().copied().collect::<Vec<_>>();
    let img = NiftiImage {
        dims: shape.to_vec(),
        pixdim: vol.voxel_size,
        affine: vol.affine,
        data,
    };
    write_nifti(path, &img)
}

/// Writes a 3D scalar map using the geometry of `like`.
pub fn save_map(map: &Array3<f64>, like: &DiffusionVolume, path: impl AsRef<Path>) -> Result<()> {
    let s = map.shape();
    let img = NiftiImage {
        dims: s.to_vec(),
        pixdim: like.voxel_size,
        affine: like.affine,
        data: map.t().iter().copied().collect(),
    };
    write_nifti(path, &img)
}

pub fn load_map(path: impl AsRef<Path>) -> Result<Array3<f64>> {
    let img = read_nifti(path)?;
    let data = image_to_4d(img)?;
    if data.shape()[3] != 1 {
        return Err(Error::Format(format!(
            "expected a 3D map, got shape {:?}",
            data.shape()
        )));
    }
    Ok(data.index_axis_move(Axis(3), 0).as_standard_layout().to_owned())
}

/// Nonzero voxels of a 3D image become mask members.
pub fn load_mask(path: impl AsRef<Path>, vol: &DiffusionVolume) -> Result<BrainMask> {
    let map = load_map(path)?;
    let shape = [map.shape()[0], map.shape()[1], map.shape()[2]];
    if shape != vol.spatial_shape() {
        return Err(Error::Format(format!(
            "mask shape {shape:?} does not match volume {:?}",
            vol.spatial_shape()
        )));
    }
    BrainMask::new(map.mapv(|v| v != 0.0)).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_mask(mask: &BrainMask, like: &DiffusionVolume, path: impl AsRef<Path>) -> Result<()> {
    save_map(&mask.mask.mapv(|m| if m { 1.0 } else { 0.0 }), like, path)
}
