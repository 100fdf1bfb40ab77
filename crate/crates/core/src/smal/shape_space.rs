//! Linear PCA shape space over neutral-pose meshes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::pca;
use crate::mesh::{Mesh, Vec3};
use crate::{Error, Result};

/// `shape(β) = mean + B β` over stacked `[x0, y0, z0, x1, ...]` vertex vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ShapeSpaceFile", try_from = "ShapeSpaceFile")]
pub struct ShapeSpace {
    pub mean: DVector<f64>,
    /// Orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Variance along each column, descending.
    pub eigenvalues: Vec<f64>,
}

/// Dense matrix as stored in model files.
#[derive(Serialize, Deserialize)]
pub(crate) struct MatrixFile {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl MatrixFile {
    pub(crate) fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        Self {
            rows,
            cols,
            data: m.transpose().as_slice().to_vec(),
        }
    }

    pub(crate) fn into_matrix(self) -> std::result::Result<DMatrix<f64>, String> {
        if self.data.len() != self.rows * self.cols {
            return Err(format!(
                "matrix has {} entries for shape {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            ));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct ShapeSpaceFile {
    mean_shape: Vec<f64>,
    basis: MatrixFile,
    eigenvalues: Vec<f64>,
}

impl From<ShapeSpace> for ShapeSpaceFile {
    fn from(s: ShapeSpace) -> Self {
        Self {
            mean_shape: s.mean.as_slice().to_vec(),
            basis: MatrixFile::from_matrix(&s.basis),
            eigenvalues: s.eigenvalues,
        }
    }
}

impl TryFrom<ShapeSpaceFile> for ShapeSpace {
    type Error = String;

    fn try_from(f: ShapeSpaceFile) -> std::result::Result<Self, String> {
        let s = ShapeSpace {
            mean: DVector::from_vec(f.mean_shape),
            basis: f.basis.into_matrix()?,
            eigenvalues: f.eigenvalues,
        };
        s.check().map_err(|e| e.to_string())?;
        Ok(s)
    }
}

impl ShapeSpace {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.mean.len() / 3
    }

    pub fn check(&self) -> Result<()> {
        if !self.mean.len().is_multiple_of(3) {
            return Err(Error::InvalidArgument(
                "mean shape length is not a multiple of 3".into(),
            ));
        }
        if self.basis.nrows() != self.mean.len() || self.basis.ncols() != self.eigenvalues.len() {
            return Err(Error::Dimension {
                what: "shape basis",
                expected: self.mean.len(),
                got: self.basis.nrows(),
            });
        }
        if self.eigenvalues.windows(2).any(|w| w[1] > w[0])
            || self.eigenvalues.iter().any(|&e| e < 0.0)
        {
            return Err(Error::InvalidArgument(
                "eigenvalues must be non-negative and descending".into(),
            ));
        }
        Ok(())
    }

    pub fn mean_vertices(&self) -> Vec<Vec3> {
        unstack(self.mean.as_slice())
    }

    /// Neutral vertices for `beta`; a short `beta` is padded with zeros.
    pub fn reconstruct(&self, beta: &[f64]) -> Result<Vec<Vec3>> {
        if beta.len() > self.dim() {
            return Err(Error::Dimension {
                what: "shape coefficients",
                expected: self.dim(),
                got: beta.len(),
            });
        }
        let b = DVector::from_column_slice(beta);
        let v = &self.mean + self.basis.columns(0, beta.len()) * b;
        Ok(unstack(v.as_slice()))
    }

    /// Least-squares coefficients of `vertices` on the first `n` components.
    pub fn project(&self, vertices: &[Vec3], n: usize) -> Result<Vec<f64>> {
        if vertices.len() != self.vertex_count() {
            return Err(Error::Dimension {
                what: "mesh vertex count",
                expected: self.vertex_count(),
                got: vertices.len(),
            });
        }
        let n = n.min(self.dim());
        let d = DVector::from_vec(stack(vertices)) - &self.mean;
        Ok((self.basis.columns(0, n).transpose() * d)
            .as_slice()
            .to_vec())
    }

    /// Adjoint of [`ShapeSpace::reconstruct`] for a gradient over vertices.
    pub fn backward(&self, grad_vertices: &[Vec3], n: usize) -> Vec<f64> {
        let g = DVector::from_vec(stack(grad_vertices));
        (self.basis.columns(0, n).transpose() * g)
            .as_slice()
            .to_vec()
    }
}

pub fn stack(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub fn unstack(s: &[f64]) -> Vec<Vec3> {
    s.chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect()
}

/// PCA shape space of neutral-pose meshes with `n_components` columns.
pub fn build_shape_space(meshes: &[Mesh], n_components: usize) -> Result<ShapeSpace> {
    let Some(first) = meshes.first() else {
        return Err(Error::Empty("mesh list"));
    };
    let v = first.vertex_count();
    if let Some(m) = meshes.iter().find(|m| m.vertex_count() != v) {
        return Err(Error::Dimension {
            what: "mesh vertex count",
            expected: v,
            got: m.vertex_count(),
        });
    }
    let mut samples = DMatrix::zeros(meshes.len(), 3 * v);
    for (i, m) in meshes.iter().enumerate() {
        samples.row_mut(i).copy_from_slice(&stack(&m.vertices));
    }
    let p = pca(&samples, n_components)?;
    Ok(ShapeSpace {
        mean: p.mean,
        basis: p.components,
        eigenvalues: p.eigenvalues,
    })
}
