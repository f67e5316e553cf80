//! Orthonormal DCT-II by direct evaluation of the cosine sums.
//!
//! The 2-D transform is separable; both directions apply the row transform
//! first and the column transform second. The evaluation order is fixed so
//! results are reproducible bit for bit.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::block::Dims;

pub struct DctBasis {
    dims: Dims,
    /// `rows[k * R + i] = w_k cos(pi/R (i + 1/2) k)`
    rows: Vec<f64>,
    /// `cols[l * C + j] = w_l cos(pi/C (j + 1/2) l)`
    cols: Vec<f64>,
    /// Full linear map: `matrix[(k*C + l) * n + (i*C + j)]`.
    matrix: Vec<f64>,
}

fn basis_1d(size: usize) -> Vec<f64> {
    let n = size as f64;
    let mut out = Vec::with_capacity(size * size);
    for k in 0..size {
        let w = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for i in 0..size {
            out.push(w * (PI / n * (i as f64 + 0.5) * k as f64).cos());
        }
    }
    out
}

impl DctBasis {
    fn build(dims: Dims) -> Self {
        let (r, c) = (dims.rows, dims.cols);
        let rows = basis_1d(r);
        let cols = basis_1d(c);
        let n = r * c;
        let mut matrix = vec![0.0; n * n];
        for k in 0..r {
            for l in 0..c {
                for i in 0..r {
                    for j in 0..c {
                        matrix[(k * c + l) * n + i * c + j] = rows[k * r + i] * cols[l * c + j];
                    }
                }
            }
        }
        DctBasis {
            dims,
            rows,
            cols,
            matrix,
        }
    }

    /// Shared basis for a supported block shape.
    pub fn get(dims: Dims) -> &'static DctBasis {
        static STANDARD: OnceLock<DctBasis> = OnceLock::new();
        static TOY: OnceLock<DctBasis> = OnceLock::new();
        if dims == Dims::TOY {
            TOY.get_or_init(|| DctBasis::build(Dims::TOY))
        } else {
            assert_eq!(dims, Dims::STANDARD, "unsupported dims {dims}");
            STANDARD.get_or_init(|| DctBasis::build(Dims::STANDARD))
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Row-major `n × n` matrix mapping flattened pixels to flattened
    /// coefficients. Orthonormal.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let (r, c) = (self.dims.rows, self.dims.cols);
        debug_assert_eq!(input.len(), r * c);
        let mut tmp = vec![0.0; r * c];
        for i in 0..r {
            for l in 0..c {
                let mut acc = 0.0;
                for j in 0..c {
                    acc += input[i * c + j] * self.cols[l * c + j];
                }
                tmp[i * c + l] = acc;
            }
        }
        let mut out = vec![0.0; r * c];
        for k in 0..r {
            for l in 0..c {
                let mut acc = 0.0;
                for i in 0..r {
                    acc += self.rows[k * r + i] * tmp[i * c + l];
                }
                out[k * c + l] = acc;
            }
        }
        out
    }

    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        let (r, c) = (self.dims.rows, self.dims.cols);
        debug_assert_eq!(coeffs.len(), r * c);
        let mut tmp = vec![0.0; r * c];
        for k in 0..r {
            for j in 0..c {
                let mut acc = 0.0;
                for l in 0..c {
                    acc += coeffs[k * c + l] * self.cols[l * c + j];
                }
                tmp[k * c + j] = acc;
            }
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                let mut acc = 0.0;
                for k in 0..r {
                    acc += self.rows[k * r + i] * tmp[k * c + j];
                }
                out[i * c + j] = acc;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_is_orthonormal() {
        for dims in [Dims::STANDARD, Dims::TOY] {
            let b = DctBasis::get(dims);
            let n = dims.len();
            let m = b.matrix();
            for a in 0..n {
                for bb in 0..n {
                    let dot: f64 = (0..n).map(|p| m[a * n + p] * m[bb * n + p]).sum();
                    let want = if a == bb { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12, "{dims} rows {a},{bb}: {dot}");
                }
            }
        }
    }

    #[test]
    fn separable_matches_matrix_product() {
        let b = DctBasis::get(Dims::STANDARD);
        let x: Vec<f64> = (0..64).map(|i| ((i * 37) % 255) as f64 - 128.0).collect();
        let sep = b.forward(&x);
        let m = b.matrix();
        for k in 0..64 {
            let direct: f64 = (0..64).map(|p| m[k * 64 + p] * x[p]).sum();
            assert!((direct - sep[k]).abs() < 1e-9);
        }
        let back = b.inverse(&sep);
        for p in 0..64 {
            assert!((back[p] - x[p]).abs() < 1e-9);
        }
    }

    #[test]
    fn toy_transform_values() {
        let b = DctBasis::get(Dims::TOY);
        let d = b.forward(&[0.0, 255.0]);
        assert!((d[0] - 180.312_229_202_569_6).abs() < 1e-9);
        assert!((d[1] + 180.312_229_202_569_6).abs() < 1e-9);
    }
}
