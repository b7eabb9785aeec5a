use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Inverse of an arrowhead information matrix
///
/// ```text
///     I = | P   Q |      P: J×J dense, Q: J×G, D: G×G diagonal
///         | Q'  D |
/// ```
///
/// kept in factored form. With S = P − Q D⁻¹ Q' the inverse is
/// `[[S⁻¹, −S⁻¹QD⁻¹], [−D⁻¹Q'S⁻¹, D⁻¹ + D⁻¹Q'S⁻¹QD⁻¹]]`, so quadratic forms
/// never need the dense (J+G)² matrix.
#[derive(Debug, Clone)]
pub struct Covariance {
    s_inv: DMatrix<f64>,
    cross: DMatrix<f64>,
    diag: Vec<f64>,
}

impl Covariance {
    /// Builds the inverse from the information blocks; fails when I is not
    /// positive definite.
    pub fn from_information(p: &DMatrix<f64>, q: &DMatrix<f64>, d: &[f64]) -> Result<Self> {
        if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::SingularVcov);
        }
        let s = schur(p, q, d);
        let s_inv = if s.nrows() == 0 { s } else { s.cholesky().ok_or(Error::SingularVcov)?.inverse() };
        Ok(Self { s_inv, cross: q.clone(), diag: d.to_vec() })
    }

    /// Number of slope parameters J.
    pub fn n_beta(&self) -> usize {
        self.s_inv.nrows()
    }

    /// Number of intercepts G.
    pub fn n_intercepts(&self) -> usize {
        self.diag.len()
    }

    pub fn dim(&self) -> usize {
        self.n_beta() + self.n_intercepts()
    }

    /// Covariance block of the slopes.
    pub fn beta_block(&self) -> &DMatrix<f64> {
        &self.s_inv
    }

    /// g' V g for g = (g_β, g_α).
    pub fn quad_form(&self, g_beta: &[f64], g_alpha: &[f64]) -> f64 {
        let u = self.reduce(g_beta, g_alpha);
        let su = &self.s_inv * &u;
        let beta_part = u.dot(&su);
        let alpha_part: f64 = g_alpha.iter().zip(&self.diag).map(|(g, d)| g * g / d).sum();
        beta_part + alpha_part
    }

    /// u = g_β − Q D⁻¹ g_α.
    fn reduce(&self, g_beta: &[f64], g_alpha: &[f64]) -> DVector<f64> {
        let mut u = DVector::from_column_slice(g_beta);
        for (k, (&ga, &d)) in g_alpha.iter().zip(&self.diag).enumerate() {
            if ga != 0.0 {
                u.axpy(-ga / d, &self.cross.column(k), 1.0);
            }
        }
        u
    }

    /// Standard error of intercept `k`.
    pub fn intercept_se(&self, k: usize) -> f64 {
        let mut e = vec![0.0; self.n_intercepts()];
        e[k] = 1.0;
        self.quad_form(&vec![0.0; self.n_beta()], &e).sqrt()
    }

    /// Full (J+G)×(J+G) covariance matrix.
    pub fn dense(&self) -> DMatrix<f64> {
        let j = self.n_beta();
        let g = self.n_intercepts();
        let mut v = DMatrix::zeros(j + g, j + g);
        // −S⁻¹ Q D⁻¹
        let mut qd = self.cross.clone();
        for k in 0..g {
            qd.column_mut(k).scale_mut(1.0 / self.diag[k]);
        }
        let off = -(&self.s_inv * &qd);
        v.view_mut((0, 0), (j, j)).copy_from(&self.s_inv);
        v.view_mut((0, j), (j, g)).copy_from(&off);
        v.view_mut((j, 0), (g, j)).copy_from(&off.transpose());
        let aa = qd.transpose() * &self.s_inv * &qd;
        for r in 0..g {
            for c in 0..g {
                v[(j + r, j + c)] = aa[(r, c)] + if r == c { 1.0 / self.diag[r] } else { 0.0 };
            }
        }
        v
    }
}

/// S = P − Q D⁻¹ Q'.
pub(crate) fn schur(p: &DMatrix<f64>, q: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut s = p.clone();
    for (k, &dk) in d.iter().enumerate() {
        let col = q.column(k);
        s.ger(-1.0 / dk, &col, &col, 1.0);
    }
    s
}
