//! Cell-centred finite-volume stencil for the axisymmetric reaction-diffusion
//! balance, and the tape kernels built on it.
//!
//! For cell `p` with neighbours `q` across faces with geometric weight `a`,
//! one Jacobi sweep computes `C'_p = N_p / Den_p` with
//!
//! ```text
//! N_p   = Σ a·D_f·C_q + D_p·sb_p
//! Den_p = Σ a·D_f     + D_p·ab_p + KS_p
//! ```
//!
//! where `ab`, `sb` collect the Dirichlet faces (weight and weight × value)
//! and `D_f` is `D_p` in literal mode or the face average in flux mode.

use serde::{Deserialize, Serialize};

use crate::autodiff::FusedOp;
use crate::error::{Error, Result};
use crate::grid::AxiGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StencilMode {
    /// `D·∇²C`, diffusivity taken at the cell.
    #[default]
    Literal,
    /// `∇·(D∇C)`, diffusivity averaged onto faces.
    Flux,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    Dirichlet(f64),
    ZeroFlux,
}

/// Molarity conditions on the three outer faces. The axis is always a
/// symmetry (zero-flux) face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub outer: Face,
    pub top: Face,
    pub bottom: Face,
}

impl BoundarySpec {
    pub fn dirichlet(value: f64) -> Self {
        Self {
            outer: Face::Dirichlet(value),
            top: Face::Dirichlet(value),
            bottom: Face::Dirichlet(value),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let faces = [self.outer, self.top, self.bottom];
        if !faces.iter().any(|f| matches!(f, Face::Dirichlet(_))) {
            return Err(Error::Singular);
        }
        for f in faces {
            if let Face::Dirichlet(v) = f {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::contract(format!(
                        "Dirichlet value {v} must be finite and non-negative"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest Dirichlet value.
    pub fn max_value(&self) -> f64 {
        [self.outer, self.top, self.bottom]
            .iter()
            .filter_map(|f| match f {
                Face::Dirichlet(v) => Some(*v),
                Face::ZeroFlux => None,
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct Stencil {
    mode: StencilMode,
    offsets: Vec<usize>,
    nbr: Vec<usize>,
    weight: Vec<f64>,
    ab: Vec<f64>,
    sb: Vec<f64>,
}

impl Stencil {
    pub fn new(grid: &AxiGrid, bc: &BoundarySpec, mode: StencilMode) -> Result<Self> {
        bc.validate()?;
        let (nr, nz) = (grid.nr(), grid.nz());
        let (dr, dz) = (grid.dr(), grid.dz());
        let n = grid.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut nbr = Vec::with_capacity(4 * n);
        let mut weight = Vec::with_capacity(4 * n);
        let mut ab = vec![0.0; n];
        let mut sb = vec![0.0; n];
        offsets.push(0);
        let add_boundary = |face: Face, w: f64, ab: &mut f64, sb: &mut f64| {
            if let Face::Dirichlet(v) = face {
                *ab += w;
                *sb += w * v;
            }
        };
        for i in 0..nr {
            let ri = (i as f64 + 0.5) * dr;
            let a_in = i as f64 * dr / (ri * dr * dr);
            let a_out = (i + 1) as f64 * dr / (ri * dr * dr);
            let a_z = 1.0 / (dz * dz);
            for j in 0..nz {
                let p = grid.index(i, j);
                if i > 0 {
                    nbr.push(grid.index(i - 1, j));
                    weight.push(a_in);
                }
                if i + 1 < nr {
                    nbr.push(grid.index(i + 1, j));
                    weight.push(a_out);
                } else {
                    // face at half a cell from the centre
                    add_boundary(bc.outer, 2.0 * a_out, &mut ab[p], &mut sb[p]);
                }
                if j > 0 {
                    nbr.push(grid.index(i, j - 1));
                    weight.push(a_z);
                } else {
                    add_boundary(bc.bottom, 2.0 * a_z, &mut ab[p], &mut sb[p]);
                }
                if j + 1 < nz {
                    nbr.push(grid.index(i, j + 1));
                    weight.push(a_z);
                } else {
                    add_boundary(bc.top, 2.0 * a_z, &mut ab[p], &mut sb[p]);
                }
                offsets.push(nbr.len());
            }
        }
        Ok(Self {
            mode,
            offsets,
            nbr,
            weight,
            ab,
            sb,
        })
    }

    pub fn len(&self) -> usize {
        self.ab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ab.is_empty()
    }

    pub fn mode(&self) -> StencilMode {
        self.mode
    }

    /// Dirichlet source `sb` per cell.
    pub fn boundary_source(&self) -> &[f64] {
        &self.sb
    }

    #[inline]
    fn face_d(&self, d: &[f64], p: usize, q: usize) -> f64 {
        match self.mode {
            StencilMode::Literal => d[p],
            StencilMode::Flux => 0.5 * (d[p] + d[q]),
        }
    }

    /// `(N_p, Den_p)` for cell `p`.
    #[inline]
    fn cell(&self, p: usize, c: &[f64], d: &[f64], ks: &[f64]) -> (f64, f64) {
        let mut num = d[p] * self.sb[p];
        let mut den = d[p] * self.ab[p] + at(ks, p);
        for e in self.offsets[p]..self.offsets[p + 1] {
            let q = self.nbr[e];
            let w = self.weight[e] * self.face_d(d, p, q);
            num += w * c[q];
            den += w;
        }
        (num, den)
    }

    /// `Den_p` for every cell; independent of `C`.
    pub fn diagonal(&self, d: &[f64], ks: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|p| {
                let faces: f64 = (self.offsets[p]..self.offsets[p + 1])
                    .map(|e| self.weight[e] * self.face_d(d, p, self.nbr[e]))
                    .sum();
                faces + d[p] * self.ab[p] + at(ks, p)
            })
            .collect()
    }

    /// One Jacobi sweep into `out`.
    pub fn sweep_into(&self, c: &[f64], d: &[f64], ks: &[f64], out: &mut [f64]) {
        for (p, o) in out.iter_mut().enumerate() {
            let (num, den) = self.cell(p, c, d, ks);
            *o = num / den;
        }
    }

    /// Residual `N − Den·C` of the discrete balance at `c`.
    pub fn residual(&self, c: &[f64], d: &[f64], ks: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|p| {
                let (num, den) = self.cell(p, c, d, ks);
                num - den * c[p]
            })
            .collect()
    }

    /// Euclidean norm of the right-hand side `D·sb` used to scale residuals.
    pub fn rhs_norm(&self, d: &[f64]) -> f64 {
        d.iter()
            .zip(&self.sb)
            .map(|(d, s)| (d * s) * (d * s))
            .sum::<f64>()
            .sqrt()
    }

    /// Accumulates `∂N/∂D·g` and `∂Den/∂D·h` style terms shared by both kernels:
    /// for each cell `p` with weight `gp` on `∂(N − χ·Den)/∂·` where `χ` is
    /// the reference value (`C'_p` for a sweep, `C_p` for a residual).
    fn backward_common(
        &self,
        c: &[f64],
        d: &[f64],
        chi: &[f64],
        gp: &[f64],
        adj_c: &mut [f64],
        adj_d: &mut [f64],
    ) {
        for p in 0..self.len() {
            let g = gp[p];
            if g == 0.0 {
                continue;
            }
            adj_d[p] += g * (self.sb[p] - chi[p] * self.ab[p]);
            for e in self.offsets[p]..self.offsets[p + 1] {
                let q = self.nbr[e];
                let a = self.weight[e];
                adj_c[q] += g * a * self.face_d(d, p, q);
                let dd = g * a * (c[q] - chi[p]);
                match self.mode {
                    StencilMode::Literal => adj_d[p] += dd,
                    StencilMode::Flux => {
                        adj_d[p] += 0.5 * dd;
                        adj_d[q] += 0.5 * dd;
                    }
                }
            }
        }
    }
}

#[inline]
fn at(x: &[f64], p: usize) -> f64 {
    if x.len() == 1 {
        x[0]
    } else {
        x[p]
    }
}

fn add_ks(adj: &mut [f64], p: usize, v: f64) {
    if adj.len() == 1 {
        adj[0] += v;
    } else {
        adj[p] += v;
    }
}

/// One recorded Jacobi sweep: inputs `[C, D, KS]`, output `C'`.
pub struct JacobiSweep {
    pub stencil: std::sync::Arc<Stencil>,
    /// Test hook: perturbs the molarity adjoint (negative control for gradient checks).
    pub corrupt: bool,
}

impl FusedOp for JacobiSweep {
    fn name(&self) -> &'static str {
        "jacobi_sweep"
    }

    fn forward(&self, inputs: &[&[f64]]) -> Vec<f64> {
        let mut out = vec![0.0; self.stencil.len()];
        self.stencil
            .sweep_into(inputs[0], inputs[1], inputs[2], &mut out);
        out
    }

    fn backward(&self, inputs: &[&[f64]], output: &[f64], out_adj: &[f64], adj: &mut [Vec<f64>]) {
        let (c, d, ks) = (inputs[0], inputs[1], inputs[2]);
        let s = &self.stencil;
        // C' = N/Den, so dC' = (dN − C'·dDen)/Den.
        let gp: Vec<f64> = (0..s.len())
            .map(|p| out_adj[p] / s.cell(p, c, d, ks).1)
            .collect();
        let (ac, rest) = adj.split_at_mut(1);
        let (ad, aks) = rest.split_at_mut(1);
        s.backward_common(c, d, output, &gp, &mut ac[0], &mut ad[0]);
        for p in 0..s.len() {
            add_ks(&mut aks[0], p, -gp[p] * output[p]);
        }
        if self.corrupt {
            ac[0].iter_mut().for_each(|v| *v *= 1.05);
        }
    }
}

/// Residual of the discrete balance: inputs `[C, D, KS]`, output `N − Den·C`.
pub struct BalanceResidual {
    pub stencil: std::sync::Arc<Stencil>,
}

impl FusedOp for BalanceResidual {
    fn name(&self) -> &'static str {
        "balance_residual"
    }

    fn forward(&self, inputs: &[&[f64]]) -> Vec<f64> {
        self.stencil.residual(inputs[0], inputs[1], inputs[2])
    }

    fn backward(&self, inputs: &[&[f64]], _output: &[f64], out_adj: &[f64], adj: &mut [Vec<f64>]) {
        let (c, d, ks) = (inputs[0], inputs[1], inputs[2]);
        let s = &self.stencil;
        let (ac, rest) = adj.split_at_mut(1);
        let (ad, aks) = rest.split_at_mut(1);
        s.backward_common(c, d, c, out_adj, &mut ac[0], &mut ad[0]);
        for p in 0..s.len() {
            let (_, den) = s.cell(p, c, d, ks);
            ac[0][p] -= out_adj[p] * den;
            add_ks(&mut aks[0], p, -out_adj[p] * c[p]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};
    use std::sync::Arc;

    fn grid() -> AxiGrid {
        AxiGrid::new(0.01, 0.02, 4, 5).unwrap()
    }

    fn fields(n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = (0..n).map(|k| 0.1 + 0.01 * (k % 7) as f64).collect();
        let d = (0..n)
            .map(|k| 1e-4 * (1.0 + 0.1 * (k % 5) as f64))
            .collect();
        let ks = (0..n).map(|k| 0.2 + 0.05 * (k % 3) as f64).collect();
        (c, d, ks)
    }

    #[test]
    fn no_dirichlet_face_is_singular() {
        let bc = BoundarySpec {
            outer: Face::ZeroFlux,
            top: Face::ZeroFlux,
            bottom: Face::ZeroFlux,
        };
        assert!(matches!(
            Stencil::new(&grid(), &bc, StencilMode::Literal),
            Err(Error::Singular)
        ));
    }

    #[test]
    fn constant_field_is_fixed_point_without_reaction() {
        let g = grid();
        let s = Stencil::new(&g, &BoundarySpec::dirichlet(0.3), StencilMode::Flux).unwrap();
        let c = vec![0.3; g.len()];
        let d: Vec<f64> = (0..g.len()).map(|k| 1e-4 + 1e-6 * k as f64).collect();
        let r = s.residual(&c, &d, &[0.0]);
        assert!(r.iter().all(|v| v.abs() < 1e-9), "{r:?}");
    }

    #[test]
    fn residual_equals_scaled_sweep_increment() {
        let g = grid();
        let s = Stencil::new(&g, &BoundarySpec::dirichlet(0.15), StencilMode::Literal).unwrap();
        let (c, d, ks) = fields(g.len());
        let mut next = vec![0.0; g.len()];
        s.sweep_into(&c, &d, &ks, &mut next);
        let r = s.residual(&c, &d, &ks);
        for p in 0..g.len() {
            let den = s.cell(p, &c, &d, &ks).1;
            assert!((r[p] - den * (next[p] - c[p])).abs() < 1e-12 * den);
        }
    }

    fn check_kernel(mode: StencilMode, residual: bool) {
        let g = grid();
        let s = Arc::new(Stencil::new(&g, &BoundarySpec::dirichlet(0.15), mode).unwrap());
        let (c0, d0, ks0) = fields(g.len());
        let n = g.len();
        let mut x0 = c0.clone();
        x0.extend(d0.iter().map(|v| v * 1e4));
        x0.extend(&ks0);
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut t = Tape::new();
            let c = t.param(x[..n].to_vec())?;
            let dn = t.param(x[n..2 * n].to_vec())?;
            let ks = t.param(x[2 * n..].to_vec())?;
            let d = t.scale(dn, 1e-4)?;
            let out = if residual {
                t.fused(
                    &[c, d, ks],
                    Arc::new(BalanceResidual { stencil: s.clone() }),
                )?
            } else {
                t.fused(
                    &[c, d, ks],
                    Arc::new(JacobiSweep {
                        stencil: s.clone(),
                        corrupt: false,
                    }),
                )?
            };
            let sq = t.mul(out, out)?;
            let w = t.constant((0..n).map(|k| 1.0 + 0.1 * k as f64).collect())?;
            let wsq = t.mul(sq, w)?;
            let tot = t.sum(wsq)?;
            Ok((t.scalar(tot), t.backward(tot)?))
        };
        let err = grad_check(f, &x0, 1e-5).unwrap();
        assert!(err < 1e-6, "{mode:?} residual={residual}: {err}");
    }

    #[test]
    fn sweep_adjoint_literal() {
        check_kernel(StencilMode::Literal, false);
    }

    #[test]
    fn sweep_adjoint_flux() {
        check_kernel(StencilMode::Flux, false);
    }

    #[test]
    fn residual_adjoint_literal() {
        check_kernel(StencilMode::Literal, true);
    }

    #[test]
    fn residual_adjoint_flux() {
        check_kernel(StencilMode::Flux, true);
    }
}
