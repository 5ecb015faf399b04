//! Magnetic control on a space-time grid: trilinear in space, linear in
//! time, zero outside the grid and on its outermost node layer.

use vpc_model::{FieldGridSpec, Mat3, Vec3};

use crate::ForwardError;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    grid: FieldGridSpec,
    t_final: f64,
    values: Vec<Vec3>,
}

/// Time knot and spatial node contributions of one interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilEntry {
    pub index: usize,
    pub weight: f64,
}

impl ControlField {
    pub fn zeros(grid: FieldGridSpec, t_final: f64) -> Self {
        let n = grid.node_count() * grid.n_time_knots;
        Self {
            grid,
            t_final,
            values: vec![Vec3::zeros(); n],
        }
    }

    /// Sample `f` at every interior node and knot; the boundary layer stays zero.
    pub fn from_fn(grid: FieldGridSpec, t_final: f64, f: impl Fn(f64, &Vec3) -> Vec3) -> Self {
        let mut out = Self::zeros(grid, t_final);
        for k in 0..grid.n_time_knots {
            let t = out.knot_time(k);
            for node in 0..grid.node_count() {
                let ijk = out.unflatten(node);
                if !out.is_boundary(ijk) {
                    out.values[k * grid.node_count() + node] = f(t, &out.node_position(ijk));
                }
            }
        }
        out
    }

    pub fn from_values(grid: FieldGridSpec, t_final: f64, values: Vec<Vec3>) -> Result<Self, ForwardError> {
        if values.len() != grid.node_count() * grid.n_time_knots {
            return Err(ForwardError::Mismatch(format!(
                "control has {} values, grid needs {}",
                values.len(),
                grid.node_count() * grid.n_time_knots
            )));
        }
        if !values.iter().all(|v| v.iter().all(|c| c.is_finite())) {
            return Err(ForwardError::Mismatch("control values must be finite".into()));
        }
        let out = Self { grid, t_final, values };
        for (i, v) in out.values.iter().enumerate() {
            if *v != Vec3::zeros() && out.is_boundary(out.unflatten(i % grid.node_count())) {
                return Err(ForwardError::Mismatch("control must vanish on the outer node layer".into()));
            }
        }
        Ok(out)
    }

    pub fn grid(&self) -> &FieldGridSpec {
        &self.grid
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    pub fn n_knots(&self) -> usize {
        self.grid.n_time_knots
    }

    pub fn knot_time(&self, k: usize) -> f64 {
        self.t_final * k as f64 / (self.grid.n_time_knots - 1) as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.grid.spacing.iter().product()
    }

    /// Trapezoid weights of the time knots.
    pub fn knot_weights(&self) -> Vec<f64> {
        let n = self.grid.n_time_knots;
        let h = self.t_final / (n - 1) as f64;
        (0..n).map(|k| if k == 0 || k == n - 1 { 0.5 * h } else { h }).collect()
    }

    pub fn unflatten(&self, node: usize) -> [usize; 3] {
        let [_, ny, nz] = self.grid.dims;
        [node / (ny * nz), (node / nz) % ny, node % nz]
    }

    pub fn flatten(&self, ijk: [usize; 3]) -> usize {
        let [_, ny, nz] = self.grid.dims;
        (ijk[0] * ny + ijk[1]) * nz + ijk[2]
    }

    pub fn index(&self, knot: usize, ijk: [usize; 3]) -> usize {
        knot * self.grid.node_count() + self.flatten(ijk)
    }

    pub fn is_boundary(&self, ijk: [usize; 3]) -> bool {
        (0..3).any(|a| ijk[a] == 0 || ijk[a] + 1 == self.grid.dims[a])
    }

    pub fn node_position(&self, ijk: [usize; 3]) -> Vec3 {
        Vec3::new(
            self.grid.origin[0] + ijk[0] as f64 * self.grid.spacing[0],
            self.grid.origin[1] + ijk[1] as f64 * self.grid.spacing[1],
            self.grid.origin[2] + ijk[2] as f64 * self.grid.spacing[2],
        )
    }

    pub fn get(&self, knot: usize, ijk: [usize; 3]) -> Vec3 {
        self.values[self.index(knot, ijk)]
    }

    /// Set an interior node value; boundary nodes are left untouched.
    pub fn set(&mut self, knot: usize, ijk: [usize; 3], v: Vec3) {
        if !self.is_boundary(ijk) {
            let i = self.index(knot, ijk);
            self.values[i] = v;
        }
    }

    /// True when x lies strictly inside the interior node box, where the
    /// interpolant is not forced towards zero by the boundary layer.
    pub fn inside_interior(&self, x: &Vec3) -> bool {
        (0..3).all(|a| {
            let s = (x[a] - self.grid.origin[a]) / self.grid.spacing[a];
            s >= 1.0 && s <= (self.grid.dims[a] - 2) as f64
        })
    }

    fn locate(&self, x: &Vec3) -> Option<([usize; 3], [f64; 3])> {
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = (x[a] - self.grid.origin[a]) / self.grid.spacing[a];
            let top = (self.grid.dims[a] - 1) as f64;
            if !(s >= 0.0 && s <= top) {
                return None;
            }
            let i = (s.floor() as usize).min(self.grid.dims[a] - 2);
            cell[a] = i;
            frac[a] = s - i as f64;
        }
        Some((cell, frac))
    }

    fn time_bracket(&self, t: f64) -> (usize, f64) {
        let n = self.grid.n_time_knots;
        let s = (t / self.t_final * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        (k, s - k as f64)
    }

    /// B(t, x) and its spatial Jacobian ∂B_i/∂x_j.
    pub fn sample(&self, t: f64, x: &Vec3) -> (Vec3, Mat3) {
        let Some((cell, f)) = self.locate(x) else {
            return (Vec3::zeros(), Mat3::zeros());
        };
        let (k, tau) = self.time_bracket(t);
        let mut val = Vec3::zeros();
        let mut jac = Mat3::zeros();
        let h = self.grid.spacing;
        for corner in 0..8 {
            let o = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
            let wa: [f64; 3] = std::array::from_fn(|a| if o[a] == 1 { f[a] } else { 1.0 - f[a] });
            let da: [f64; 3] = std::array::from_fn(|a| if o[a] == 1 { 1.0 / h[a] } else { -1.0 / h[a] });
            let ijk = [cell[0] + o[0], cell[1] + o[1], cell[2] + o[2]];
            let node = self.flatten(ijk);
            let b = self.values[k * self.grid.node_count() + node] * (1.0 - tau)
                + self.values[(k + 1) * self.grid.node_count() + node] * tau;
            val += b * (wa[0] * wa[1] * wa[2]);
            let grad = Vec3::new(da[0] * wa[1] * wa[2], wa[0] * da[1] * wa[2], wa[0] * wa[1] * da[2]);
            jac += b * grad.transpose();
        }
        (val, jac)
    }

    pub fn value(&self, t: f64, x: &Vec3) -> Vec3 {
        self.sample(t, x).0
    }

    pub fn jacobian(&self, t: f64, x: &Vec3) -> Mat3 {
        self.sample(t, x).1
    }

    /// Interpolation weights of (t, x): B(t,x) = Σ weight·values[index].
    /// Deposition with the same entries is the exact transpose.
    pub fn stencil(&self, t: f64, x: &Vec3, out: &mut Vec<StencilEntry>) {
        out.clear();
        let Some((cell, f)) = self.locate(x) else {
            return;
        };
        let (k, tau) = self.time_bracket(t);
        for corner in 0..8 {
            let o = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
            let w: f64 = (0..3).map(|a| if o[a] == 1 { f[a] } else { 1.0 - f[a] }).product();
            let node = self.flatten([cell[0] + o[0], cell[1] + o[1], cell[2] + o[2]]);
            for (kk, wt) in [(k, 1.0 - tau), (k + 1, tau)] {
                if w * wt != 0.0 {
                    out.push(StencilEntry {
                        index: kk * self.grid.node_count() + node,
                        weight: w * wt,
                    });
                }
            }
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }

    /// self + c·other on the same grid.
    pub fn axpy(&self, c: f64, other: &Self) -> Self {
        assert_eq!(self.values.len(), other.values.len(), "control grids differ");
        Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b * c).collect(),
            ..self.clone()
        }
    }

    /// ⟨A, H⟩ = Σ_k τ_k ΔV Σ_i A_i·H_i with trapezoid τ_k.
    pub fn inner(&self, other: &Self) -> f64 {
        let tau = self.knot_weights();
        let n = self.grid.node_count();
        let dv = self.cell_volume();
        tau.iter()
            .enumerate()
            .map(|(k, w)| {
                let s: f64 = (0..n).map(|i| self.values[k * n + i].dot(&other.values[k * n + i])).sum();
                w * dv * s
            })
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.amax()).fold(0.0, f64::max)
    }

    /// Values of one time knot.
    pub fn knot_values(&self, k: usize) -> &[Vec3] {
        let n = self.grid.node_count();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn knot_values_mut(&mut self, k: usize) -> &mut [Vec3] {
        let n = self.grid.node_count();
        &mut self.values[k * n..(k + 1) * n]
    }

    /// Zero the outer node layer.
    pub fn enforce_boundary(&mut self) {
        let n = self.grid.node_count();
        for i in 0..self.values.len() {
            if self.is_boundary(self.unflatten(i % n)) {
                self.values[i] = Vec3::zeros();
            }
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.grid == other.grid && self.t_final == other.t_final
    }
}
