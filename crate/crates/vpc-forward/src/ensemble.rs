use vpc_model::{BumpSum, Vec6};

use crate::ForwardError;

/// Lattice quadrature of the initial datum: points z⁰_p with f̊_p, ∂f̊_p and
/// Lebesgue weights ω_p = f̊_p·ΔV. The weights never change in time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub z0: Vec<Vec6>,
    pub values: Vec<f64>,
    pub grads: Vec<Vec6>,
    pub weights: Vec<f64>,
    pub cell_volume: f64,
    pub spacing: f64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.z0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z0.is_empty()
    }

    /// Ensemble from explicit points of a datum, on a lattice of spacing h.
    pub fn from_points(datum: &BumpSum, points: Vec<Vec6>, spacing: f64) -> Result<Self, ForwardError> {
        if points.is_empty() {
            return Err(ForwardError::EmptyEnsemble);
        }
        let cell_volume = spacing.powi(6);
        let values: Vec<f64> = points.iter().map(|z| datum.eval(z)).collect();
        Ok(Self {
            grads: points.iter().map(|z| datum.grad(z)).collect(),
            weights: values.iter().map(|f| f * cell_volume).collect(),
            values,
            z0: points,
            cell_volume,
            spacing,
        })
    }

    pub fn positions0(&self) -> Vec<vpc_model::Vec3> {
        self.z0.iter().map(vpc_model::xpart).collect()
    }

    /// Particle-quadrature ∫ f̊² = Σ ω_p f̊_p.
    pub fn quadrature_l2_squared(&self) -> f64 {
        self.weights.iter().zip(&self.values).map(|(w, f)| w * f).sum()
    }
}

/// Sample f̊ on the lattice h_s·Z⁶ restricted to its support box.
pub fn sample_ensemble(datum: &BumpSum, h_s: f64, weight_floor: f64) -> Result<ParticleEnsemble, ForwardError> {
    if !(h_s > 0.0 && h_s.is_finite()) {
        return Err(ForwardError::Config("sample_spacing must be positive".into()));
    }
    let Some((lo, hi)) = datum.support_box() else {
        return Err(ForwardError::EmptyEnsemble);
    };
    let range: Vec<(i64, i64)> = (0..6).map(|a| ((lo[a] / h_s).ceil() as i64, (hi[a] / h_s).floor() as i64)).collect();
    let dv = h_s.powi(6);
    let mut points = Vec::new();
    let mut idx = [0i64; 6];
    for a in 0..6 {
        idx[a] = range[a].0;
        if range[a].0 > range[a].1 {
            return Err(ForwardError::EmptyEnsemble);
        }
    }
    // odometer over the 6D index box
    'outer: loop {
        let z = Vec6::from_fn(|a, _| idx[a] as f64 * h_s);
        let f = datum.eval(&z);
        if f > 0.0 && f * dv >= weight_floor {
            points.push(z);
        }
        let mut a = 5;
        loop {
            idx[a] += 1;
            if idx[a] <= range[a].1 {
                break;
            }
            idx[a] = range[a].0;
            if a == 0 {
                break 'outer;
            }
            a -= 1;
        }
    }
    ParticleEnsemble::from_points(datum, points, h_s)
}

/// (Σ ΔV f̊_p^p)^{1/p}, or max f̊_p for p = ∞.
pub fn lp_norm(ens: &ParticleEnsemble, p: f64) -> Result<f64, ForwardError> {
    if p.is_nan() || p < 1.0 {
        return Err(ForwardError::Config(format!("L^p norm needs p ≥ 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(ens.values.iter().copied().fold(0.0, f64::max));
    }
    if p == 1.0 {
        return Ok(ens.weights.iter().sum());
    }
    let s: f64 = ens.values.iter().map(|f| ens.cell_volume * f.powf(p)).sum();
    Ok(s.powf(1.0 / p))
}
