use vpc_model::{BumpSum, Mat6, Vec6};

use crate::{ForwardError, ParticleEnsemble, TrajectoryStore};

/// Target density f_d of the tracking cost.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Bumps(BumpSum),
    /// f̊ transported by a stored forward run.
    Transported(TransportedDatum),
}

impl Target {
    pub fn eval(&self, z: &Vec6) -> f64 {
        match self {
            Target::Bumps(b) => b.eval(z),
            Target::Transported(t) => t.eval(z),
        }
    }

    pub fn grad(&self, z: &Vec6) -> Vec6 {
        match self {
            Target::Bumps(b) => b.grad(z),
            Target::Transported(t) => t.grad(z),
        }
    }

    /// ∥f_d∥₂², computed once.
    pub fn l2_norm_squared(&self) -> f64 {
        match self {
            Target::Bumps(b) => b.l2_norm_squared(),
            Target::Transported(t) => t.norm2,
        }
    }
}

/// f_d(z) = f̊(z⁰_q + N_q(z − z_q(T))) for the particle q whose pulled-back
/// offset is smallest in max-norm. At z = z_q(T) this returns f̊_q exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportedDatum {
    datum: BumpSum,
    z0: Vec<Vec6>,
    zt: Vec<Vec6>,
    ninv: Vec<Mat6>,
    norm2: f64,
}

impl TransportedDatum {
    pub fn from_run(datum: &BumpSum, ens: &ParticleEnsemble, traj: &TrajectoryStore) -> Result<Self, ForwardError> {
        if !traj.has_matrices() {
            return Err(ForwardError::Mismatch("transported target needs inverse-flow Jacobians".into()));
        }
        Ok(Self {
            datum: datum.clone(),
            z0: ens.z0.clone(),
            zt: traj.final_z().to_vec(),
            ninv: traj.ninv.last().unwrap().clone(),
            norm2: ens.quadrature_l2_squared(),
        })
    }

    fn owner(&self, z: &Vec6) -> (usize, Vec6) {
        let mut best = (usize::MAX, f64::INFINITY, Vec6::zeros());
        for q in 0..self.zt.len() {
            let y = self.ninv[q] * (z - self.zt[q]);
            let a = y.amax();
            if a < best.1 {
                best = (q, a, y);
            }
        }
        (best.0, best.2)
    }

    pub fn eval(&self, z: &Vec6) -> f64 {
        let (q, y) = self.owner(z);
        self.datum.eval(&(self.z0[q] + y))
    }

    pub fn grad(&self, z: &Vec6) -> Vec6 {
        let (q, y) = self.owner(z);
        self.ninv[q].transpose() * self.datum.grad(&(self.z0[q] + y))
    }
}
