use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpc_forward::io::{write_diagnostics_csv, write_trajectory, Provenance};
use vpc_forward::{
    det_deviation, run_forward, run_forward_picard, run_forward_with, sample_ensemble, support_radius, ControlField, ForwardOptions,
    ParticleEnsemble, Target, TransportedDatum,
};
use vpc_model::{RunConfig, Vec3};
use vpc_optimize::io::{write_control, write_history_csv};
use vpc_optimize::{
    fixed_point_iterate, neg_laplacian, run_projected_gd, CostBreakdown, DescentStatus, FixedPointSettings, FixedPointStatus, IterRecord,
    Problem,
};
use vpc_sensitivity::io::write_costate;
use vpc_sensitivity::{run_backward, run_tangent, tangent_pairing};

use crate::{CliError, Command, CommonArgs, Mode, Scenario};

/// Pairwise relative tolerance of the gradient check.
pub const GRADCHECK_TOL: f64 = 1e-3;
/// Central-difference step along a direction with unit sup-norm.
pub const FD_STEP: f64 = 1e-4;
/// Random directions per gradient check, after the zero direction.
pub const GRADCHECK_DIRECTIONS: usize = 3;
pub const PICARD_MAX_ITERS: usize = 60;
pub const PICARD_TOL: f64 = 1e-12;

/// Everything a subcommand needs besides its own settings.
pub struct Context {
    pub scenario: Scenario,
    pub prov: Provenance,
    pub out: PathBuf,
    pub seed: u64,
    pub ens: ParticleEnsemble,
    pub control: ControlField,
}

/// Rough peak storage of one forward run with flow Jacobians plus its costate.
pub fn memory_estimate(n_particles: usize, run: &RunConfig) -> usize {
    let (p, n) = (n_particles, run.n_steps());
    let vec6 = 48;
    let mat6 = 288;
    let states = (2 * (n + 1) + 3 * n) * p * vec6;
    let matrices = 2 * (n + 1) * p * mat6;
    let costate = (n + 1) * p * (8 + vec6) + 4 * n * p * vec6;
    let control = run.field_grid.node_count() * run.field_grid.n_time_knots * 24;
    states + matrices + costate + 2 * control
}

/// Interior node values drawn uniformly from [−1, 1]; sup-norm at most one.
pub fn random_direction(layout: &ControlField, rng: &mut ChaCha8Rng) -> ControlField {
    let mut h = ControlField::zeros(*layout.grid(), layout.t_final());
    let nodes = layout.grid().node_count();
    for k in 0..layout.n_knots() {
        for i in 0..nodes {
            let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let ijk = layout.unflatten(i);
            if !layout.is_boundary(ijk) {
                h.set(k, ijk, v);
            }
        }
    }
    h
}

/// |a − b| / max(|a|, |b|), zero when both vanish.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// One row of the three-way comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradRow {
    pub adjoint: f64,
    pub tangent: f64,
    pub fd: f64,
    pub adjoint_tracking: f64,
    pub tangent_tracking: f64,
    pub fd_tracking: f64,
}

impl GradRow {
    pub fn gaps(&self) -> [f64; 3] {
        [
            relative_gap(self.adjoint, self.tangent),
            relative_gap(self.adjoint, self.fd),
            relative_gap(self.tangent, self.fd),
        ]
    }

    pub fn worst(&self) -> f64 {
        self.gaps().into_iter().fold(0.0, f64::max)
    }
}

/// Adjoint, tangent and central-difference derivatives of J at B along H.
pub fn compare_directional(problem: &Problem, b: &ControlField, h: &ControlField) -> Result<GradRow, CliError> {
    let ev = problem.evaluate(b)?;
    compare_with(problem, &ev, b, h)
}

fn compare_with(problem: &Problem, ev: &vpc_optimize::Evaluation, b: &ControlField, h: &ControlField) -> Result<GradRow, CliError> {
    if h.max_abs() == 0.0 {
        return Ok(GradRow { adjoint: 0.0, tangent: 0.0, fd: 0.0, adjoint_tracking: 0.0, tangent_tracking: 0.0, fd_tracking: 0.0 });
    }
    let adjoint_tracking = ev.costate.pairing(h);
    let reg = neg_laplacian(b).scaled(problem.lambda()).inner(h);
    let tangent_tracking = tangent_pairing(&ev.traj, &problem.target, &run_tangent(&problem.ens, &ev.traj, h)?);
    let plus = problem.cost(&b.axpy(FD_STEP, h))?;
    let minus = problem.cost(&b.axpy(-FD_STEP, h))?;
    let d = |f: fn(&CostBreakdown) -> f64| (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
    Ok(GradRow {
        adjoint: ev.gradient.inner(h),
        tangent: tangent_tracking + reg,
        fd: d(|c| c.total),
        adjoint_tracking,
        tangent_tracking,
        fd_tracking: d(|c| c.tracking),
    })
}

impl Context {
    pub fn new(scenario: Scenario, args: &CommonArgs) -> Result<Self, CliError> {
        let run = scenario.run;
        let ens = sample_ensemble(&scenario.initial_datum, run.sample_spacing, run.weight_floor)?;
        let control = scenario.initial_control.build(&run);
        let prov = Provenance {
            scenario_hash: scenario.hash(),
            threads: rayon::current_num_threads() as u32,
        };
        Ok(Self {
            scenario,
            prov,
            out: args.out.clone(),
            seed: args.seed,
            ens,
            control,
        })
    }

    pub fn dry_run(&self, cmd: Command) -> String {
        let run = &self.scenario.run;
        let bytes = memory_estimate(self.ens.len(), run);
        let mut s = String::new();
        writeln!(s, "command: {cmd:?}").unwrap();
        writeln!(s, "scenario_hash: {}", self.prov.hash_hex()).unwrap();
        writeln!(s, "threads: {}", self.prov.threads).unwrap();
        writeln!(s, "N_p: {}", self.ens.len()).unwrap();
        writeln!(s, "steps: {}", run.n_steps()).unwrap();
        let g = run.field_grid;
        writeln!(s, "control nodes: {}x{}x{} x {} knots", g.dims[0], g.dims[1], g.dims[2], g.n_time_knots).unwrap();
        writeln!(s, "memory estimate: {:.1} MiB", bytes as f64 / (1024.0 * 1024.0)).unwrap();
        s
    }

    pub fn execute(&self, cmd: Command) -> Result<String, CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::Io(format!("{}: {e}", self.out.display())))?;
        match cmd {
            Command::Forward => self.forward(),
            Command::Backward => self.backward(),
            Command::Gradcheck => self.gradcheck(),
            Command::Optimize => self.optimize(),
            Command::Fixedpoint => self.fixedpoint(),
            Command::PicardStudy => self.picard_study(),
        }
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.out.join(name);
        let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(BufWriter::new(f))
    }

    fn write_csv_header(&self, w: &mut impl Write, columns: &str) -> Result<(), CliError> {
        writeln!(w, "# scenario_hash={}", self.prov.hash_hex())?;
        writeln!(w, "# threads={}", self.prov.threads)?;
        writeln!(w, "{columns}")?;
        Ok(())
    }

    pub fn target(&self) -> Result<Target, CliError> {
        Ok(match self.scenario.mode {
            Mode::Tracking => Target::Bumps(self.scenario.target.clone()),
            Mode::PerfectTracking => {
                let traj = run_forward(&self.ens, &self.control, &self.scenario.run)?;
                Target::Transported(TransportedDatum::from_run(&self.scenario.initial_datum, &self.ens, &traj)?)
            }
        })
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        Ok(Problem::new(self.ens.clone(), self.scenario.run, self.target()?))
    }

    fn forward(&self) -> Result<String, CliError> {
        let traj = run_forward(&self.ens, &self.control, &self.scenario.run)?;
        let mut w = self.create("trajectory.bin")?;
        write_trajectory(&mut w, &traj, &self.prov, true)?;
        w.flush()?;
        let mut w = self.create("diagnostics.csv")?;
        write_diagnostics_csv(&mut w, &self.ens, &traj, &self.prov)?;
        w.flush()?;
        let n = traj.n_steps();
        let mut s = String::new();
        writeln!(s, "N_p = {}, steps = {n}", self.ens.len()).unwrap();
        writeln!(s, "mean |det M - 1| at T = {:.3e}", det_deviation(&traj, n)).unwrap();
        writeln!(s, "support radius at T = {:.6}", support_radius(&traj, n)).unwrap();
        if traj.grid_exits > 0 {
            writeln!(s, "warning: {} particle stages left the control grid", traj.grid_exits).unwrap();
        }
        Ok(s)
    }

    fn backward(&self) -> Result<String, CliError> {
        let target = self.target()?;
        let traj = run_forward(&self.ens, &self.control, &self.scenario.run)?;
        let costate = run_backward(&self.ens, &traj, &target, &self.scenario.run.cutoff)?;
        let mut w = self.create("costate.bin")?;
        write_costate(&mut w, &costate, &self.prov)?;
        w.flush()?;
        let mut w = self.create("costate.csv")?;
        self.write_csv_header(&mut w, "t,g_sup,grad_g_sup")?;
        for (n, t) in costate.times.iter().enumerate() {
            let g = costate.g[n].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let big = costate.big_g[n].iter().fold(0.0f64, |a, v| a.max(v.amax()));
            writeln!(w, "{t:.17e},{g:.17e},{big:.17e}")?;
        }
        w.flush()?;
        let mut s = String::new();
        writeln!(s, "costate computed over {} steps", costate.n_steps()).unwrap();
        if costate.cutoff_warning {
            writeln!(s, "warning: cutoff inner radius is smaller than the particle support").unwrap();
        }
        Ok(s)
    }

    /// Three-way comparison along H = 0 and the seeded random directions.
    pub fn gradcheck_rows(&self) -> Result<(Problem, Vec<GradRow>), CliError> {
        let problem = self.problem()?;
        let ev = problem.evaluate(&self.control)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut dirs = vec![ControlField::zeros(*self.control.grid(), self.control.t_final())];
        dirs.extend((0..GRADCHECK_DIRECTIONS).map(|_| random_direction(&self.control, &mut rng)));
        let rows = dirs.iter().map(|h| compare_with(&problem, &ev, &self.control, h)).collect::<Result<Vec<_>, _>>()?;
        Ok((problem, rows))
    }

    fn gradcheck(&self) -> Result<String, CliError> {
        let (_, rows) = self.gradcheck_rows()?;
        let mut w = self.create("gradcheck.csv")?;
        self.write_csv_header(
            &mut w,
            "direction,adjoint,tangent,fd,adjoint_tracking,tangent_tracking,fd_tracking,rel_adjoint_tangent,rel_adjoint_fd,rel_tangent_fd",
        )?;
        for (i, r) in rows.iter().enumerate() {
            let [a, b, c] = r.gaps();
            writeln!(
                w,
                "{i},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{a:.3e},{b:.3e},{c:.3e}",
                r.adjoint, r.tangent, r.fd, r.adjoint_tracking, r.tangent_tracking, r.fd_tracking
            )?;
        }
        w.flush()?;
        let worst = rows.iter().map(GradRow::worst).fold(0.0, f64::max);
        let mut s = String::new();
        writeln!(s, "scenario {} (threads {}), seed {}", self.prov.hash_hex(), self.prov.threads, self.seed).unwrap();
        writeln!(s, "{:>3} {:>16} {:>16} {:>16} {:>10}", "dir", "adjoint", "tangent", "fd", "max rel").unwrap();
        for (i, r) in rows.iter().enumerate() {
            writeln!(s, "{i:>3} {:>16.9e} {:>16.9e} {:>16.9e} {:>10.2e}", r.adjoint, r.tangent, r.fd, r.worst()).unwrap();
        }
        let verdict = if worst <= GRADCHECK_TOL { "PASS" } else { "FAIL" };
        writeln!(s, "{verdict}: largest pairwise relative gap {worst:.3e} (tolerance {GRADCHECK_TOL:e})").unwrap();
        let mut w = self.create("gradcheck.txt")?;
        w.write_all(s.as_bytes())?;
        w.flush()?;
        if worst > GRADCHECK_TOL {
            return Err(CliError::GradientCheck(format!("largest pairwise relative gap {worst:.3e}")));
        }
        Ok(s)
    }

    fn write_iterates(&self, prefix: &str, history: &[IterRecord], control: &ControlField) -> Result<(), CliError> {
        let mut w = self.create(&format!("{prefix}_history.csv"))?;
        write_history_csv(&mut w, history, &self.prov)?;
        w.flush()?;
        let mut w = self.create(&format!("{prefix}_control.bin"))?;
        write_control(&mut w, control, &self.prov)?;
        w.flush()?;
        let mut w = self.create(&format!("{prefix}_plot_cost.csv"))?;
        self.write_csv_header(&mut w, "iter,J")?;
        for r in history {
            writeln!(w, "{},{:.17e}", r.iter, r.j)?;
        }
        w.flush()?;
        let mut w = self.create(&format!("{prefix}_plot_residual.csv"))?;
        self.write_csv_header(&mut w, "iter,residual")?;
        for r in history {
            writeln!(w, "{},{:.17e}", r.iter, r.residual)?;
        }
        w.flush()?;
        Ok(())
    }

    fn optimize(&self) -> Result<String, CliError> {
        let cfg = *self.scenario.optimize()?;
        let problem = self.problem()?;
        let out = run_projected_gd(&problem, &self.control, &cfg)?;
        self.write_iterates("optimize", &out.history, &out.control)?;
        let (first, last) = (out.history[0].j, out.history[out.history.len() - 1].j);
        let mut s = String::new();
        writeln!(s, "status: {:?} after {} accepted steps", out.status, out.history.len() - 1).unwrap();
        writeln!(s, "J: {first:.9e} -> {last:.9e}").unwrap();
        if out.status == DescentStatus::LineSearchStall {
            return Err(CliError::LineSearchStall(out.history.len() - 1));
        }
        Ok(s)
    }

    fn fixedpoint(&self) -> Result<String, CliError> {
        let cfg = *self.scenario.optimize()?;
        if !(self.scenario.run.lambda > 0.0) {
            return Err(CliError::Scenario("run.lambda: the fixed-point map needs lambda > 0".into()));
        }
        let set = FixedPointSettings {
            damping: cfg.damping,
            max_iters: cfg.max_iters,
            tol: cfg.tol,
            mode: cfg.fixed_point_map,
        };
        let problem = self.problem()?;
        let out = fixed_point_iterate(&problem, &self.control, &set)?;
        self.write_iterates("fixedpoint", &out.history, &out.control)?;
        let ratios: Vec<f64> = out.residuals.windows(2).map(|w| w[1] / w[0]).collect();
        let worst = ratios.iter().copied().fold(0.0, f64::max);
        let mut s = String::new();
        writeln!(s, "status: {:?} after {} iterations", out.status, out.residuals.len()).unwrap();
        writeln!(s, "largest residual ratio {worst:.4}, first-order residual {:.3e}", out.first_order).unwrap();
        if out.status == FixedPointStatus::Diverged {
            return Err(CliError::FixedPointDiverged(out.residuals));
        }
        Ok(s)
    }

    fn picard_study(&self) -> Result<String, CliError> {
        let run = self.scenario.run;
        let (picard, history) = run_forward_picard(&self.ens, &self.control, &run, PICARD_MAX_ITERS, PICARD_TOL)?;
        let opts = ForwardOptions {
            variational: false,
            self_field: true,
        };
        let direct = run_forward_with(&self.ens, &self.control, &run, opts)?;
        let fine = run_forward_with(&self.ens, &self.control, &run.refined(), opts)?;
        let gap = picard.max_distance(&direct);
        let refinement = direct
            .final_z()
            .iter()
            .zip(fine.final_z())
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        let ratios = history.ratios();
        let mut w = self.create("picard.csv")?;
        self.write_csv_header(&mut w, "iter,distance,ratio")?;
        for (i, d) in history.distances.iter().enumerate() {
            let r = if i == 0 { f64::NAN } else { ratios[i - 1] };
            writeln!(w, "{},{d:.17e},{r:.17e}", i + 1)?;
        }
        w.flush()?;
        let mut s = String::new();
        writeln!(s, "Picard converged in {} iterations", history.distances.len()).unwrap();
        writeln!(s, "largest successive ratio {:.4}", ratios.iter().copied().fold(0.0, f64::max)).unwrap();
        writeln!(s, "distance to the direct solve {gap:.3e}; dt-refinement change {refinement:.3e}").unwrap();
        let mut w = self.create("picard.txt")?;
        w.write_all(s.as_bytes())?;
        w.flush()?;
        Ok(s)
    }
}
