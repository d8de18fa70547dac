//! Benchmark dynamical systems, trajectory integration, and dataset
//! generation.
//!
//! Three continuous-time systems are supported: a two-dimensional model
//! with one fixed point and two isolated decay rates, the frictionless
//! pendulum, and the three-dimensional mean-field model of vortex shedding
//! behind a cylinder (sampled either on or off its attracting manifold).
//!
//! Trajectories are produced by a fixed-step classic RK4 integrator with
//! internal substepping, which meets the closed-form and energy-conservation
//! oracles on these smooth systems while staying bit-for-bit deterministic.

use alloc::vec::Vec;

use crate::error::Error;
use crate::mat::Mat;
use crate::math;
use crate::rng::{derive_seed, SeedStream};

/// Which benchmark system a dataset or model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemKind {
    DiscreteSpectrum,
    Pendulum,
    FluidFlowOnAttractor,
    FluidFlowOffAttractor,
}

impl SystemKind {
    pub const ALL: [SystemKind; 4] = [
        SystemKind::DiscreteSpectrum,
        SystemKind::Pendulum,
        SystemKind::FluidFlowOnAttractor,
        SystemKind::FluidFlowOffAttractor,
    ];

    /// Stable lowercase name used in files and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            SystemKind::DiscreteSpectrum => "discrete_spectrum",
            SystemKind::Pendulum => "pendulum",
            SystemKind::FluidFlowOnAttractor => "fluid_flow_on_attractor",
            SystemKind::FluidFlowOffAttractor => "fluid_flow_off_attractor",
        }
    }

    pub fn from_name(name: &str) -> Option<SystemKind> {
        SystemKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// Constants of the two-dimensional discrete-spectrum model.
pub mod discrete_spectrum {
    /// Decay rate of the first coordinate.
    pub const MU: f64 = -0.05;
    /// Decay rate toward the invariant manifold.
    pub const LAMBDA: f64 = -1.0;

    /// Curvature of the invariant manifold `x2 = B * x1^2`,
    /// `B = -lambda / (2 mu - lambda)`.
    pub const B: f64 = -LAMBDA / (2.0 * MU - LAMBDA);
}

/// Constants of the cylinder-wake mean-field model.
pub mod fluid_flow {
    pub const MU: f64 = 0.1;
    pub const OMEGA: f64 = 1.0;
    pub const A: f64 = -0.1;
    pub const LAMBDA: f64 = 10.0;

    /// Trajectories that ever exceed this height are discarded when
    /// sampling off the attractor.
    pub const X3_CUTOFF: f64 = 2.5;
}

/// A system together with its sampling grid: time step, snapshots per
/// trajectory, and state dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub dt: f64,
    pub traj_len: usize,
    pub state_dim: usize,
}

impl SystemSpec {
    /// The canonical grid for each benchmark.
    pub fn new(kind: SystemKind) -> Self {
        let (dt, traj_len, state_dim) = match kind {
            SystemKind::DiscreteSpectrum => (0.02, 51, 2),
            SystemKind::Pendulum => (0.02, 51, 2),
            SystemKind::FluidFlowOnAttractor => (0.05, 121, 3),
            SystemKind::FluidFlowOffAttractor => (0.01, 101, 3),
        };
        SystemSpec {
            kind,
            dt,
            traj_len,
            state_dim,
        }
    }
}

/// Dataset split membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Option<Split> {
        Split::ALL.iter().copied().find(|s| s.name() == name)
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Validation => 2,
            Split::Test => 3,
        }
    }
}

/// Time-ordered snapshots of one solution, one state per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Mat,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.cols()
    }
}

/// A set of trajectories from one system and split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub system: SystemSpec,
    pub split: Split,
    pub trajectories: Vec<Trajectory>,
    pub seed: u64,
}

const MAX_STATE_DIM: usize = 3;
const RESAMPLE_CAP: u64 = 1_000_000;
const DEFAULT_SUBSTEPS: usize = 10;
const BLOWUP_LIMIT: f64 = 1e6;

fn rhs_raw(kind: SystemKind, x: &[f64; MAX_STATE_DIM], out: &mut [f64; MAX_STATE_DIM]) {
    match kind {
        SystemKind::DiscreteSpectrum => {
            out[0] = discrete_spectrum::MU * x[0];
            out[1] = discrete_spectrum::LAMBDA * (x[1] - x[0] * x[0]);
            out[2] = 0.0;
        }
        SystemKind::Pendulum => {
            out[0] = x[1];
            out[1] = -math::sin(x[0]);
            out[2] = 0.0;
        }
        SystemKind::FluidFlowOnAttractor | SystemKind::FluidFlowOffAttractor => {
            let (mu, om, a, la) = (
                fluid_flow::MU,
                fluid_flow::OMEGA,
                fluid_flow::A,
                fluid_flow::LAMBDA,
            );
            out[0] = mu * x[0] - om * x[1] + a * x[0] * x[2];
            out[1] = om * x[0] + mu * x[1] + a * x[1] * x[2];
            out[2] = -la * (x[2] - x[0] * x[0] - x[1] * x[1]);
        }
    }
}

/// Evaluates the system's right-hand side at `x`.
pub fn rhs(system: &SystemSpec, x: &[f64]) -> Result<Vec<f64>, Error> {
    if x.len() != system.state_dim {
        return Err(Error::ShapeMismatch {
            expected: system.state_dim,
            got: x.len(),
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("rhs input"));
    }
    let mut xs = [0.0; MAX_STATE_DIM];
    xs[..x.len()].copy_from_slice(x);
    let mut out = [0.0; MAX_STATE_DIM];
    rhs_raw(system.kind, &xs, &mut out);
    Ok(out[..x.len()].to_vec())
}

fn rk4_step(kind: SystemKind, x: &mut [f64; MAX_STATE_DIM], h: f64) {
    let mut k1 = [0.0; MAX_STATE_DIM];
    let mut k2 = [0.0; MAX_STATE_DIM];
    let mut k3 = [0.0; MAX_STATE_DIM];
    let mut k4 = [0.0; MAX_STATE_DIM];
    let mut tmp = [0.0; MAX_STATE_DIM];

    rhs_raw(kind, x, &mut k1);
    for i in 0..MAX_STATE_DIM {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    rhs_raw(kind, &tmp, &mut k2);
    for i in 0..MAX_STATE_DIM {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    rhs_raw(kind, &tmp, &mut k3);
    for i in 0..MAX_STATE_DIM {
        tmp[i] = x[i] + h * k3[i];
    }
    rhs_raw(kind, &tmp, &mut k4);
    for i in 0..MAX_STATE_DIM {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates with the default substep count (10 RK4 steps per snapshot).
pub fn integrate(system: &SystemSpec, x0: &[f64]) -> Result<Trajectory, Error> {
    integrate_with_substeps(system, x0, DEFAULT_SUBSTEPS)
}

/// Integrates from `x0`, emitting `traj_len` snapshots spaced `dt` apart,
/// taking `substeps` internal RK4 steps between snapshots.
pub fn integrate_with_substeps(
    system: &SystemSpec,
    x0: &[f64],
    substeps: usize,
) -> Result<Trajectory, Error> {
    if x0.len() != system.state_dim {
        return Err(Error::ShapeMismatch {
            expected: system.state_dim,
            got: x0.len(),
        });
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("initial condition"));
    }
    assert!(substeps > 0, "substeps must be positive");

    let dim = system.state_dim;
    let h = system.dt / substeps as f64;
    let mut x = [0.0; MAX_STATE_DIM];
    x[..dim].copy_from_slice(x0);

    let mut states = Mat::zeros(system.traj_len, dim);
    states.row_mut(0).copy_from_slice(&x[..dim]);
    for row in 1..system.traj_len {
        for _ in 0..substeps {
            rk4_step(system.kind, &mut x, h);
        }
        if x[..dim].iter().any(|v| !v.is_finite() || math::abs(*v) > BLOWUP_LIMIT) {
            return Err(Error::NonFinite("integration"));
        }
        states.row_mut(row).copy_from_slice(&x[..dim]);
    }
    Ok(Trajectory {
        states,
        dt: system.dt,
    })
}

/// Pendulum energy `x2^2 / 2 - cos(x1)`.
pub fn pendulum_energy(x: &[f64]) -> f64 {
    assert_eq!(x.len(), 2, "pendulum state is two-dimensional");
    0.5 * x[1] * x[1] - math::cos(x[0])
}

/// Exact solution of the discrete-spectrum system at time `t`.
///
/// `x1(t) = x1(0) e^{mu t}` and
/// `x2(t) = (x2(0) - B x1(0)^2) e^{lambda t} + B x1(0)^2 e^{2 mu t}`.
pub fn closed_form_discrete(x0: &[f64], t: f64) -> [f64; 2] {
    assert_eq!(x0.len(), 2);
    let (mu, la, b) = (
        discrete_spectrum::MU,
        discrete_spectrum::LAMBDA,
        discrete_spectrum::B,
    );
    let curved = b * x0[0] * x0[0];
    let x1 = x0[0] * math::exp(mu * t);
    let x2 = (x0[1] - curved) * math::exp(la * t) + curved * math::exp(2.0 * mu * t);
    [x1, x2]
}

/// Draws one initial condition according to the system's sampling rule.
///
/// - Discrete spectrum: uniform over the box `[-0.5, 0.5]^2`.
/// - Pendulum: uniform over `[-3.1, 3.1] x [-2, 2]`, resampled until the
///   energy is below 0.99.
/// - Fluid flow on the attractor: uniform `r in [0, 1.1]`,
///   `theta in [0, 2pi)`, placed on the bowl `x3 = x1^2 + x2^2`.
/// - Fluid flow off the attractor: uniform over
///   `[-1.1, 1.1]^2 x [0, 2.42]`.
pub fn sample_ic(system: &SystemSpec, rng: &mut SeedStream) -> Result<Vec<f64>, Error> {
    match system.kind {
        SystemKind::DiscreteSpectrum => Ok(alloc::vec![
            rng.uniform_in(-0.5, 0.5),
            rng.uniform_in(-0.5, 0.5),
        ]),
        SystemKind::Pendulum => {
            for _ in 0..RESAMPLE_CAP {
                let x1 = rng.uniform_in(-3.1, 3.1);
                let x2 = rng.uniform_in(-2.0, 2.0);
                if pendulum_energy(&[x1, x2]) < 0.99 {
                    return Ok(alloc::vec![x1, x2]);
                }
            }
            Err(Error::SamplingCapExceeded)
        }
        SystemKind::FluidFlowOnAttractor => {
            let r = rng.uniform_in(0.0, 1.1);
            let theta = rng.uniform_in(0.0, 2.0 * core::f64::consts::PI);
            let x1 = r * math::cos(theta);
            let x2 = r * math::sin(theta);
            Ok(alloc::vec![x1, x2, x1 * x1 + x2 * x2])
        }
        SystemKind::FluidFlowOffAttractor => Ok(alloc::vec![
            rng.uniform_in(-1.1, 1.1),
            rng.uniform_in(-1.1, 1.1),
            rng.uniform_in(0.0, 2.42),
        ]),
    }
}

fn trajectory_exceeds_cutoff(traj: &Trajectory) -> bool {
    (0..traj.len()).any(|r| traj.states[(r, 2)] > fluid_flow::X3_CUTOFF)
}

/// Generates exactly `n_traj` accepted trajectories for one split.
///
/// Each trajectory index gets its own random stream derived from
/// `(seed, split, index)`, so output is independent of evaluation order.
/// Off-attractor fluid trajectories whose third coordinate ever exceeds
/// 2.5 are discarded and a fresh initial condition is drawn.
pub fn generate_dataset(
    system: &SystemSpec,
    split: Split,
    n_traj: usize,
    seed: u64,
) -> Result<Dataset, Error> {
    if n_traj == 0 {
        return Err(Error::Config(alloc::string::String::from(
            "n_traj must be positive",
        )));
    }
    let split_seed = derive_seed(seed, split.tag());
    let mut trajectories = Vec::with_capacity(n_traj);
    for idx in 0..n_traj {
        let mut rng = SeedStream::new(derive_seed(split_seed, idx as u64));
        let mut attempts: u64 = 0;
        let traj = loop {
            attempts += 1;
            if attempts > RESAMPLE_CAP {
                return Err(Error::SamplingCapExceeded);
            }
            let x0 = sample_ic(system, &mut rng)?;
            let traj = integrate(system, &x0)?;
            if system.kind == SystemKind::FluidFlowOffAttractor && trajectory_exceeds_cutoff(&traj)
            {
                continue;
            }
            break traj;
        };
        trajectories.push(traj);
    }
    Ok(Dataset {
        system: *system,
        split,
        trajectories,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rhs_pendulum_fixed_point() {
        let sys = SystemSpec::new(SystemKind::Pendulum);
        assert_eq!(rhs(&sys, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rhs_fluid_equilibrium() {
        let sys = SystemSpec::new(SystemKind::FluidFlowOnAttractor);
        assert_eq!(rhs(&sys, &[0.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn rhs_discrete_on_parabola() {
        // At (1, 1) the second equation vanishes because x2 = x1^2.
        let sys = SystemSpec::new(SystemKind::DiscreteSpectrum);
        let dx = rhs(&sys, &[1.0, 1.0]).unwrap();
        assert_eq!(dx, vec![-0.05, 0.0]);
    }

    #[test]
    fn rhs_rejects_non_finite() {
        let sys = SystemSpec::new(SystemKind::Pendulum);
        assert!(matches!(
            rhs(&sys, &[f64::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn manifold_curvature_constant() {
        assert!((discrete_spectrum::B - 10.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_at_zero_is_identity() {
        let x = closed_form_discrete(&[0.5, 0.5], 0.0);
        assert_eq!(x, [0.5, 0.5]);
    }

    #[test]
    fn closed_form_stays_on_invariant_manifold() {
        // Starting on x2 = B x1^2, the solution remains on it.
        let x1_0 = 0.4;
        let x0 = [x1_0, discrete_spectrum::B * x1_0 * x1_0];
        for k in 0..=20 {
            let t = k as f64 * 0.3;
            let x = closed_form_discrete(&x0, t);
            let expected = discrete_spectrum::B * x[0] * x[0];
            assert!(
                (x[1] - expected).abs() < 1e-14,
                "left manifold at t={t}: {} vs {}",
                x[1],
                expected
            );
        }
    }

    #[test]
    fn integrate_matches_closed_form() {
        let sys = SystemSpec::new(SystemKind::DiscreteSpectrum);
        let x0 = [0.5, 0.5];
        let traj = integrate(&sys, &x0).unwrap();
        for row in 0..traj.len() {
            let t = row as f64 * sys.dt;
            let exact = closed_form_discrete(&x0, t);
            for i in 0..2 {
                assert!(
                    (traj.states[(row, i)] - exact[i]).abs() < 1e-10,
                    "row {row} component {i}"
                );
            }
        }
    }

    #[test]
    fn integrate_conserves_pendulum_energy() {
        let sys = SystemSpec::new(SystemKind::Pendulum);
        let traj = integrate(&sys, &[1.0, 0.0]).unwrap();
        let e0 = pendulum_energy(traj.states.row(0));
        for row in 0..traj.len() {
            let e = pendulum_energy(traj.states.row(row));
            assert!((e - e0).abs() < 1e-8, "energy drift at row {row}");
        }
    }

    #[test]
    fn integrate_fixed_point_is_constant() {
        let sys = SystemSpec::new(SystemKind::Pendulum);
        let traj = integrate(&sys, &[0.0, 0.0]).unwrap();
        assert!(traj.states.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pendulum_energy_examples() {
        assert_eq!(pendulum_energy(&[0.0, 0.0]), -1.0);
        assert!((pendulum_energy(&[0.0, 2.0]) - 1.0).abs() < 1e-15);
        assert!((pendulum_energy(&[core::f64::consts::PI, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pendulum_rejection_rule() {
        // (3.0, 2.0) has energy ~2.99 and must be rejected; (0, 0) has -1.
        assert!(pendulum_energy(&[3.0, 2.0]) >= 0.99);
        assert!(pendulum_energy(&[0.0, 0.0]) < 0.99);
        let sys = SystemSpec::new(SystemKind::Pendulum);
        let mut rng = SeedStream::new(11);
        for _ in 0..1000 {
            let ic = sample_ic(&sys, &mut rng).unwrap();
            assert!(pendulum_energy(&ic) < 0.99);
            assert!(ic[0].abs() <= 3.1 && ic[1].abs() <= 2.0);
        }
    }

    #[test]
    fn on_attractor_samples_lie_on_bowl() {
        let sys = SystemSpec::new(SystemKind::FluidFlowOnAttractor);
        let mut rng = SeedStream::new(5);
        for _ in 0..1000 {
            let ic = sample_ic(&sys, &mut rng).unwrap();
            assert_eq!(ic[2], ic[0] * ic[0] + ic[1] * ic[1]);
            let r = (ic[0] * ic[0] + ic[1] * ic[1]).sqrt();
            assert!(r <= 1.1 + 1e-12);
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let sys = SystemSpec::new(SystemKind::DiscreteSpectrum);
        let a = generate_dataset(&sys, Split::Train, 8, 42).unwrap();
        let b = generate_dataset(&sys, Split::Train, 8, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&sys, Split::Test, 8, 42).unwrap();
        assert_ne!(a.trajectories, c.trajectories);
    }

    #[test]
    fn dataset_counts_and_shape() {
        let sys = SystemSpec::new(SystemKind::Pendulum);
        let d = generate_dataset(&sys, Split::Validation, 5, 9).unwrap();
        assert_eq!(d.trajectories.len(), 5);
        for t in &d.trajectories {
            assert_eq!(t.len(), 51);
            assert_eq!(t.state_dim(), 2);
            assert!(t.states.is_finite());
        }
    }

    #[test]
    fn off_attractor_rejection_bounds_x3() {
        let sys = SystemSpec::new(SystemKind::FluidFlowOffAttractor);
        let d = generate_dataset(&sys, Split::Train, 20, 3).unwrap();
        for t in &d.trajectories {
            for row in 0..t.len() {
                assert!(t.states[(row, 2)] <= fluid_flow::X3_CUTOFF);
            }
        }
    }

    #[test]
    fn zero_trajectories_is_a_config_error() {
        let sys = SystemSpec::new(SystemKind::Pendulum);
        assert!(matches!(
            generate_dataset(&sys, Split::Train, 0, 1),
            Err(Error::Config(_))
        ));
    }
}
