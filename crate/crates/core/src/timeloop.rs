//! Leap-frog integration of `M ü + A u = f` and an empirical stability
//! probe based on the staggered discrete energy.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assembly::{AssemblyOptions, BlockDiagonal, BlockMatrix, GlobalSystem, MeshContext};
use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Mass and stiffness operators of a semi-discrete system.
#[derive(Debug, Clone)]
pub struct LeapFrog {
    pub mass: BlockDiagonal,
    pub stiffness: BlockMatrix,
}

impl LeapFrog {
    pub fn new(sys: &GlobalSystem) -> Self {
        Self {
            mass: sys.mass.clone(),
            stiffness: sys.stiffness(),
        }
    }

    pub fn from_parts(mass: BlockDiagonal, stiffness: BlockMatrix) -> Result<Self> {
        if mass.dofs.total != stiffness.size() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} dofs", mass.dofs.total),
                got: format!("{}", stiffness.size()),
            });
        }
        Ok(Self { mass, stiffness })
    }

    pub fn size(&self) -> usize {
        self.mass.dofs.total
    }

    fn check(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.size() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} dofs", self.size()),
                got: format!("{}", v.len()),
            });
        }
        Ok(())
    }
}

/// Two consecutive time levels and the staggered energy history.
/// `energy[k]` is the energy between steps `k` and `k + 1`.
#[derive(Debug, Clone)]
pub struct SimulationState {
    pub u_prev: DVector<f64>,
    pub u_curr: DVector<f64>,
    pub step: usize,
    pub dt: f64,
    pub energy: Vec<f64>,
}

impl SimulationState {
    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// Largest relative deviation of the energy from its first value.
    pub fn energy_drift(&self) -> f64 {
        let Some(&e0) = self.energy.first() else { return 0.0 };
        let scale = e0.abs().max(f64::MIN_POSITIVE);
        self.energy.iter().map(|e| (e - e0).abs() / scale).fold(0.0, f64::max)
    }

    pub fn write_energy_csv(&self, out: &mut impl Write) -> Result<()> {
        write_energy_csv(&self.energy, self.dt, out)
    }
}

/// Energy trace as CSV; row `k` holds the energy at time `(k − ½)Δt`.
pub fn write_energy_csv(energy: &[f64], dt: f64, out: &mut impl Write) -> Result<()> {
    writeln!(out, "step,time,energy")?;
    for (k, e) in energy.iter().enumerate() {
        writeln!(out, "{},{:.6e},{:.15e}", k + 1, (k as f64 + 0.5) * dt, e)?;
    }
    Ok(())
}

/// Density-weighted L² projection of `u0` and `v0` onto the discrete
/// space of `mesh`.
pub fn project_initial(
    mesh: &Mesh,
    sys: &GlobalSystem,
    opts: AssemblyOptions,
    u0: &dyn Fn(&[f64]) -> Vec<f64>,
    v0: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let ctx = MeshContext::new(mesh, opts)?;
    if mesh.elements.len() != sys.dofs.sizes.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} elements", sys.dofs.sizes.len()),
            got: format!("{}", mesh.elements.len()),
        });
    }
    let project = |g: &dyn Fn(&[f64]) -> Vec<f64>| -> Result<DVector<f64>> {
        let mut rhs = DVector::zeros(sys.size());
        for e in 0..mesh.elements.len() {
            rhs.rows_mut(sys.dofs.offsets[e], sys.dofs.sizes[e])
                .copy_from(&ctx.load(e, g)?);
        }
        Ok(sys.mass.solve(&rhs))
    };
    Ok((project(u0)?, project(v0)?))
}

/// Seeded vector with independent entries uniform in `[-1, 1]`.
pub fn random_state(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0))
}

fn energy(lf: &LeapFrog, next: &DVector<f64>, curr: &DVector<f64>, a_curr: &DVector<f64>, dt: f64) -> f64 {
    let d = next - curr;
    0.5 * d.dot(&lf.mass.apply(&d)) / (dt * dt) + 0.5 * next.dot(a_curr)
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Taylor start `u¹ = u⁰ + Δt v⁰ + ½Δt² M⁻¹(f⁰ − A u⁰)`.
pub fn start(
    lf: &LeapFrog,
    u0: &DVector<f64>,
    v0: &DVector<f64>,
    f0: Option<&DVector<f64>>,
    dt: f64,
) -> Result<SimulationState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    lf.check(u0)?;
    lf.check(v0)?;
    let au = lf.stiffness.apply(u0);
    let mut r = -&au;
    if let Some(f) = f0 {
        lf.check(f)?;
        r += f;
    }
    let u1 = u0 + dt * v0 + (0.5 * dt * dt) * lf.mass.solve(&r);
    let e = energy(lf, &u1, u0, &au, dt);
    Ok(SimulationState {
        u_prev: u0.clone(),
        u_curr: u1,
        step: 1,
        dt,
        energy: vec![e],
    })
}

/// Advances `state` by `steps` leap-frog steps. `force(n, t)` returns the
/// load at step `n`, or `None` for zero load.
pub fn leapfrog(
    lf: &LeapFrog,
    state: &mut SimulationState,
    force: &dyn Fn(usize, f64) -> Option<DVector<f64>>,
    steps: usize,
) -> Result<()> {
    lf.check(&state.u_curr)?;
    let dt2 = state.dt * state.dt;
    for _ in 0..steps {
        let au = lf.stiffness.apply(&state.u_curr);
        let mut r = -&au;
        if let Some(f) = force(state.step, state.time()) {
            lf.check(&f)?;
            r += f;
        }
        let next = 2.0 * &state.u_curr - &state.u_prev + dt2 * lf.mass.solve(&r);
        if !finite(&next) {
            return Err(Error::Unstable { step: state.step + 1 });
        }
        let e = energy(lf, &next, &state.u_curr, &au, state.dt);
        state.energy.push(e);
        state.u_prev = std::mem::replace(&mut state.u_curr, next);
        state.step += 1;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable { step: usize },
}

/// Growth of `|E|` over `|E(0)|` that counts as instability.
pub const ENERGY_GROWTH: f64 = 10.0;

#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub verdict: Verdict,
    pub dt: f64,
    pub steps: usize,
    pub energy: Vec<f64>,
}

impl ProbeResult {
    /// Largest relative deviation of the energy from its first value.
    pub fn energy_drift(&self) -> f64 {
        let Some(&e0) = self.energy.first() else { return 0.0 };
        let scale = e0.abs().max(f64::MIN_POSITIVE);
        self.energy.iter().map(|e| (e - e0).abs() / scale).fold(0.0, f64::max)
    }
}

/// Runs unforced leap-frog from `(u0, v0)` and reports the first step at
/// which the state stops being finite or the energy grows past
/// `ENERGY_GROWTH` times its initial size.
pub fn stability_probe(
    lf: &LeapFrog,
    dt: f64,
    steps: usize,
    u0: &DVector<f64>,
    v0: &DVector<f64>,
) -> Result<ProbeResult> {
    let mut state = start(lf, u0, v0, None, dt)?;
    let e0 = state.energy[0].abs();
    let unstable = |e: f64| !e.is_finite() || e.abs() > ENERGY_GROWTH * e0 * (1.0 + 1e-12) + f64::MIN_POSITIVE;
    let mut verdict = if !finite(&state.u_curr) || unstable(state.energy[0]) {
        Verdict::Unstable { step: 1 }
    } else {
        Verdict::Stable
    };
    while verdict == Verdict::Stable && state.step < steps {
        match leapfrog(lf, &mut state, &|_, _| None, 1) {
            Err(Error::Unstable { step }) => verdict = Verdict::Unstable { step },
            Err(e) => return Err(e),
            Ok(()) => {
                if unstable(*state.energy.last().unwrap()) {
                    verdict = Verdict::Unstable { step: state.step };
                }
            }
        }
    }
    if steps == 0 {
        state.energy.clear();
    }
    Ok(ProbeResult {
        verdict,
        dt,
        steps,
        energy: state.energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::Discretization;
    use crate::linalg::{cholesky_lower, sym_eigen_desc, symmetrize};
    use crate::mesh::{generate, BoundarySpec, MeshFamily};
    use crate::stability::{penalties, StabilityOptions, Variant};
    use nalgebra::DMatrix;

    fn setup(family: MeshFamily, p: usize) -> (Mesh, GlobalSystem) {
        let mesh = generate(family, p, 2, BoundarySpec::Periodic).unwrap();
        let opts = StabilityOptions::default();
        let disc = Discretization::new(&mesh, opts.assembly).unwrap();
        let eta = penalties(&disc, Variant::Star2, 1.0, &opts).unwrap().eta();
        let sys = disc.system(&mesh, &eta).unwrap();
        (mesh, sys)
    }

    /// Largest eigenpair of the pencil `(A, M)`.
    fn top_pair(sys: &GlobalSystem) -> (f64, DVector<f64>) {
        let l = cholesky_lower(&sys.mass_dense()).unwrap();
        let li = l.clone().try_inverse().unwrap();
        let mut s: DMatrix<f64> = &li * sys.stiffness_dense() * li.transpose();
        symmetrize(&mut s);
        let (vals, vecs) = sym_eigen_desc(&s);
        (vals[0], li.transpose() * vecs.column(0))
    }

    #[test]
    fn projection_reproduces_discrete_functions() {
        let mesh = generate(MeshFamily::OneD, 3, 3, BoundarySpec::Periodic).unwrap();
        let disc = Discretization::new(&mesh, AssemblyOptions::default()).unwrap();
        let sys3 = disc.system(&mesh, &vec![1.0; mesh.elements.len()]).unwrap();
        let g = |x: &[f64]| vec![x[0].powi(3) - 2.0 * x[0] + 0.5];
        let (u, v) = project_initial(&mesh, &sys3, AssemblyOptions::default(), &g, &|_| vec![0.0]).unwrap();
        assert!(v.amax() == 0.0);
        let ctx = MeshContext::new(&mesh, AssemblyOptions::default()).unwrap();
        for e in 0..mesh.elements.len() {
            let c: Vec<f64> = u
                .rows(sys3.dofs.offsets[e], sys3.dofs.sizes[e])
                .iter()
                .copied()
                .collect();
            for xi in [0.0, 0.13, 0.5, 0.91, 1.0] {
                let (x, val) = ctx.evaluate(e, &[xi], &c);
                assert!((val[0] - g(&x)[0]).abs() < 1e-11, "{} vs {}", val[0], g(&x)[0]);
            }
        }
    }

    #[test]
    fn projection_residual_is_orthogonal() {
        let mesh = generate(MeshFamily::OneD, 3, 2, BoundarySpec::Periodic).unwrap();
        let disc = Discretization::new(&mesh, AssemblyOptions::default()).unwrap();
        let sys = disc.system(&mesh, &[1.0, 1.0]).unwrap();
        let g = |x: &[f64]| vec![(std::f64::consts::PI * x[0]).sin()];
        let (u, _) = project_initial(&mesh, &sys, AssemblyOptions::default(), &g, &g).unwrap();
        let ctx = MeshContext::new(&mesh, AssemblyOptions::default()).unwrap();
        let mut rhs = DVector::zeros(sys.size());
        for e in 0..2 {
            rhs.rows_mut(sys.dofs.offsets[e], sys.dofs.sizes[e])
                .copy_from(&ctx.load(e, &g).unwrap());
        }
        let residual = rhs - sys.mass.apply(&u);
        assert!(residual.amax() < 1e-10);
        let (u0, _) = project_initial(&mesh, &sys, AssemblyOptions::default(), &|_| vec![0.0], &|_| vec![0.0]).unwrap();
        assert_eq!(u0.amax(), 0.0);
    }

    #[test]
    fn energy_is_conserved_below_the_limit() {
        for (family, p) in [(MeshFamily::OneD, 2), (MeshFamily::Triangular, 1)] {
            let (_, sys) = setup(family, p);
            let (lambda, _) = top_pair(&sys);
            let lf = LeapFrog::new(&sys);
            let dt = 0.99 * 2.0 / lambda.sqrt();
            let u0 = random_state(sys.size(), 7);
            let mut st = start(&lf, &u0, &DVector::zeros(sys.size()), None, dt).unwrap();
            leapfrog(&lf, &mut st, &|_, _| None, 2000).unwrap();
            assert_eq!(st.energy.len(), 2001);
            assert!(st.energy_drift() < 1e-9, "{family}: drift {:e}", st.energy_drift());
        }
    }

    #[test]
    fn top_mode_blows_up_above_the_limit() {
        let (_, sys) = setup(MeshFamily::Square, 1);
        let (lambda, v) = top_pair(&sys);
        let lf = LeapFrog::new(&sys);
        let dt = 1.01 * 2.0 / lambda.sqrt();
        let zero = DVector::zeros(sys.size());
        let r = stability_probe(&lf, dt, 2000, &v, &zero).unwrap();
        assert!(matches!(r.verdict, Verdict::Unstable { .. }));
        let r = stability_probe(&lf, 0.99 * 2.0 / lambda.sqrt(), 2000, &v, &zero).unwrap();
        assert_eq!(r.verdict, Verdict::Stable);
    }

    #[test]
    fn zero_data_stays_zero() {
        let (_, sys) = setup(MeshFamily::Triangular, 2);
        let lf = LeapFrog::new(&sys);
        let zero = DVector::zeros(sys.size());
        let mut st = start(&lf, &zero, &zero, None, 0.1).unwrap();
        leapfrog(&lf, &mut st, &|_, _| None, 50).unwrap();
        assert_eq!(st.u_curr.amax(), 0.0);
        assert!(st.energy.iter().all(|&e| e == 0.0));
        let r = stability_probe(&lf, 0.1, 0, &zero, &zero).unwrap();
        assert!(r.energy.is_empty() && r.verdict == Verdict::Stable);
    }

    #[test]
    fn pure_mass_is_stable_for_any_step() {
        let (_, sys) = setup(MeshFamily::OneD, 1);
        let lf = LeapFrog::from_parts(sys.mass.clone(), BlockMatrix::new(sys.dofs.clone())).unwrap();
        let u0 = random_state(sys.size(), 3);
        let v0 = random_state(sys.size(), 4);
        for dt in [0.1, 10.0, 1e3] {
            assert_eq!(
                stability_probe(&lf, dt, 500, &u0, &v0).unwrap().verdict,
                Verdict::Stable
            );
        }
    }

    #[test]
    fn forcing_enters_the_update() {
        let (_, sys) = setup(MeshFamily::OneD, 1);
        let lf = LeapFrog::new(&sys);
        let zero = DVector::zeros(sys.size());
        let f = sys.mass.apply(&DVector::from_element(sys.size(), 1.0));
        let mut st = start(&lf, &zero, &zero, Some(&f), 0.1).unwrap();
        leapfrog(&lf, &mut st, &|_, _| Some(f.clone()), 9).unwrap();
        // Constants lie in the kernel of A, so u = t²/2 exactly.
        let t = st.time();
        assert!((st.u_curr[0] - 0.5 * t * t).abs() < 1e-12);
    }

    #[test]
    fn energy_csv_layout() {
        let (_, sys) = setup(MeshFamily::OneD, 1);
        let lf = LeapFrog::new(&sys);
        let mut st = start(
            &lf,
            &random_state(sys.size(), 1),
            &DVector::zeros(sys.size()),
            None,
            0.1,
        )
        .unwrap();
        leapfrog(&lf, &mut st, &|_, _| None, 2).unwrap();
        let mut buf = Vec::new();
        st.write_energy_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("step,time,energy\n1,5.000000e-2,"));
        assert!(start(&lf, &st.u_curr, &st.u_curr, None, 0.0).is_err());
    }
}
