//! Stochastic propagation under monitoring.
//!
//! Two regimes are covered. In the repeated-readout regime the chain evolves
//! unitarily for `1/kappa`, then each due ancilla readout is sampled from its
//! POVM and the matching Kraus operator is applied ([`weak_trajectory`]).
//! In the continuous regime the conditioned state follows the diffusive
//! update
//!
//! ```text
//! d psi = -i H dt psi
//!         + dt (G/2) (2 <A> A - A^2 - <A>^2) psi
//!         + sqrt(G) (A - <A>) dW psi,         G = phi^2 kappa
//! ```
//!
//! integrated by explicit Euler steps with explicit renormalization
//! ([`sse_trajectory`]). `<A>` is evaluated on the pre-step state; the `A^2`
//! contribution is realized as two successive operator applications and the
//! full right-hand side is assembled by superposition and compressed once per
//! step. Averaging trajectories over the noise reproduces the deterministic
//! mixed-state evolution, for which [`lindblad_oracle`] provides a dense
//! reference.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::dense::{self, PauliAxis};
use crate::error::{Error, Result};
use crate::mpo::{
    apply_mpo, apply_mpo_exact, expectation_mpo_window, measurement_mpo, nn_hamiltonian_mpo,
    observable_sum_mpo, povm_effect_mpo, trotter_step, MatrixProductOperator, MeasurementSpec,
    NnCoupling,
};
use crate::mps::MatrixProductState;
use crate::rng::RngStream;

/// Absolute tolerance on probability consistency checks; violations abort.
const PROBABILITY_TOL: f64 = 1e-8;

/// Largest imaginary part tolerated on a recorded Hermitian expectation.
const IMAG_TOL: f64 = 1e-8;

/// A named quantity recorded along a trajectory. All supported observables
/// are real (Hermitian operators, purities, entropies).
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    LocalPauli { axis: PauliAxis, site: usize },
    Correlator { axis_a: PauliAxis, site_a: usize, axis_b: PauliAxis, site_b: usize },
    TwoSitePurity { site_a: usize, site_b: usize },
    SchmidtEntropy { bond: usize },
}

impl Observable {
    /// Stable column name for output files.
    pub fn name(&self) -> String {
        match self {
            Observable::LocalPauli { axis, site } => format!("s{}_{site}", axis.label()),
            Observable::Correlator { axis_a, site_a, axis_b, site_b } => {
                format!("c{}{}_{site_a}_{site_b}", axis_a.label(), axis_b.label())
            }
            Observable::TwoSitePurity { site_a, site_b } => format!("purity_{site_a}_{site_b}"),
            Observable::SchmidtEntropy { bond } => format!("entropy_{bond}"),
        }
    }

    pub fn validate_for_chain(&self, l: usize) -> Result<()> {
        let check = |s: usize| {
            if s >= l {
                Err(Error::InvalidArgument(format!(
                    "observable site {s} out of range for {l} sites"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            Observable::LocalPauli { site, .. } => check(*site),
            Observable::Correlator { site_a, site_b, .. } => {
                check(*site_a)?;
                check(*site_b)?;
                if site_a == site_b {
                    return Err(Error::InvalidArgument(
                        "correlator sites must be distinct".into(),
                    ));
                }
                Ok(())
            }
            Observable::TwoSitePurity { site_a, site_b } => {
                check(*site_a)?;
                check(*site_b)?;
                if site_a == site_b {
                    return Err(Error::InvalidArgument("purity sites must be distinct".into()));
                }
                Ok(())
            }
            Observable::SchmidtEntropy { bond } => {
                if bond + 1 >= l {
                    return Err(Error::InvalidArgument(format!(
                        "entropy bond {bond} out of range for {l} sites"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Evaluate observables on a normalized state. Gauge moves happen in place
/// (the represented state is unchanged); local terms are swept in site order
/// so one pass covers them all.
pub fn evaluate_observables(
    psi: &mut MatrixProductState,
    observables: &[Observable],
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; observables.len()];

    let mut locals: Vec<(usize, usize)> = observables
        .iter()
        .enumerate()
        .filter_map(|(k, o)| match o {
            Observable::LocalPauli { site, .. } => Some((*site, k)),
            _ => None,
        })
        .collect();
    locals.sort_by_key(|x| x.0);
    for (site, k) in locals {
        let Observable::LocalPauli { axis, .. } = &observables[k] else { unreachable!() };
        psi.canonicalize_mut(site)?;
        let v = psi.expectation_at_center(&axis.matrix())?;
        out[k] = real_checked(v, &observables[k].name())?;
    }

    for (k, o) in observables.iter().enumerate() {
        match o {
            Observable::LocalPauli { .. } => {}
            Observable::Correlator { axis_a, site_a, axis_b, site_b } => {
                let v = psi.correlation(&axis_a.matrix(), *site_a, &axis_b.matrix(), *site_b)?;
                out[k] = real_checked(v, &o.name())?;
            }
            Observable::TwoSitePurity { site_a, site_b } => {
                let rho = psi.reduced_density_matrix(&[*site_a, *site_b])?;
                let v = (&rho * &rho).trace();
                out[k] = real_checked(v, &o.name())?;
            }
            Observable::SchmidtEntropy { bond } => {
                out[k] = psi.schmidt_spectrum(*bond)?.entropy();
            }
        }
    }
    Ok(out)
}

fn real_checked(v: C64, what: &str) -> Result<f64> {
    if v.im.abs() > IMAG_TOL {
        return Err(Error::Numerical(format!(
            "{what} has imaginary part {:.3e}",
            v.im
        )));
    }
    Ok(v.re)
}

/// One stochastic event along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeEvent {
    /// Ancilla readout: which spec fired and the sampled result.
    Readout { time: f64, spec: usize, mu: i8 },
    /// Diffusive noise increment used in a continuous step.
    Noise { time: f64, dw: f64 },
}

impl OutcomeEvent {
    pub fn time(&self) -> f64 {
        match self {
            OutcomeEvent::Readout { time, .. } => *time,
            OutcomeEvent::Noise { time, .. } => *time,
        }
    }
}

/// Time series produced by one stochastic realization.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// Recording times, strictly increasing (units of inverse coupling).
    pub times: Vec<f64>,
    pub observable_names: Vec<String>,
    /// `values[k][j]`: observable `j` at `times[k]`.
    pub values: Vec<Vec<f64>>,
    pub outcomes: Vec<OutcomeEvent>,
    /// Discarded truncation weight accumulated between consecutive records.
    pub truncation: Vec<f64>,
    pub total_discarded: f64,
    /// Set when `total_discarded` crossed the configured budget; the run
    /// still completes.
    pub budget_exceeded: bool,
    pub final_state: Option<MatrixProductState>,
}

/// Shared knobs for trajectory generation.
#[derive(Debug, Clone)]
pub struct TrajectoryOptions {
    /// Total simulated time (units of inverse coupling).
    pub duration: f64,
    pub max_bond: usize,
    pub svd_tol: f64,
    /// Warn (do not abort) when the summed discarded weight crosses this.
    pub truncation_budget: f64,
    /// Step length when no readout fixes one (required if no specs given).
    pub dt_override: Option<f64>,
    /// Record observables every this many steps.
    pub record_every: usize,
    pub record_final_state: bool,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            duration: 1.0,
            max_bond: 32,
            svd_tol: 1e-10,
            truncation_budget: 1e-4,
            dt_override: None,
            record_every: 1,
            record_final_state: false,
        }
    }
}

/// Result of one sampled readout.
#[derive(Debug, Clone)]
pub struct MeasureOutcome {
    pub state: MatrixProductState,
    pub mu: i8,
    /// Outcome probability of `mu = +1`, evaluated before sampling.
    pub p_plus: f64,
    pub discarded: f64,
}

/// Probability of `mu = +1` for a readout of `spec` on a normalized state.
pub fn outcome_probability(psi: &MatrixProductState, spec: &MeasurementSpec) -> Result<f64> {
    let l = psi.len();
    spec.validate_for_chain(l)?;
    let Some((lo, hi)) = spec.support() else {
        return Ok(0.5);
    };
    let eff = povm_effect_mpo(l, spec, 1)?;
    let mut work = psi.clone();
    work.canonicalize_mut(lo)?;
    let p = expectation_mpo_window(&work, &eff, lo, hi)?;
    validate_probability(p)
}

fn validate_probability(p: C64) -> Result<f64> {
    if p.im.abs() > PROBABILITY_TOL {
        return Err(Error::Numerical(format!(
            "outcome probability has imaginary part {:.3e}",
            p.im
        )));
    }
    if p.re < -PROBABILITY_TOL || p.re > 1.0 + PROBABILITY_TOL {
        return Err(Error::Numerical(format!("outcome probability {} out of range", p.re)));
    }
    Ok(p.re.clamp(0.0, 1.0))
}

/// Sample one readout of `spec` and collapse the state accordingly. The
/// returned state is normalized, with the branch amplitude folded into its
/// log-norm offset.
pub fn discrete_measure_step(
    psi: &MatrixProductState,
    spec: &MeasurementSpec,
    rng: &mut RngStream,
    max_bond: usize,
    tol: f64,
) -> Result<MeasureOutcome> {
    let l = psi.len();
    let p_plus = outcome_probability(psi, spec)?;
    let mu: i8 = if rng.bernoulli(p_plus) { 1 } else { -1 };
    let p_mu = if mu == 1 { p_plus } else { 1.0 - p_plus };

    let (mut state, discarded) = match spec.support() {
        None => {
            // uninformative readout: phase factor only
            (psi.clone(), 0.0)
        }
        Some((lo, hi)) if lo == hi => {
            // single-site Kraus operator, applied locally
            let k = measurement_mpo(l, spec, mu)?;
            let block = k.site(lo);
            let d = psi.phys_dim();
            let mut m = DMatrix::zeros(d, d);
            for a in 0..d {
                for b in 0..d {
                    m[(a, b)] = block.get(&[0, 0, a, b]);
                }
            }
            let mut work = psi.clone();
            work.canonicalize_mut(lo)?;
            work.apply_local_mut(&m, lo)?;
            (work, 0.0)
        }
        Some(_) => {
            let k = measurement_mpo(l, spec, mu)?;
            let (out, reports) = apply_mpo(&k, psi, max_bond, tol)?;
            let disc: f64 = reports.iter().map(|r| r.discarded_weight).sum();
            (out, disc)
        }
    };

    let norm = state.normalize()?;
    let branch = norm * norm;
    if (branch - p_mu).abs() > 1e-6 {
        return Err(Error::Numerical(format!(
            "posterior weight {branch:.9} disagrees with outcome probability {p_mu:.9}"
        )));
    }
    Ok(MeasureOutcome { state, mu, p_plus, discarded })
}

fn resolve_steps(specs: &[MeasurementSpec], opts: &TrajectoryOptions) -> Result<(f64, Vec<usize>)> {
    if specs.is_empty() {
        let dt = opts.dt_override.ok_or_else(|| {
            Error::InvalidArgument("no readouts configured: a step length is required".into())
        })?;
        if dt <= 0.0 {
            return Err(Error::InvalidArgument("step length must be positive".into()));
        }
        return Ok((dt, vec![]));
    }
    let kappa_max = specs
        .iter()
        .map(|s| s.kappa)
        .fold(f64::NAN, f64::max);
    if !(kappa_max.is_finite() && kappa_max > 0.0) {
        return Err(Error::InvalidArgument("readout rates must be positive".into()));
    }
    let dt = 1.0 / kappa_max;
    let mut strides = Vec::with_capacity(specs.len());
    for (i, s) in specs.iter().enumerate() {
        if s.kappa <= 0.0 {
            return Err(Error::InvalidArgument(format!("readout {i} has nonpositive rate")));
        }
        let ratio = kappa_max / s.kappa;
        let stride = ratio.round();
        if (ratio - stride).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "readout {i} rate must divide the fastest rate (ratio {ratio})"
            )));
        }
        strides.push(stride as usize);
    }
    Ok((dt, strides))
}

/// Propagate under interleaved unitary steps and sampled readouts: one
/// second-order split step of length `1/kappa`, then every due readout in
/// spec order, repeated to the requested duration. Observables are recorded
/// after the readout sub-step.
pub fn weak_trajectory(
    psi0: &MatrixProductState,
    h_terms: &[NnCoupling],
    specs: &[MeasurementSpec],
    observables: &[Observable],
    opts: &TrajectoryOptions,
    rng: &mut RngStream,
) -> Result<TrajectoryRecord> {
    let l = psi0.len();
    for o in observables {
        o.validate_for_chain(l)?;
    }
    for s in specs {
        s.validate_for_chain(l)?;
    }
    let (dt, strides) = resolve_steps(specs, opts)?;
    let steps = ((opts.duration / dt) - 1e-9).ceil().max(0.0) as usize;

    let mut state = psi0.clone();
    state.normalize()?;
    let names: Vec<String> = observables.iter().map(|o| o.name()).collect();
    let mut record = TrajectoryRecord {
        times: Vec::new(),
        observable_names: names,
        values: Vec::new(),
        outcomes: Vec::new(),
        truncation: Vec::new(),
        total_discarded: 0.0,
        budget_exceeded: false,
        final_state: None,
    };

    let every = opts.record_every.max(1);
    let mut pending_discard = 0.0;
    for step in 0..steps {
        let t = (step + 1) as f64 * dt;
        let (evolved, disc) = trotter_step(&state, h_terms, dt, opts.max_bond, opts.svd_tol)?;
        state = evolved;
        state.normalize()?;
        pending_discard += disc;

        for (k, spec) in specs.iter().enumerate() {
            if (step + 1) % strides[k] == 0 {
                let out = discrete_measure_step(&state, spec, rng, opts.max_bond, opts.svd_tol)?;
                record.outcomes.push(OutcomeEvent::Readout { time: t, spec: k, mu: out.mu });
                pending_discard += out.discarded;
                state = out.state;
            }
        }

        if (step + 1) % every == 0 || step + 1 == steps {
            let vals = evaluate_observables(&mut state, observables)?;
            record.times.push(t);
            record.values.push(vals);
            record.truncation.push(pending_discard);
            record.total_discarded += pending_discard;
            pending_discard = 0.0;
        }
    }
    record.total_discarded += pending_discard;
    record.budget_exceeded = record.total_discarded > opts.truncation_budget;
    if opts.record_final_state {
        record.final_state = Some(state);
    }
    Ok(record)
}

/// One explicit Euler update of the diffusive conditioned dynamics; `dw`
/// carries variance `dt`. Builds the Hamiltonian representation on the fly —
/// use [`sse_trajectory`] for long runs.
pub fn sse_euler_step(
    psi: &MatrixProductState,
    h_terms: &[NnCoupling],
    spec: &MeasurementSpec,
    gamma: f64,
    dw: f64,
    dt: f64,
    max_bond: usize,
    tol: f64,
) -> Result<MatrixProductState> {
    let h_mpo = if h_terms.is_empty() {
        None
    } else {
        Some(nn_hamiltonian_mpo(psi.len(), h_terms)?)
    };
    let a_mpo = observable_sum_mpo(psi.len(), spec)?;
    let support = spec.support().expect("observable has terms");
    sse_euler_step_with(psi, h_mpo.as_ref(), &a_mpo, support, gamma, dw, dt, max_bond, tol)
}

#[allow(clippy::too_many_arguments)]
fn sse_euler_step_with(
    psi: &MatrixProductState,
    h_mpo: Option<&MatrixProductOperator>,
    a_mpo: &MatrixProductOperator,
    a_support: (usize, usize),
    gamma: f64,
    dw: f64,
    dt: f64,
    max_bond: usize,
    tol: f64,
) -> Result<MatrixProductState> {
    if gamma < 0.0 {
        return Err(Error::InvalidArgument("measurement strength must be nonnegative".into()));
    }
    let (lo, hi) = a_support;
    let mut work = psi.clone();
    work.canonicalize_mut(lo)?;
    let mean_a = real_checked(expectation_mpo_window(&work, a_mpo, lo, hi)?, "monitored mean")?;

    let a_psi = apply_mpo_exact(a_mpo, &work)?;
    let aa_psi = apply_mpo_exact(a_mpo, &a_psi)?;
    let sqrt_g = gamma.sqrt();

    let c_id = C64::new(1.0 - 0.5 * dt * gamma * mean_a * mean_a - sqrt_g * mean_a * dw, 0.0);
    let c_a = C64::new(dt * gamma * mean_a + sqrt_g * dw, 0.0);
    let c_aa = C64::new(-0.5 * dt * gamma, 0.0);
    let c_h = C64::new(0.0, -dt);

    let mut sum = MatrixProductState::superpose(&work, &a_psi, c_id, c_a)?;
    sum = MatrixProductState::superpose(&sum, &aa_psi, C64::new(1.0, 0.0), c_aa)?;
    if let Some(h) = h_mpo {
        let h_psi = apply_mpo_exact(h, &work)?;
        sum = MatrixProductState::superpose(&sum, &h_psi, C64::new(1.0, 0.0), c_h)?;
    }

    let (mut out, _) = sum.compress(max_bond, tol)?;
    if out.norm() < 1e-12 {
        return Err(Error::Numerical("state norm collapsed during integration".into()));
    }
    out.set_log_norm_offset(psi.log_norm_offset());
    out.normalize()?;
    Ok(out)
}

/// Continuous-monitoring trajectory with freshly drawn noise; the increments
/// are recorded so the path can be replayed exactly.
#[allow(clippy::too_many_arguments)]
pub fn sse_trajectory(
    psi0: &MatrixProductState,
    h_terms: &[NnCoupling],
    spec: &MeasurementSpec,
    gamma: f64,
    dt: f64,
    observables: &[Observable],
    opts: &TrajectoryOptions,
    rng: &mut RngStream,
) -> Result<TrajectoryRecord> {
    if dt <= 0.0 {
        return Err(Error::InvalidArgument("step length must be positive".into()));
    }
    let steps = ((opts.duration / dt) - 1e-9).ceil().max(0.0) as usize;
    let sqrt_dt = dt.sqrt();
    let noise: Vec<f64> = (0..steps).map(|_| rng.gaussian() * sqrt_dt).collect();
    sse_trajectory_with_noise(psi0, h_terms, spec, gamma, dt, &noise, observables, opts)
}

/// Continuous-monitoring trajectory along a fixed noise path (`noise[k]` is
/// the increment of step `k`, variance `dt`). The step count is the path
/// length; `opts.duration` is ignored.
#[allow(clippy::too_many_arguments)]
pub fn sse_trajectory_with_noise(
    psi0: &MatrixProductState,
    h_terms: &[NnCoupling],
    spec: &MeasurementSpec,
    gamma: f64,
    dt: f64,
    noise: &[f64],
    observables: &[Observable],
    opts: &TrajectoryOptions,
) -> Result<TrajectoryRecord> {
    let l = psi0.len();
    for o in observables {
        o.validate_for_chain(l)?;
    }
    spec.validate_for_chain(l)?;
    if spec.support().is_none() {
        return Err(Error::InvalidArgument("monitored observable has no terms".into()));
    }
    let h_mpo = if h_terms.is_empty() { None } else { Some(nn_hamiltonian_mpo(l, h_terms)?) };
    let a_mpo = observable_sum_mpo(l, spec)?;
    let support = spec.support().expect("observable has terms");

    let mut state = psi0.clone();
    state.normalize()?;
    let names: Vec<String> = observables.iter().map(|o| o.name()).collect();
    let mut record = TrajectoryRecord {
        times: Vec::new(),
        observable_names: names,
        values: Vec::new(),
        outcomes: Vec::new(),
        truncation: Vec::new(),
        total_discarded: 0.0,
        budget_exceeded: false,
        final_state: None,
    };

    let every = opts.record_every.max(1);
    for (step, &dw) in noise.iter().enumerate() {
        let t = (step + 1) as f64 * dt;
        state = sse_euler_step_with(
            &state,
            h_mpo.as_ref(),
            &a_mpo,
            support,
            gamma,
            dw,
            dt,
            opts.max_bond,
            opts.svd_tol,
        )?;
        record.outcomes.push(OutcomeEvent::Noise { time: t, dw });
        if (step + 1) % every == 0 || step + 1 == noise.len() {
            let vals = evaluate_observables(&mut state, observables)?;
            record.times.push(t);
            record.values.push(vals);
            record.truncation.push(0.0);
        }
    }
    record.budget_exceeded = false;
    if opts.record_final_state {
        record.final_state = Some(state);
    }
    Ok(record)
}

/// Dense unconditional-average oracle: evolve `|psi0><psi0|` under the
/// master equation with dissipator strength `gamma` for the Hermitian
/// monitored operator. Small chains only.
pub fn lindblad_oracle(
    psi0: &DVector<C64>,
    h: Option<&DMatrix<C64>>,
    a: &DMatrix<C64>,
    gamma: f64,
    duration: f64,
    dt: f64,
    record_every: usize,
) -> Result<Vec<(f64, DMatrix<C64>)>> {
    let rho0 = psi0 * psi0.adjoint();
    dense::lindblad_evolve(&rho0, h, a, gamma, duration, dt, record_every)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmrg::{dmrg, DmrgOptions};
    use crate::mpo::{heisenberg_mpo, heisenberg_terms, MeasurementTerm};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn z_spec(site: usize, phi: f64, kappa: f64) -> MeasurementSpec {
        MeasurementSpec::new(
            vec![MeasurementTerm { site, op: dense::pauli_z(), coupling: 1.0 }],
            phi,
            kappa,
        )
        .unwrap()
    }

    fn plus_x_chain(l: usize) -> MatrixProductState {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let locals = vec![vec![c(s, 0.0), c(s, 0.0)]; l];
        MatrixProductState::product_state(&locals).unwrap()
    }

    #[test]
    fn phi_zero_readout_is_uniform_and_passive() {
        let psi = MatrixProductState::random(4, 2, 4, 3).unwrap();
        let spec = z_spec(1, 0.0, 100.0);
        let mut rng = RngStream::new(11, 0);
        let mut pluses = 0;
        for _ in 0..200 {
            let out = discrete_measure_step(&psi, &spec, &mut rng, 8, 1e-12).unwrap();
            assert!((out.p_plus - 0.5).abs() < 1e-12);
            if out.mu == 1 {
                pluses += 1;
            }
            let f = MatrixProductState::inner(&out.state, &psi).unwrap().norm();
            assert!((f - 1.0).abs() < 1e-10);
        }
        assert!((40..=160).contains(&pluses), "{pluses} of 200");
    }

    #[test]
    fn near_projective_readout_on_ground_state() {
        let h = heisenberg_mpo(8, 1.0).unwrap();
        let gs = dmrg(&h, &DmrgOptions { max_bond: 24, sweeps: 12, tol: 1e-10, ..Default::default() })
            .unwrap()
            .state;
        let spec = z_spec(0, std::f64::consts::FRAC_PI_4, 100.0);
        let p = outcome_probability(&gs, &spec).unwrap();
        assert!((p - 0.5).abs() < 1e-6, "p(+1) = {p}");
        let mut rng = RngStream::new(5, 0);
        let out = discrete_measure_step(&gs, &spec, &mut rng, 32, 1e-12).unwrap();
        let z = out.state.expectation_local(&dense::pauli_z(), 0).unwrap();
        assert!((z.re.abs() - 1.0).abs() < 1e-8, "posterior <sz> = {}", z.re);
    }

    #[test]
    fn sampled_frequency_matches_probability() {
        let psi = MatrixProductState::random(6, 2, 4, 17).unwrap();
        let spec = z_spec(2, 0.4, 100.0);
        let p = outcome_probability(&psi, &spec).unwrap();
        let n = 100_000;
        let mut rng = RngStream::new(2025, 0);
        let mut hits = 0usize;
        for _ in 0..n {
            if rng.bernoulli(p) {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (freq - p).abs() < 3.0 * sigma,
            "frequency {freq} vs probability {p} (3 sigma = {})",
            3.0 * sigma
        );
    }

    #[test]
    fn readout_martingale_over_both_branches() {
        // E[<A>'] = p(+) <A>_+ + p(-) <A>_- equals <A> when no unitary step
        // interleaves (the Kraus operators commute with A)
        let psi = MatrixProductState::random(5, 2, 4, 23).unwrap();
        let spec = z_spec(2, 0.3, 100.0);
        let a = dense::pauli_z();
        let before = psi.expectation_local(&a, 2).unwrap().re;
        let p = outcome_probability(&psi, &spec).unwrap();
        let mut expect_after = 0.0;
        for mu in [1i8, -1] {
            let k = measurement_mpo(5, &spec, mu).unwrap();
            let (mut branch, _) = apply_mpo(&k, &psi, 8, 0.0).unwrap();
            branch.normalize().unwrap();
            let z = branch.expectation_local(&a, 2).unwrap().re;
            let w = if mu == 1 { p } else { 1.0 - p };
            expect_after += w * z;
        }
        assert!((expect_after - before).abs() < 1e-10, "{expect_after} vs {before}");
    }

    #[test]
    fn stationary_state_with_no_readouts() {
        let h = heisenberg_mpo(6, 1.0).unwrap();
        let gs = dmrg(&h, &DmrgOptions { max_bond: 16, sweeps: 10, tol: 1e-10, ..Default::default() })
            .unwrap()
            .state;
        let obs = vec![
            Observable::LocalPauli { axis: PauliAxis::Z, site: 0 },
            Observable::Correlator {
                axis_a: PauliAxis::Z,
                site_a: 0,
                axis_b: PauliAxis::Z,
                site_b: 1,
            },
        ];
        // the split-step error is second order, so the step must be small for
        // the ground state to stay put at the 1e-6 level over T = 10
        let opts = TrajectoryOptions {
            duration: 10.0,
            max_bond: 16,
            svd_tol: 1e-10,
            dt_override: Some(0.002),
            record_every: 500,
            ..Default::default()
        };
        let mut rng = RngStream::new(1, 0);
        let rec = weak_trajectory(&gs, &heisenberg_terms(6, 1.0), &[], &obs, &opts, &mut rng)
            .unwrap();
        let first = &rec.values[0];
        for (t, vals) in rec.times.iter().zip(&rec.values) {
            for (a, b) in vals.iter().zip(first) {
                assert!((a - b).abs() < 1e-6, "t = {t}: drifted {a} vs {b}");
            }
        }
    }

    #[test]
    fn trajectory_replay_is_deterministic() {
        let psi = plus_x_chain(5);
        let specs = vec![z_spec(0, 0.2, 50.0)];
        let obs = vec![Observable::LocalPauli { axis: PauliAxis::Z, site: 0 }];
        let opts = TrajectoryOptions {
            duration: 1.0,
            max_bond: 8,
            svd_tol: 1e-12,
            ..Default::default()
        };
        let run = |seed, stream| {
            let mut rng = RngStream::new(seed, stream);
            weak_trajectory(&psi, &heisenberg_terms(5, 1.0), &specs, &obs, &opts, &mut rng)
                .unwrap()
        };
        let a = run(42, 3);
        let b = run(42, 3);
        assert_eq!(a.outcomes, b.outcomes);
        for (va, vb) in a.values.iter().zip(&b.values) {
            for (x, y) in va.iter().zip(vb) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
        let c = run(42, 4);
        assert_ne!(a.outcomes, c.outcomes);
    }

    #[test]
    fn sse_gamma_zero_reduces_to_unitary_step() {
        let psi = plus_x_chain(4);
        let spec = z_spec(0, 0.1, 100.0);
        let terms = heisenberg_terms(4, 1.0);
        let dt = 1e-3;
        let stepped = sse_euler_step(&psi, &terms, &spec, 0.0, 0.4, dt, 8, 1e-12).unwrap();
        // dense first-order comparison: (1 - i H dt) psi, normalized
        let v = DVector::from_column_slice(psi.to_dense().unwrap().data());
        let h = dense::heisenberg_dense(4, 1.0).unwrap();
        let expect = (&v - (h * &v) * c(0.0, dt)).normalize();
        let got = DVector::from_column_slice(stepped.to_dense().unwrap().data());
        let overlap = (expect.adjoint() * &got)[(0, 0)].norm();
        assert!((overlap - 1.0).abs() < 1e-10, "overlap {overlap}");
    }

    #[test]
    fn sse_step_matches_dense_evaluation() {
        let psi = MatrixProductState::random(4, 2, 4, 31).unwrap();
        let spec = z_spec(1, 0.1, 100.0);
        let terms = heisenberg_terms(4, 1.0);
        let (gamma, dw, dt) = (0.8, 0.037, 1e-3);
        let stepped = sse_euler_step(&psi, &terms, &spec, gamma, dw, dt, 16, 0.0).unwrap();
        let v = DVector::from_column_slice(psi.to_dense().unwrap().data());
        let h = dense::heisenberg_dense(4, 1.0).unwrap();
        let a = dense::op_on_site(4, 1, &dense::pauli_z());
        let expect = dense::sse_euler_dense(&v, Some(&h), &a, gamma, dw, dt).unwrap();
        let got = DVector::from_column_slice(stepped.to_dense().unwrap().data());
        let overlap = (expect.adjoint() * &got)[(0, 0)].norm();
        assert!((overlap - 1.0).abs() < 1e-10, "overlap {overlap}");
    }

    #[test]
    fn sse_single_spin_pins_to_poles() {
        // monitored free spin from +x: outcomes pin to either pole with
        // roughly equal rates and the ensemble mean stays near zero
        let psi = plus_x_chain(1);
        let spec = z_spec(0, 0.0, 0.0); // phi/kappa unused in the diffusive law
        let opts = TrajectoryOptions {
            duration: 6.0,
            max_bond: 2,
            svd_tol: 0.0,
            record_every: 600,
            ..Default::default()
        };
        let mut up = 0usize;
        let mut down = 0usize;
        let n = 60;
        for traj in 0..n {
            let mut rng = RngStream::new(7, traj);
            let rec = sse_trajectory(
                &psi,
                &[],
                &spec,
                1.0,
                1e-2,
                &[Observable::LocalPauli { axis: PauliAxis::Z, site: 0 }],
                &opts,
                &mut rng,
            )
            .unwrap();
            let z = rec.values.last().unwrap()[0];
            assert!(z.abs() > 0.9, "trajectory {traj} not pinned: {z}");
            if z > 0.0 {
                up += 1;
            } else {
                down += 1;
            }
        }
        // 3-sigma binomial window around n/2
        let sigma = (n as f64 * 0.25).sqrt();
        assert!(
            (up as f64 - n as f64 / 2.0).abs() < 3.0 * sigma,
            "asymmetric pinning: {up} up vs {down} down"
        );
    }

    #[test]
    fn sse_ensemble_tracks_dephasing_oracle() {
        // single spin, no Hamiltonian: ensemble mean of <sx> decays as
        // exp(-2 G t)
        let psi = plus_x_chain(1);
        let spec = z_spec(0, 0.0, 0.0);
        let gamma = 1.0;
        let dt = 1e-3;
        let opts = TrajectoryOptions {
            duration: 1.0,
            max_bond: 2,
            svd_tol: 0.0,
            record_every: 200,
            ..Default::default()
        };
        let obs = vec![Observable::LocalPauli { axis: PauliAxis::X, site: 0 }];
        let n = 200;
        let mut sums: Vec<f64> = Vec::new();
        let mut sums2: Vec<f64> = Vec::new();
        for traj in 0..n {
            let mut rng = RngStream::new(99, traj);
            let rec = sse_trajectory(&psi, &[], &spec, gamma, dt, &obs, &opts, &mut rng).unwrap();
            if sums.is_empty() {
                sums = vec![0.0; rec.times.len()];
                sums2 = vec![0.0; rec.times.len()];
            }
            for (k, v) in rec.values.iter().enumerate() {
                sums[k] += v[0];
                sums2[k] += v[0] * v[0];
            }
            if traj == 0 {
                // replayability: same noise path gives the same record
                let noise: Vec<f64> = rec
                    .outcomes
                    .iter()
                    .map(|o| match o {
                        OutcomeEvent::Noise { dw, .. } => *dw,
                        _ => unreachable!(),
                    })
                    .collect();
                let rec2 = sse_trajectory_with_noise(
                    &psi, &[], &spec, gamma, dt, &noise, &obs, &opts,
                )
                .unwrap();
                for (a, b) in rec.values.iter().zip(&rec2.values) {
                    assert!((a[0] - b[0]).abs() < 1e-12);
                }
            }
        }
        let times = [0.2, 0.4, 0.6, 0.8, 1.0];
        for (k, &t) in times.iter().enumerate() {
            let mean = sums[k] / n as f64;
            let var = (sums2[k] / n as f64 - mean * mean).max(0.0);
            let sem = (var / n as f64).sqrt();
            let expect = (-2.0 * gamma * t).exp();
            assert!(
                (mean - expect).abs() < 3.0 * sem + 5e-3,
                "t = {t}: mean {mean} vs {expect} (sem {sem})"
            );
        }
    }

    #[test]
    fn euler_step_requires_positive_norm() {
        // with <A> = 0, dW = 0 and dt*G = 2 the A^2 drift term exactly
        // cancels the state (A^2 = 1 for a single Pauli)
        let psi = plus_x_chain(1);
        let spec = z_spec(0, 0.0, 0.0);
        let res = sse_euler_step(&psi, &[], &spec, 1.0, 0.0, 2.0, 4, 0.0);
        assert!(res.is_err());
    }

    #[test]
    fn euler_step_leaves_monitored_eigenstates_fixed() {
        let up = MatrixProductState::product_state(&[vec![c(1.0, 0.0), c(0.0, 0.0)]]).unwrap();
        let spec = z_spec(0, 0.0, 0.0);
        let out = sse_euler_step(&up, &[], &spec, 1.3, 0.7, 1e-2, 4, 0.0).unwrap();
        let z = out.expectation_local(&dense::pauli_z(), 0).unwrap();
        assert!((z.re - 1.0).abs() < 1e-12);
    }
}
