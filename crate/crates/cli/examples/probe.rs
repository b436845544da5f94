use num_complex::Complex64 as C64;
use stochmps_core::mpo::*;
use stochmps_core::mps::MatrixProductState;
use stochmps_core::stoch::*;
use stochmps_core::dense;
use stochmps_core::rng::RngStream;

fn main() {
    let l = 16;
    let psi = MatrixProductState::random(l, 2, 32, 77).unwrap();
    let spec = MeasurementSpec::new(
        vec![
            MeasurementTerm { site: 5, op: dense::pauli_z(), coupling: 1.0 },
            MeasurementTerm { site: 10, op: dense::pauli_z(), coupling: 1.0 },
        ],
        0.1, 100.0,
    ).unwrap();
    let p = outcome_probability(&psi, &spec).unwrap();
    println!("p(+) windowed    = {p:.12}");
    let eff = povm_effect_mpo(l, &spec, 1).unwrap();
    let pfull = expectation_mpo(&psi, &eff).unwrap();
    println!("p(+) full        = {:.12} (im {:.3e})", pfull.re, pfull.im);
    let k = measurement_mpo(l, &spec, 1).unwrap();
    let exact = apply_mpo_exact(&k, &psi).unwrap();
    println!("|K psi|^2 exact  = {:.12}", exact.norm().powi(2));
    let (comp, reps) = apply_mpo(&k, &psi, 32, 1e-10).unwrap();
    let disc: f64 = reps.iter().map(|r| r.discarded_weight).sum();
    println!("|K psi|^2 comp   = {:.12} (disc {disc:.3e})", comp.norm().powi(2));
    // now after some trotter evolution
    let terms = heisenberg_terms(l, 1.0);
    let mut state = psi.clone();
    for _ in 0..50 {
        let (s2, _) = trotter_step(&state, &terms, 0.01, 32, 1e-10).unwrap();
        state = s2;
        state.normalize().unwrap();
    }
    println!("norm after trotter = {:.15}", state.norm());
    let p2 = outcome_probability(&state, &spec).unwrap();
    let p2full = expectation_mpo(&state, &povm_effect_mpo(l, &spec, 1).unwrap()).unwrap();
    println!("p2 windowed = {p2:.12}, p2 full = {:.12}", p2full.re);
    let mut rng = RngStream::new(1, 0);
    match discrete_measure_step(&state, &spec, &mut rng, 32, 1e-10) {
        Ok(out) => println!("measure ok mu={} p={:.12}", out.mu, out.p_plus),
        Err(e) => println!("measure err: {e}"),
    }
    let ex2 = apply_mpo_exact(&measurement_mpo(l, &spec, 1).unwrap(), &state).unwrap();
    println!("|K state|^2 exact = {:.12}", ex2.norm().powi(2));
}
