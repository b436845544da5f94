//! Dense linear-algebra oracles for small chains.
//!
//! Everything here works on full `2^L`-dimensional vectors and matrices and
//! exists to validate the tensor-network code paths: exact diagonalization,
//! exact propagators, a master-equation integrator and a dense version of the
//! diffusive conditioned-state update.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Largest chain for which dense matrices (`4^L` entries) are built.
pub const DENSE_MATRIX_SITE_LIMIT: usize = 10;

/// Largest chain for which dense vectors (`2^L` entries) are handled.
pub const DENSE_VECTOR_SITE_LIMIT: usize = 14;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Named spin-1/2 operator axes as used in configurations and observables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

impl PauliAxis {
    pub fn matrix(self) -> DMatrix<C64> {
        match self {
            PauliAxis::X => pauli_x(),
            PauliAxis::Y => pauli_y(),
            PauliAxis::Z => pauli_z(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PauliAxis::X => "x",
            PauliAxis::Y => "y",
            PauliAxis::Z => "z",
        }
    }
}

impl std::str::FromStr for PauliAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" | "sx" | "sigma_x" => Ok(PauliAxis::X),
            "y" | "sy" | "sigma_y" => Ok(PauliAxis::Y),
            "z" | "sz" | "sigma_z" => Ok(PauliAxis::Z),
            other => Err(Error::InvalidArgument(format!("unknown Pauli axis '{other}'"))),
        }
    }
}

pub fn pauli_x() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
}

pub fn pauli_y() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)])
}

pub fn pauli_z() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)])
}

pub fn identity2() -> DMatrix<C64> {
    DMatrix::identity(2, 2)
}

/// Projector onto the +1 or -1 eigenspace of a Pauli axis.
pub fn pauli_projector(axis: PauliAxis, sign: i8) -> DMatrix<C64> {
    let s = c(f64::from(sign), 0.0);
    (identity2() + axis.matrix() * s) * c(0.5, 0.0)
}

pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

/// Embed a one-site operator at `site` in an `L`-site chain.
pub fn op_on_site(l: usize, site: usize, op: &DMatrix<C64>) -> DMatrix<C64> {
    let left = DMatrix::identity(1 << site, 1 << site);
    let right = DMatrix::identity(1 << (l - 1 - site), 1 << (l - 1 - site));
    kron(&kron(&left, op), &right)
}

/// Embed a two-site operator (row index `(s_i, s_{i+1})`) at bond `i`.
pub fn op_on_bond(l: usize, i: usize, op4: &DMatrix<C64>) -> DMatrix<C64> {
    let left = DMatrix::identity(1 << i, 1 << i);
    let right = DMatrix::identity(1 << (l - 2 - i), 1 << (l - 2 - i));
    kron(&kron(&left, op4), &right)
}

/// The two-site coupling `J/2 (sx sx + sy sy + sz sz)` as a 4x4 matrix.
pub fn heisenberg_bond(j: f64) -> DMatrix<C64> {
    let xx = kron(&pauli_x(), &pauli_x());
    let yy = kron(&pauli_y(), &pauli_y());
    let zz = kron(&pauli_z(), &pauli_z());
    (xx + yy + zz) * c(0.5 * j, 0.0)
}

/// Dense isotropic nearest-neighbor Hamiltonian on an open chain.
pub fn heisenberg_dense(l: usize, j: f64) -> Result<DMatrix<C64>> {
    if l < 2 {
        return Err(Error::InvalidArgument("need at least two sites".into()));
    }
    if l > DENSE_MATRIX_SITE_LIMIT {
        return Err(Error::SizeLimit(format!(
            "dense Hamiltonian limited to {DENSE_MATRIX_SITE_LIMIT} sites, got {l}"
        )));
    }
    let dim = 1usize << l;
    let mut h = DMatrix::zeros(dim, dim);
    let bond = heisenberg_bond(j);
    for i in 0..l - 1 {
        h += op_on_bond(l, i, &bond);
    }
    Ok(h)
}

/// Apply the open-chain Hamiltonian to a dense vector using bit arithmetic;
/// independent of [`heisenberg_dense`] and usable far beyond its size limit.
///
/// Basis convention: bit `L-1-i` of the index holds site `i`, with bit value
/// 0 for the +z state. Matches [`crate::mps::MatrixProductState::to_dense`].
pub fn heisenberg_matvec(l: usize, j: f64, v: &DVector<C64>) -> DVector<C64> {
    let dim = 1usize << l;
    debug_assert_eq!(v.len(), dim);
    let mut out = DVector::from_element(dim, c(0.0, 0.0));
    let half_j = 0.5 * j;
    for idx in 0..dim {
        let amp = v[idx];
        if amp == c(0.0, 0.0) {
            continue;
        }
        for i in 0..l - 1 {
            let bi = (idx >> (l - 1 - i)) & 1;
            let bj = (idx >> (l - 2 - i)) & 1;
            let zz = if bi == bj { 1.0 } else { -1.0 };
            out[idx] += amp * half_j * zz;
            if bi != bj {
                // sx sx + sy sy exchanges opposite neighbors with weight 2
                let flipped = idx ^ (1 << (l - 1 - i)) ^ (1 << (l - 2 - i));
                out[flipped] += amp * 2.0 * half_j;
            }
        }
    }
    out
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen_sorted(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(m.nrows(), m.ncols());
    for (col, &src) in order.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// `exp(scale * H)` for Hermitian `H` via eigendecomposition; exact for any
/// argument, no series truncation.
pub fn matrix_exp_hermitian(h: &DMatrix<C64>, scale: C64) -> DMatrix<C64> {
    let (vals, vecs) = hermitian_eigen_sorted(h);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&e| (scale * e).exp()),
    ));
    &vecs * d * vecs.adjoint()
}

/// Result of small-chain exact diagonalization.
#[derive(Debug, Clone)]
pub struct ExactDiagResult {
    /// Sorted ascending. Full spectrum for `L <= 8`; only the lowest
    /// eigenvalue for larger chains (computed iteratively).
    pub energies: Vec<f64>,
    pub ground: DVector<C64>,
}

/// Exact ground data of the open isotropic chain, full spectrum when cheap.
pub fn exact_diag(l: usize, j: f64) -> Result<ExactDiagResult> {
    if l < 2 {
        return Err(Error::InvalidArgument("need at least two sites".into()));
    }
    if l > DENSE_VECTOR_SITE_LIMIT {
        return Err(Error::SizeLimit(format!(
            "exact diagonalization limited to {DENSE_VECTOR_SITE_LIMIT} sites, got {l}"
        )));
    }
    if l <= 8 {
        let h = heisenberg_dense(l, j)?;
        let (energies, vecs) = hermitian_eigen_sorted(&h);
        Ok(ExactDiagResult { energies, ground: vecs.column(0).into_owned() })
    } else {
        let dim = 1usize << l;
        let (e0, ground) =
            lanczos_lowest(|v| heisenberg_matvec(l, j, v), dim, None, 300, 1e-12, 0x5eed)?;
        Ok(ExactDiagResult { energies: vec![e0], ground })
    }
}

/// Lowest eigenpair of a Hermitian operator given only its action, by a
/// Lanczos iteration with full reorthogonalization.
pub fn lanczos_lowest<F>(
    mut matvec: F,
    dim: usize,
    start: Option<DVector<C64>>,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<(f64, DVector<C64>)>
where
    F: FnMut(&DVector<C64>) -> DVector<C64>,
{
    if dim == 0 {
        return Err(Error::InvalidArgument("empty operator".into()));
    }
    if dim == 1 {
        let v = DVector::from_element(1, c(1.0, 0.0));
        let e = matvec(&v)[0].re;
        return Ok((e, v));
    }
    let mut q = match start {
        Some(v) if v.norm() > 1e-14 => v.normalize(),
        _ => {
            let mut rng = RngStream::new(seed, 0);
            let v = DVector::from_iterator(dim, (0..dim).map(|_| c(rng.gaussian(), rng.gaussian())));
            v.normalize()
        }
    };

    let kmax = max_iter.min(dim);
    let mut basis: Vec<DVector<C64>> = Vec::with_capacity(kmax);
    let mut alpha: Vec<f64> = Vec::with_capacity(kmax);
    let mut beta: Vec<f64> = Vec::with_capacity(kmax);

    let mut best: Option<(f64, DVector<f64>)> = None;
    for k in 0..kmax {
        basis.push(q.clone());
        let mut w = matvec(&q);
        if k > 0 {
            w -= &basis[k - 1] * c(beta[k - 1], 0.0);
        }
        let a = basis[k].dotc(&w).re;
        alpha.push(a);
        w -= &basis[k] * c(a, 0.0);
        // full reorthogonalization, twice
        for _ in 0..2 {
            for b in &basis {
                let overlap = b.dotc(&w);
                w -= b * overlap;
            }
        }
        let nb = w.norm();

        // lowest pair of the current tridiagonal
        let kk = alpha.len();
        let mut t = DMatrix::<f64>::zeros(kk, kk);
        for i in 0..kk {
            t[(i, i)] = alpha[i];
            if i + 1 < kk {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = t.symmetric_eigen();
        let mut lo = 0;
        for i in 1..kk {
            if eig.eigenvalues[i] < eig.eigenvalues[lo] {
                lo = i;
            }
        }
        let theta = eig.eigenvalues[lo];
        let s = eig.eigenvectors.column(lo).into_owned();
        let residual = nb * s[kk - 1].abs();
        best = Some((theta, s));
        if residual < tol.max(1e-14) || nb < 1e-13 {
            break;
        }
        beta.push(nb);
        q = w / c(nb, 0.0);
    }

    let (theta, s) = best.expect("at least one iteration");
    let mut vec = DVector::from_element(dim, c(0.0, 0.0));
    for (i, b) in basis.iter().enumerate().take(s.len()) {
        vec += b * c(s[i], 0.0);
    }
    let n = vec.norm();
    if n < 1e-14 {
        return Err(Error::Numerical("lanczos produced a null vector".into()));
    }
    Ok((theta, vec / c(n, 0.0)))
}

/// One explicit Euler update of the dense conditioned state:
/// `psi + [-iH dt + (G/2)(2<A>A - A^2 - <A>^2) dt + sqrt(G)(A - <A>) dW] psi`,
/// renormalized.
pub fn sse_euler_dense(
    psi: &DVector<C64>,
    h: Option<&DMatrix<C64>>,
    a: &DMatrix<C64>,
    gamma: f64,
    dw: f64,
    dt: f64,
) -> Result<DVector<C64>> {
    let n2 = psi.norm_squared();
    if n2 < 1e-24 {
        return Err(Error::Numerical("state norm collapsed".into()));
    }
    let mean_a = (psi.adjoint() * a * psi)[(0, 0)].re / n2;
    let a_psi = a * psi;
    let aa_psi = a * &a_psi;
    let mut dpsi = &a_psi * c(gamma * mean_a * dt + gamma.sqrt() * dw, 0.0);
    dpsi -= &aa_psi * c(0.5 * gamma * dt, 0.0);
    dpsi -= psi * c(0.5 * gamma * mean_a * mean_a * dt + gamma.sqrt() * mean_a * dw, 0.0);
    if let Some(h) = h {
        dpsi += (h * psi) * c(0.0, -dt);
    }
    let out = psi + dpsi;
    let n = out.norm();
    if n < 1e-12 {
        return Err(Error::Numerical("state norm collapsed".into()));
    }
    Ok(out / c(n, 0.0))
}

/// Unconditional (ensemble averaged) evolution of the density matrix under
/// Hamiltonian `h` and a single Hermitian monitored operator `a`:
/// `drho/dt = -i[H, rho] + G (A rho A - (A^2 rho + rho A^2)/2)`,
/// integrated with fixed-step RK4. Returns `(times, rho(t))` including t=0.
pub fn lindblad_evolve(
    rho0: &DMatrix<C64>,
    h: Option<&DMatrix<C64>>,
    a: &DMatrix<C64>,
    gamma: f64,
    duration: f64,
    dt: f64,
    record_every: usize,
) -> Result<Vec<(f64, DMatrix<C64>)>> {
    let dim = rho0.nrows();
    if dim > (1 << 8) {
        return Err(Error::SizeLimit(
            "master-equation oracle limited to 8 sites".into(),
        ));
    }
    if dt <= 0.0 || duration < 0.0 {
        return Err(Error::InvalidArgument("need dt > 0 and duration >= 0".into()));
    }
    let a2 = a * a;
    let rhs = |rho: &DMatrix<C64>| -> DMatrix<C64> {
        let mut out = DMatrix::zeros(dim, dim);
        if let Some(h) = h {
            out += (h * rho - rho * h) * c(0.0, -1.0);
        }
        out += (a * rho * a - (&a2 * rho + rho * &a2) * c(0.5, 0.0)) * c(gamma, 0.0);
        out
    };

    let steps = (duration / dt).round() as usize;
    let every = record_every.max(1);
    let mut rho = rho0.clone();
    let mut out = vec![(0.0, rho.clone())];
    for step in 0..steps {
        let k1 = rhs(&rho);
        let k2 = rhs(&(&rho + &k1 * c(0.5 * dt, 0.0)));
        let k3 = rhs(&(&rho + &k2 * c(0.5 * dt, 0.0)));
        let k4 = rhs(&(&rho + &k3 * c(dt, 0.0)));
        rho += (k1 + k2 * c(2.0, 0.0) + k3 * c(2.0, 0.0) + k4) * c(dt / 6.0, 0.0);
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
            return Err(Error::Numerical(format!(
                "master-equation trace drifted to {tr} at step {step}"
            )));
        }
        if (step + 1) % every == 0 || step + 1 == steps {
            out.push(((step + 1) as f64 * dt, rho.clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_site_spectrum() {
        let res = exact_diag(2, 1.0).unwrap();
        let expect = [-1.5, 0.5, 0.5, 0.5];
        for (a, b) in res.energies.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn three_site_spectrum_two_constructions() {
        // dense kron build vs independent bit-arithmetic action
        let l = 3;
        let h = heisenberg_dense(l, 1.0).unwrap();
        let dim = 1 << l;
        let mut h2 = DMatrix::<C64>::zeros(dim, dim);
        for col in 0..dim {
            let mut e = DVector::from_element(dim, c(0.0, 0.0));
            e[col] = c(1.0, 0.0);
            h2.set_column(col, &heisenberg_matvec(l, 1.0, &e));
        }
        let diff = (&h - &h2).norm();
        assert!(diff < 1e-12, "constructions differ by {diff}");
        let (ea, _) = hermitian_eigen_sorted(&h);
        let (eb, _) = hermitian_eigen_sorted(&h2);
        for (a, b) in ea.iter().zip(eb.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ground_state_has_no_local_moment() {
        let res = exact_diag(4, 1.0).unwrap();
        for site in 0..4 {
            let op = op_on_site(4, site, &pauli_z());
            let val = (res.ground.adjoint() * op * &res.ground)[(0, 0)];
            assert!(val.re.abs() < 1e-10, "site {site}: {}", val.re);
            assert!(val.im.abs() < 1e-12);
        }
    }

    #[test]
    fn lanczos_matches_dense_at_l8() {
        let res = exact_diag(8, 1.0).unwrap();
        let dim = 1usize << 8;
        let (e0, v0) =
            lanczos_lowest(|v| heisenberg_matvec(8, 1.0, v), dim, None, 200, 1e-12, 7).unwrap();
        assert!((e0 - res.energies[0]).abs() < 1e-10);
        let h = heisenberg_dense(8, 1.0).unwrap();
        let r = (&h * &v0 - &v0 * c(e0, 0.0)).norm();
        assert!(r < 1e-8, "residual {r}");
    }

    #[test]
    fn matrix_exp_is_unitary_for_antihermitian_argument() {
        let h = heisenberg_dense(2, 1.0).unwrap();
        let u = matrix_exp_hermitian(&h, c(0.0, -0.3));
        let err = (u.adjoint() * &u - DMatrix::identity(4, 4)).norm();
        assert!(err < 1e-12);
    }

    #[test]
    fn dephasing_oracle_decay() {
        // single spin along +x, monitored along z with no Hamiltonian:
        // <sx>(t) = exp(-2 G t)
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = DVector::from_column_slice(&[c(s, 0.0), c(s, 0.0)]);
        let rho0 = &psi * psi.adjoint();
        let gamma = 1.3;
        let traj = lindblad_evolve(&rho0, None, &pauli_z(), gamma, 1.0, 1e-3, 100).unwrap();
        for (t, rho) in traj {
            let sx = (pauli_x() * &rho).trace().re;
            let expect = (-2.0 * gamma * t).exp();
            assert!((sx - expect).abs() < 1e-6, "t={t}: {sx} vs {expect}");
        }
    }

    #[test]
    fn lindblad_gamma_zero_preserves_purity() {
        let res = exact_diag(2, 1.0).unwrap();
        // a superposition of eigenstates so the unitary dynamics is nontrivial
        let psi = (DVector::from_column_slice(&[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)])
            + &res.ground)
            .normalize();
        let rho0 = &psi * psi.adjoint();
        let h = heisenberg_dense(2, 1.0).unwrap();
        let a = op_on_site(2, 0, &pauli_z());
        let traj = lindblad_evolve(&rho0, Some(&h), &a, 0.0, 2.0, 1e-3, 500).unwrap();
        for (t, rho) in traj {
            let purity = (&rho * &rho).trace().re;
            assert!((purity - 1.0).abs() < 1e-8, "t={t}: purity {purity}");
        }
    }
}
