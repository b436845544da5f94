//! Matrix product operators and their action on states.
//!
//! Site tensors are rank 4, indexed `(left virtual, right virtual, physical
//! out, physical in)`. Nearest-neighbor Hamiltonians are assembled from an
//! operator-Schmidt decomposition of each two-site coupling, which yields the
//! minimal virtual dimension (5 for the isotropic exchange chain).
//!
//! The ancilla-readout model is central here: coupling a two-level probe to a
//! Hermitian observable `A = sum_j g_j O_j` for an angle `phi` and reading the
//! probe out with result `mu = +-1` acts on the system with the Kraus operator
//!
//! ```text
//! K(mu) = (exp(-i phi A) + i mu exp(i phi A)) / 2
//! ```
//!
//! which factorizes over sites and therefore fits in an MPO of virtual
//! dimension 2 ([`measurement_mpo`]). The associated POVM effect
//! `K(mu)^dag K(mu) = 1/2 - (mu/2) sin(2 phi A)` is built directly from its
//! three product branches at virtual dimension 3 ([`povm_effect_mpo`]); the
//! two effects sum to the identity for every spec.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::dense::matrix_exp_hermitian;
use crate::error::{Error, Result};
use crate::mps::MatrixProductState;
use crate::tensor::{Tensor, TruncationReport};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[derive(Debug, Clone)]
pub struct MatrixProductOperator {
    sites: Vec<Tensor>,
}

/// One nearest-neighbor coupling: a Hermitian 4x4 matrix acting on sites
/// `(left, left + 1)`, row index `(s_left, s_right)`.
#[derive(Debug, Clone)]
pub struct NnCoupling {
    pub left: usize,
    pub op: DMatrix<C64>,
}

/// A monitored observable `A = sum_j g_j O_j` together with the readout
/// angle `phi` and the repetition rate `kappa` (in units of the exchange
/// coupling). Sites must be distinct and the `O_j` Hermitian.
#[derive(Debug, Clone)]
pub struct MeasurementSpec {
    pub terms: Vec<MeasurementTerm>,
    pub phi: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone)]
pub struct MeasurementTerm {
    pub site: usize,
    pub op: DMatrix<C64>,
    pub coupling: f64,
}

fn require_hermitian(m: &DMatrix<C64>, what: &str) -> Result<()> {
    let err = (m - m.adjoint()).norm();
    if err > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "{what} is not Hermitian (deviation {err:.2e})"
        )));
    }
    Ok(())
}

impl MeasurementSpec {
    pub fn new(terms: Vec<MeasurementTerm>, phi: f64, kappa: f64) -> Result<Self> {
        if !phi.is_finite() || !kappa.is_finite() {
            return Err(Error::InvalidArgument("phi and kappa must be finite".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &terms {
            require_hermitian(&t.op, &format!("measurement operator at site {}", t.site))?;
            if !seen.insert(t.site) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate measurement site {}",
                    t.site
                )));
            }
        }
        Ok(Self { terms, phi, kappa })
    }

    /// Smallest and largest site carrying a term, if any.
    pub fn support(&self) -> Option<(usize, usize)> {
        let lo = self.terms.iter().map(|t| t.site).min()?;
        let hi = self.terms.iter().map(|t| t.site).max()?;
        Some((lo, hi))
    }

    pub fn validate_for_chain(&self, l: usize) -> Result<()> {
        for t in &self.terms {
            if t.site >= l {
                return Err(Error::InvalidArgument(format!(
                    "measurement site {} out of range for {l} sites",
                    t.site
                )));
            }
        }
        Ok(())
    }

    fn scaled_op(&self, site: usize, d: usize) -> DMatrix<C64> {
        self.terms
            .iter()
            .find(|t| t.site == site)
            .map(|t| &t.op * c(t.coupling, 0.0))
            .unwrap_or_else(|| DMatrix::zeros(d, d))
    }
}

/// Outcome of [`variational_fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: MatrixProductState,
    /// Norm of `chi - A psi` at the returned iterate.
    pub residual: f64,
    pub sweeps_used: usize,
    pub converged: bool,
}

impl MatrixProductOperator {
    pub fn from_sites(sites: Vec<Tensor>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidArgument("empty operator chain".into()));
        }
        let d = sites[0].shape()[2];
        let mut left = 1usize;
        for (i, t) in sites.iter().enumerate() {
            if t.rank() != 4 {
                return Err(Error::InvalidArgument(format!(
                    "operator site {i} has rank {}, expected 4",
                    t.rank()
                )));
            }
            let sh = t.shape();
            if sh[0] != left {
                return Err(Error::DimensionMismatch(format!(
                    "operator site {i} left extent {} does not match previous bond {left}",
                    sh[0]
                )));
            }
            if sh[2] != d || sh[3] != d {
                return Err(Error::DimensionMismatch(format!(
                    "operator site {i} physical extents {:?} != {d}",
                    &sh[2..4]
                )));
            }
            left = sh[1];
        }
        if left != 1 {
            return Err(Error::DimensionMismatch(
                "last operator site must have right extent 1".into(),
            ));
        }
        Ok(Self { sites })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn phys_dim(&self) -> usize {
        self.sites[0].shape()[2]
    }

    pub fn site(&self, i: usize) -> &Tensor {
        &self.sites[i]
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        (0..self.len().saturating_sub(1))
            .map(|i| self.sites[i].shape()[1])
            .collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Identity operator.
    pub fn identity(l: usize, d: usize) -> Self {
        let site = Tensor::from_matrix(&DMatrix::identity(d, d), &[d], &[d])
            .reshape(vec![1, 1, d, d])
            .expect("identity reshape");
        Self { sites: vec![site; l] }
    }

    /// Dense matrix reconstruction (row index is the out configuration with
    /// site 0 slowest, matching dense-state indexing).
    pub fn to_dense(&self) -> Result<DMatrix<C64>> {
        let l = self.len();
        if l > crate::dense::DENSE_MATRIX_SITE_LIMIT {
            return Err(Error::SizeLimit(format!(
                "dense operator reconstruction limited to {} sites, got {l}",
                crate::dense::DENSE_MATRIX_SITE_LIMIT
            )));
        }
        let d = self.phys_dim();
        // acc: (rows, cols, right bond)
        let first = &self.sites[0];
        let w0 = first.shape()[1];
        let mut acc = first.reshape(vec![w0, d, d])?.permute(&[1, 2, 0])?;
        for i in 1..l {
            let t = acc.contract(&self.sites[i], &[(2, 0)])?; // (R, C, wr, so, si)
            let (r0, c0, wr) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            acc = t.permute(&[0, 3, 1, 4, 2])?.reshape(vec![r0 * d, c0 * d, wr])?;
        }
        let dim = d.pow(l as u32);
        let mat = acc.reshape(vec![dim, dim])?;
        Ok(DMatrix::from_row_slice(dim, dim, mat.data()))
    }
}

/// Split a two-site matrix into a minimal sum of one-site Kronecker factors.
fn kronecker_factors(op: &DMatrix<C64>, d: usize) -> Result<Vec<(DMatrix<C64>, DMatrix<C64>)>> {
    let t = Tensor::from_matrix(op, &[d, d], &[d, d]); // (so_l, so_r, si_l, si_r)
    let r = t.permute(&[0, 2, 1, 3])?; // (so_l, si_l, so_r, si_r)
    let f = r.svd_truncate(2, d * d, 0.0)?;
    let mut out = Vec::with_capacity(f.report.kept);
    for k in 0..f.report.kept {
        let w = f.s[k].sqrt();
        let mut x = DMatrix::zeros(d, d);
        let mut y = DMatrix::zeros(d, d);
        for a in 0..d {
            for b in 0..d {
                x[(a, b)] = f.u.get(&[a, b, k]) * w;
                y[(a, b)] = f.v.get(&[k, a, b]) * w;
            }
        }
        out.push((x, y));
    }
    Ok(out)
}

fn place_block(data: &mut [C64], wr: usize, d: usize, row: usize, col: usize, m: &DMatrix<C64>) {
    for a in 0..d {
        for b in 0..d {
            data[((row * wr + col) * d + a) * d + b] = m[(a, b)];
        }
    }
}

/// Generic open-chain Hamiltonian `H = sum_i h_i` from nearest-neighbor
/// couplings; interior bond dimension is `2 + rank(h_i)`.
pub fn nn_hamiltonian_mpo(l: usize, terms: &[NnCoupling]) -> Result<MatrixProductOperator> {
    if l < 2 {
        return Err(Error::InvalidArgument("need at least two sites".into()));
    }
    let d = 2usize;
    let mut by_bond: Vec<Option<Vec<(DMatrix<C64>, DMatrix<C64>)>>> = vec![None; l - 1];
    for t in terms {
        if t.left + 1 >= l {
            return Err(Error::InvalidArgument(format!(
                "coupling at sites ({}, {}) out of range for {l} sites",
                t.left,
                t.left + 1
            )));
        }
        if by_bond[t.left].is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate coupling at bond {}",
                t.left
            )));
        }
        require_hermitian(&t.op, &format!("coupling at bond {}", t.left))?;
        by_bond[t.left] = Some(kronecker_factors(&t.op, d)?);
    }

    let rank = |b: usize| by_bond[b].as_ref().map_or(0, |f| f.len());
    let id = DMatrix::identity(d, d);
    let mut sites = Vec::with_capacity(l);
    for i in 0..l {
        // left bond states: before(0), mid_k of bond i-1, done(last)
        let wl = if i == 0 { 1 } else { rank(i - 1) + 2 };
        let wr = if i == l - 1 { 1 } else { rank(i) + 2 };
        let mut data = vec![c(0.0, 0.0); wl * wr * d * d];
        if i == 0 {
            // single row acts as the "before" state
            place_block(&mut data, wr, d, 0, 0, &id);
            if let Some(f) = &by_bond[0] {
                for (k, (x, _)) in f.iter().enumerate() {
                    place_block(&mut data, wr, d, 0, 1 + k, x);
                }
            }
        } else if i == l - 1 {
            // single column acts as the "done" state
            if let Some(f) = &by_bond[i - 1] {
                for (k, (_, y)) in f.iter().enumerate() {
                    place_block(&mut data, wr, d, 1 + k, 0, y);
                }
            }
            place_block(&mut data, wr, d, wl - 1, 0, &id);
        } else {
            place_block(&mut data, wr, d, 0, 0, &id);
            if let Some(f) = &by_bond[i] {
                for (k, (x, _)) in f.iter().enumerate() {
                    place_block(&mut data, wr, d, 0, 1 + k, x);
                }
            }
            if let Some(f) = &by_bond[i - 1] {
                for (k, (_, y)) in f.iter().enumerate() {
                    place_block(&mut data, wr, d, 1 + k, wr - 1, y);
                }
            }
            place_block(&mut data, wr, d, wl - 1, wr - 1, &id);
        }
        sites.push(Tensor::new(vec![wl, wr, d, d], data)?);
    }
    MatrixProductOperator::from_sites(sites)
}

/// Couplings of the isotropic antiferromagnetic exchange chain
/// `H = J/2 sum_i s_i . s_{i+1}` (Pauli matrices).
pub fn heisenberg_terms(l: usize, j: f64) -> Vec<NnCoupling> {
    let bond = crate::dense::heisenberg_bond(j);
    (0..l.saturating_sub(1))
        .map(|i| NnCoupling { left: i, op: bond.clone() })
        .collect()
}

/// The isotropic exchange Hamiltonian as an MPO (interior bond dimension 5).
pub fn heisenberg_mpo(l: usize, j: f64) -> Result<MatrixProductOperator> {
    nn_hamiltonian_mpo(l, &heisenberg_terms(l, j))
}

fn check_mu(mu: i8) -> Result<f64> {
    match mu {
        1 => Ok(1.0),
        -1 => Ok(-1.0),
        _ => Err(Error::InvalidArgument(format!("readout must be +1 or -1, got {mu}"))),
    }
}

fn identity_site(d: usize) -> Tensor {
    Tensor::from_matrix(&DMatrix::identity(d, d), &[d], &[d])
        .reshape(vec![1, 1, d, d])
        .expect("identity site")
}

fn branch_site(
    d: usize,
    wl: usize,
    wr: usize,
    blocks: &[(usize, usize, DMatrix<C64>)],
) -> Result<Tensor> {
    let mut data = vec![c(0.0, 0.0); wl * wr * d * d];
    for (row, col, m) in blocks {
        place_block(&mut data, wr, d, *row, *col, m);
    }
    Tensor::new(vec![wl, wr, d, d], data)
}

/// Kraus operator of one ancilla readout with outcome `mu`, as an MPO of
/// virtual dimension 2 across the support of the spec and 1 elsewhere.
/// With no terms the readout is uninformative: `(1 + i mu)/2` times identity.
pub fn measurement_mpo(l: usize, spec: &MeasurementSpec, mu: i8) -> Result<MatrixProductOperator> {
    let mu = check_mu(mu)?;
    spec.validate_for_chain(l)?;
    let d = 2usize;
    let half = c(0.5, 0.0);
    let ihalf_mu = c(0.0, 0.5 * mu);

    let Some((lo, hi)) = spec.support() else {
        let mut sites = vec![identity_site(d); l];
        let scaled = DMatrix::identity(d, d) * (half + ihalf_mu);
        sites[0] = branch_site(d, 1, 1, &[(0, 0, scaled)])?;
        return MatrixProductOperator::from_sites(sites.clone()).or_else(|_| {
            MatrixProductOperator::from_sites(sites)
        });
    };

    let mut sites = Vec::with_capacity(l);
    for i in 0..l {
        if i < lo || i > hi {
            sites.push(identity_site(d));
            continue;
        }
        let g_op = spec.scaled_op(i, d);
        let em = matrix_exp_hermitian(&g_op, c(0.0, -spec.phi)); // exp(-i phi g O)
        let ep = matrix_exp_hermitian(&g_op, c(0.0, spec.phi)); // exp(+i phi g O)
        let site = if lo == hi {
            branch_site(d, 1, 1, &[(0, 0, &em * half + &ep * ihalf_mu)])?
        } else if i == lo {
            branch_site(d, 1, 2, &[(0, 0, em * half), (0, 1, ep * ihalf_mu)])?
        } else if i == hi {
            branch_site(d, 2, 1, &[(0, 0, em), (1, 0, ep)])?
        } else {
            branch_site(d, 2, 2, &[(0, 0, em), (1, 1, ep)])?
        };
        sites.push(site);
    }
    MatrixProductOperator::from_sites(sites)
}

/// POVM effect `K(mu)^dag K(mu) = 1/2 - (mu/2) sin(2 phi A)` as an MPO of
/// virtual dimension at most 3; Hermitian, and the two outcomes sum to the
/// identity.
pub fn povm_effect_mpo(l: usize, spec: &MeasurementSpec, mu: i8) -> Result<MatrixProductOperator> {
    let mu = check_mu(mu)?;
    spec.validate_for_chain(l)?;
    let d = 2usize;
    let id = DMatrix::<C64>::identity(d, d);
    let half = c(0.5, 0.0);
    let iquarter_mu = c(0.0, 0.25 * mu);

    let Some((lo, hi)) = spec.support() else {
        let mut sites = vec![identity_site(d); l];
        sites[0] = branch_site(d, 1, 1, &[(0, 0, &id * half)])?;
        return MatrixProductOperator::from_sites(sites);
    };

    let mut sites = Vec::with_capacity(l);
    for i in 0..l {
        if i < lo || i > hi {
            sites.push(identity_site(d));
            continue;
        }
        let g_op = spec.scaled_op(i, d);
        let e2p = matrix_exp_hermitian(&g_op, c(0.0, 2.0 * spec.phi)); // exp(+2i phi g O)
        let e2m = matrix_exp_hermitian(&g_op, c(0.0, -2.0 * spec.phi)); // exp(-2i phi g O)
        let site = if lo == hi {
            let m = &id * half + (&e2p - &e2m) * iquarter_mu;
            branch_site(d, 1, 1, &[(0, 0, m)])?
        } else if i == lo {
            branch_site(
                d,
                1,
                3,
                &[
                    (0, 0, &id * half),
                    (0, 1, &e2p * iquarter_mu),
                    (0, 2, &e2m * (-iquarter_mu)),
                ],
            )?
        } else if i == hi {
            branch_site(d, 3, 1, &[(0, 0, id.clone()), (1, 0, e2p), (2, 0, e2m)])?
        } else {
            branch_site(d, 3, 3, &[(0, 0, id.clone()), (1, 1, e2p), (2, 2, e2m)])?
        };
        sites.push(site);
    }
    MatrixProductOperator::from_sites(sites)
}

/// The monitored observable `A = sum_j g_j O_j` itself as an MPO (virtual
/// dimension 2 across the support, 1 elsewhere).
pub fn observable_sum_mpo(l: usize, spec: &MeasurementSpec) -> Result<MatrixProductOperator> {
    spec.validate_for_chain(l)?;
    let d = 2usize;
    let id = DMatrix::<C64>::identity(d, d);
    let Some((lo, hi)) = spec.support() else {
        return Err(Error::InvalidArgument(
            "observable requires at least one term".into(),
        ));
    };
    let mut sites = Vec::with_capacity(l);
    for i in 0..l {
        if i < lo || i > hi {
            sites.push(identity_site(d));
            continue;
        }
        let g_op = spec.scaled_op(i, d);
        let site = if lo == hi {
            branch_site(d, 1, 1, &[(0, 0, g_op)])?
        } else if i == lo {
            branch_site(d, 1, 2, &[(0, 0, g_op), (0, 1, id.clone())])?
        } else if i == hi {
            branch_site(d, 2, 1, &[(0, 0, id.clone()), (1, 0, g_op)])?
        } else {
            branch_site(
                d,
                2,
                2,
                &[(0, 0, id.clone()), (1, 0, g_op), (1, 1, id.clone())],
            )?
        };
        sites.push(site);
    }
    MatrixProductOperator::from_sites(sites)
}

/// Apply an MPO exactly; bond extents multiply (no truncation, no
/// renormalization).
pub fn apply_mpo_exact(
    op: &MatrixProductOperator,
    psi: &MatrixProductState,
) -> Result<MatrixProductState> {
    if op.len() != psi.len() || op.phys_dim() != psi.phys_dim() {
        return Err(Error::DimensionMismatch(
            "operator and state chains do not match".into(),
        ));
    }
    let mut sites = Vec::with_capacity(psi.len());
    for i in 0..psi.len() {
        let w = op.site(i); // (wl, wr, so, si)
        let t = psi.site(i); // (si, dl, dr)
        let tmp = w.contract(t, &[(3, 0)])?; // (wl, wr, so, dl, dr)
        let (wl, wr, so, dl, dr) = (
            tmp.shape()[0],
            tmp.shape()[1],
            tmp.shape()[2],
            tmp.shape()[3],
            tmp.shape()[4],
        );
        let arranged = tmp.permute(&[2, 0, 3, 1, 4])?; // (so, wl, dl, wr, dr)
        sites.push(arranged.reshape(vec![so, wl * dl, wr * dr])?);
    }
    let mut out = MatrixProductState::from_sites(sites)?;
    out.set_log_norm_offset(psi.log_norm_offset());
    Ok(out)
}

/// Apply an MPO and compress the result to `max_bond` / `tol`. The returned
/// state keeps the norm of the exact product (compression rescales), so
/// callers can read off `|A psi|` before normalizing.
pub fn apply_mpo(
    op: &MatrixProductOperator,
    psi: &MatrixProductState,
    max_bond: usize,
    tol: f64,
) -> Result<(MatrixProductState, Vec<TruncationReport>)> {
    let exact = apply_mpo_exact(op, psi)?;
    exact.compress(max_bond, tol)
}

fn ones_env() -> Tensor {
    Tensor::new(vec![1, 1, 1], vec![c(1.0, 0.0)]).expect("unit env")
}

fn env_step_left(
    env: &Tensor,
    bra_site: &Tensor,
    op_site: &Tensor,
    ket_site: &Tensor,
) -> Result<Tensor> {
    // env: (bra, w, ket)
    let tmp = env.contract(ket_site, &[(2, 1)])?; // (bra, w, s, kr)
    let tmp = tmp.contract(op_site, &[(1, 0), (2, 3)])?; // (bra, kr, wr, so)
    let out = bra_site.conj().contract(&tmp, &[(0, 3), (1, 0)])?; // (br, kr, wr)
    out.permute(&[0, 2, 1])
}

fn env_step_right(
    env: &Tensor,
    bra_site: &Tensor,
    op_site: &Tensor,
    ket_site: &Tensor,
) -> Result<Tensor> {
    // env: (bra, w, ket) for the bond to the right of the site
    let tmp = ket_site.contract(env, &[(2, 2)])?; // (s, kl, bra, w)
    let tmp = op_site.contract(&tmp, &[(1, 3), (3, 0)])?; // (wl, so, kl, bra)
    let out = bra_site.conj().contract(&tmp, &[(0, 1), (2, 3)])?; // (bl, wl, kl)
    Ok(out)
}

/// `<psi| A |psi>` of the stored tensors (no normalization of `psi`).
pub fn expectation_mpo(psi: &MatrixProductState, op: &MatrixProductOperator) -> Result<C64> {
    if op.len() != psi.len() || op.phys_dim() != psi.phys_dim() {
        return Err(Error::DimensionMismatch(
            "operator and state chains do not match".into(),
        ));
    }
    let mut env = ones_env();
    for i in 0..psi.len() {
        env = env_step_left(&env, psi.site(i), op.site(i), psi.site(i))?;
    }
    env.reshape(vec![1])?.as_scalar()
}

/// `<psi| A |psi>` for an operator that is the identity outside
/// `[lo, hi]`, contracting only that window. Requires the canonical center
/// inside the window so the outer environments are exactly the identity.
pub fn expectation_mpo_window(
    psi: &MatrixProductState,
    op: &MatrixProductOperator,
    lo: usize,
    hi: usize,
) -> Result<C64> {
    let center = psi.canonical_center().ok_or_else(|| {
        Error::InvalidArgument("windowed expectation requires a canonical center".into())
    })?;
    if center < lo || center > hi {
        return Err(Error::InvalidArgument(format!(
            "canonical center {center} outside window [{lo}, {hi}]"
        )));
    }
    if op.site(lo).shape()[0] != 1 || op.site(hi).shape()[1] != 1 {
        return Err(Error::InvalidArgument(
            "operator window must have trivial bonds at its edges".into(),
        ));
    }
    let dl = psi.site(lo).shape()[1];
    // identity environment (bra, w=1, ket)
    let mut env = Tensor::identity(dl).reshape(vec![dl, 1, dl])?;
    for i in lo..=hi {
        env = env_step_left(&env, psi.site(i), op.site(i), psi.site(i))?;
    }
    let dr = psi.site(hi).shape()[2];
    let close = Tensor::identity(dr).reshape(vec![dr, 1, dr])?;
    let val = env.contract(&close, &[(0, 0), (1, 1), (2, 2)])?.as_scalar()?;
    let n2 = psi.site(center).norm().powi(2);
    Ok(val / n2)
}

/// Find the state of bond dimension at most `max_bond` closest to `A psi` by
/// alternating one-site updates, starting from the sweep-compressed direct
/// application (so the result is never worse than that initialization).
pub fn variational_fit(
    op: &MatrixProductOperator,
    psi: &MatrixProductState,
    max_bond: usize,
    sweeps: usize,
    tol: f64,
) -> Result<FitResult> {
    let n = psi.len();
    let target = apply_mpo_exact(op, psi)?;
    let t2 = target.norm().powi(2);

    let (mut chi, _) = target.compress(max_bond, 0.0)?;
    chi.canonicalize_mut(0)?;

    // environments of <chi| A |psi>: right_envs[i] covers sites i.., and
    // left_envs[i] covers sites ..i (exclusive)
    let mut right_envs: Vec<Tensor> = vec![ones_env(); n + 1];
    for i in (1..n).rev() {
        right_envs[i] = env_step_right(&right_envs[i + 1], chi.site(i), op.site(i), psi.site(i))?;
    }
    let mut left_envs: Vec<Tensor> = vec![ones_env(); n + 1];

    // local gradient at site i given its environments; this is the exact
    // one-site minimizer when the rest of chi is orthonormal
    let local_update = |lenv: &Tensor, renv: &Tensor, i: usize| -> Result<Tensor> {
        let tmp = lenv.contract(psi.site(i), &[(2, 1)])?; // (cl, w, s, pr)
        let tmp = tmp.contract(op.site(i), &[(1, 0), (2, 3)])?; // (cl, pr, wr, so)
        let b = tmp.contract(renv, &[(1, 2), (2, 1)])?; // (cl, so, cr)
        b.permute(&[1, 0, 2]) // (so, cl, cr)
    };

    let mut residual_sq = f64::INFINITY;
    let mut sweeps_used = 0;
    let mut converged = false;

    for sweep in 0..sweeps.max(1) {
        sweeps_used = sweep + 1;
        let mut last_b2 = 0.0;
        // left-to-right: right_envs are valid from the previous pass
        for i in 0..n {
            let b = local_update(&left_envs[i], &right_envs[i + 1], i)?;
            last_b2 = b.norm().powi(2);
            chi.set_site(i, b);
            chi.set_canonical_center(Some(i));
            if i + 1 < n {
                // orthonormalize the updated site (the remainder lands on a
                // site that gets overwritten next) and extend the environment
                chi.canonicalize_mut(i + 1)?;
                left_envs[i + 1] =
                    env_step_left(&left_envs[i], chi.site(i), op.site(i), psi.site(i))?;
            }
        }
        // right-to-left: left_envs[i] stay valid because they exclude the
        // neighbor the orthonormalization remainder is pushed into
        for i in (0..n).rev() {
            let b = local_update(&left_envs[i], &right_envs[i + 1], i)?;
            last_b2 = b.norm().powi(2);
            chi.set_site(i, b);
            chi.set_canonical_center(Some(i));
            if i > 0 {
                chi.canonicalize_mut(i - 1)?;
                right_envs[i] =
                    env_step_right(&right_envs[i + 1], chi.site(i), op.site(i), psi.site(i))?;
            }
        }

        let res = (t2 - last_b2).max(0.0);
        if (residual_sq - res).abs() <= tol * t2.max(1.0) {
            residual_sq = res;
            converged = true;
            break;
        }
        residual_sq = res;
    }

    Ok(FitResult {
        state: chi,
        residual: residual_sq.max(0.0).sqrt(),
        sweeps_used,
        converged,
    })
}

/// One step of second-order split evolution `exp(-i H dt)` for a sum of
/// nearest-neighbor couplings: half step on even bonds, full step on odd
/// bonds, half step on even bonds, truncating after each two-site gate.
/// Returns the evolved state and the total discarded weight; the retained
/// spectrum is rescaled per gate so the norm is preserved.
pub fn trotter_step(
    psi: &MatrixProductState,
    terms: &[NnCoupling],
    dt: f64,
    max_bond: usize,
    tol: f64,
) -> Result<(MatrixProductState, f64)> {
    let l = psi.len();
    for t in terms {
        if t.left + 1 >= l {
            return Err(Error::InvalidArgument(format!(
                "coupling at bond {} out of range for {l} sites",
                t.left
            )));
        }
    }
    let mut out = psi.clone();
    if terms.is_empty() || dt == 0.0 {
        return Ok((out, 0.0));
    }

    let gate = |op: &DMatrix<C64>, step: f64| -> DMatrix<C64> {
        matrix_exp_hermitian(op, c(0.0, -step))
    };
    let mut even: Vec<(usize, DMatrix<C64>)> = Vec::new();
    let mut odd: Vec<(usize, DMatrix<C64>)> = Vec::new();
    for t in terms {
        if t.left % 2 == 0 {
            even.push((t.left, gate(&t.op, 0.5 * dt)));
        } else {
            odd.push((t.left, gate(&t.op, dt)));
        }
    }
    even.sort_by_key(|x| x.0);
    odd.sort_by_key(|x| x.0);

    let mut discarded = 0.0;
    for (b, u) in &even {
        discarded += apply_two_site_gate(&mut out, *b, u, max_bond, tol)?;
    }
    for (b, u) in odd.iter().rev() {
        discarded += apply_two_site_gate(&mut out, *b, u, max_bond, tol)?;
    }
    for (b, u) in &even {
        discarded += apply_two_site_gate(&mut out, *b, u, max_bond, tol)?;
    }
    Ok((out, discarded))
}

/// Apply a 4x4 gate (row index `(s_i, s_{i+1})`) at bond `bond`, truncating
/// the new bond to `max_bond`/`tol`. Returns the discarded weight.
pub fn apply_two_site_gate(
    psi: &mut MatrixProductState,
    bond: usize,
    u4: &DMatrix<C64>,
    max_bond: usize,
    tol: f64,
) -> Result<f64> {
    let d = psi.phys_dim();
    psi.canonicalize_mut(bond)?;
    let ti = psi.site(bond).clone(); // (si, dl, m)
    let tj = psi.site(bond + 1).clone(); // (sj, m, dr)
    let theta = ti.contract(&tj, &[(2, 1)])?; // (si, dl, sj, dr)
    let ug = Tensor::from_matrix(u4, &[d, d], &[d, d]); // (so_i, so_j, si_i, si_j)
    let theta = ug.contract(&theta, &[(2, 0), (3, 2)])?; // (so_i, so_j, dl, dr)
    let theta = theta.permute(&[2, 0, 1, 3])?; // (dl, so_i, so_j, dr)
    let f = theta.svd_truncate_policy(2, max_bond, tol, true)?;
    if f.report.degenerate {
        return Err(Error::Numerical("gate produced a zero state".into()));
    }
    let kept_w: f64 = f.s.iter().map(|x| x * x).sum();
    let total = kept_w + f.report.discarded_weight;
    let rescale = (total / kept_w).sqrt();

    // left site: (so_i, dl, k), left-orthonormal
    psi.set_site(bond, f.u.permute(&[1, 0, 2])?);
    // right site carries the spectrum: (so_j, k, dr)
    let k = f.report.kept;
    let (dcols, dr) = (f.v.shape()[1], f.v.shape()[2]);
    let mut vs = f.v.clone().into_data();
    for (idx, z) in vs.iter_mut().enumerate() {
        let row = idx / (dcols * dr);
        *z *= f.s[row] * rescale;
    }
    let sv = Tensor::new(vec![k, dcols, dr], vs)?;
    psi.set_site(bond + 1, sv.permute(&[1, 0, 2])?);
    psi.set_canonical_center(Some(bond + 1));
    Ok(f.report.discarded_weight)
}
