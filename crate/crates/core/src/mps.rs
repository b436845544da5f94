//! Open-boundary matrix product states.
//!
//! A state over `L` sites of physical dimension `d` is a chain of rank-3
//! tensors indexed `(physical, left virtual, right virtual)`; the first and
//! last virtual extents are 1. When `canonical_center` is `Some(c)`, every
//! site left of `c` is left-orthonormal and every site right of `c` is
//! right-orthonormal, so local quantities at `c` need no environment.
//!
//! States are values: operations take `&self` and return new states. After
//! non-unitary updates callers renormalize via [`MatrixProductState::normalize`],
//! which accumulates the dropped amplitude in `log_norm_offset` so that
//! trajectory probability bookkeeping survives long runs without underflow.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, TruncationReport};

/// Largest chain for which dense reconstruction is permitted.
pub const DENSE_SITE_LIMIT: usize = 14;

#[derive(Debug, Clone)]
pub struct MatrixProductState {
    sites: Vec<Tensor>,
    canonical_center: Option<usize>,
    log_norm_offset: f64,
}

/// Schmidt values across one bond of a normalized state; squares sum to 1.
#[derive(Debug, Clone)]
pub struct SchmidtSpectrum {
    pub bond: usize,
    pub values: Vec<f64>,
}

impl SchmidtSpectrum {
    /// Von Neumann entanglement entropy -sum(v^2 ln v^2).
    pub fn entropy(&self) -> f64 {
        self.values
            .iter()
            .filter(|&&v| v > 1e-15)
            .map(|&v| {
                let p = v * v;
                -p * p.ln()
            })
            .sum()
    }
}

fn dmatrix_to_tensor(m: &DMatrix<C64>) -> Tensor {
    Tensor::from_matrix(m, &[m.nrows()], &[m.ncols()])
}

impl MatrixProductState {
    /// Build a state from raw site tensors (validated).
    pub fn from_sites(sites: Vec<Tensor>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidArgument("empty chain".into()));
        }
        let d = sites[0].shape()[0];
        let mut left = 1usize;
        for (i, t) in sites.iter().enumerate() {
            if t.rank() != 3 {
                return Err(Error::InvalidArgument(format!(
                    "site {i} tensor has rank {}, expected 3",
                    t.rank()
                )));
            }
            if t.shape()[0] != d {
                return Err(Error::DimensionMismatch(format!(
                    "site {i} physical extent {} != {d}",
                    t.shape()[0]
                )));
            }
            if t.shape()[1] != left {
                return Err(Error::DimensionMismatch(format!(
                    "site {i} left virtual extent {} does not match previous bond {left}",
                    t.shape()[1]
                )));
            }
            left = t.shape()[2];
        }
        if left != 1 {
            return Err(Error::DimensionMismatch(
                "last site must have right virtual extent 1".into(),
            ));
        }
        Ok(Self { sites, canonical_center: None, log_norm_offset: 0.0 })
    }

    /// Product state from per-site local vectors; each must be normalized.
    pub fn product_state(local_states: &[Vec<C64>]) -> Result<Self> {
        if local_states.is_empty() {
            return Err(Error::InvalidArgument("empty chain".into()));
        }
        let d = local_states[0].len();
        let mut sites = Vec::with_capacity(local_states.len());
        for (i, v) in local_states.iter().enumerate() {
            if v.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "site {i} local state has dimension {}, expected {d}",
                    v.len()
                )));
            }
            let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "site {i} local state has norm {norm}, expected 1"
                )));
            }
            sites.push(Tensor::new(vec![d, 1, 1], v.clone())?);
        }
        let mut psi = Self::from_sites(sites)?;
        psi.canonical_center = Some(0);
        Ok(psi)
    }

    /// Pseudo-random normalized state with bonds capped at `max_bond`;
    /// deterministic in `seed`. Intended for tests and initial guesses.
    pub fn random(length: usize, d: usize, max_bond: usize, seed: u64) -> Result<Self> {
        let mut rng = crate::rng::RngStream::new(seed, 0);
        let mut sites = Vec::with_capacity(length);
        let mut left = 1usize;
        for i in 0..length {
            let right = if i + 1 == length {
                1
            } else {
                let cap_l = d.pow(((i + 1).min(16)) as u32);
                let cap_r = d.pow(((length - 1 - i).min(16)) as u32);
                max_bond.min(cap_l).min(cap_r).max(1)
            };
            let data: Vec<C64> = (0..d * left * right)
                .map(|_| C64::new(rng.gaussian(), rng.gaussian()))
                .collect();
            sites.push(Tensor::new(vec![d, left, right], data)?);
            left = right;
        }
        let mut psi = Self::from_sites(sites)?;
        psi.canonicalize_mut(0)?;
        psi.normalize()?;
        psi.log_norm_offset = 0.0;
        Ok(psi)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn phys_dim(&self) -> usize {
        self.sites[0].shape()[0]
    }

    pub fn site(&self, i: usize) -> &Tensor {
        &self.sites[i]
    }

    pub(crate) fn set_site(&mut self, i: usize, t: Tensor) {
        self.sites[i] = t;
    }

    pub fn canonical_center(&self) -> Option<usize> {
        self.canonical_center
    }

    pub(crate) fn set_canonical_center(&mut self, c: Option<usize>) {
        self.canonical_center = c;
    }

    pub fn log_norm_offset(&self) -> f64 {
        self.log_norm_offset
    }

    pub fn set_log_norm_offset(&mut self, v: f64) {
        self.log_norm_offset = v;
    }

    /// Virtual extent of bond `b` (between sites `b` and `b+1`).
    pub fn bond_dim(&self, b: usize) -> usize {
        self.sites[b].shape()[2]
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        (0..self.len().saturating_sub(1)).map(|b| self.bond_dim(b)).collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Left-orthonormalize site `i` by QR, absorbing the remainder into
    /// site `i+1`.
    fn push_right(&mut self, i: usize) -> Result<()> {
        let t = &self.sites[i];
        let (d, dl) = (t.shape()[0], t.shape()[1]);
        let mat = t.to_matrix(2)?;
        let qr = mat.qr();
        let (q, r) = (qr.q(), qr.r());
        let k = q.ncols();
        self.sites[i] = Tensor::from_matrix(&q, &[d, dl], &[k]);
        let rt = dmatrix_to_tensor(&r);
        let next = rt.contract(&self.sites[i + 1], &[(1, 1)])?; // (k, s, b)
        self.sites[i + 1] = next.permute(&[1, 0, 2])?;
        Ok(())
    }

    /// Right-orthonormalize site `i` by LQ, absorbing the remainder into
    /// site `i-1`.
    fn push_left(&mut self, i: usize) -> Result<()> {
        let t = self.sites[i].permute(&[1, 0, 2])?; // (dl, d, dr)
        let (dl, d, dr) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let mat = t.reshape(vec![dl, d * dr])?.to_matrix(1)?;
        let qr = mat.adjoint().qr();
        let (qt, rt) = (qr.q(), qr.r());
        let k = qt.ncols();
        let q = qt.adjoint(); // (k, d*dr), orthonormal rows
        let l = rt.adjoint(); // (dl, k)
        let site = Tensor::from_matrix(&q, &[k], &[d, dr]).permute(&[1, 0, 2])?;
        self.sites[i] = site;
        let lt = dmatrix_to_tensor(&l);
        self.sites[i - 1] = self.sites[i - 1].contract(&lt, &[(2, 0)])?; // (s, dl_prev, k)
        Ok(())
    }

    /// Gauge the state so all sites left of `center` are left-orthonormal and
    /// all sites right of it right-orthonormal. The represented state and its
    /// norm are unchanged.
    pub fn canonicalize(&self, center: usize) -> Result<Self> {
        let mut out = self.clone();
        out.canonicalize_mut(center)?;
        Ok(out)
    }

    pub(crate) fn canonicalize_mut(&mut self, center: usize) -> Result<()> {
        let n = self.len();
        if center >= n {
            return Err(Error::InvalidArgument(format!(
                "center {center} out of range for {n} sites"
            )));
        }
        match self.canonical_center {
            Some(mut c) => {
                while c < center {
                    self.push_right(c)?;
                    c += 1;
                }
                while c > center {
                    self.push_left(c)?;
                    c -= 1;
                }
            }
            None => {
                for i in 0..center {
                    self.push_right(i)?;
                }
                for i in ((center + 1)..n).rev() {
                    self.push_left(i)?;
                }
            }
        }
        self.canonical_center = Some(center);
        Ok(())
    }

    /// Norm of the stored tensors (log-norm offset not applied).
    pub fn norm(&self) -> f64 {
        match self.canonical_center {
            Some(c) => self.sites[c].norm(),
            None => Self::inner(self, self)
                .map(|z| z.re.max(0.0).sqrt())
                .unwrap_or(0.0),
        }
    }

    /// Scale the state to unit norm; the removed factor is accumulated in
    /// `log_norm_offset`. Returns the norm that was absorbed.
    pub fn normalize(&mut self) -> Result<f64> {
        if self.canonical_center.is_none() {
            self.canonicalize_mut(0)?;
        }
        let c = self.canonical_center.unwrap();
        let n = self.sites[c].norm();
        if n < 1e-300 {
            return Err(Error::Numerical("cannot normalize zero state".into()));
        }
        self.sites[c] = self.sites[c].scale(C64::new(1.0 / n, 0.0));
        self.log_norm_offset += n.ln();
        Ok(n)
    }

    /// `<bra|ket>` of the stored tensors.
    pub fn inner(bra: &Self, ket: &Self) -> Result<C64> {
        if bra.len() != ket.len() || bra.phys_dim() != ket.phys_dim() {
            return Err(Error::DimensionMismatch(
                "inner product requires matching chains".into(),
            ));
        }
        let mut env = Tensor::identity(1); // (bra virtual, ket virtual)
        for i in 0..bra.len() {
            let tmp = env.contract(ket.site(i), &[(1, 1)])?; // (a', s, b)
            env = bra.site(i).conj().contract(&tmp, &[(0, 1), (1, 0)])?; // (b', b)
        }
        env.as_scalar()
    }

    /// Dense coefficient vector; entry at `sum_i s_i d^(L-1-i)` is the
    /// amplitude of the configuration `(s_0, ..., s_{L-1})`.
    pub fn to_dense(&self) -> Result<Tensor> {
        let n = self.len();
        if n > DENSE_SITE_LIMIT {
            return Err(Error::SizeLimit(format!(
                "dense reconstruction limited to {DENSE_SITE_LIMIT} sites, got {n}"
            )));
        }
        let d = self.phys_dim();
        let mut acc = self.sites[0].reshape(vec![d, self.sites[0].shape()[2]])?;
        for i in 1..n {
            let t = acc.contract(self.site(i), &[(1, 1)])?; // (P, s, b)
            let p = t.shape()[0] * t.shape()[1];
            let b = t.shape()[2];
            acc = t.reshape(vec![p, b])?;
        }
        acc.reshape(vec![d.pow(n as u32)])
    }

    /// Expectation `<psi|op_site|psi> / <psi|psi>` of a one-site operator.
    pub fn expectation_local(&self, op: &DMatrix<C64>, site: usize) -> Result<C64> {
        let mut work = self.clone();
        work.canonicalize_mut(site)?;
        work.expectation_at_center(op)
    }

    /// Local expectation assuming the operator acts at the canonical center.
    pub(crate) fn expectation_at_center(&self, op: &DMatrix<C64>) -> Result<C64> {
        let c = self
            .canonical_center
            .ok_or_else(|| Error::InvalidArgument("state has no canonical center".into()))?;
        let t = &self.sites[c];
        let opt = dmatrix_to_tensor(op);
        let tmp = opt.contract(t, &[(1, 0)])?; // (s', a, b)
        let val = t
            .conj()
            .contract(&tmp, &[(0, 0), (1, 1), (2, 2)])?
            .as_scalar()?;
        let n2 = t.norm().powi(2);
        Ok(val / n2)
    }

    /// Two-point function `<op_i op_j> / <psi|psi>` for distinct sites.
    pub fn correlation(
        &self,
        op_i: &DMatrix<C64>,
        i: usize,
        op_j: &DMatrix<C64>,
        j: usize,
    ) -> Result<C64> {
        if i == j {
            return Err(Error::InvalidArgument(
                "correlation requires distinct sites; apply the operator product locally instead"
                    .into(),
            ));
        }
        let (lo, op_lo, hi, op_hi) = if i < j {
            (i, op_i, j, op_j)
        } else {
            (j, op_j, i, op_i)
        };
        let mut work = self.clone();
        work.canonicalize_mut(lo)?;
        let n2 = work.sites[lo].norm().powi(2);

        let t = &work.sites[lo];
        let olo = dmatrix_to_tensor(op_lo);
        let ot = olo.contract(t, &[(1, 0)])?; // (s', a, b)
        let mut env = t.conj().contract(&ot, &[(0, 0), (1, 1)])?; // (b', b)
        for k in (lo + 1)..hi {
            let tk = &work.sites[k];
            let tmp = env.contract(tk, &[(1, 1)])?; // (b', s, b)
            env = tk.conj().contract(&tmp, &[(0, 1), (1, 0)])?;
        }
        let tj = &work.sites[hi];
        let ohi = dmatrix_to_tensor(op_hi);
        let otj = ohi.contract(tj, &[(1, 0)])?; // (s', a, b)
        let tmp = env.contract(&otj, &[(1, 1)])?; // (a', s', b)
        let val = tj
            .conj()
            .contract(&tmp, &[(0, 1), (1, 0), (2, 2)])?
            .as_scalar()?;
        Ok(val / n2)
    }

    /// Reduced density matrix of one or two sites (trace normalized).
    ///
    /// For two sites `(i, j)` the row index is the pair `(s_i, s_j)` with
    /// `s_j` fastest.
    pub fn reduced_density_matrix(&self, sites: &[usize]) -> Result<DMatrix<C64>> {
        let d = self.phys_dim();
        match sites {
            [i] => {
                let mut work = self.clone();
                work.canonicalize_mut(*i)?;
                let t = &work.sites[*i];
                let n2 = t.norm().powi(2);
                let rho = t.contract(&t.conj(), &[(1, 1), (2, 2)])?; // (s, s')
                let m = rho.to_matrix(1)?;
                Ok(m / C64::new(n2, 0.0))
            }
            [i, j] if i != j => {
                let (lo, hi) = if i < j { (*i, *j) } else { (*j, *i) };
                let mut work = self.clone();
                work.canonicalize_mut(lo)?;
                let n2 = work.sites[lo].norm().powi(2);
                let t = &work.sites[lo];
                // open physical legs at lo, env layout (s, s', b, b')
                let mut env = t.contract(&t.conj(), &[(1, 1)])?.permute(&[0, 2, 1, 3])?;
                for k in (lo + 1)..hi {
                    let tk = &work.sites[k];
                    let tmp = env.contract(tk, &[(2, 1)])?; // (s, s', b', t, b)
                    env = tmp.contract(&tk.conj(), &[(2, 1), (3, 0)])?; // (s, s', b, b')
                }
                let tj = &work.sites[hi];
                let tmp = env.contract(tj, &[(2, 1)])?; // (s, s', b', t, b)
                let full = tmp.contract(&tj.conj(), &[(2, 1), (4, 2)])?; // (s, s', t, t')
                // row (s_lo, t), column (s'_lo, t')
                let ordered = full.permute(&[0, 2, 1, 3])?;
                let m = ordered.reshape(vec![d * d, d * d])?.to_matrix(1)?;
                let rho = m / C64::new(n2, 0.0);
                if i < j {
                    Ok(rho)
                } else {
                    // requested order was (j, i); swap the two factors
                    let mut sw = DMatrix::zeros(d * d, d * d);
                    for a in 0..d {
                        for b in 0..d {
                            for a2 in 0..d {
                                for b2 in 0..d {
                                    sw[(b * d + a, b2 * d + a2)] = rho[(a * d + b, a2 * d + b2)];
                                }
                            }
                        }
                    }
                    Ok(sw)
                }
            }
            _ => Err(Error::InvalidArgument(
                "reduced density matrices support one or two distinct sites".into(),
            )),
        }
    }

    /// Schmidt values across bond `b`, normalized so the squares sum to 1.
    pub fn schmidt_spectrum(&self, bond: usize) -> Result<SchmidtSpectrum> {
        if bond + 1 >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "bond {bond} out of range for {} sites",
                self.len()
            )));
        }
        let mut work = self.clone();
        work.canonicalize_mut(bond)?;
        let t = &work.sites[bond];
        let n = t.norm();
        let f = t.svd_truncate(2, t.shape()[2].max(1), 0.0)?;
        let values = f.s.iter().map(|s| s / n).collect();
        Ok(SchmidtSpectrum { bond, values })
    }

    /// Apply a one-site operator (not necessarily unitary); bond dimensions
    /// are unchanged and the caller handles any norm change.
    pub fn apply_local(&self, op: &DMatrix<C64>, site: usize) -> Result<Self> {
        let mut out = self.clone();
        out.apply_local_mut(op, site)?;
        Ok(out)
    }

    pub(crate) fn apply_local_mut(&mut self, op: &DMatrix<C64>, site: usize) -> Result<()> {
        if site >= self.len() {
            return Err(Error::InvalidArgument(format!("site {site} out of range")));
        }
        let opt = dmatrix_to_tensor(op);
        self.sites[site] = opt.contract(&self.sites[site], &[(1, 0)])?;
        if self.canonical_center != Some(site) {
            self.canonical_center = None;
        }
        Ok(())
    }

    /// `ca * a + cb * b` as an MPS whose bond extents are the sums of the
    /// inputs' (coefficients act on the stored tensors; log-norm offsets of
    /// the inputs are ignored and the result carries offset 0).
    pub fn superpose(a: &Self, b: &Self, ca: C64, cb: C64) -> Result<Self> {
        if a.len() != b.len() || a.phys_dim() != b.phys_dim() {
            return Err(Error::DimensionMismatch(
                "superposition requires matching chain shape".into(),
            ));
        }
        let n = a.len();
        let d = a.phys_dim();
        if n == 1 {
            let t = a.sites[0].scale(ca).add(&b.sites[0].scale(cb))?;
            return Self::from_sites(vec![t]);
        }
        let one = C64::new(1.0, 0.0);
        let mut sites = Vec::with_capacity(n);
        for i in 0..n {
            let ta = &a.sites[i];
            let tb = &b.sites[i];
            let (la, ra) = (ta.shape()[1], ta.shape()[2]);
            let (lb, rb) = (tb.shape()[1], tb.shape()[2]);
            let (l, r) = if i == 0 {
                (1, ra + rb)
            } else if i == n - 1 {
                (la + lb, 1)
            } else {
                (la + lb, ra + rb)
            };
            let mut data = vec![C64::new(0.0, 0.0); d * l * r];
            let mut write = |src: &Tensor, f: C64, off_l: usize, off_r: usize, sl: usize, sr: usize| {
                for s in 0..d {
                    for x in 0..sl {
                        for y in 0..sr {
                            data[(s * l + (off_l + x)) * r + (off_r + y)] =
                                f * src.get(&[s, x, y]);
                        }
                    }
                }
            };
            let (fa, fb) = if i == 0 { (ca, cb) } else { (one, one) };
            write(ta, fa, 0, 0, la, ra);
            let (ol, or) = if i == 0 {
                (0, ra)
            } else if i == n - 1 {
                (la, 0)
            } else {
                (la, ra)
            };
            write(tb, fb, ol, or, lb, rb);
            sites.push(Tensor::new(vec![d, l, r], data)?);
        }
        Self::from_sites(sites)
    }

    /// Sweep-compress to bond extents at most `max_bond`, additionally
    /// dropping Schmidt weight up to `tol` per bond. The retained spectrum is
    /// rescaled so the state norm is preserved exactly; one report per bond.
    pub fn compress(&self, max_bond: usize, tol: f64) -> Result<(Self, Vec<TruncationReport>)> {
        if max_bond == 0 {
            return Err(Error::InvalidArgument("max_bond must be positive".into()));
        }
        let n = self.len();
        let mut work = self.clone();
        if n == 1 {
            return Ok((work, vec![]));
        }
        work.canonicalize_mut(n - 1)?;
        let mut reports = vec![
            TruncationReport {
                kept: 0,
                discarded_weight: 0.0,
                spectrum: vec![],
                degenerate: false
            };
            n - 1
        ];
        for b in (0..n - 1).rev() {
            let s = b + 1;
            let t = work.sites[s].permute(&[1, 0, 2])?; // (dl, d, dr)
            let f = t.svd_truncate_policy(1, max_bond, tol, true)?;
            if f.report.degenerate {
                return Err(Error::Numerical("cannot compress zero state".into()));
            }
            let kept_w: f64 = f.s.iter().map(|x| x * x).sum();
            let total = kept_w + f.report.discarded_weight;
            let rescale = (total / kept_w).sqrt();
            // right-orthonormal new site tensor
            work.sites[s] = f.v.permute(&[1, 0, 2])?;
            // absorb U * diag(s * rescale) into the left neighbor
            let k = f.report.kept;
            let dl = f.u.shape()[0];
            let mut us = f.u.clone().into_data();
            for row in 0..dl {
                for col in 0..k {
                    us[row * k + col] *= f.s[col] * rescale;
                }
            }
            let us = Tensor::new(vec![dl, k], us)?;
            work.sites[b] = work.sites[b].contract(&us, &[(2, 0)])?;
            work.canonical_center = Some(b);
            reports[b] = f.report;
        }
        Ok((work, reports))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn up() -> Vec<C64> {
        vec![c(1.0, 0.0), c(0.0, 0.0)]
    }

    fn down() -> Vec<C64> {
        vec![c(0.0, 0.0), c(1.0, 0.0)]
    }

    fn plus_x() -> Vec<C64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        vec![c(s, 0.0), c(s, 0.0)]
    }

    fn fidelity(a: &MatrixProductState, b: &MatrixProductState) -> f64 {
        let ip = MatrixProductState::inner(a, b).unwrap().norm();
        ip / (a.norm() * b.norm())
    }

    #[test]
    fn single_site_basis_state() {
        let psi = MatrixProductState::product_state(&[up()]).unwrap();
        let z = psi.expectation_local(&dense::pauli_z(), 0).unwrap();
        assert!((z.re - 1.0).abs() < 1e-14);
        assert!(z.im.abs() < 1e-14);
    }

    #[test]
    fn product_of_plus_x_spins() {
        let psi =
            MatrixProductState::product_state(&[plus_x(), plus_x(), plus_x(), plus_x()]).unwrap();
        for i in 0..4 {
            let x = psi.expectation_local(&dense::pauli_x(), i).unwrap();
            assert!((x.re - 1.0).abs() < 1e-12, "site {i}: {x}");
        }
        assert_eq!(psi.bond_dims(), vec![1, 1, 1]);
    }

    #[test]
    fn unnormalized_local_state_rejected() {
        let bad = vec![c(1.0, 0.0), c(1.0, 0.0)];
        assert!(MatrixProductState::product_state(&[bad]).is_err());
    }

    #[test]
    fn alternating_product_dense_reconstruction() {
        let psi = MatrixProductState::product_state(&[up(), down(), up()]).unwrap();
        let dv = psi.to_dense().unwrap();
        // configuration (0,1,0) sits at index 0*4 + 1*2 + 0 = 2
        for (i, z) in dv.data().iter().enumerate() {
            let expect = if i == 2 { 1.0 } else { 0.0 };
            assert!((z - c(expect, 0.0)).norm() < 1e-14, "index {i}");
        }
    }

    #[test]
    fn dense_norm_matches_mps_norm() {
        let psi = MatrixProductState::random(6, 2, 4, 42).unwrap();
        let dv = psi.to_dense().unwrap();
        let dense_n2: f64 = dv.data().iter().map(|z| z.norm_sqr()).sum();
        assert!((dense_n2 - psi.norm().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn singlet_dense_coefficients() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let ud = MatrixProductState::product_state(&[up(), down()]).unwrap();
        let du = MatrixProductState::product_state(&[down(), up()]).unwrap();
        let singlet = MatrixProductState::superpose(&ud, &du, c(s, 0.0), c(-s, 0.0)).unwrap();
        let dv = singlet.to_dense().unwrap();
        let expect = [0.0, s, -s, 0.0];
        // fix the global phase via the largest entry
        let phase = dv.data()[1] / dv.data()[1].norm();
        for (i, z) in dv.data().iter().enumerate() {
            assert!((z / phase - c(expect[i], 0.0)).norm() < 1e-12, "index {i}");
        }
    }

    #[test]
    fn canonicalize_preserves_state_and_norm() {
        let psi = MatrixProductState::random(6, 2, 4, 7).unwrap();
        let z_before = psi.expectation_local(&dense::pauli_z(), 3).unwrap();
        let dv_before = psi.to_dense().unwrap();
        let can = psi.canonicalize(2).unwrap();
        assert_eq!(can.canonical_center(), Some(2));
        let z_after = can.expectation_local(&dense::pauli_z(), 3).unwrap();
        assert!((z_before - z_after).norm() < 1e-12);
        assert!((psi.norm() - can.norm()).abs() < 1e-12);
        let dv_after = can.to_dense().unwrap();
        let ip: C64 = dv_before
            .data()
            .iter()
            .zip(dv_after.data())
            .map(|(a, b)| a.conj() * b)
            .sum();
        assert!((ip.norm() - 1.0).abs() < 1e-12, "fidelity {}", ip.norm());
    }

    #[test]
    fn canonicalize_idempotent() {
        let psi = MatrixProductState::random(5, 2, 3, 9).unwrap();
        let a = psi.canonicalize(2).unwrap();
        let b = a.canonicalize(2).unwrap();
        for i in 0..5 {
            let diff: f64 = a
                .site(i)
                .data()
                .iter()
                .zip(b.site(i).data())
                .map(|(x, y)| (x - y).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(diff < 1e-13, "site {i} changed by {diff}");
        }
    }

    #[test]
    fn canonicalize_keeps_product_bonds_trivial() {
        let psi = MatrixProductState::product_state(&[plus_x(), plus_x(), plus_x()]).unwrap();
        let can = psi.canonicalize(1).unwrap();
        assert_eq!(can.bond_dims(), vec![1, 1]);
    }

    #[test]
    fn expectation_matches_dense() {
        let psi = MatrixProductState::random(6, 2, 4, 11).unwrap();
        let dv = psi.to_dense().unwrap();
        let op = dense::pauli_y();
        let site = 2;
        let dense_op = dense::op_on_site(6, site, &op);
        let v = nalgebra::DVector::from_column_slice(dv.data());
        let expect = (v.adjoint() * &dense_op * &v)[(0, 0)];
        let got = psi.expectation_local(&op, site).unwrap();
        assert!((got - expect).norm() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn correlation_uncorrelated_product() {
        let psi = MatrixProductState::product_state(&[plus_x(), plus_x()]).unwrap();
        let v = psi.correlation(&dense::pauli_z(), 0, &dense::pauli_z(), 1).unwrap();
        assert!(v.norm() < 1e-13);
    }

    #[test]
    fn correlation_singlet_anticorrelated() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let ud = MatrixProductState::product_state(&[up(), down()]).unwrap();
        let du = MatrixProductState::product_state(&[down(), up()]).unwrap();
        let singlet = MatrixProductState::superpose(&ud, &du, c(s, 0.0), c(-s, 0.0)).unwrap();
        let v = singlet.correlation(&dense::pauli_z(), 0, &dense::pauli_z(), 1).unwrap();
        assert!((v.re + 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_same_site_rejected() {
        let psi = MatrixProductState::product_state(&[up(), down()]).unwrap();
        assert!(psi.correlation(&dense::pauli_z(), 1, &dense::pauli_z(), 1).is_err());
    }

    #[test]
    fn reduced_density_matrix_product_state_is_projector() {
        let psi = MatrixProductState::product_state(&[plus_x(), up()]).unwrap();
        let rho = psi.reduced_density_matrix(&[0]).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!((rho[(a, b)] - c(0.5, 0.0)).norm() < 1e-13);
            }
        }
        let purity = (rho.clone() * rho).trace();
        assert!((purity.re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reduced_density_matrix_two_sites_matches_dense() {
        let psi = MatrixProductState::random(6, 2, 4, 13).unwrap();
        let rho = psi.reduced_density_matrix(&[1, 4]).unwrap();
        // dense partial trace
        let dv = psi.to_dense().unwrap();
        let mut dense_rho = DMatrix::<C64>::zeros(4, 4);
        let l = 6usize;
        let bits = |x: usize, s: usize| (x >> (l - 1 - s)) & 1;
        for (idx, amp) in dv.data().iter().enumerate() {
            for (jdx, amp2) in dv.data().iter().enumerate() {
                let traced_equal = (0..l)
                    .filter(|s| *s != 1 && *s != 4)
                    .all(|s| bits(idx, s) == bits(jdx, s));
                if traced_equal {
                    let r = bits(idx, 1) * 2 + bits(idx, 4);
                    let cc = bits(jdx, 1) * 2 + bits(jdx, 4);
                    dense_rho[(r, cc)] += amp * amp2.conj();
                }
            }
        }
        for a in 0..4 {
            for b in 0..4 {
                assert!(
                    (rho[(a, b)] - dense_rho[(a, b)]).norm() < 1e-12,
                    "entry ({a},{b}): {} vs {}",
                    rho[(a, b)],
                    dense_rho[(a, b)]
                );
            }
        }
        assert!((rho.trace().re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn schmidt_product_state() {
        let psi = MatrixProductState::product_state(&[up(), down(), up()]).unwrap();
        let s = psi.schmidt_spectrum(1).unwrap();
        assert_eq!(s.values.len(), 1);
        assert!((s.values[0] - 1.0).abs() < 1e-13);
        assert!(s.entropy().abs() < 1e-12);
    }

    #[test]
    fn schmidt_singlet_half_half() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let ud = MatrixProductState::product_state(&[up(), down()]).unwrap();
        let du = MatrixProductState::product_state(&[down(), up()]).unwrap();
        let singlet = MatrixProductState::superpose(&ud, &du, c(s, 0.0), c(-s, 0.0)).unwrap();
        let sp = singlet.schmidt_spectrum(0).unwrap();
        assert_eq!(sp.values.len(), 2);
        assert!((sp.values[0] - s).abs() < 1e-12);
        assert!((sp.values[1] - s).abs() < 1e-12);
    }

    #[test]
    fn schmidt_matches_dense_svd() {
        let psi = MatrixProductState::random(6, 2, 4, 17).unwrap();
        let bond = 2;
        let sp = psi.schmidt_spectrum(bond).unwrap();
        let dv = psi.to_dense().unwrap();
        let m = dv.reshape(vec![8, 8]).unwrap().to_matrix(1).unwrap();
        let mut sv: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (a, b) in sp.values.iter().zip(sv.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        let sum2: f64 = sp.values.iter().map(|v| v * v).sum();
        assert!((sum2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn apply_local_identity_is_exact() {
        let psi = MatrixProductState::random(4, 2, 3, 19).unwrap();
        let id = DMatrix::identity(2, 2);
        let out = psi.apply_local(&id, 2).unwrap();
        for i in 0..4 {
            assert_eq!(psi.site(i).data(), out.site(i).data());
        }
    }

    #[test]
    fn apply_local_flip_changes_one_site() {
        let psi = MatrixProductState::product_state(&[up(), up(), up()]).unwrap();
        let out = psi.apply_local(&dense::pauli_x(), 1).unwrap();
        let z0 = out.expectation_local(&dense::pauli_z(), 0).unwrap();
        let z1 = out.expectation_local(&dense::pauli_z(), 1).unwrap();
        let z2 = out.expectation_local(&dense::pauli_z(), 2).unwrap();
        assert!((z0.re - 1.0).abs() < 1e-13);
        assert!((z1.re + 1.0).abs() < 1e-13);
        assert!((z2.re - 1.0).abs() < 1e-13);
    }

    #[test]
    fn apply_local_phase_matches_dense() {
        let psi = MatrixProductState::random(6, 2, 4, 23).unwrap();
        let phi = 0.37;
        let op = DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::from_polar(1.0, phi),
                c(0.0, 0.0),
                c(0.0, 0.0),
                C64::from_polar(1.0, -phi),
            ],
        );
        let out = psi.apply_local(&op, 3).unwrap();
        let lhs = out.to_dense().unwrap();
        let dense_op = dense::op_on_site(6, 3, &op);
        let v = nalgebra::DVector::from_column_slice(psi.to_dense().unwrap().data());
        let rhs = dense_op * v;
        for (a, b) in lhs.data().iter().zip(rhs.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn superpose_self_recovers_state() {
        let psi = MatrixProductState::random(5, 2, 3, 29).unwrap();
        let sum = MatrixProductState::superpose(&psi, &psi, c(0.5, 0.0), c(0.5, 0.0)).unwrap();
        assert!((sum.norm() - 1.0).abs() < 1e-12);
        assert!((fidelity(&sum, &psi) - 1.0).abs() < 1e-12);
        let (compressed, reports) = sum.compress(3, 0.0).unwrap();
        assert!((fidelity(&compressed, &psi) - 1.0).abs() < 1e-12);
        let total: f64 = reports.iter().map(|r| r.discarded_weight).sum();
        assert!(total < 1e-12);
    }

    #[test]
    fn superpose_matches_dense_sum() {
        let a = MatrixProductState::random(5, 2, 3, 31).unwrap();
        let b = MatrixProductState::random(5, 2, 3, 37).unwrap();
        let (ca, cb) = (c(0.3, -0.4), c(-0.1, 0.9));
        let s = MatrixProductState::superpose(&a, &b, ca, cb).unwrap();
        for (bond, (da, db)) in a.bond_dims().iter().zip(b.bond_dims()).enumerate() {
            assert_eq!(s.bond_dim(bond), da + db);
        }
        let lhs = s.to_dense().unwrap();
        let da = a.to_dense().unwrap();
        let db = b.to_dense().unwrap();
        for ((x, y), z) in lhs.data().iter().zip(da.data()).zip(db.data()) {
            assert!((x - (ca * y + cb * z)).norm() < 1e-12);
        }
    }

    #[test]
    fn compress_product_state_to_bond_one() {
        // redundantly embed a product state at bond dimension 4
        let psi =
            MatrixProductState::product_state(&[plus_x(), plus_x(), plus_x(), plus_x()]).unwrap();
        let blown = MatrixProductState::superpose(&psi, &psi, c(0.5, 0.0), c(0.5, 0.0)).unwrap();
        let blown2 =
            MatrixProductState::superpose(&blown, &blown, c(0.5, 0.0), c(0.5, 0.0)).unwrap();
        assert_eq!(blown2.max_bond_dim(), 4);
        let (out, reports) = blown2.compress(8, 1e-12).unwrap();
        assert_eq!(out.max_bond_dim(), 1);
        assert!((fidelity(&out, &psi) - 1.0).abs() < 1e-12);
        for r in reports {
            assert!(r.discarded_weight < 1e-12);
        }
    }

    #[test]
    fn compress_tracks_per_bond_svd_optimum() {
        let psi = MatrixProductState::random(8, 2, 8, 41).unwrap();
        let max_d = 4;
        let (out, _) = psi.compress(max_d, 0.0).unwrap();
        assert!(out.max_bond_dim() <= max_d);
        // dense optimal truncation at each bipartition
        let dv = psi.to_dense().unwrap();
        let mut lost_opt = 0.0;
        for bond in 0..7usize {
            let rows = 2usize.pow(bond as u32 + 1);
            let m = dv.reshape(vec![rows, 256 / rows]).unwrap().to_matrix(1).unwrap();
            let mut sv: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
            sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
            lost_opt += sv[max_d.min(sv.len())..].iter().map(|s| s * s).sum::<f64>();
        }
        let f = fidelity(&out, &psi);
        assert!(
            f * f >= 1.0 - lost_opt - 1e-8,
            "fidelity^2 {} below sequential optimum bound {}",
            f * f,
            1.0 - lost_opt
        );
    }

    #[test]
    fn normalize_accumulates_log_offset() {
        let psi = MatrixProductState::random(4, 2, 3, 43).unwrap();
        let mut scaled = psi.clone();
        scaled.set_site(0, scaled.site(0).scale(c(0.25, 0.0)));
        scaled.set_canonical_center(None);
        let mut renorm = scaled.clone();
        let absorbed = renorm.normalize().unwrap();
        assert!((absorbed - 0.25).abs() < 1e-12);
        assert!((renorm.norm() - 1.0).abs() < 1e-12);
        assert!((renorm.log_norm_offset() - 0.25f64.ln()).abs() < 1e-12);
    }
}
