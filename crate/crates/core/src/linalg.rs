//! Dense numerical kernels: Riccati solver, gain construction, matrix
//! exponential and spectral checks.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Linear time-invariant agent model `x' = Ax + Bu`, `y = Cx`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B must be {n}xp, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "C must be qx{n}, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(Self { a, b, c })
    }

    /// Model with full state output `C = I`.
    pub fn full_state(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, b, DMatrix::identity(n, n))
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// Feedback matrices shared by every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    /// Observer output-injection gain, present for output feedback.
    pub f: Option<DMatrix<f64>>,
}

impl GainSet {
    /// Solve the control ARE and, if requested, the dual observer ARE.
    pub fn design(model: &SystemModel, with_observer: bool) -> Result<Self> {
        let p = solve_care(&model.a, &model.b)?;
        let (k, gamma) = feedback_gains(&p, &model.b)?;
        let f = if with_observer {
            Some(observer_gain(&model.a, &model.c)?)
        } else {
            None
        };
        Ok(Self { p, k, gamma, f })
    }
}

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// `PA + A'P - PBB'P + I`.
pub fn care_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let g = b * b.transpose();
    p * a + a.transpose() * p - p * &g * p + DMatrix::identity(n, n)
}

/// Solve `A'X + XA = -M` through the Kronecker form. Meant for the small
/// state dimensions handled here.
pub fn solve_lyapunov(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DMatrix::from_column_slice(n * n, 1, (-m).as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Riccati("singular Lyapunov operator".into()))?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Matrix sign function by scaled Newton iteration.
fn matrix_sign(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m = h.nrows();
    let mut z = h.clone();
    for _ in 0..100 {
        let det = z.clone().lu().determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let scale = det.abs().powf(-1.0 / m as f64);
        let zs = &z * scale;
        let inv = zs.clone().try_inverse()?;
        let next = (zs + inv) * 0.5;
        if next.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let delta = (&next - &z).abs().row_sum().max();
        let size = next.abs().row_sum().max();
        z = next;
        if delta <= 1e-13 * size {
            return Some(z);
        }
    }
    // One unscaled Newton pass catches slow final convergence.
    let inv = z.clone().try_inverse()?;
    Some((&z + inv) * 0.5)
}

/// First unstable eigenvalue `l` of `A` with `rank [A - lI, B] < n`.
fn uncontrollable_unstable_mode(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<Complex<f64>> {
    let n = a.nrows();
    let scale = 1.0f64.max(a.norm()).max(b.norm());
    let eig = eigenvalues(a)?;
    eig.iter()
        .filter(|l| l.re >= -1e-9)
        .find(|&&l| {
            let pencil = DMatrix::from_fn(n, n + b.ncols(), |r, c| {
                if c < n {
                    let diag = if r == c { l } else { Complex::new(0.0, 0.0) };
                    Complex::new(a[(r, c)], 0.0) - diag
                } else {
                    Complex::new(b[(r, c - n)], 0.0)
                }
            });
            let sv = SVD::new(pencil, false, false).singular_values;
            sv.min() < 1e-7 * scale
        })
        .copied()
}

/// Stabilizing solution of `PA + A'P - PBB'P + I = 0`.
///
/// The stable invariant subspace of the Hamiltonian `[[A, -BB'], [-I, -A']]`
/// is extracted with the matrix sign function, then a few Newton-Kleinman
/// steps polish the residual. The result is accepted only if it is symmetric
/// positive definite, leaves `A - BB'P` Hurwitz and meets the residual bound;
/// anything else is reported as a stabilizability failure.
pub fn solve_care(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension(format!(
            "CARE needs square A and B with {n} rows"
        )));
    }
    match care_attempt(a, b) {
        Some(p) => Ok(p),
        None => Err(match uncontrollable_unstable_mode(a, b) {
            Some(l) => Error::NotStabilizable { re: l.re, im: l.im },
            None => Error::Riccati("no stabilizing solution found".into()),
        }),
    }
}

fn care_attempt(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let g = b * b.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&eye));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let w = matrix_sign(&h)?;
    // Stable subspace [I; P] lies in ker(W + I).
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(w.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n))
        .copy_from(&(-w.view((n, 0), (n, n))));
    let mut p = SVD::new(lhs, true, true).solve(&rhs, 1e-14).ok()?;
    p = (&p + p.transpose()) * 0.5;

    let mut best = frobenius(&care_residual(a, b, &p));
    for _ in 0..6 {
        if !best.is_finite() || best <= 1e-14 * frobenius(&p).max(1.0) {
            break;
        }
        let closed = a - &g * &p;
        let m = &eye + &p * &g * &p;
        let Ok(next) = solve_lyapunov(&closed, &m) else {
            break;
        };
        let next = (&next + next.transpose()) * 0.5;
        let res = frobenius(&care_residual(a, b, &next));
        if !(res < best) {
            break;
        }
        p = next;
        best = res;
    }

    if p.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if best > 1e-8 * frobenius(&p) {
        return None;
    }
    if min_eig_sym(&p).ok()? <= 0.0 {
        return None;
    }
    if !is_hurwitz(&(a - &g * &p)) {
        return None;
    }
    Some(p)
}

/// `K = -B'P` and `Gamma = K'K`.
pub fn feedback_gains(p: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if p.nrows() != p.ncols() || b.nrows() != p.nrows() {
        return Err(Error::Dimension(format!(
            "P is {}x{}, B is {}x{}",
            p.nrows(),
            p.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let k = -(b.transpose() * p);
    let gamma = k.transpose() * &k;
    Ok((k, gamma))
}

/// Solution of the dual ARE `P~A' + AP~ - P~C'CP~ + I = 0`.
pub fn solve_dual_care(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if c.ncols() != a.nrows() {
        return Err(Error::Dimension(format!(
            "C must have {} columns, got {}",
            a.nrows(),
            c.ncols()
        )));
    }
    solve_care(&a.transpose(), &c.transpose()).map_err(|e| match e {
        Error::NotStabilizable { re, im } => Error::NotDetectable { re, im },
        other => other,
    })
}

/// Observer gain `F = -P~C'`; `A + FC` is Hurwitz.
pub fn observer_gain(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pt = solve_dual_care(a, c)?;
    Ok(-(pt * c.transpose()))
}

// [13/13] Pade coefficients.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// `e^M` by scaling and squaring with a [13/13] Pade approximant.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension("expm needs a square matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("expm argument"));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let norm1 = m.abs().row_sum().max();
    if norm1 == 0.0 {
        return Ok(eye);
    }
    let s = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-s);
    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &eye * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &eye * b[0];
    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .ok_or(Error::NonFinite("expm denominator"))?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("expm result"));
    }
    Ok(r)
}

/// `e^{At}`.
pub fn matrix_exponential(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !t.is_finite() {
        return Err(Error::NonFinite("time"));
    }
    if t == 0.0 {
        return Ok(DMatrix::identity(a.nrows(), a.ncols()));
    }
    expm(&(a * t))
}

/// Eigenvalues of a square matrix.
///
/// The unshifted-deflation corner cases where the Schur iteration stalls
/// (shift matrices, for instance) are retried on the transpose and on a fixed
/// orthogonal similarity.
pub fn eigenvalues(m: &DMatrix<f64>) -> Option<DVector<Complex<f64>>> {
    let n = m.nrows();
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    let attempt = |x: DMatrix<f64>| Schur::try_new(x, 1e-15, 10_000).map(|s| s.complex_eigenvalues());
    if let Some(e) = attempt(m.clone()) {
        return Some(e);
    }
    if let Some(e) = attempt(m.transpose()) {
        return Some(e);
    }
    let v = DVector::from_fn(n, |i, _| 1.0 + i as f64);
    let q = DMatrix::identity(n, n) - (&v * v.transpose()) * (2.0 / v.norm_squared());
    attempt(&q * m * &q)
}

/// Largest real part over the spectrum; NaN if the eigenvalues cannot be
/// computed.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    match eigenvalues(m) {
        Some(e) => e.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max),
        None => f64::NAN,
    }
}

pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    m.is_square() && spectral_abscissa(m) < 0.0
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension("symmetric eigenproblem needs a square matrix".into()));
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-10 * m.abs().max().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

pub fn max_eig_sym(m: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(m)?;
    Ok(SymmetricEigen::new(m.clone()).eigenvalues.max())
}

pub fn min_eig_sym(m: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(m)?;
    Ok(SymmetricEigen::new(m.clone()).eigenvalues.min())
}

/// Induced 2-norm.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SVD::new(m.clone(), false, false).singular_values.max()
}
