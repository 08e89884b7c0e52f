//! Aggregative games: per-player partial gradients, the stacked operators
//! built from them, and the quadratic (EV charging) family.
//!
//! Each player `i` owns a decision `x_i ∈ R^m` and two costs `f_i(x_i, y)`
//! and `g_i(x_i, y)`, where `y` is the aggregate `x̄ = (1/N) Σ_j x_j` or a
//! local estimate of it. Games only ever see `(x_i, y)`, never the full
//! profile.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GameDims {
    pub n_players: usize,
    pub dim: usize,
}

impl GameDims {
    pub fn new(n_players: usize, dim: usize) -> Result<Self> {
        if n_players == 0 || dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "game dimensions must be positive, got N = {n_players}, m = {dim}"
            )));
        }
        Ok(Self { n_players, dim })
    }

    /// Length `N·m` of a stacked profile.
    pub fn stacked_len(&self) -> usize {
        self.n_players * self.dim
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.stacked_len() {
            return Err(Error::DimensionMismatch {
                expected: self.stacked_len(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}

/// Partial gradients of the player costs `f_i` (own objective) and `g_i`
/// (share of the social cost). Every callback writes an `R^m` vector into
/// `out` and must be a pure function of its arguments.
pub trait AggregativeGame: Send + Sync {
    fn dims(&self) -> GameDims;

    /// `∇_1 f_i(x_i, y)`
    fn grad1_f(&self, i: usize, x_i: &[f64], y: &[f64], out: &mut [f64]);
    /// `∇_2 f_i(x_i, y)`
    fn grad2_f(&self, i: usize, x_i: &[f64], y: &[f64], out: &mut [f64]);
    /// `∇_1 g_i(x_i, y)`
    fn grad1_g(&self, i: usize, x_i: &[f64], y: &[f64], out: &mut [f64]);
    /// `∇_2 g_i(x_i, y)`
    fn grad2_g(&self, i: usize, x_i: &[f64], y: &[f64], out: &mut [f64]);

    /// Scalar `f_i(x_i, y)`, if the game can evaluate it.
    fn f_value(&self, _i: usize, _x_i: &[f64], _y: &[f64]) -> Option<f64> {
        None
    }

    /// Scalar `g_i(x_i, y)`, if the game can evaluate it.
    fn g_value(&self, _i: usize, _x_i: &[f64], _y: &[f64]) -> Option<f64> {
        None
    }
}

/// Pseudo-gradient `F(x)`: player `i`'s block is
/// `∇_1 f_i(x_i, x̄) + (1/N) ∇_2 f_i(x_i, x̄)`.
pub fn pseudo_gradient<G: AggregativeGame + ?Sized>(game: &G, x: &[f64]) -> Result<Vec<f64>> {
    let dims = game.dims();
    dims.check(x)?;
    let m = dims.dim;
    let inv_n = 1.0 / dims.n_players as f64;
    let xbar = linalg::block_mean(x, m);
    let mut out = vec![0.0; x.len()];
    let mut tmp = vec![0.0; m];
    for (i, (x_i, block)) in x.chunks_exact(m).zip(out.chunks_exact_mut(m)).enumerate() {
        game.grad1_f(i, x_i, &xbar, block);
        game.grad2_f(i, x_i, &xbar, &mut tmp);
        for (b, t) in block.iter_mut().zip(&tmp) {
            *b += inv_n * t;
        }
    }
    Ok(out)
}

/// Gradient of the social cost `g(x) = Σ_i g_i(x_i, x̄)`: player `i`'s block
/// is `∇_1 g_i(x_i, x̄) + (1/N) Σ_j ∇_2 g_j(x_j, x̄)`.
pub fn social_gradient<G: AggregativeGame + ?Sized>(game: &G, x: &[f64]) -> Result<Vec<f64>> {
    let dims = game.dims();
    dims.check(x)?;
    let m = dims.dim;
    let xbar = linalg::block_mean(x, m);
    let mut coupling = vec![0.0; m];
    let mut tmp = vec![0.0; m];
    for (j, x_j) in x.chunks_exact(m).enumerate() {
        game.grad2_g(j, x_j, &xbar, &mut tmp);
        for (c, t) in coupling.iter_mut().zip(&tmp) {
            *c += t;
        }
    }
    let inv_n = 1.0 / dims.n_players as f64;
    let mut out = vec![0.0; x.len()];
    for (i, (x_i, block)) in x.chunks_exact(m).zip(out.chunks_exact_mut(m)).enumerate() {
        game.grad1_g(i, x_i, &xbar, block);
        for (b, c) in block.iter_mut().zip(&coupling) {
            *b += inv_n * c;
        }
    }
    Ok(out)
}

/// Social cost `Σ_i g_i(x_i, x̄)`, when the game exposes scalar evaluators.
pub fn social_cost<G: AggregativeGame + ?Sized>(game: &G, x: &[f64]) -> Result<Option<f64>> {
    let dims = game.dims();
    dims.check(x)?;
    let xbar = linalg::block_mean(x, dims.dim);
    let mut total = 0.0;
    for (i, x_i) in x.chunks_exact(dims.dim).enumerate() {
        match game.g_value(i, x_i, &xbar) {
            Some(v) => total += v,
            None => return Ok(None),
        }
    }
    Ok(Some(total))
}

/// Lipschitz and strong-convexity constants used by the step-size bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameConstants {
    /// Lipschitz constant of `F` and of the two-argument f-map.
    pub l_f: f64,
    /// Lipschitz constant of `∇g` and of the two-argument g-map.
    pub l_1: f64,
    /// Lipschitz constant of the stacked `∇_2 g`.
    pub l_2: f64,
    /// Strong-convexity modulus of `g`.
    pub mu_g: f64,
}

/// A game whose costs are all identically zero.
#[derive(Debug, Clone, Copy)]
pub struct ZeroGame {
    pub dims: GameDims,
}

impl AggregativeGame for ZeroGame {
    fn dims(&self) -> GameDims {
        self.dims
    }
    fn grad1_f(&self, _: usize, _: &[f64], _: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn grad2_f(&self, _: usize, _: &[f64], _: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn grad1_g(&self, _: usize, _: &[f64], _: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn grad2_g(&self, _: usize, _: &[f64], _: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn f_value(&self, _: usize, _: &[f64], _: &[f64]) -> Option<f64> {
        Some(0.0)
    }
    fn g_value(&self, _: usize, _: &[f64], _: &[f64]) -> Option<f64> {
        Some(0.0)
    }
}

/// Quadratic aggregative game with a load-curtailment cost and an affine
/// price:
///
/// ```text
/// f_i(x_i, y) = ½ (1ᵀx_i − d_i)² + (C_1 y + b_1)ᵀ x_i
/// g_i(x_i, y) = ½ x_iᵀ U x_i + (C_2i y + b_2)ᵀ x_i
/// ```
///
/// The pseudo-gradient is affine, `F(x) = 𝐅x − 𝐝`, and `g` is a quadratic
/// with Hessian `𝐔` and linear term `𝐛 = 1_N ⊗ b_2`.
#[derive(Debug, Clone)]
pub struct QuadraticGame {
    dims: GameDims,
    d: Vec<f64>,
    c1: DMatrix<f64>,
    b1: DVector<f64>,
    u: DMatrix<f64>,
    u_sym: DMatrix<f64>,
    c2: Vec<DMatrix<f64>>,
    b2: DVector<f64>,
}

fn check_square(name: &str, a: &DMatrix<f64>, m: usize) -> Result<()> {
    if a.nrows() != m || a.ncols() != m {
        return Err(Error::ShapeMismatch(format!(
            "{name} must be {m}x{m}, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

fn check_len(name: &str, len: usize, expected: usize) -> Result<()> {
    if len != expected {
        return Err(Error::ShapeMismatch(format!(
            "{name} must have length {expected}, got {len}"
        )));
    }
    Ok(())
}

/// Builds a [`QuadraticGame`] after checking every shape against `(n, m)`.
#[allow(clippy::too_many_arguments)]
pub fn ev_game(
    n: usize,
    m: usize,
    d: Vec<f64>,
    c1: DMatrix<f64>,
    b1: Vec<f64>,
    u: DMatrix<f64>,
    c2: Vec<DMatrix<f64>>,
    b2: Vec<f64>,
) -> Result<QuadraticGame> {
    let dims = GameDims::new(n, m)?;
    check_len("d", d.len(), n)?;
    check_square("C1", &c1, m)?;
    check_len("b1", b1.len(), m)?;
    check_square("U", &u, m)?;
    check_len("C2", c2.len(), n)?;
    for (i, c) in c2.iter().enumerate() {
        check_square(&format!("C2[{i}]"), c, m)?;
    }
    check_len("b2", b2.len(), m)?;
    let values = d
        .iter()
        .chain(c1.iter())
        .chain(&b1)
        .chain(u.iter())
        .chain(c2.iter().flat_map(|c| c.iter()))
        .chain(&b2);
    if values.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::ShapeMismatch(
            "game parameters must be finite".into(),
        ));
    }
    let u_sym = linalg::sym(&u);
    Ok(QuadraticGame {
        dims,
        d,
        c1,
        b1: DVector::from_vec(b1),
        u,
        u_sym,
        c2,
        b2: DVector::from_vec(b2),
    })
}

/// Demands of the five-household charging example.
pub const EV_PAPER_DEMANDS: [f64; 5] = [1.0, 0.5, 0.8, 0.9, 0.6];
/// Diagonals of `C_21, …, C_25`, three entries per player.
pub const EV_PAPER_C2_DIAGONALS: [f64; 15] = [
    0.1, 0.2, 0.3, 0.2, 0.3, 0.2, 0.4, 0.3, 0.1, 0.4, 0.1, 0.2, 0.1, 0.1, 0.1,
];

/// The five-player, three-period charging game: price `0.15·x̄` in the
/// first period and a flat `0.15` in the other two, `U = diag(3, 4, 2)` and
/// `b_2 = 0.5·1`. Merely monotone, so the NE set is not a singleton.
pub fn ev_paper() -> QuadraticGame {
    let (n, m) = (5, 3);
    let c2 = EV_PAPER_C2_DIAGONALS
        .chunks_exact(m)
        .map(|diag| DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
        .collect();
    ev_game(
        n,
        m,
        EV_PAPER_DEMANDS.to_vec(),
        DMatrix::from_diagonal(&DVector::from_column_slice(&[0.15, 0.0, 0.0])),
        vec![0.0, 0.15, 0.15],
        DMatrix::from_diagonal(&DVector::from_column_slice(&[3.0, 4.0, 2.0])),
        c2,
        vec![0.5; m],
    )
    .expect("paper instance shapes are consistent")
}

/// Random monotone quadratic game with strongly convex social cost.
///
/// `C_1` is symmetric positive semidefinite (so `F` is monotone), `U` is
/// `I + BBᵀ` and the `C_2i` entries are small enough that the aggregate
/// coupling cannot cancel `U`.
pub fn random_quadratic_game(n: usize, m: usize, seed: u64) -> Result<QuadraticGame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let a = DMatrix::from_fn(m, m, |_, _| uniform(-0.5, 0.5));
    let c1 = (&a * a.transpose()) * 0.5;
    let b1: Vec<f64> = (0..m).map(|_| uniform(-0.5, 0.5)).collect();
    let d: Vec<f64> = (0..n).map(|_| uniform(0.0, 2.0)).collect();
    let b = DMatrix::from_fn(m, m, |_, _| uniform(-0.5, 0.5));
    let u = DMatrix::identity(m, m) + &b * b.transpose();
    let c2 = (0..n)
        .map(|_| DMatrix::from_fn(m, m, |_, _| uniform(0.0, 0.4 / m as f64)))
        .collect();
    let b2: Vec<f64> = (0..m).map(|_| uniform(-0.5, 0.5)).collect();
    ev_game(n, m, d, c1, b1, u, c2, b2)
}

impl QuadraticGame {
    pub fn d(&self) -> &[f64] {
        &self.d
    }
    pub fn c1(&self) -> &DMatrix<f64> {
        &self.c1
    }
    pub fn b1(&self) -> &[f64] {
        self.b1.as_slice()
    }
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }
    pub fn c2(&self) -> &[DMatrix<f64>] {
        &self.c2
    }
    pub fn b2(&self) -> &[f64] {
        self.b2.as_slice()
    }

    fn n_inv(&self) -> f64 {
        1.0 / self.dims.n_players as f64
    }

    /// `𝐅` in `F(x) = 𝐅x − 𝐝`; block `(i, j)` is
    /// `δ_ij (11ᵀ + C_1ᵀ/N) + C_1/N`.
    pub fn stacked_f(&self) -> DMatrix<f64> {
        let GameDims {
            n_players: n,
            dim: m,
        } = self.dims;
        let own = DMatrix::from_element(m, m, 1.0) + self.c1.transpose() * self.n_inv();
        let cross = &self.c1 * self.n_inv();
        let mut f = DMatrix::zeros(n * m, n * m);
        for i in 0..n {
            for j in 0..n {
                let mut block = f.view_mut((i * m, j * m), (m, m));
                block.copy_from(&cross);
                if i == j {
                    block += &own;
                }
            }
        }
        f
    }

    /// `𝐝 = d ⊗ 1_m − 1_N ⊗ b_1`.
    pub fn stacked_d(&self) -> DVector<f64> {
        let m = self.dims.dim;
        DVector::from_fn(self.dims.stacked_len(), |r, _| {
            self.d[r / m] - self.b1[r % m]
        })
    }

    /// Hessian `𝐔` of the social cost; block `(i, j)` is
    /// `δ_ij sym(U) + (C_2i + C_2jᵀ)/N`.
    pub fn stacked_u(&self) -> DMatrix<f64> {
        let GameDims {
            n_players: n,
            dim: m,
        } = self.dims;
        let mut h = DMatrix::zeros(n * m, n * m);
        for i in 0..n {
            for j in 0..n {
                let mut block = h.view_mut((i * m, j * m), (m, m));
                block.copy_from(&((&self.c2[i] + self.c2[j].transpose()) * self.n_inv()));
                if i == j {
                    block += &self.u_sym;
                }
            }
        }
        h
    }

    /// `𝐛 = 1_N ⊗ b_2`.
    pub fn stacked_b(&self) -> DVector<f64> {
        let m = self.dims.dim;
        DVector::from_fn(self.dims.stacked_len(), |r, _| self.b2[r % m])
    }

    /// Jacobian `[A_x  A_y]` of `(x, y) ↦ ∇_1 f(x, y) + (1/N) ∇_2 f(x, y)`.
    fn two_arg_f_jacobian(&self) -> DMatrix<f64> {
        let GameDims {
            n_players: n,
            dim: m,
        } = self.dims;
        let ax = DMatrix::from_element(m, m, 1.0) + self.c1.transpose() * self.n_inv();
        let mut jac = DMatrix::zeros(n * m, 2 * n * m);
        for i in 0..n {
            jac.view_mut((i * m, i * m), (m, m)).copy_from(&ax);
            jac.view_mut((i * m, n * m + i * m), (m, m))
                .copy_from(&self.c1);
        }
        jac
    }

    /// Jacobian of `(x, y) ↦ ∇_1 g(x, y) + (11ᵀ/N ⊗ I) ∇_2 g(x, y)`.
    fn two_arg_g_jacobian(&self) -> DMatrix<f64> {
        let GameDims {
            n_players: n,
            dim: m,
        } = self.dims;
        let mut jac = DMatrix::zeros(n * m, 2 * n * m);
        for i in 0..n {
            for j in 0..n {
                let mut block = jac.view_mut((i * m, j * m), (m, m));
                block.copy_from(&(self.c2[j].transpose() * self.n_inv()));
                if i == j {
                    block += &self.u_sym;
                }
            }
            jac.view_mut((i * m, n * m + i * m), (m, m))
                .copy_from(&self.c2[i]);
        }
        jac
    }

    /// Jacobian of `∇_2 g` with respect to `x`; it does not depend on `y`.
    fn grad2_g_jacobian(&self) -> DMatrix<f64> {
        let GameDims {
            n_players: n,
            dim: m,
        } = self.dims;
        let mut jac = DMatrix::zeros(n * m, n * m);
        for i in 0..n {
            jac.view_mut((i * m, i * m), (m, m))
                .copy_from(&self.c2[i].transpose());
        }
        jac
    }
}

fn write_mat_vec(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = a.row(r).iter().zip(x).map(|(p, q)| p * q).sum();
    }
}

fn add_mat_vec(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o += a.row(r).iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
    }
}

fn write_mat_t_vec(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (c, o) in out.iter_mut().enumerate() {
        *o = a.column(c).iter().zip(x).map(|(p, q)| p * q).sum();
    }
}

fn quad_form(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let mut ax = vec![0.0; x.len()];
    write_mat_vec(a, x, &mut ax);
    linalg::dot(x, &ax)
}

impl AggregativeGame for QuadraticGame {
    fn dims(&self) -> GameDims {
        self.dims
    }

    fn grad1_f(&self, i: usize, x_i: &[f64], y: &[f64], out: &mut [f64]) {
        let excess = x_i.iter().sum::<f64>() - self.d[i];
        write_mat_vec(&self.c1, y, out);
        for (o, b) in out.iter_mut().zip(self.b1.iter()) {
            *o += excess + b;
        }
    }

    fn grad2_f(&self, _i: usize, x_i: &[f64], _y: &[f64], out: &mut [f64]) {
        write_mat_t_vec(&self.c1, x_i, out);
    }

    fn grad1_g(&self, i: usize, x_i: &[f64], y: &[f64], out: &mut [f64]) {
        write_mat_vec(&self.u_sym, x_i, out);
        add_mat_vec(&self.c2[i], y, out);
        for (o, b) in out.iter_mut().zip(self.b2.iter()) {
            *o += b;
        }
    }

    fn grad2_g(&self, i: usize, x_i: &[f64], _y: &[f64], out: &mut [f64]) {
        write_mat_t_vec(&self.c2[i], x_i, out);
    }

    fn f_value(&self, i: usize, x_i: &[f64], y: &[f64]) -> Option<f64> {
        let excess = x_i.iter().sum::<f64>() - self.d[i];
        let mut price = vec![0.0; y.len()];
        write_mat_vec(&self.c1, y, &mut price);
        let linear: f64 = price
            .iter()
            .zip(self.b1.iter())
            .zip(x_i)
            .map(|((p, b), x)| (p + b) * x)
            .sum();
        Some(0.5 * excess * excess + linear)
    }

    fn g_value(&self, i: usize, x_i: &[f64], y: &[f64]) -> Option<f64> {
        let mut shift = vec![0.0; y.len()];
        write_mat_vec(&self.c2[i], y, &mut shift);
        let linear: f64 = shift
            .iter()
            .zip(self.b2.iter())
            .zip(x_i)
            .map(|((s, b), x)| (s + b) * x)
            .sum();
        Some(0.5 * quad_form(&self.u, x_i) + linear)
    }
}

/// Exact constants of a quadratic game from matrix norms.
pub fn estimate_constants(game: &QuadraticGame) -> Result<GameConstants> {
    let hessian = game.stacked_u();
    let mu_g = hessian.clone().symmetric_eigenvalues().min();
    if mu_g <= 0.0 {
        return Err(Error::NotStronglyConvex { min_eig: mu_g });
    }
    let l_f = linalg::spectral_norm(&game.stacked_f())
        .max(linalg::spectral_norm(&game.two_arg_f_jacobian()));
    let l_1 =
        linalg::spectral_norm(&hessian).max(linalg::spectral_norm(&game.two_arg_g_jacobian()));
    let l_2 = linalg::spectral_norm(&game.grad2_g_jacobian());
    Ok(GameConstants {
        l_f,
        l_1,
        l_2,
        mu_g,
    })
}

/// Worst relative finite-difference deviation seen for each callback.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradientReport {
    pub trials: usize,
    pub grad1_f: f64,
    pub grad2_f: f64,
    pub grad1_g: f64,
    pub grad2_g: f64,
}

impl GradientReport {
    pub fn max_deviation(&self) -> f64 {
        self.grad1_f
            .max(self.grad2_f)
            .max(self.grad1_g)
            .max(self.grad2_g)
    }
}

pub const GRADIENT_CHECK_STEP: f64 = 1e-6;
pub const GRADIENT_CHECK_TOL: f64 = 1e-5;

/// Central differences of `f_i` and `g_i` in both arguments against the
/// gradient callbacks, on `trials` random points drawn from `[-1, 1]`.
pub fn check_gradients<G: AggregativeGame + ?Sized>(
    game: &G,
    trials: usize,
    seed: u64,
) -> Result<GradientReport> {
    let dims = game.dims();
    let m = dims.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradientReport {
        trials,
        ..Default::default()
    };
    let mut worst: Option<(usize, &'static str, f64)> = None;
    let mut analytic = vec![0.0; m];
    for _ in 0..trials {
        let i = rng.random_range(0..dims.n_players);
        let x_i: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f: Eval = &|a, b| game.f_value(i, a, b);
        let g: Eval = &|a, b| game.g_value(i, a, b);
        let checks: [(&'static str, Eval, Grad, bool); 4] = [
            ("grad1_f", f, &|a, b, o| game.grad1_f(i, a, b, o), true),
            ("grad2_f", f, &|a, b, o| game.grad2_f(i, a, b, o), false),
            ("grad1_g", g, &|a, b, o| game.grad1_g(i, a, b, o), true),
            ("grad2_g", g, &|a, b, o| game.grad2_g(i, a, b, o), false),
        ];
        for (name, eval, grad, first_arg) in checks {
            grad(&x_i, &y, &mut analytic);
            let numeric = central_difference(eval, &x_i, &y, first_arg)?;
            let err = linalg::dist(&analytic, &numeric);
            let scale = linalg::norm(&analytic).max(linalg::norm(&numeric)).max(1.0);
            let deviation = err / scale;
            let slot = match name {
                "grad1_f" => &mut report.grad1_f,
                "grad2_f" => &mut report.grad2_f,
                "grad1_g" => &mut report.grad1_g,
                _ => &mut report.grad2_g,
            };
            *slot = slot.max(deviation);
            if deviation > GRADIENT_CHECK_TOL && worst.is_none_or(|w| deviation > w.2) {
                worst = Some((i, name, deviation));
            }
        }
    }
    match worst {
        Some((player, callback, deviation)) => Err(Error::GradientMismatch {
            player,
            callback,
            deviation,
        }),
        None => Ok(report),
    }
}

type Eval<'a> = &'a dyn Fn(&[f64], &[f64]) -> Option<f64>;
type Grad<'a> = &'a dyn Fn(&[f64], &[f64], &mut [f64]);

fn central_difference(eval: Eval<'_>, x: &[f64], y: &[f64], first_arg: bool) -> Result<Vec<f64>> {
    let h = GRADIENT_CHECK_STEP;
    let base = if first_arg { x } else { y };
    let mut out = vec![0.0; base.len()];
    let mut probe = base.to_vec();
    for (k, o) in out.iter_mut().enumerate() {
        let orig = probe[k];
        probe[k] = orig + h;
        let plus = if first_arg {
            eval(&probe, y)
        } else {
            eval(x, &probe)
        };
        probe[k] = orig - h;
        let minus = if first_arg {
            eval(&probe, y)
        } else {
            eval(x, &probe)
        };
        probe[k] = orig;
        match (plus, minus) {
            (Some(p), Some(q)) => *o = (p - q) / (2.0 * h),
            _ => return Err(Error::MissingEvaluators),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_game(c: f64, b: f64, d: f64) -> QuadraticGame {
        ev_game(
            1,
            1,
            vec![d],
            DMatrix::from_element(1, 1, c),
            vec![b],
            DMatrix::from_element(1, 1, 1.0),
            vec![DMatrix::zeros(1, 1)],
            vec![0.0],
        )
        .unwrap()
    }

    #[test]
    fn ev_pseudo_gradient_at_origin_is_minus_d() {
        let game = ev_paper();
        let f0 = pseudo_gradient(&game, &[0.0; 15]).unwrap();
        for i in 0..5 {
            for t in 0..3 {
                let expected = game.b1()[t] - EV_PAPER_DEMANDS[i];
                assert_abs_diff_eq!(f0[i * 3 + t], expected, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn scalar_pseudo_gradient_closed_form() {
        let (c, b, d) = (0.15, 0.2, 1.0);
        let game = scalar_game(c, b, d);
        let x = 0.7;
        let f = pseudo_gradient(&game, &[x]).unwrap();
        assert_abs_diff_eq!(f[0], (1.0 + 2.0 * c) * x - (d - b), epsilon = 1e-14);
        let root = (d - b) / (1.0 + 2.0 * c);
        assert_abs_diff_eq!(
            pseudo_gradient(&game, &[root]).unwrap()[0],
            0.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn pseudo_gradient_is_deterministic() {
        let game = random_quadratic_game(4, 3, 9).unwrap();
        let x: Vec<f64> = (0..12).map(|k| (k as f64).sin()).collect();
        assert_eq!(
            pseudo_gradient(&game, &x).unwrap(),
            pseudo_gradient(&game, &x).unwrap()
        );
    }

    #[test]
    fn dimension_mismatch_reported() {
        let game = ev_paper();
        assert!(matches!(
            pseudo_gradient(&game, &[0.0; 14]),
            Err(Error::DimensionMismatch {
                expected: 15,
                actual: 14
            })
        ));
        assert!(social_gradient(&game, &[0.0; 16]).is_err());
    }

    #[test]
    fn ev_social_gradient_at_origin_is_b() {
        let game = ev_paper();
        let g0 = social_gradient(&game, &[0.0; 15]).unwrap();
        for v in g0 {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn identity_social_cost_has_identity_gradient() {
        let m = 2;
        let game = ev_game(
            3,
            m,
            vec![1.0, 2.0, 3.0],
            DMatrix::zeros(m, m),
            vec![0.0; m],
            DMatrix::identity(m, m),
            vec![DMatrix::zeros(m, m); 3],
            vec![0.0; m],
        )
        .unwrap();
        let x = [0.3, -1.2, 2.0, 0.5, -0.7, 0.1];
        let g = social_gradient(&game, &x).unwrap();
        for (a, b) in g.iter().zip(&x) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let c = estimate_constants(&game).unwrap();
        assert_abs_diff_eq!(c.mu_g, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.l_2, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn social_gradient_matches_finite_differences_of_social_cost() {
        let game = random_quadratic_game(3, 2, 5).unwrap();
        let x: Vec<f64> = (0..6).map(|k| 0.3 * k as f64 - 0.8).collect();
        let analytic = social_gradient(&game, &x).unwrap();
        let h = 1e-6;
        for k in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (social_cost(&game, &xp).unwrap().unwrap()
                - social_cost(&game, &xm).unwrap().unwrap())
                / (2.0 * h);
            assert!((fd - analytic[k]).abs() <= 1e-5 * analytic[k].abs().max(1.0));
        }
    }

    #[test]
    fn ev_paper_shape_errors() {
        let err = ev_game(
            2,
            2,
            vec![1.0],
            DMatrix::zeros(2, 2),
            vec![0.0; 2],
            DMatrix::identity(2, 2),
            vec![DMatrix::zeros(2, 2); 2],
            vec![0.0; 2],
        );
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
        let err = ev_game(
            2,
            2,
            vec![1.0, 1.0],
            DMatrix::zeros(2, 2),
            vec![0.0; 2],
            DMatrix::identity(3, 3),
            vec![DMatrix::zeros(2, 2); 2],
            vec![0.0; 2],
        );
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn ev_paper_constants() {
        let game = ev_paper();
        let c = estimate_constants(&game).unwrap();
        // Eigen-decomposition of the Hessian, computed once and frozen.
        assert_abs_diff_eq!(c.mu_g, EV_PAPER_MU_G, epsilon = 1e-10);
        assert!(c.mu_g > 0.0);
        assert!(c.mu_g <= c.l_1);
    }

    // λ_min of the paper-instance Hessian, cross-checked with numpy.
    const EV_PAPER_MU_G: f64 = 1.9850641131038194;

    #[test]
    fn scalar_lipschitz_lower_bound() {
        let c = estimate_constants(&scalar_game(0.15, 0.0, 1.0)).unwrap();
        assert!(c.l_f >= 1.3 - 1e-12);
        assert_abs_diff_eq!(c.l_f, 1.3, epsilon = 1e-12);
    }

    #[test]
    fn not_strongly_convex_rejected() {
        let game = ev_game(
            1,
            2,
            vec![1.0],
            DMatrix::zeros(2, 2),
            vec![0.0; 2],
            DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.0])),
            vec![DMatrix::zeros(2, 2)],
            vec![0.0; 2],
        )
        .unwrap();
        assert!(matches!(
            estimate_constants(&game),
            Err(Error::NotStronglyConvex { .. })
        ));
    }

    #[test]
    fn gradient_check_passes_on_paper_instance() {
        let report = check_gradients(&ev_paper(), 20, 1).unwrap();
        assert!(report.max_deviation() <= GRADIENT_CHECK_TOL);
    }

    #[test]
    fn gradient_check_zero_game() {
        let game = ZeroGame {
            dims: GameDims::new(3, 2).unwrap(),
        };
        let report = check_gradients(&game, 10, 3).unwrap();
        assert_eq!(report.max_deviation(), 0.0);
    }

    struct FlippedGrad2G(QuadraticGame);

    impl AggregativeGame for FlippedGrad2G {
        fn dims(&self) -> GameDims {
            self.0.dims()
        }
        fn grad1_f(&self, i: usize, x: &[f64], y: &[f64], o: &mut [f64]) {
            self.0.grad1_f(i, x, y, o)
        }
        fn grad2_f(&self, i: usize, x: &[f64], y: &[f64], o: &mut [f64]) {
            self.0.grad2_f(i, x, y, o)
        }
        fn grad1_g(&self, i: usize, x: &[f64], y: &[f64], o: &mut [f64]) {
            self.0.grad1_g(i, x, y, o)
        }
        fn grad2_g(&self, i: usize, x: &[f64], y: &[f64], o: &mut [f64]) {
            self.0.grad2_g(i, x, y, o);
            o.iter_mut().for_each(|v| *v = -*v);
        }
        fn f_value(&self, i: usize, x: &[f64], y: &[f64]) -> Option<f64> {
            self.0.f_value(i, x, y)
        }
        fn g_value(&self, i: usize, x: &[f64], y: &[f64]) -> Option<f64> {
            self.0.g_value(i, x, y)
        }
    }

    #[test]
    fn gradient_check_catches_sign_error() {
        let err = check_gradients(&FlippedGrad2G(ev_paper()), 20, 1).unwrap_err();
        assert!(matches!(
            err,
            Error::GradientMismatch {
                callback: "grad2_g",
                ..
            }
        ));
    }

    #[test]
    fn gradient_check_needs_evaluators() {
        struct NoEval(ZeroGame);
        impl AggregativeGame for NoEval {
            fn dims(&self) -> GameDims {
                self.0.dims
            }
            fn grad1_f(&self, _: usize, _: &[f64], _: &[f64], o: &mut [f64]) {
                o.fill(0.0)
            }
            fn grad2_f(&self, _: usize, _: &[f64], _: &[f64], o: &mut [f64]) {
                o.fill(0.0)
            }
            fn grad1_g(&self, _: usize, _: &[f64], _: &[f64], o: &mut [f64]) {
                o.fill(0.0)
            }
            fn grad2_g(&self, _: usize, _: &[f64], _: &[f64], o: &mut [f64]) {
                o.fill(0.0)
            }
        }
        let game = NoEval(ZeroGame {
            dims: GameDims::new(1, 1).unwrap(),
        });
        assert!(matches!(
            check_gradients(&game, 1, 0),
            Err(Error::MissingEvaluators)
        ));
    }
}
