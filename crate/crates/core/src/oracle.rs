//! Centralized reference solutions: Tikhonov-regularized equilibria, the
//! socially optimal equilibrium of quadratic games, and equilibrium
//! residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::{
    pseudo_gradient, social_gradient, AggregativeGame, GameConstants, QuadraticGame,
};
use crate::linalg;
use crate::solver::StepSchedule;

/// Unique zero `x*_η` of the regularized map `F + η∇g`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedSolution {
    pub eta: f64,
    pub x_star_eta: Vec<f64>,
    /// `‖F(x*_η) + η∇g(x*_η)‖`
    pub residual: f64,
    /// Fixed-point iterations spent; zero for the direct linear solve.
    pub iterations_used: usize,
}

/// `‖F(x) + η∇g(x)‖`, evaluated through the game callbacks.
pub fn regularized_residual<G: AggregativeGame + ?Sized>(
    game: &G,
    eta: f64,
    x: &[f64],
) -> Result<f64> {
    let f = pseudo_gradient(game, x)?;
    let g = social_gradient(game, x)?;
    Ok(f.iter()
        .zip(&g)
        .map(|(a, b)| (a + eta * b).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Damped fixed-point iteration `x ← x − τ(F(x) + η∇g(x))` with
/// `τ = ημ_g/(L_F + ηL_1)²`, which contracts for any strongly monotone,
/// Lipschitz regularized map.
pub fn solve_regularized_vi<G: AggregativeGame + ?Sized>(
    game: &G,
    constants: &GameConstants,
    eta: f64,
    tol: f64,
    max_iters: usize,
    start: &[f64],
) -> Result<RegularizedSolution> {
    if eta.is_nan() || eta <= 0.0 || constants.mu_g.is_nan() || constants.mu_g <= 0.0 {
        return Err(Error::NotStronglyConvex {
            min_eig: eta * constants.mu_g,
        });
    }
    game.dims().check(start)?;
    let lip = constants.l_f + eta * constants.l_1;
    let tau = eta * constants.mu_g / (lip * lip);
    let mut x = start.to_vec();
    let mut residual = f64::INFINITY;
    for iter in 0..=max_iters {
        let f = pseudo_gradient(game, &x)?;
        let g = social_gradient(game, &x)?;
        let map: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + eta * b).collect();
        residual = linalg::norm(&map);
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            return Ok(RegularizedSolution {
                eta,
                x_star_eta: x,
                residual,
                iterations_used: iter,
            });
        }
        for (xi, mi) in x.iter_mut().zip(&map) {
            *xi -= tau * mi;
        }
    }
    Err(Error::NoConvergence {
        max_iters,
        residual,
    })
}

/// Direct solve of `(𝐅 + η𝐔)x = 𝐝 − η𝐛` for a quadratic game.
pub fn solve_regularized_quadratic(game: &QuadraticGame, eta: f64) -> Result<RegularizedSolution> {
    if eta.is_nan() || eta <= 0.0 {
        return Err(Error::NotStronglyConvex { min_eig: eta });
    }
    let lhs = game.stacked_f() + game.stacked_u() * eta;
    let rhs = game.stacked_d() - game.stacked_b() * eta;
    let x = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularKkt("regularized system is singular".into()))?;
    let x_star_eta: Vec<f64> = x.iter().copied().collect();
    let residual = regularized_residual(game, eta, &x_star_eta)?;
    Ok(RegularizedSolution {
        eta,
        x_star_eta,
        residual,
        iterations_used: 0,
    })
}

/// Socially optimal equilibrium of a quadratic game.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalNE {
    pub x_star: Vec<f64>,
    /// Multipliers `λ` with `𝐔x* + 𝐛 + 𝐅ᵀλ = 0`.
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
    /// `𝐅` was rank deficient: `x*` came from the null-space reduction and
    /// `λ` is the minimum-norm multiplier.
    pub rank_deficient: bool,
}

/// Relative singular-value cutoff used for rank decisions.
const RANK_TOL: f64 = 1e-10;
/// Absolute feasibility tolerance for the equality constraints.
const FEASIBILITY_TOL: f64 = 1e-9;

/// `min ½xᵀHx + cᵀx  s.t.  Ax = b`.
///
/// With `A` of full row rank the saddle system
/// `[[H, Aᵀ], [A, 0]] [x; λ] = [−c; b]` is solved directly. Otherwise the
/// problem is reduced to the null space of `A` through an SVD and `λ` is the
/// least-squares multiplier.
pub fn solve_equality_qp(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<OptimalNE> {
    let n = h.nrows();
    let rows = a.nrows();
    if h.ncols() != n || c.len() != n || a.ncols() != n || b.len() != rows {
        return Err(Error::ShapeMismatch(format!(
            "QP shapes: H {}x{}, c {}, A {}x{}, b {}",
            h.nrows(),
            h.ncols(),
            c.len(),
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let h = linalg::sym(h);

    // Pad to at least n rows so the SVD exposes a full right basis.
    let padded_rows = rows.max(n);
    let mut padded = DMatrix::zeros(padded_rows, n);
    padded.view_mut((0, 0), (rows, n)).copy_from(a);
    let svd = padded.svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.max();
    let rank = sigma
        .iter()
        .filter(|&&s| s > RANK_TOL * sigma_max.max(1.0))
        .count();

    if rank == rows {
        let mut kkt = DMatrix::zeros(n + rows, n + rows);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        kkt.view_mut((0, n), (n, rows)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (rows, n)).copy_from(a);
        let mut rhs = DVector::zeros(n + rows);
        rhs.rows_mut(0, n).copy_from(&(-c));
        rhs.rows_mut(n, rows).copy_from(b);
        if let Some(sol) = kkt.lu().solve(&rhs) {
            let x = sol.rows(0, n).into_owned();
            let lambda = sol.rows(n, rows).into_owned();
            if x.iter().chain(lambda.iter()).all(|v| v.is_finite()) {
                return Ok(finish(&h, c, a, b, x, lambda, false));
            }
        }
    }

    // Null-space method: x = x_p + Z z.
    let mut x_p = DVector::zeros(n);
    for k in 0..rank {
        let coeff = u.column(k).rows(0, rows).dot(b) / sigma[k];
        x_p += v_t.row(k).transpose() * coeff;
    }
    let infeasibility = (a * &x_p - b).norm();
    if infeasibility > FEASIBILITY_TOL * b.norm().max(1.0) {
        return Err(Error::SingularKkt(format!(
            "equality constraints are inconsistent (least-squares residual {infeasibility:e})"
        )));
    }
    let x = if rank < n {
        let z_basis = v_t.rows(rank, n - rank).transpose();
        let reduced_h = z_basis.transpose() * &h * &z_basis;
        let reduced_g = -(z_basis.transpose() * (&h * &x_p + c));
        let z = reduced_h
            .cholesky()
            .map(|ch| ch.solve(&reduced_g))
            .ok_or_else(|| {
                Error::SingularKkt("objective is not strictly convex on the feasible set".into())
            })?;
        &x_p + z_basis * z
    } else {
        x_p
    };
    // Minimum-norm λ solving Aᵀλ = −(Hx + c) in the least-squares sense.
    let grad = &h * &x + c;
    let mut lambda = DVector::zeros(rows);
    for k in 0..rank {
        let coeff = -v_t.row(k).transpose().dot(&grad) / sigma[k];
        lambda += u.column(k).rows(0, rows) * coeff;
    }
    Ok(finish(&h, c, a, b, x, lambda, rank < rows))
}

fn finish(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: DVector<f64>,
    lambda: DVector<f64>,
    rank_deficient: bool,
) -> OptimalNE {
    let primal = (a * &x - b).norm();
    let dual = (h * &x + c + a.transpose() * &lambda).norm();
    OptimalNE {
        x_star: x.iter().copied().collect(),
        multipliers: lambda.iter().copied().collect(),
        kkt_residual: primal.max(dual),
        rank_deficient,
    }
}

/// `x* = argmin { ½xᵀ𝐔x + 𝐛ᵀx : 𝐅x = 𝐝 }`, the equilibrium with least
/// social cost.
pub fn solve_optimal_ne_qp(game: &QuadraticGame) -> Result<OptimalNE> {
    solve_equality_qp(
        &game.stacked_u(),
        &game.stacked_b(),
        &game.stacked_f(),
        &game.stacked_d(),
    )
}

/// Distance between consecutive trajectory points `x*_{η_k}` and
/// `x*_{η_{k−1}}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryDrift {
    pub k: usize,
    pub drift: f64,
    /// `Γ_{k−1} = |1 − η_{k−1}/η_k|`
    pub gamma_cap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TikhonovTrajectory {
    pub ks: Vec<usize>,
    pub points: Vec<RegularizedSolution>,
    pub drifts: Vec<TrajectoryDrift>,
    /// Largest `‖∇g(x*_{η_j})‖` over every solved point, including the
    /// `k − 1` neighbours used for drifts.
    pub c_const: f64,
}

/// Regularized solutions along the schedule's `η_k` for each requested
/// `k`, with drift to the previous index for every `k ≥ 1`.
pub fn tikhonov_trajectory(
    game: &QuadraticGame,
    schedule: &StepSchedule,
    ks: &[usize],
    tol: f64,
) -> Result<TikhonovTrajectory> {
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidSchedule(
            "trajectory indices must be nonempty and strictly ascending".into(),
        ));
    }
    let solve = |k: usize| -> Result<RegularizedSolution> {
        let sol = solve_regularized_quadratic(game, schedule.eta(k))?;
        if sol.residual > tol {
            return Err(Error::NoConvergence {
                max_iters: 0,
                residual: sol.residual,
            });
        }
        Ok(sol)
    };
    let mut c_const: f64 = 0.0;
    let mut track_c = |sol: &RegularizedSolution| -> Result<()> {
        c_const = c_const.max(linalg::norm(&social_gradient(game, &sol.x_star_eta)?));
        Ok(())
    };
    let mut points = Vec::with_capacity(ks.len());
    let mut drifts = Vec::new();
    for &k in ks {
        let point = solve(k)?;
        track_c(&point)?;
        if k >= 1 {
            let prev = solve(k - 1)?;
            track_c(&prev)?;
            drifts.push(TrajectoryDrift {
                k,
                drift: linalg::dist(&point.x_star_eta, &prev.x_star_eta),
                gamma_cap: schedule.gamma_cap(k),
            });
        }
        points.push(point);
    }
    Ok(TikhonovTrajectory {
        ks: ks.to_vec(),
        points,
        drifts,
        c_const,
    })
}

/// `‖F(x)‖`: zero exactly at Nash equilibria of the unconstrained game.
pub fn ne_residual<G: AggregativeGame + ?Sized>(game: &G, x: &[f64]) -> Result<f64> {
    Ok(linalg::norm(&pseudo_gradient(game, x)?))
}
