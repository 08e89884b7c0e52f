//! Distributed Tikhonov-regularized gradient play with aggregate and
//! social-gradient tracking.
//!
//! Every agent keeps a triple `(x_i, v_i, y_i)`: its decision, its estimate
//! of the aggregate `x̄`, and its estimate of `(1/N) Σ_j ∇_2 g_j`. One
//! synchronous round reads round-`k` values everywhere and writes round
//! `k + 1`:
//!
//! ```text
//! x_i⁺ = x_i − γ_k (∇_1 f_i(x_i, v_i) + ∇_2 f_i(x_i, v_i)/N + η_k (∇_1 g_i(x_i, v_i) + y_i))
//! v_i⁺ = Σ_j w_ij v_j + x_i⁺ − x_i
//! y_i⁺ = Σ_j w_ij y_j + ∇_2 g_i(x_i⁺, v_i⁺) − ∇_2 g_i(x_i, v_i)
//! ```

use crate::error::{Error, Result};
use crate::game::{self, AggregativeGame, GameConstants, GameDims};
use crate::graph::MixingMatrix;
use crate::linalg;

/// Diminishing step sizes `γ_k = γ_0/(k+1)^a`, `η_k = η_0/(k+1)^b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub gamma0: f64,
    pub a: f64,
    pub eta0: f64,
    pub b: f64,
}

impl StepSchedule {
    /// Validated schedule: `γ_0, η_0 > 0`, `0 < b < a < 1` and `a + b < 1`.
    pub fn new(gamma0: f64, a: f64, eta0: f64, b: f64) -> Result<Self> {
        let schedule = Self::unchecked(gamma0, a, eta0, b);
        schedule.validate()?;
        Ok(schedule)
    }

    /// Schedule that skips the exponent checks. Positivity of `γ_0` and
    /// `η_0` is still required by [`StepSchedule::validate_positive`].
    pub const fn unchecked(gamma0: f64, a: f64, eta0: f64, b: f64) -> Self {
        Self { gamma0, a, eta0, b }
    }

    /// `γ_k = 0.1/√(k+1)`, `η_k = 0.1/(k+1)^0.4`.
    pub const fn paper() -> Self {
        Self::unchecked(0.1, 0.5, 0.1, 0.4)
    }

    pub fn with_gamma0(self, gamma0: f64) -> Self {
        Self { gamma0, ..self }
    }

    pub fn validate_positive(&self) -> Result<()> {
        if !(self.gamma0.is_finite() && self.gamma0 > 0.0) {
            return Err(Error::InvalidSchedule(format!(
                "gamma0 must be positive, got {}",
                self.gamma0
            )));
        }
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return Err(Error::InvalidSchedule(format!(
                "eta0 must be positive, got {}",
                self.eta0
            )));
        }
        if !(self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::InvalidSchedule("exponents must be finite".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_positive()?;
        let (a, b) = (self.a, self.b);
        if !(0.0 < b && b < a && a < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "exponents must satisfy 0 < b < a < 1, got a = {a}, b = {b}"
            )));
        }
        if a + b >= 1.0 {
            return Err(Error::InvalidSchedule(format!(
                "exponents must satisfy a + b < 1, got a + b = {}",
                a + b
            )));
        }
        Ok(())
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma0 / ((k + 1) as f64).powf(self.a)
    }

    pub fn eta(&self, k: usize) -> f64 {
        self.eta0 / ((k + 1) as f64).powf(self.b)
    }

    /// `Γ_{k−1} = |1 − η_{k−1}/η_k|` for `k ≥ 1`.
    pub fn gamma_cap(&self, k: usize) -> f64 {
        assert!(k >= 1, "Γ_(k-1) is defined for k >= 1");
        (1.0 - self.eta(k - 1) / self.eta(k)).abs()
    }
}

/// Per-agent iterates after `k` rounds, stored agent-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub k: usize,
    pub dims: GameDims,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub y: Vec<f64>,
    /// `∇_2 g_i(x_i, v_i)` at the current iterate, carried into the next
    /// round's tracking update.
    grad2_g: Vec<f64>,
}

impl SolverState {
    pub fn agent_x(&self, i: usize) -> &[f64] {
        let m = self.dims.dim;
        &self.x[i * m..(i + 1) * m]
    }

    /// Stacked `∇_2 g(x, v)` at the current iterate.
    pub fn grad2_g(&self) -> &[f64] {
        &self.grad2_g
    }

    pub fn consensus_v(&self) -> f64 {
        linalg::consensus_violation(&self.v, self.dims.dim)
    }

    pub fn consensus_y(&self) -> f64 {
        linalg::consensus_violation(&self.y, self.dims.dim)
    }

    /// Advances one synchronous round in place.
    pub fn advance<G: AggregativeGame + ?Sized>(
        &mut self,
        game: &G,
        w: &MixingMatrix,
        schedule: &StepSchedule,
    ) -> Result<()> {
        let GameDims {
            n_players: n,
            dim: m,
        } = self.dims;
        if w.n() != n {
            return Err(Error::ShapeMismatch(format!(
                "mixing matrix has {} nodes, game has {n} players",
                w.n()
            )));
        }
        let gamma = schedule.gamma(self.k);
        let eta = schedule.eta(self.k);
        let inv_n = 1.0 / n as f64;

        let mut x_next = vec![0.0; n * m];
        let mut g1f = vec![0.0; m];
        let mut g2f = vec![0.0; m];
        let mut g1g = vec![0.0; m];
        for i in 0..n {
            let r = i * m..(i + 1) * m;
            let (x_i, v_i, y_i) = (&self.x[r.clone()], &self.v[r.clone()], &self.y[r.clone()]);
            game.grad1_f(i, x_i, v_i, &mut g1f);
            game.grad2_f(i, x_i, v_i, &mut g2f);
            game.grad1_g(i, x_i, v_i, &mut g1g);
            for t in 0..m {
                let direction = g1f[t] + inv_n * g2f[t] + eta * (g1g[t] + y_i[t]);
                x_next[i * m + t] = x_i[t] - gamma * direction;
            }
        }

        let mut v_next = vec![0.0; n * m];
        w.mix_into(&self.v, m, &mut v_next);
        for ((vn, xn), xo) in v_next.iter_mut().zip(&x_next).zip(&self.x) {
            *vn += xn - xo;
        }

        let mut grad2_next = vec![0.0; n * m];
        for i in 0..n {
            let r = i * m..(i + 1) * m;
            game.grad2_g(
                i,
                &x_next[r.clone()],
                &v_next[r.clone()],
                &mut grad2_next[r],
            );
        }
        let mut y_next = vec![0.0; n * m];
        w.mix_into(&self.y, m, &mut y_next);
        for ((yn, gn), go) in y_next.iter_mut().zip(&grad2_next).zip(&self.grad2_g) {
            *yn += gn - go;
        }

        let finite = x_next
            .iter()
            .chain(&v_next)
            .chain(&y_next)
            .all(|a| a.is_finite());
        if !finite {
            return Err(Error::NonFiniteValue {
                k: self.k + 1,
                partial: None,
            });
        }
        self.x = x_next;
        self.v = v_next;
        self.y = y_next;
        self.grad2_g = grad2_next;
        self.k += 1;
        Ok(())
    }
}

/// `v^0 = x^0`, `y_i^0 = ∇_2 g_i(x_i^0, x_i^0)`.
pub fn init_state<G: AggregativeGame + ?Sized>(game: &G, x0: &[f64]) -> Result<SolverState> {
    let dims = game.dims();
    if x0.len() != dims.stacked_len() {
        return Err(Error::ShapeMismatch(format!(
            "x0 has length {}, expected N·m = {}",
            x0.len(),
            dims.stacked_len()
        )));
    }
    let m = dims.dim;
    let mut y = vec![0.0; x0.len()];
    for (i, (x_i, y_i)) in x0.chunks_exact(m).zip(y.chunks_exact_mut(m)).enumerate() {
        game.grad2_g(i, x_i, x_i, y_i);
    }
    Ok(SolverState {
        k: 0,
        dims,
        x: x0.to_vec(),
        v: x0.to_vec(),
        grad2_g: y.clone(),
        y,
    })
}

/// One round of the iteration, returning the successor state.
pub fn step<G: AggregativeGame + ?Sized>(
    state: &SolverState,
    game: &G,
    w: &MixingMatrix,
    schedule: &StepSchedule,
) -> Result<SolverState> {
    let mut next = state.clone();
    next.advance(game, w, schedule)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub gamma_k: f64,
    pub eta_k: f64,
    pub ne_residual: f64,
    pub consensus_v: f64,
    pub consensus_y: f64,
    pub gap_to_xstar: Option<f64>,
    /// `‖Δ_k‖`; absent at `k = 0`, where `η_{k−1}` is undefined.
    pub delta_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub has_gap: bool,
    pub has_delta: bool,
    /// Initial distance `‖x^0 − x*‖` when a reference solution is attached.
    pub initial_gap: Option<f64>,
    /// Round at which a non-finite value appeared.
    pub diverged_at: Option<usize>,
}

/// Maps `η` to the regularized solution `x*_η`.
pub type TrajectoryOracle<'a> = &'a dyn Fn(f64) -> Result<Vec<f64>>;

/// Reference solutions attached to a run.
#[derive(Default, Clone, Copy)]
pub struct Reference<'a> {
    pub x_star: Option<&'a [f64]>,
    pub trajectory: Option<TrajectoryOracle<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub max_iters: usize,
    pub record_every: usize,
    /// Record `‖Δ_k‖` on every row; needs a trajectory oracle.
    pub diagnostics: bool,
}

fn record<G: AggregativeGame + ?Sized>(
    state: &SolverState,
    game: &G,
    schedule: &StepSchedule,
    reference: &Reference<'_>,
    diagnostics: bool,
) -> Result<TraceRow> {
    let ne_residual = linalg::norm(&game::pseudo_gradient(game, &state.x)?);
    let consensus_v = state.consensus_v();
    let consensus_y = state.consensus_y();
    let gap_to_xstar = reference.x_star.map(|xs| linalg::dist(&state.x, xs));
    let delta_norm = match (diagnostics, reference.trajectory) {
        (true, Some(oracle)) if state.k >= 1 => {
            let target = oracle(schedule.eta(state.k - 1))?;
            let dist = linalg::dist(&state.x, &target);
            Some((dist * dist + consensus_v * consensus_v + consensus_y * consensus_y).sqrt())
        }
        _ => None,
    };
    Ok(TraceRow {
        k: state.k,
        gamma_k: schedule.gamma(state.k),
        eta_k: schedule.eta(state.k),
        ne_residual,
        consensus_v,
        consensus_y,
        gap_to_xstar,
        delta_norm,
    })
}

/// Runs `max_iters` rounds from `x0`, recording the initial state, every
/// `record_every`-th round and the final round.
///
/// On divergence the returned [`Error::NonFiniteValue`] carries the rows
/// recorded so far.
pub fn run<G: AggregativeGame + ?Sized>(
    game: &G,
    w: &MixingMatrix,
    schedule: &StepSchedule,
    x0: &[f64],
    options: &RunOptions,
    reference: &Reference<'_>,
) -> Result<Trace> {
    if options.record_every == 0 {
        return Err(Error::InvalidSchedule(
            "record_every must be at least 1".into(),
        ));
    }
    let diagnostics = options.diagnostics && reference.trajectory.is_some();
    let mut state = init_state(game, x0)?;
    let mut trace = Trace {
        rows: Vec::new(),
        has_gap: reference.x_star.is_some(),
        has_delta: diagnostics,
        initial_gap: reference.x_star.map(|xs| linalg::dist(x0, xs)),
        diverged_at: None,
    };
    trace
        .rows
        .push(record(&state, game, schedule, reference, diagnostics)?);
    for _ in 0..options.max_iters {
        if let Err(err) = state.advance(game, w, schedule) {
            return Err(match err {
                Error::NonFiniteValue { k, .. } => {
                    trace.diverged_at = Some(k);
                    Error::NonFiniteValue {
                        k,
                        partial: Some(Box::new(trace)),
                    }
                }
                other => other,
            });
        }
        if state.k % options.record_every == 0 || state.k == options.max_iters {
            trace
                .rows
                .push(record(&state, game, schedule, reference, diagnostics)?);
        }
    }
    Ok(trace)
}

/// Step-size constants and the four candidate upper bounds on `γ_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafeBound {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub per_bound: [f64; 4],
    pub gamma0_max: f64,
}

/// Upper bound on `γ_0` under which the error recursion contracts.
///
/// All four candidates must hold at once, so `gamma0_max` is their minimum.
/// The quadratic-root candidate is evaluated as `2c₃η₀ / (c₂ + √(c₂² + 4c₁c₃η₀))`,
/// which equals the textbook root and stays finite as `c₁ → 0`.
pub fn gamma0_safe_bound(
    constants: &GameConstants,
    eta0: f64,
    rho: f64,
    norm_w_minus_i: f64,
) -> Result<SafeBound> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::DegenerateSpectralGap { rho });
    }
    let GameConstants {
        l_f,
        l_1,
        l_2,
        mu_g,
    } = *constants;
    let lip = l_f + eta0 * l_1;
    let gap = 1.0 - rho;
    let c1 = eta0 * eta0 * mu_g * l_2 * lip + 8.0 * eta0 * l_2 * lip * lip;
    let c2 = 0.5 * eta0 * eta0 * mu_g * l_2 * norm_w_minus_i
        + gap * lip * lip
        + 2.0 * eta0 * l_2 * lip * norm_w_minus_i
        + 2.0 * eta0 * l_2 * gap * lip;
    let c3 = 0.125 * mu_g * gap * gap;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::INFINITY };
    let root = ratio(
        2.0 * c3 * eta0,
        c2 + (c2 * c2 + 4.0 * c1 * c3 * eta0).sqrt(),
    );
    let per_bound = [
        ratio(1.0, lip),
        ratio(gap, eta0 * mu_g + 2.0 * lip),
        ratio(gap, eta0 * mu_g + 4.0 * l_2 * eta0),
        root,
    ];
    let gamma0_max = per_bound.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SafeBound {
        c1,
        c2,
        c3,
        per_bound,
        gamma0_max,
    })
}
