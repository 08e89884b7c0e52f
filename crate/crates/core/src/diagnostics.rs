//! Numerical audit of the convergence argument along an actual run.
//!
//! The error vector
//!
//! ```text
//! Δ_k = [‖x^k − x*_{η_{k−1}}‖, ‖v^k − 1⊗v̄^k‖, ‖y^k − 1⊗ȳ^k‖]
//! ```
//!
//! obeys the componentwise recursion `Δ_{k+1} ≤ H_k Δ_k + h_k`, and, for a
//! safe `γ_0`, the scalar contraction
//! `‖Δ_{k+1}‖ ≤ α_k ‖Δ_k‖ + Θ Γ_{k−1}` with `α_k = 1 − ½γ_kη_kμ_g`. The
//! functions here rebuild `H_k`, `h_k` and the dominating pair `Ĥ_k`, `ĥ_k`
//! from the constants and check every inequality on recorded iterates.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::game::{social_gradient, GameConstants, QuadraticGame};
use crate::graph::MixingMatrix;
use crate::linalg;
use crate::oracle::{solve_regularized_quadratic, RegularizedSolution};
use crate::solver::{gamma0_safe_bound, init_state, SafeBound, SolverState, StepSchedule, Trace};

/// Slack added to every proven inequality to absorb rounding.
pub const AUDIT_SLACK: f64 = 1e-8;

/// Default last audited iteration.
pub const DEFAULT_WINDOW_END: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorVector {
    pub k: usize,
    pub dist_trajectory: f64,
    pub consensus_v: f64,
    pub consensus_y: f64,
}

impl ErrorVector {
    pub fn as_array(&self) -> [f64; 3] {
        [self.dist_trajectory, self.consensus_v, self.consensus_y]
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.as_array())
    }
}

/// `Δ_k` for a state at round `k ≥ 1`, given `x*_{η_{k−1}}`.
pub fn compute_delta(
    state: &SolverState,
    schedule: &StepSchedule,
    oracle_prev: &RegularizedSolution,
) -> Result<ErrorVector> {
    if state.k == 0 {
        return Err(Error::IterationMismatch {
            expected: f64::NAN,
            found: oracle_prev.eta,
        });
    }
    let expected = schedule.eta(state.k - 1);
    if (oracle_prev.eta - expected).abs() > 1e-12 * expected {
        return Err(Error::IterationMismatch {
            expected,
            found: oracle_prev.eta,
        });
    }
    Ok(ErrorVector {
        k: state.k,
        dist_trajectory: linalg::dist(&state.x, &oracle_prev.x_star_eta),
        consensus_v: state.consensus_v(),
        consensus_y: state.consensus_y(),
    })
}

/// Recursion matrices at round `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursionData {
    pub k: usize,
    /// `H_k`
    pub h_matrix: [[f64; 3]; 3],
    /// `h_k`
    pub h_vector: [f64; 3],
    /// `Ĥ_k`
    pub h_hat: [[f64; 3]; 3],
    /// `ĥ_k = (Θ/√3) Γ_{k−1} 1`
    pub h_hat_vector: [f64; 3],
    /// `α_k = 1 − ½γ_kη_kμ_g`
    pub alpha: f64,
    /// `Θ = max{1, 2γ_0(L_F+η_0L_1), 4L_2γ_0(L_F+η_0L_1)} √3 C/μ_g`
    pub theta: f64,
    /// `Γ_{k−1}`
    pub gamma_cap: f64,
    pub c_const: f64,
}

pub fn build_recursion(
    k: usize,
    schedule: &StepSchedule,
    constants: &GameConstants,
    rho: f64,
    norm_w_minus_i: f64,
    c_const: f64,
) -> RecursionData {
    let GameConstants {
        l_f,
        l_1,
        l_2,
        mu_g,
    } = *constants;
    let gamma = schedule.gamma(k);
    let eta = schedule.eta(k);
    let (gamma0, eta0) = (schedule.gamma0, schedule.eta0);
    let lip_k = l_f + eta * l_1;
    let lip_0 = l_f + eta0 * l_1;
    let gamma_cap = schedule.gamma_cap(k);
    let drift = c_const / mu_g * gamma_cap;

    let h_matrix = [
        [1.0 - gamma * eta * mu_g, gamma * lip_k, gamma * eta],
        [2.0 * gamma * lip_k, rho + gamma * lip_k, gamma * eta],
        [
            4.0 * l_2 * gamma * lip_k,
            l_2 * norm_w_minus_i + 2.0 * l_2 * gamma * lip_k,
            rho + 2.0 * l_2 * gamma * eta,
        ],
    ];
    let h_vector = [
        drift,
        2.0 * gamma * lip_k * drift,
        4.0 * l_2 * gamma * lip_k * drift,
    ];

    let alpha = 1.0 - 0.5 * gamma * eta * mu_g;
    let theta = 1f64
        .max(2.0 * gamma0 * lip_0)
        .max(4.0 * l_2 * gamma0 * lip_0)
        * 3f64.sqrt()
        * c_const
        / mu_g;
    let diag = alpha - (1.0 - rho) / 2.0;
    let h_hat = [
        [h_matrix[0][0], gamma * lip_0, gamma * eta0],
        [2.0 * gamma * lip_0, diag, gamma * eta0],
        [
            4.0 * l_2 * gamma * lip_0,
            l_2 * norm_w_minus_i + 2.0 * l_2 * gamma * lip_0,
            diag,
        ],
    ];
    let hat = theta / 3f64.sqrt() * gamma_cap;
    RecursionData {
        k,
        h_matrix,
        h_vector,
        h_hat,
        h_hat_vector: [hat; 3],
        alpha,
        theta,
        gamma_cap,
        c_const,
    }
}

/// A failed inequality: `margin = bound − observed` is below `−slack`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub k: usize,
    pub component: usize,
    pub margin: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecursionReport {
    pub audited: usize,
    /// Smallest `(H_kΔ_k + h_k)_c − Δ_{k+1,c}` per component.
    pub min_margin: [f64; 3],
    pub violations: Vec<Violation>,
}

impl RecursionReport {
    pub fn ensure(&self) -> Result<()> {
        match self.violations.first() {
            Some(v) => Err(Error::RecursionViolated {
                k: v.k,
                component: v.component,
                margin: v.margin,
            }),
            None => Ok(()),
        }
    }
}

fn find_delta(deltas: &[ErrorVector], k: usize) -> Option<&ErrorVector> {
    deltas.iter().find(|d| d.k == k)
}

/// Checks `Δ_{k+1} ≤ H_kΔ_k + h_k` componentwise for each recursion whose
/// `Δ_k` and `Δ_{k+1}` are both available.
pub fn check_recursion(deltas: &[ErrorVector], recursions: &[RecursionData]) -> RecursionReport {
    let mut report = RecursionReport {
        min_margin: [f64::INFINITY; 3],
        ..Default::default()
    };
    for rec in recursions {
        let (Some(now), Some(next)) = (find_delta(deltas, rec.k), find_delta(deltas, rec.k + 1))
        else {
            continue;
        };
        report.audited += 1;
        let now = now.as_array();
        let next = next.as_array();
        for (c, observed) in next.iter().enumerate() {
            let bound: f64 =
                (0..3).map(|j| rec.h_matrix[c][j] * now[j]).sum::<f64>() + rec.h_vector[c];
            let margin = bound - observed;
            report.min_margin[c] = report.min_margin[c].min(margin);
            if margin < -AUDIT_SLACK {
                report.violations.push(Violation {
                    k: rec.k,
                    component: c,
                    margin,
                });
            }
        }
    }
    report
}

/// Spectral radius of a real 3×3 matrix from the roots of its
/// characteristic polynomial.
pub fn spectral_radius_3x3(a: &[[f64; 3]; 3]) -> f64 {
    let m = Matrix3::from_fn(|i, j| a[i][j]);
    let trace = m.trace();
    let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)]
        - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    let det = m.determinant();
    // λ³ + p2 λ² + p1 λ + p0
    let (p2, p1, p0) = (-trace, minors, -det);
    let char_poly = |lambda: f64| (Matrix3::identity() * lambda - m).determinant();
    cubic_roots(p2, p1, p0)
        .into_iter()
        .map(|(re, im)| {
            if im == 0.0 {
                polish_root(re, &char_poly).abs()
            } else {
                re.hypot(im)
            }
        })
        .fold(0.0, f64::max)
}

/// Newton refinement of a real root against the exact determinant.
fn polish_root(mut x: f64, p: &dyn Fn(f64) -> f64) -> f64 {
    for _ in 0..4 {
        let h = 1e-7 * x.abs().max(1.0);
        let slope = (p(x + h) - p(x - h)) / (2.0 * h);
        if slope == 0.0 || !slope.is_finite() {
            break;
        }
        let next = x - p(x) / slope;
        if !next.is_finite() || (next - x).abs() > 1e-6 * x.abs().max(1.0) {
            break;
        }
        x = next;
    }
    x
}

/// Roots `(re, im)` of `λ³ + p2λ² + p1λ + p0` by the trigonometric /
/// Cardano formulas.
pub fn cubic_roots(p2: f64, p1: f64, p0: f64) -> [(f64, f64); 3] {
    let shift = p2 / 3.0;
    // Depressed cubic t³ + p t + q with λ = t − shift.
    let p = p1 - p2 * p2 / 3.0;
    let q = 2.0 * p2 * p2 * p2 / 27.0 - p2 * p1 / 3.0 + p0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc > 0.0 {
        let s = disc.sqrt();
        let u = (-q / 2.0 + s).cbrt();
        let v = (-q / 2.0 - s).cbrt();
        let re = -(u + v) / 2.0 - shift;
        let im = 3f64.sqrt() / 2.0 * (u - v);
        [(u + v - shift, 0.0), (re, im), (re, -im)]
    } else if p == 0.0 {
        let t = (-q).cbrt();
        [(t - shift, 0.0); 3]
    } else {
        let r = (-p / 3.0).sqrt();
        let cos_arg = (-q / 2.0 / r.powi(3)).clamp(-1.0, 1.0);
        let phi = cos_arg.acos();
        let tau = std::f64::consts::TAU;
        [0.0, 1.0, 2.0].map(|j| (2.0 * r * (phi / 3.0 - tau * j / 3.0).cos() - shift, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionViolation {
    pub k: usize,
    pub what: &'static str,
    pub margin: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContractionReport {
    pub audited: usize,
    /// Set when `γ_0` exceeds the safe bound; violations are then expected
    /// and not treated as errors.
    pub advisory: bool,
    /// Smallest `α_k − ρ(Ĥ_k)` seen.
    pub min_spectral_margin: f64,
    /// Smallest `α_k‖Δ_k‖ + ΘΓ_{k−1} − ‖Δ_{k+1}‖` seen.
    pub min_norm_margin: f64,
    pub violations: Vec<ContractionViolation>,
}

impl ContractionReport {
    pub fn ensure(&self) -> Result<()> {
        if self.advisory {
            return Ok(());
        }
        match self.violations.first() {
            Some(v) => Err(Error::ContractionViolated {
                k: v.k,
                what: v.what,
                margin: v.margin,
            }),
            None => Ok(()),
        }
    }
}

/// Checks `ρ(Ĥ_k) < α_k`, `H_k ≤ Ĥ_k`, `h_k ≤ ĥ_k` and
/// `‖Δ_{k+1}‖ ≤ α_k‖Δ_k‖ + ΘΓ_{k−1}` for every audited `k`.
pub fn check_contraction(
    recursions: &[RecursionData],
    deltas: &[ErrorVector],
    advisory: bool,
) -> ContractionReport {
    let mut report = ContractionReport {
        advisory,
        min_spectral_margin: f64::INFINITY,
        min_norm_margin: f64::INFINITY,
        ..Default::default()
    };
    let flag = |report: &mut ContractionReport, k, what, margin: f64| {
        if margin < -AUDIT_SLACK {
            report
                .violations
                .push(ContractionViolation { k, what, margin });
        }
    };
    for rec in recursions {
        report.audited += 1;
        let spectral = rec.alpha - spectral_radius_3x3(&rec.h_hat);
        report.min_spectral_margin = report.min_spectral_margin.min(spectral);
        if spectral <= 0.0 {
            report.violations.push(ContractionViolation {
                k: rec.k,
                what: "spectral radius of H_hat not below alpha",
                margin: spectral,
            });
        }
        let entry_margin = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| rec.h_hat[i][j] - rec.h_matrix[i][j])
            .fold(f64::INFINITY, f64::min);
        flag(&mut report, rec.k, "H exceeds H_hat", entry_margin);
        let vector_margin = (0..3)
            .map(|i| rec.h_hat_vector[i] - rec.h_vector[i])
            .fold(f64::INFINITY, f64::min);
        flag(&mut report, rec.k, "h exceeds h_hat", vector_margin);

        if let (Some(now), Some(next)) = (find_delta(deltas, rec.k), find_delta(deltas, rec.k + 1))
        {
            let margin = rec.alpha * now.norm() + rec.theta * rec.gamma_cap - next.norm();
            report.min_norm_margin = report.min_norm_margin.min(margin);
            flag(&mut report, rec.k, "norm contraction", margin);
        }
    }
    report
}

/// Least-squares slope of `ln(metric)` against `k`.
fn log_slope(points: &[(usize, f64)]) -> Option<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, v)| v.is_finite() && *v > 0.0)
        .map(|&(k, v)| (k as f64, v.ln()))
        .collect();
    if usable.len() < 2 {
        return None;
    }
    let n = usable.len() as f64;
    let mean_k = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_v = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mean_k).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = usable.iter().map(|p| (p.0 - mean_k) * (p.1 - mean_v)).sum();
    Some(sxy / sxx)
}

/// Final value, minimum and late-trace trend of one logged metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub final_value: f64,
    pub min_value: f64,
    /// Least-squares slope over the last half of the rows; `None` when
    /// fewer than two usable rows exist.
    pub slope: Option<f64>,
}

impl MetricSummary {
    fn from_series(series: &[(usize, f64)]) -> Option<Self> {
        let last = series.last()?;
        let min_value = series.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let half = &series[series.len() / 2..];
        Some(Self {
            final_value: last.1,
            min_value,
            slope: log_slope(half),
        })
    }

    /// A strictly negative late-trace slope.
    pub fn decreasing(&self) -> bool {
        self.slope.is_some_and(|s| s < 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSummary {
    pub rows: usize,
    pub final_k: usize,
    /// `ln‖F(x^k)‖`
    pub ln_ne_residual: Option<MetricSummary>,
    /// `ln(‖x^k − x*‖ / ‖x^0 − x*‖)`
    pub ln_relative_gap: Option<MetricSummary>,
    /// `‖Δ_k‖` (values are not logged; the slope is of `ln‖Δ_k‖`).
    pub delta_norm: Option<MetricSummary>,
    pub diverged_at: Option<usize>,
}

impl ConvergenceSummary {
    /// Relative gap `‖x^k − x*‖/‖x^0 − x*‖` at the last row.
    pub fn final_relative_gap(&self) -> Option<f64> {
        self.ln_relative_gap.map(|m| m.final_value.exp())
    }
}

fn summarize_log(series: &[(usize, f64)]) -> Option<MetricSummary> {
    let raw = MetricSummary::from_series(series)?;
    Some(MetricSummary {
        final_value: raw.final_value.ln(),
        min_value: raw.min_value.ln(),
        slope: raw.slope,
    })
}

pub fn summarize_convergence(trace: &Trace) -> ConvergenceSummary {
    let residual: Vec<(usize, f64)> = trace.rows.iter().map(|r| (r.k, r.ne_residual)).collect();
    let gap: Vec<(usize, f64)> = match trace.initial_gap {
        Some(g0) if g0 > 0.0 => trace
            .rows
            .iter()
            .filter_map(|r| r.gap_to_xstar.map(|g| (r.k, g / g0)))
            .collect(),
        _ => Vec::new(),
    };
    let delta: Vec<(usize, f64)> = trace
        .rows
        .iter()
        .filter_map(|r| r.delta_norm.map(|d| (r.k, d)))
        .collect();
    ConvergenceSummary {
        rows: trace.rows.len(),
        final_k: trace.rows.last().map_or(0, |r| r.k),
        ln_ne_residual: summarize_log(&residual),
        ln_relative_gap: summarize_log(&gap),
        delta_norm: MetricSummary::from_series(&delta),
        diverged_at: trace.diverged_at,
    }
}

/// Everything produced by auditing one window of a run.
#[derive(Debug, Clone)]
pub struct AuditReport {
    pub window_end: usize,
    pub c_const: f64,
    pub bound: SafeBound,
    pub deltas: Vec<ErrorVector>,
    pub recursions: Vec<RecursionData>,
    pub recursion: RecursionReport,
    pub contraction: ContractionReport,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.recursion.violations.is_empty()
            && (self.contraction.advisory || self.contraction.violations.is_empty())
    }
}

/// Runs rounds `0..=window_end + 1` from `x0` and audits `k ∈ [1, window_end]`.
///
/// `C` is the largest `‖∇g(x*_{η_j})‖` over `j ∈ [0, window_end + 1]`. The
/// `constants` are used as given for the recursion, so callers can audit
/// against deliberately wrong constants; the contraction report is advisory
/// when `γ_0` is not below the safe bound those constants imply.
pub fn audit_window(
    game: &QuadraticGame,
    w: &MixingMatrix,
    schedule: &StepSchedule,
    x0: &[f64],
    constants: &GameConstants,
    window_end: usize,
) -> Result<AuditReport> {
    let window_end = window_end.max(1);
    let trajectory: Vec<RegularizedSolution> = (0..=window_end + 1)
        .map(|j| solve_regularized_quadratic(game, schedule.eta(j)))
        .collect::<Result<_>>()?;
    let mut c_const: f64 = 0.0;
    for point in &trajectory {
        c_const = c_const.max(linalg::norm(&social_gradient(game, &point.x_star_eta)?));
    }

    let mut state = init_state(game, x0)?;
    let mut deltas = Vec::with_capacity(window_end + 1);
    for k in 1..=window_end + 1 {
        state.advance(game, w, schedule)?;
        debug_assert_eq!(state.k, k);
        deltas.push(compute_delta(&state, schedule, &trajectory[k - 1])?);
    }

    let recursions: Vec<RecursionData> = (1..=window_end)
        .map(|k| build_recursion(k, schedule, constants, w.rho(), w.norm_w_minus_i(), c_const))
        .collect();
    let bound = gamma0_safe_bound(constants, schedule.eta0, w.rho(), w.norm_w_minus_i())?;
    let advisory = schedule.gamma0 >= bound.gamma0_max;
    let recursion = check_recursion(&deltas, &recursions);
    let contraction = check_contraction(&recursions, &deltas, advisory);
    Ok(AuditReport {
        window_end,
        c_const,
        bound,
        deltas,
        recursions,
        recursion,
        contraction,
    })
}
