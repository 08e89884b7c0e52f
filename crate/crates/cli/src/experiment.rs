//! Builds and runs one experiment, then writes `trace.csv` and
//! `report.toml` into the output directory.

use std::path::{Path, PathBuf};

use aggne_core::diagnostics::{audit_window, summarize_convergence, AuditReport, MetricSummary};
use aggne_core::game::GameConstants;
use aggne_core::oracle::{solve_optimal_ne_qp, solve_regularized_quadratic, OptimalNE};
use aggne_core::solver::{run, Reference, RunOptions, Trace};
use aggne_core::Error;
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{emit_config, Experiment, ExperimentConfig};
use crate::error::CliError;
use crate::output::{to_toml, write_atomic, write_trace};

pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.toml";

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Diverged { k: usize },
    DiagnosticsViolated(String),
}

impl RunStatus {
    fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Diverged { .. } => "diverged",
            RunStatus::DiagnosticsViolated(_) => "diagnostics_violation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub trace: Trace,
    pub report: Report,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    /// `Ok` for a completed run, otherwise the matching [`CliError`].
    pub fn into_result(self) -> Result<Self, CliError> {
        match &self.status {
            RunStatus::Completed => Ok(self),
            RunStatus::Diverged { k } => Err(CliError::Divergence { k: *k }),
            RunStatus::DiagnosticsViolated(msg) => Err(CliError::Diagnostics(msg.clone())),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub run: RunSection,
    pub constants: ConstantsSection,
    pub safe_bound: BoundSection,
    pub graph: GraphSection,
    pub summary: SummarySection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<AuditSection>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSection {
    pub config_sha256: String,
    pub status: String,
    pub max_iters: usize,
    pub record_every: usize,
    pub rows: usize,
    pub final_k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConstantsSection {
    pub l_f: f64,
    pub l_1: f64,
    pub l_2: f64,
    pub mu_g: f64,
    pub rho: f64,
    pub norm_w_minus_i: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundSection {
    pub gamma0: f64,
    pub gamma0_max: f64,
    pub gamma0_unsafe: bool,
    pub per_bound: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphSection {
    pub nodes: usize,
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct MetricSection {
    pub final_value: f64,
    pub min_value: f64,
    /// Absent when fewer than two usable rows exist.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    pub slope_defined: bool,
}

impl From<MetricSummary> for MetricSection {
    fn from(m: MetricSummary) -> Self {
        Self {
            final_value: m.final_value,
            min_value: m.min_value,
            slope: m.slope,
            slope_defined: m.slope.is_some(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SummarySection {
    pub ln_ne_residual: MetricSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ln_relative_gap: Option<MetricSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_norm: Option<MetricSection>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSection {
    pub rank_deficient: bool,
    pub kkt_residual: f64,
    pub initial_gap: f64,
    pub x_star: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditSection {
    pub window_end: usize,
    pub c_const: f64,
    pub audit_constants: [f64; 4],
    pub recursion_audited: usize,
    pub recursion_min_margin: [f64; 3],
    pub recursion_violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_recursion_violation: Option<String>,
    pub contraction_audited: usize,
    pub contraction_advisory: bool,
    pub min_spectral_margin: f64,
    pub min_norm_margin: f64,
    pub contraction_violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_contraction_violation: Option<String>,
}

impl AuditSection {
    fn new(audit: &AuditReport, constants: &GameConstants) -> Self {
        Self {
            window_end: audit.window_end,
            c_const: audit.c_const,
            audit_constants: [constants.l_f, constants.l_1, constants.l_2, constants.mu_g],
            recursion_audited: audit.recursion.audited,
            recursion_min_margin: audit.recursion.min_margin,
            recursion_violations: audit.recursion.violations.len(),
            first_recursion_violation: audit.recursion.ensure().err().map(|e| e.to_string()),
            contraction_audited: audit.contraction.audited,
            contraction_advisory: audit.contraction.advisory,
            min_spectral_margin: audit.contraction.min_spectral_margin,
            min_norm_margin: audit.contraction.min_norm_margin,
            contraction_violations: audit.contraction.violations.len(),
            first_contraction_violation: audit
                .contraction
                .violations
                .first()
                .map(|v| format!("k = {}: {} (margin {:e})", v.k, v.what, v.margin)),
        }
    }
}

/// SHA-256 of the canonical config text.
pub fn config_hash(config: &ExperimentConfig) -> Result<String, CliError> {
    let text = emit_config(config)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn constants_section(exp: &Experiment) -> ConstantsSection {
    ConstantsSection {
        l_f: exp.constants.l_f,
        l_1: exp.constants.l_1,
        l_2: exp.constants.l_2,
        mu_g: exp.constants.mu_g,
        rho: exp.mixing.rho(),
        norm_w_minus_i: exp.mixing.norm_w_minus_i(),
    }
}

fn bound_section(exp: &Experiment) -> BoundSection {
    BoundSection {
        gamma0: exp.schedule.gamma0,
        gamma0_max: exp.bound.gamma0_max,
        gamma0_unsafe: exp.gamma0_unsafe,
        per_bound: exp.bound.per_bound.to_vec(),
        c1: exp.bound.c1,
        c2: exp.bound.c2,
        c3: exp.bound.c3,
    }
}

/// Runs the experiment and writes its outputs into `out_override` or the
/// config's `output_path`. Divergence and audit violations still write
/// both files and are reported through [`RunOutcome::status`].
pub fn run_experiment(
    config: &ExperimentConfig,
    out_override: Option<&Path>,
) -> Result<RunOutcome, CliError> {
    let exp = config.prepare(true)?;
    let out_dir = out_override.map_or_else(|| config.output_path.clone(), Path::to_path_buf);
    let hash = config_hash(config)?;
    info!(
        "running {} iterations, gamma0 = {}, safe bound {:e}",
        config.max_iters, exp.schedule.gamma0, exp.bound.gamma0_max
    );

    let optimal: Option<OptimalNE> = if config.attach_oracle {
        let sol = solve_optimal_ne_qp(&exp.game)?;
        info!("optimal NE solved, KKT residual {:e}", sol.kkt_residual);
        Some(sol)
    } else {
        None
    };
    let trajectory = |eta: f64| solve_regularized_quadratic(&exp.game, eta).map(|s| s.x_star_eta);
    let reference = Reference {
        x_star: optimal.as_ref().map(|o| o.x_star.as_slice()),
        trajectory: config.diagnostics.enabled.then_some(&trajectory as _),
    };
    let options = RunOptions {
        max_iters: config.max_iters,
        record_every: config.record_every,
        diagnostics: config.diagnostics.enabled,
    };

    let mut status = RunStatus::Completed;
    let trace = match run(
        &exp.game,
        &exp.mixing,
        &exp.schedule,
        &exp.x0,
        &options,
        &reference,
    ) {
        Ok(trace) => trace,
        Err(Error::NonFiniteValue { k, partial }) => {
            warn!("non-finite value at iteration {k}");
            status = RunStatus::Diverged { k };
            partial.map(|t| *t).unwrap_or_default()
        }
        Err(other) => return Err(other.into()),
    };

    let mut audit_section = None;
    if config.diagnostics.enabled && status == RunStatus::Completed {
        let audit_constants = config.audit_constants(&exp.constants);
        match audit_window(
            &exp.game,
            &exp.mixing,
            &exp.schedule,
            &exp.x0,
            &audit_constants,
            config.diagnostics.window_end,
        ) {
            Ok(audit) => {
                let section = AuditSection::new(&audit, &audit_constants);
                if !audit.passed() {
                    let msg = section
                        .first_recursion_violation
                        .clone()
                        .or_else(|| section.first_contraction_violation.clone())
                        .unwrap_or_default();
                    warn!("audit failed: {msg}");
                    status = RunStatus::DiagnosticsViolated(msg);
                } else if audit.contraction.advisory && !audit.contraction.violations.is_empty() {
                    warn!(
                        "{} contraction violations under an unsafe gamma0 (advisory)",
                        audit.contraction.violations.len()
                    );
                }
                audit_section = Some(section);
            }
            Err(Error::NonFiniteValue { k, .. }) => status = RunStatus::Diverged { k },
            Err(other) => return Err(other.into()),
        }
    }

    let summary = summarize_convergence(&trace);
    let report = Report {
        run: RunSection {
            config_sha256: hash,
            status: status.label().to_string(),
            max_iters: config.max_iters,
            record_every: config.record_every,
            rows: summary.rows,
            final_k: summary.final_k,
            diverged_at: match status {
                RunStatus::Diverged { k } => Some(k),
                _ => None,
            },
        },
        constants: constants_section(&exp),
        safe_bound: bound_section(&exp),
        graph: GraphSection {
            nodes: exp.topology.n(),
            edges: exp.topology.edges().map(|(i, j)| [i, j]).collect(),
        },
        summary: SummarySection {
            ln_ne_residual: summary.ln_ne_residual.map(Into::into).unwrap_or_default(),
            ln_relative_gap: summary.ln_relative_gap.map(Into::into),
            delta_norm: summary.delta_norm.map(Into::into),
        },
        oracle: optimal.as_ref().map(|o| OracleSection {
            rank_deficient: o.rank_deficient,
            kkt_residual: o.kkt_residual,
            initial_gap: trace.initial_gap.unwrap_or(f64::NAN),
            x_star: o.x_star.clone(),
        }),
        diagnostics: audit_section,
    };

    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(out_dir.display(), e))?;
    write_trace(&trace, &out_dir.join(TRACE_FILE))?;
    write_atomic(&out_dir.join(REPORT_FILE), to_toml(&report)?.as_bytes())?;
    info!("wrote {}", out_dir.display());

    Ok(RunOutcome {
        status,
        trace,
        report,
        out_dir,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationSummary {
    pub config_sha256: String,
    pub constants: ConstantsSection,
    pub safe_bound: BoundSection,
}

pub fn validate_experiment(config: &ExperimentConfig) -> Result<ValidationSummary, CliError> {
    let exp = config.prepare(true)?;
    Ok(ValidationSummary {
        config_sha256: config_hash(config)?,
        constants: constants_section(&exp),
        safe_bound: bound_section(&exp),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub constants: ConstantsSection,
    pub safe_bound: BoundSection,
    pub oracle: OracleSection,
    pub multipliers: Vec<f64>,
}

/// `x*`, constants and the safe bound. The `γ_0` check is skipped so the
/// bound can be inspected for any config.
pub fn oracle_summary(config: &ExperimentConfig) -> Result<OracleSummary, CliError> {
    let exp = config.prepare(false)?;
    let sol = solve_optimal_ne_qp(&exp.game)?;
    Ok(OracleSummary {
        constants: constants_section(&exp),
        safe_bound: bound_section(&exp),
        oracle: OracleSection {
            rank_deficient: sol.rank_deficient,
            kkt_residual: sol.kkt_residual,
            initial_gap: aggne_core::linalg::dist(&exp.x0, &sol.x_star),
            x_star: sol.x_star,
        },
        multipliers: sol.multipliers,
    })
}
