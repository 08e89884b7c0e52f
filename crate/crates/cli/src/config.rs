//! Experiment configuration: a single TOML document.
//!
//! ```toml
//! game = "ev_paper"              # or [game.quadratic] with n, m, d, c1, b1, u, c2, b2
//! graph = "complete"             # or graph = { edges = [[0, 1], [1, 2]] }
//!                                # or graph = { random = { n = 5, edge_prob = 0.3, seed = 42 } }
//! schedule = "paper"             # or schedule = { gamma0 = 0.001, a = 0.5, eta0 = 0.1, b = 0.4 }
//! x0 = "zeros"                   # or an explicit stacked array
//! max_iters = 1000
//! record_every = 100
//! attach_oracle = true
//! allow_unsafe_gamma0 = true
//! output_path = "out"
//!
//! [diagnostics]
//! enabled = true
//! window_end = 200
//! ```
//!
//! Matrices are lists of rows; `c2` is one `m×m` matrix per player.

use std::path::PathBuf;

use aggne_core::game::{estimate_constants, ev_game, ev_paper, GameConstants, QuadraticGame};
use aggne_core::graph::{build_metropolis, random_connected_topology, MixingMatrix, Topology};
use aggne_core::nalgebra::DMatrix;
use aggne_core::solver::{gamma0_safe_bound, SafeBound, StepSchedule};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub game: GameSpec,
    pub graph: GraphSpec,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub x0: InitialPoint,
    pub max_iters: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub attach_oracle: bool,
    #[serde(default)]
    pub allow_unsafe_gamma0: bool,
    #[serde(default = "default_output_path")]
    pub output_path: PathBuf,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
}

fn default_record_every() -> usize {
    100
}

fn default_output_path() -> PathBuf {
    PathBuf::from("aggne_out")
}

fn default_window_end() -> usize {
    aggne_core::diagnostics::DEFAULT_WINDOW_END
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameSpec {
    /// Five households, three charging periods.
    EvPaper,
    Quadratic(QuadraticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub n: usize,
    pub m: usize,
    pub d: Vec<f64>,
    pub c1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub c2: Vec<Vec<Vec<f64>>>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSpec {
    Complete,
    Edges(Vec<[usize; 2]>),
    Random(RandomGraphSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomGraphSpec {
    pub n: usize,
    pub edge_prob: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePreset {
    /// `γ_k = 0.1/√(k+1)`, `η_k = 0.1/(k+1)^0.4`
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitSchedule {
    pub gamma0: f64,
    pub a: f64,
    pub eta0: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Preset(SchedulePreset),
    Explicit(ExplicitSchedule),
}

impl ScheduleSpec {
    pub fn schedule(&self) -> StepSchedule {
        match *self {
            ScheduleSpec::Preset(SchedulePreset::Paper) => StepSchedule::paper(),
            ScheduleSpec::Explicit(ExplicitSchedule { gamma0, a, eta0, b }) => {
                StepSchedule::unchecked(gamma0, a, eta0, b)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKeyword {
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialPoint {
    Keyword(InitialKeyword),
    Explicit(Vec<f64>),
}

impl Default for InitialPoint {
    fn default() -> Self {
        InitialPoint::Keyword(InitialKeyword::Zeros)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_window_end")]
    pub window_end: usize,
    /// Audit against these constants instead of the estimated ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsSpec>,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            enabled: false,
            window_end: default_window_end(),
            constants: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSpec {
    pub l_f: f64,
    pub l_1: f64,
    pub l_2: f64,
    pub mu_g: f64,
}

impl From<ConstantsSpec> for GameConstants {
    fn from(c: ConstantsSpec) -> Self {
        GameConstants {
            l_f: c.l_f,
            l_1: c.l_1,
            l_2: c.l_2,
            mu_g: c.mu_g,
        }
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    config.build(true, false)?;
    Ok(config)
}

/// Canonical TOML form; [`parse_config`] reads it back unchanged.
pub fn emit_config(config: &ExperimentConfig) -> Result<String, CliError> {
    toml::to_string(config).map_err(|e| CliError::Parse(format!("cannot serialize config: {e}")))
}

/// Everything a run needs, built from a config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub game: QuadraticGame,
    pub topology: Topology,
    pub mixing: MixingMatrix,
    pub schedule: StepSchedule,
    pub x0: Vec<f64>,
    pub constants: GameConstants,
    pub bound: SafeBound,
    /// `γ_0` is not below the safe bound.
    pub gamma0_unsafe: bool,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn matrix(name: &str, rows: &[Vec<f64>], m: usize) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(invalid(format!("{name} must be a {m}x{m} list of rows")));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

impl QuadraticSpec {
    pub fn build(&self) -> Result<QuadraticGame, CliError> {
        let m = self.m;
        let c2 = self
            .c2
            .iter()
            .enumerate()
            .map(|(i, rows)| matrix(&format!("c2[{i}]"), rows, m))
            .collect::<Result<Vec<_>, _>>()?;
        ev_game(
            self.n,
            m,
            self.d.clone(),
            matrix("c1", &self.c1, m)?,
            self.b1.clone(),
            matrix("u", &self.u, m)?,
            c2,
            self.b2.clone(),
        )
        .map_err(|e| invalid(e.to_string()))
    }
}

impl ExperimentConfig {
    /// Builds the experiment. With `enforce_gamma0` a `γ_0` at or above the
    /// safe bound is rejected unless `allow_unsafe_gamma0` is set.
    pub fn prepare(&self, enforce_gamma0: bool) -> Result<Experiment, CliError> {
        self.build(enforce_gamma0, true)
    }

    fn build(&self, enforce_gamma0: bool, log_overrides: bool) -> Result<Experiment, CliError> {
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        if self.diagnostics.window_end == 0 {
            return Err(invalid("diagnostics.window_end must be at least 1"));
        }
        let game = match &self.game {
            GameSpec::EvPaper => ev_paper(),
            GameSpec::Quadratic(spec) => spec.build()?,
        };
        let dims = aggne_core::game::AggregativeGame::dims(&game);
        let n = dims.n_players;

        let topology = match &self.graph {
            GraphSpec::Complete => Topology::complete(n),
            GraphSpec::Edges(edges) => Topology::new(n, edges.iter().map(|e| (e[0], e[1])))
                .map_err(|e| invalid(e.to_string()))?,
            GraphSpec::Random(spec) => {
                if spec.n != n {
                    return Err(invalid(format!(
                        "graph.random.n = {} but the game has {n} players",
                        spec.n
                    )));
                }
                random_connected_topology(spec.n, spec.edge_prob, spec.seed)
                    .map_err(|e| invalid(e.to_string()))?
            }
        };
        let mixing = build_metropolis(&topology).map_err(|e| invalid(e.to_string()))?;

        let schedule = self.schedule.schedule();
        schedule
            .validate_positive()
            .map_err(|e| invalid(e.to_string()))?;
        let (a, b) = (schedule.a, schedule.b);
        let exponent_problem = if !(0.0 < b && b < a && a < 1.0) {
            Some(("0 < b < a < 1 failing", format!("a = {a}, b = {b}")))
        } else if a + b >= 1.0 {
            Some(("a+b ≥ 1", format!("a + b = {}", a + b)))
        } else {
            None
        };
        if let Some((problem, detail)) = exponent_problem {
            if !self.allow_unsafe_gamma0 {
                return Err(invalid(format!(
                    "{problem} requires allow_unsafe_gamma0 ({detail})"
                )));
            }
            if log_overrides {
                warn!("schedule exponents: {problem} ({detail}); proceeding under allow_unsafe_gamma0");
            }
        }

        let x0 = match &self.x0 {
            InitialPoint::Keyword(InitialKeyword::Zeros) => vec![0.0; dims.stacked_len()],
            InitialPoint::Explicit(v) => {
                if v.len() != dims.stacked_len() {
                    return Err(invalid(format!(
                        "x0 has {} entries, expected {}",
                        v.len(),
                        dims.stacked_len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(invalid("x0 must be finite"));
                }
                v.clone()
            }
        };

        let constants = estimate_constants(&game).map_err(|e| invalid(e.to_string()))?;
        if let Some(claimed) = self.diagnostics.constants {
            let c = GameConstants::from(claimed);
            if [c.l_f, c.l_1, c.l_2]
                .iter()
                .any(|v| !(v.is_finite() && *v >= 0.0))
                || !(c.mu_g.is_finite() && c.mu_g > 0.0)
            {
                return Err(invalid(
                    "diagnostics.constants must be finite with mu_g > 0 and nonnegative Lipschitz constants",
                ));
            }
        }
        let bound = gamma0_safe_bound(
            &constants,
            schedule.eta0,
            mixing.rho(),
            mixing.norm_w_minus_i(),
        )
        .map_err(|e| invalid(e.to_string()))?;
        let gamma0_unsafe = schedule.gamma0 >= bound.gamma0_max;
        if gamma0_unsafe && enforce_gamma0 {
            let msg = format!(
                "gamma0 = {} is not below the safe bound gamma0_max = {:e}",
                schedule.gamma0, bound.gamma0_max
            );
            if !self.allow_unsafe_gamma0 {
                return Err(invalid(format!("{msg}; this requires allow_unsafe_gamma0")));
            }
            if log_overrides {
                warn!("{msg}; proceeding under allow_unsafe_gamma0");
            }
        }

        Ok(Experiment {
            game,
            topology,
            mixing,
            schedule,
            x0,
            constants,
            bound,
            gamma0_unsafe,
        })
    }

    /// Constants the diagnostics audit is checked against.
    pub fn audit_constants(&self, estimated: &GameConstants) -> GameConstants {
        self.diagnostics
            .constants
            .map_or(*estimated, GameConstants::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
game = "ev_paper"
graph = "complete"
schedule = "paper"
max_iters = 1000
allow_unsafe_gamma0 = true
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.record_every, 100);
        assert!(!c.diagnostics.enabled);
        assert_eq!(c.diagnostics.window_end, 200);
        assert_eq!(c.x0, InitialPoint::Keyword(InitialKeyword::Zeros));
        assert!(!c.attach_oracle);
        let exp = c.prepare(true).unwrap();
        assert_eq!(exp.x0, vec![0.0; 15]);
        assert_eq!(exp.schedule, StepSchedule::paper());
        assert!(exp.gamma0_unsafe);
    }

    #[test]
    fn paper_gamma0_needs_override() {
        let text = MINIMAL.replace("allow_unsafe_gamma0 = true", "");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, CliError::Validation(ref m) if m.contains("allow_unsafe_gamma0")));
    }

    #[test]
    fn inverted_exponents_rejected() {
        let text = r#"
game = "ev_paper"
graph = "complete"
schedule = { gamma0 = 0.1, a = 0.5, eta0 = 0.1, b = 0.6 }
max_iters = 10
"#;
        let err = parse_config(text).unwrap_err();
        assert!(matches!(err, CliError::Validation(ref m) if m.contains("b < a")));
    }

    #[test]
    fn exponent_sum_message() {
        let text = r#"
game = "ev_paper"
graph = "complete"
schedule = { gamma0 = 0.0001, a = 0.6, eta0 = 0.1, b = 0.45 }
max_iters = 10
"#;
        let err = parse_config(text).unwrap_err();
        assert!(
            matches!(err, CliError::Validation(ref m) if m.contains("a+b ≥ 1 requires allow_unsafe_gamma0"))
        );
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{MINIMAL}momentum = 0.9\n");
        assert!(matches!(parse_config(&text), Err(CliError::Parse(_))));
    }

    #[test]
    fn parse_error_reports_location() {
        let err = parse_config("game = \n").unwrap_err();
        let CliError::Parse(msg) = err else {
            panic!("expected parse error");
        };
        assert!(msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn random_graph_must_match_players() {
        let text = MINIMAL.replace(
            "graph = \"complete\"",
            "graph = { random = { n = 4, edge_prob = 0.5, seed = 1 } }",
        );
        assert!(matches!(parse_config(&text), Err(CliError::Validation(_))));
    }

    #[test]
    fn disconnected_edges_rejected() {
        let text = MINIMAL.replace(
            "graph = \"complete\"",
            "graph = { edges = [[0, 1], [2, 3]] }",
        );
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, CliError::Validation(ref m) if m.contains("not connected")));
    }

    #[test]
    fn quadratic_game_round_trip() {
        let text = r#"
graph = { edges = [[0, 1]] }
schedule = { gamma0 = 0.001, a = 0.5, eta0 = 0.1, b = 0.4 }
x0 = [0.5, -0.5]
max_iters = 5
record_every = 1

[game.quadratic]
n = 2
m = 1
d = [1.0, 2.0]
c1 = [[0.5]]
b1 = [0.0]
u = [[1.0]]
c2 = [[[0.1]], [[0.2]]]
b2 = [0.0]

[diagnostics]
enabled = true
window_end = 3
"#;
        let config = parse_config(text).unwrap();
        let emitted = emit_config(&config).unwrap();
        assert_eq!(parse_config(&emitted).unwrap(), config);
        let game = config.prepare(true).unwrap().game;
        assert_eq!(game.d(), &[1.0, 2.0]);
    }

    #[test]
    fn bad_matrix_shape_rejected() {
        let text = r#"
graph = "complete"
schedule = { gamma0 = 0.001, a = 0.5, eta0 = 0.1, b = 0.4 }
max_iters = 5

[game.quadratic]
n = 2
m = 2
d = [1.0, 2.0]
c1 = [[0.5, 0.0]]
b1 = [0.0, 0.0]
u = [[1.0, 0.0], [0.0, 1.0]]
c2 = [[[0.1, 0.0], [0.0, 0.1]], [[0.2, 0.0], [0.0, 0.2]]]
b2 = [0.0, 0.0]
"#;
        let err = parse_config(text).unwrap_err();
        assert!(matches!(err, CliError::Validation(ref m) if m.contains("c1")));
    }

    #[test]
    fn wrong_x0_length_rejected() {
        let text = format!("{MINIMAL}x0 = [1.0, 2.0]\n");
        assert!(matches!(parse_config(&text), Err(CliError::Validation(_))));
    }
}
