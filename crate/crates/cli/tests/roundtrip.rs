use aggne_cli::config::{
    DiagnosticsSpec, ExplicitSchedule, GameSpec, GraphSpec, InitialPoint, RandomGraphSpec,
    ScheduleSpec,
};
use aggne_cli::{emit_config, parse_config, ExperimentConfig};
use proptest::prelude::*;

fn config_strategy() -> impl Strategy<Value = ExperimentConfig> {
    (
        1e-5f64..5e-4,
        0.3f64..0.55,
        0.01f64..1.0,
        0.1f64..0.9,
        any::<u64>(),
        0.05f64..1.0,
        prop::option::of(prop::collection::vec(-5.0f64..5.0, 15)),
        0usize..10_000,
        1usize..500,
        any::<bool>(),
        1usize..300,
    )
        .prop_map(
            |(gamma0, a, eta0, frac, seed, p, x0, max_iters, record_every, flag, window)| {
                ExperimentConfig {
                    game: GameSpec::EvPaper,
                    graph: GraphSpec::Random(RandomGraphSpec {
                        n: 5,
                        edge_prob: p,
                        seed,
                    }),
                    schedule: ScheduleSpec::Explicit(ExplicitSchedule {
                        gamma0,
                        a,
                        eta0,
                        b: a * frac,
                    }),
                    x0: x0.map_or_else(InitialPoint::default, InitialPoint::Explicit),
                    max_iters,
                    record_every,
                    attach_oracle: flag,
                    allow_unsafe_gamma0: true,
                    output_path: "out".into(),
                    diagnostics: DiagnosticsSpec {
                        enabled: !flag,
                        window_end: window,
                        constants: None,
                    },
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn emitted_config_parses_back(config in config_strategy()) {
        let text = emit_config(&config).unwrap();
        prop_assert_eq!(parse_config(&text).unwrap(), config);
    }
}
