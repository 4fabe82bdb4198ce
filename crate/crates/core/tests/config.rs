use cdsynth::config::{ConfigError, RunConfig};
use cdsynth::dataset::GoalRule;

#[test]
fn toml_round_trip() {
    let mut c = RunConfig::default();
    c.planner.p_grasp = 0.35;
    c.dataset.rule = GoalRule::All;
    c.task.goal = [0.6, 0.05, 1.0];
    let text = c.to_toml();
    assert_eq!(RunConfig::from_toml_str(&text, "test").unwrap(), c);
}

#[test]
fn partial_file_keeps_defaults() {
    let c =
        RunConfig::from_toml_str("[dataset]\nh_a = 20\nrule = \"uniform:8\"\n", "test").unwrap();
    assert_eq!(c.dataset.h_a, 20);
    assert_eq!(c.dataset.h_o, 3);
    assert_eq!(c.dataset.rule, GoalRule::Uniform(8));
    assert_eq!(c.planner, RunConfig::default().planner);
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    for text in [
        "[planner]\np_grasp = 0.2\nbogus = 1\n",
        "[nonsense]\nx = 1\n",
        "[dataset]\nrule = \"uniform:0\"\n",
        "[dataset]\nrule = \"some\"\n",
    ] {
        assert!(
            matches!(
                RunConfig::from_toml_str(text, "t"),
                Err(ConfigError::Parse { .. })
            ),
            "{text}"
        );
    }
    let c = RunConfig::from_toml_str("[trust_region]\ndelta_max = 0.0\n", "t");
    assert!(matches!(c, Err(ConfigError::Invalid(_))));
}

#[test]
fn json_and_toml_files_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::default();
    c.planner.max_nodes = 123;
    let tp = dir.path().join("run.toml");
    std::fs::write(&tp, c.to_toml()).unwrap();
    assert_eq!(RunConfig::load(&tp).unwrap(), c);
    let jp = dir.path().join("run.json");
    std::fs::write(&jp, serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(RunConfig::load(&jp).unwrap(), c);
    assert!(matches!(
        RunConfig::load(&dir.path().join("missing.toml")),
        Err(ConfigError::Read { .. })
    ));
}
