//! Closed-loop episode sweeps with ground-truth detectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use grasp_control::detectors::OracleDetectors;
use grasp_control::scenario::{randomized_feasible_scene, run_episode, Scenario};
use grasp_control::ControllerConfig;
use tactile_sim::dataset::Preset;

#[test]
fn thirty_randomized_feasible_lifts_all_succeed() {
    let cfg = ControllerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for attempt in 0..30 {
        let scene = randomized_feasible_scene(&mut rng, &cfg);
        let scenario = Scenario::lift();
        let required = scenario.required_force(&scene);
        let trace = run_episode(scene, &mut OracleDetectors, &cfg, &scenario, Preset::Toy)
            .expect("episode should run");
        assert!(
            trace.succeeded(),
            "attempt {attempt} failed: {:?} (object {:?})",
            trace.summary,
            scene.object
        );
        assert!(
            trace.summary.duration <= 20.0,
            "attempt {attempt} took {} s",
            trace.summary.duration
        );
        assert!(
            trace.summary.final_hold_force >= required - cfg.force_step,
            "attempt {attempt}: held {} but statics needs {required}",
            trace.summary.final_hold_force
        );
        assert!(trace.summary.peak_force <= cfg.max_force + 1e-6);
    }
}

#[test]
fn trace_files_round_trip_through_disk() {
    let cfg = ControllerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scene = randomized_feasible_scene(&mut rng, &cfg);
    let trace = run_episode(
        scene,
        &mut OracleDetectors,
        &cfg,
        &Scenario::fluid(),
        Preset::Toy,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("episode.jsonl");
    trace.write_jsonl(&path).unwrap();
    let back = grasp_control::trace::EpisodeTrace::read_jsonl(&path).unwrap();
    assert_eq!(back, trace);
}
