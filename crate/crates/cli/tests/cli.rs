//! End-to-end checks of the command-line surface: the stage toolchain on a
//! synthetic scene, and the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn run_cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_courtsound"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

#[test]
fn simulate_match_localize_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("scene.wav");
    let truth = dir.path().join("truth.jsonl");
    let ideal = dir.path().join("ideal.csv");
    let out = run_cli(&[
        "simulate",
        "--events",
        "4",
        "--seed",
        "7",
        "--output",
        s(&wav),
        "--truth",
        s(&truth),
        "--detections",
        s(&ideal),
    ]);
    assert_code(&out, 0);
    assert!(wav.exists() && truth.exists() && ideal.exists());

    let groups = dir.path().join("groups.jsonl");
    assert_code(&run_cli(&["match", s(&ideal), "--output", s(&groups)]), 0);
    let text = std::fs::read_to_string(&groups).unwrap();
    assert_eq!(text.lines().count(), 4, "{text}");

    let events = dir.path().join("events.jsonl");
    assert_code(&run_cli(&["localize", s(&groups), "--output", s(&events)]), 0);

    // Ideal integer timestamps leave only quantization error, so the
    // recovered positions sit within millimeters of the truth.
    let eval_out = run_cli(&["eval", s(&truth), s(&events)]);
    assert_code(&eval_out, 0);
    let report: serde_json::Value = serde_json::from_slice(&eval_out.stdout).unwrap();
    assert_eq!(report["count"], 4);
    assert!(report["mean_distance_m"].as_f64().unwrap() < 0.02, "{report}");
}

#[test]
fn run_recovers_simulated_events() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("scene.wav");
    let truth = dir.path().join("truth.jsonl");
    let out = run_cli(&[
        "simulate",
        "--events",
        "4",
        "--seed",
        "11",
        "--snr",
        "40",
        "--output",
        s(&wav),
        "--truth",
        s(&truth),
    ]);
    assert_code(&out, 0);

    let events = dir.path().join("events.jsonl");
    assert_code(&run_cli(&["run", s(&wav), "--output", s(&events)]), 0);
    let text = std::fs::read_to_string(&events).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4, "{text}");
    let mut last_time = f64::NEG_INFINITY;
    for line in &lines {
        let event: serde_json::Value = serde_json::from_str(line).unwrap();
        let t = event["t_s"].as_f64().unwrap();
        assert!(t > last_time, "events out of order: {text}");
        last_time = t;
        assert!(event["x_m"].is_f64(), "{event}");
    }

    // Detector timing jitter is a few samples; positions stay within the
    // ball-sized tolerance of the truth.
    let eval_out = run_cli(&["eval", "--by-order", s(&truth), s(&events)]);
    assert_code(&eval_out, 0);
    let report: serde_json::Value = serde_json::from_slice(&eval_out.stdout).unwrap();
    assert_eq!(report["count"], 4);
    assert!(report["mean_distance_m"].as_f64().unwrap() < 0.25, "{report}");
}

#[test]
fn detect_writes_csv_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("scene.wav");
    assert_code(&run_cli(&["simulate", "--events", "2", "--seed", "3", "--output", s(&wav)]), 0);
    let out = run_cli(&["detect", s(&wav)]);
    assert_code(&out, 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("channel,sample_index,score,method\n"), "{text}");
    // Two events on six channels.
    assert_eq!(text.lines().count(), 13, "{text}");
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();

    // Usage errors: bad flags, bad values, missing required outputs.
    assert_code(&run_cli(&["detect", "--bogus"]), 1);
    assert_code(&run_cli(&["no-such-command"]), 1);
    assert_code(&run_cli(&["plot-errors", "--sigmas", "abc"]), 1);
    assert_code(&run_cli(&["simulate"]), 1);
    assert_code(&run_cli(&["simulate", "--spacing", "-1", "--output", "x.wav"]), 1);
    assert_code(&run_cli(&["predict", "--detections", "x.csv"]), 1);

    // Config errors are usage errors.
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"bogus\": 1}").unwrap();
    let wav = dir.path().join("scene.wav");
    assert_code(&run_cli(&["simulate", "--events", "1", "--output", s(&wav)]), 0);
    assert_code(&run_cli(&["--config", s(&bad), "detect", s(&wav)]), 1);

    // Data errors: unreadable or inconsistent inputs.
    assert_code(&run_cli(&["detect", s(&dir.path().join("missing.wav"))]), 2);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let record = "{\"event_id\":\"ID\",\"class\":\"racquet\",\"x_m\":1.0,\"y_m\":2.0,\
                  \"z_m\":1.0,\"t_s\":0.1,\"residual\":null,\"confidences\":{},\"detections\":[]}\n";
    std::fs::write(&a, record.replace("ID", "a")).unwrap();
    std::fs::write(&b, record.replace("ID", "b")).unwrap();
    assert_code(&run_cli(&["eval", s(&a), s(&b)]), 2);

    // Help and version report success.
    assert_code(&run_cli(&["--help"]), 0);
    assert_code(&run_cli(&["--version"]), 0);
}

#[test]
fn infeasible_group_is_a_numerical_failure() {
    use courtsound::geometry::{CourtGeometry, MicArray, Vec3};

    // Arrivals forward-modeled from a point far outside the court: the
    // best-fit position lies beyond the validity box, so no start survives.
    let geometry = CourtGeometry::standard();
    let array = MicArray::default_for(&geometry);
    let source = Vec3::new(40.0, 50.0, 20.0);
    let mut lines = String::from("{\"group_id\":0,\"detections\":[");
    for (i, mic) in array.mics.iter().enumerate() {
        let tau = source.distance_to(mic.position) / array.speed_of_sound * array.sample_rate;
        if i > 0 {
            lines.push(',');
        }
        lines.push_str(&format!(
            "{{\"channel\":{},\"sample_index\":{},\"score\":10.0,\
             \"method\":\"gaussian_threshold\"}}",
            mic.id,
            tau.round() as u64
        ));
    }
    lines.push_str("]}\n");

    let dir = tempfile::tempdir().unwrap();
    let groups = dir.path().join("groups.jsonl");
    std::fs::write(&groups, lines).unwrap();
    let out = run_cli(&["localize", s(&groups)]);
    assert_code(&out, 3);
}
