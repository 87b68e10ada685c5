mod common;

use common::{stderr, stdout, storyreel, storyreel_env};

fn auto_args(config: &std::path::Path) -> Vec<String> {
    ["--config", config.to_str().unwrap(), "auto", "--x", "boy", "--y", "horse"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn args(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn auto_prints_the_video_and_reruns_for_free() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_config_file(dir.path());
    let project = dir.path().join("p");
    let a = auto_args(&cfg);

    let out = storyreel(&project, &args(&a));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let video = stdout(&out).trim().to_string();
    assert!(video.ends_with("renders/final.mp4"), "{video}");
    assert!(std::path::Path::new(&video).is_file());
    assert!(project.join("renders/final.srt").is_file());
    assert!(project.join("logs/last_run.json").is_file());

    let again = storyreel(&project, &args(&a));
    assert_eq!(again.status.code(), Some(0));
    assert!(stderr(&again).contains("backend calls: 0"), "{}", stderr(&again));
    assert!(stderr(&again).contains("all stages already done"));

    let status = storyreel(&project, &["status"]);
    assert_eq!(status.status.code(), Some(0));
    let text = stdout(&status);
    assert!(text.lines().any(|l| l.starts_with("render") && l.contains("\"done\"")), "{text}");
    assert!(text.contains("scenes selected: "));
}

#[test]
fn a_different_request_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let project = dir.path().join("p");
    assert_eq!(storyreel(&project, &["new", "--x", "boy", "--y", "horse"]).status.code(), Some(0));
    let out = storyreel(&project, &["new", "--x", "girl", "--y", "dog"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--force"), "{}", stderr(&out));
    let forced = storyreel(&project, &["new", "--x", "girl", "--y", "dog", "--force"]);
    assert_eq!(forced.status.code(), Some(0), "{}", stderr(&forced));
}

#[test]
fn stage_commands_check_dependencies() {
    let dir = tempfile::tempdir().unwrap();
    let project = dir.path().join("p");
    storyreel(&project, &["new", "--x", "boy", "--y", "horse"]);
    let out = storyreel(&project, &["render"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("requires stage `story`"), "{}", stderr(&out));

    assert_eq!(storyreel(&project, &["story"]).status.code(), Some(0));
    let again = storyreel(&project, &["story"]);
    assert!(stderr(&again).contains("already done"));
    let out = storyreel(&project, &["select", "--policy", "first"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn live_mode_without_endpoints_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let project = dir.path().join("p");
    let out = storyreel(&project, &["--backends", "live", "auto", "--x", "boy", "--y", "horse"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no text endpoint"), "{}", stderr(&out));
}

#[test]
fn bad_config_and_bad_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "fps = 0\n").unwrap();
    let out = storyreel(&dir.path().join("p"), &["--config", bad.to_str().unwrap(), "new", "--x", "a", "--y", "b"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = storyreel(&dir.path().join("q"), &["new", "--x", "", "--y", "b"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn unreachable_live_backend_names_the_stage() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let mut toml = String::from("backends = \"live\"\n");
    for kind in ["text", "image", "tts", "music", "vocal_separation"] {
        toml.push_str(&format!(
            "[[endpoints]]\nkind = \"{kind}\"\nmodel = \"m\"\ntimeout_secs = 2\nmax_retries = 1\nbackoff_base_ms = 1\n\
             transport = {{ type = \"remote_service\", url = \"http://127.0.0.1:{port}/{kind}\" }}\n"
        ));
    }
    let cfg = dir.path().join("live.toml");
    std::fs::write(&cfg, toml).unwrap();
    let project = dir.path().join("p");
    let out = storyreel(&project, &args(&auto_args(&cfg)));
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("story"), "{err}");
    let status = stdout(&storyreel(&project, &["status"]));
    assert!(status.lines().any(|l| l.starts_with("story") && l.contains("failed")), "{status}");
}

#[test]
fn a_crash_after_speech_resumes_at_music() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_config_file(dir.path());
    let a = auto_args(&cfg);

    let crashed = dir.path().join("crashed");
    let out = storyreel_env(&crashed, &args(&a), &[("STORYREEL_FAULT_AFTER", "speech")]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("aborting after stage speech"));

    let resumed = storyreel(&crashed, &args(&a));
    assert_eq!(resumed.status.code(), Some(0), "{}", stderr(&resumed));
    assert!(stderr(&resumed).contains("resumed at stage music"), "{}", stderr(&resumed));

    let clean = dir.path().join("clean");
    assert_eq!(storyreel(&clean, &args(&a)).status.code(), Some(0));
    assert_eq!(
        std::fs::read(crashed.join("manifest.json")).unwrap(),
        std::fs::read(clean.join("manifest.json")).unwrap()
    );
}
