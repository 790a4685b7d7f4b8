use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn konnektor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_konnektor"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_duplicate(out_dir: &Path, seed: Option<&str>) -> Output {
    let config = configs().join("duplicate_join.toml");
    let mut args = vec![
        "run",
        "-c",
        config.to_str().unwrap(),
        "-o",
        out_dir.to_str().unwrap(),
    ];
    if let Some(seed) = seed {
        args.extend(["--seed", seed]);
    }
    konnektor(&args)
}

#[test]
fn run_duplicate_join_removes_the_duplicate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_duplicate(dir.path(), None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let hash = String::from_utf8(out.stdout).unwrap();
    assert_eq!(hash.trim().len(), 64);

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["uniqueness_verdict"], true);
    assert_eq!(report["duplicates"][0], "peer0");
    let dup = report["peers"]["peer0"]["address"].as_str().unwrap();
    for name in ["peer1", "peer2"] {
        let book = report["peers"][name]["book"].as_array().unwrap();
        assert!(
            book.iter().all(|e| e["address"] != dup),
            "{name} still lists peer0"
        );
    }
    assert!(dir.path().join("trace.jsonl").exists());
}

#[test]
fn identical_invocations_write_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out_a = run_duplicate(a.path(), Some("3"));
    let out_b = run_duplicate(b.path(), Some("3"));
    assert_eq!(out_a.stdout, out_b.stdout);
    for file in ["trace.jsonl", "report.json"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap()
        );
    }
    let c = tempfile::tempdir().unwrap();
    let out_c = run_duplicate(c.path(), Some("4"));
    assert_ne!(out_a.stdout, out_c.stdout, "seed override ignored");
}

#[test]
fn bad_config_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "drop_probability = 1.5\n").unwrap();
    let out = konnektor(&[
        "run",
        "-c",
        path.to_str().unwrap(),
        "-o",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("drop_probability"));

    fs::write(&path, "[protocol]\npow_dificulty = 4\n").unwrap();
    let out = konnektor(&["run", "-c", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("pow_dificulty"));

    let out = konnektor(&["run", "-c", "/nonexistent/config.toml"]);
    assert_eq!(code(&out), 2);
    let out = konnektor(&["run"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn keygen_contract() {
    let seed = "07".repeat(32);
    let a = konnektor(&["keygen", "--seed", &seed]);
    let b = konnektor(&["keygen", "--seed", &seed]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);

    let random = konnektor(&["keygen"]);
    assert_eq!(code(&random), 0);
    let text = String::from_utf8(random.stdout).unwrap();
    let address = text
        .lines()
        .next()
        .unwrap()
        .strip_prefix("address ")
        .unwrap();
    assert_eq!(address.len(), 64);
    assert!(address.chars().all(|c| c.is_ascii_hexdigit()));
    assert_ne!(text.as_bytes(), a.stdout.as_slice());

    assert_eq!(code(&konnektor(&["keygen", "--seed", "abcd"])), 2);
    assert_eq!(code(&konnektor(&["keygen", "--seed", "zz"])), 2);
}

#[test]
fn verify_trace_contract() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_duplicate(dir.path(), None)), 0);
    let trace = dir.path().join("trace.jsonl");
    let out = konnektor(&["verify-trace", trace.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let text = fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let pos = lines
        .iter()
        .position(|l| l.contains("\"kind\":\"transition\"") && l.contains("\"to\":\"Connected\""))
        .unwrap();
    // an edge Connected -> WantsToConnect, which the book never permits
    lines[pos] = lines[pos]
        .replace("\"from\":\"WantsToConnect\"", "\"from\":\"Connected\"")
        .replace("\"from\":\"Connecting\"", "\"from\":\"Connected\"")
        .replace("\"to\":\"Connected\"", "\"to\":\"WantsToConnect\"");
    let edited = dir.path().join("edited.jsonl");
    fs::write(&edited, lines.join("\n") + "\n").unwrap();
    let out = konnektor(&["verify-trace", edited.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&format!("line {}", pos + 1)), "{stderr}");

    let truncated = dir.path().join("truncated.jsonl");
    fs::write(&truncated, &text[..text.len() / 2]).unwrap();
    assert_eq!(
        code(&konnektor(&["verify-trace", truncated.to_str().unwrap()])),
        2
    );
    assert_eq!(code(&konnektor(&["verify-trace", "/nonexistent.jsonl"])), 2);
}

#[test]
fn suite_passes_and_flags_misconfiguration() {
    let out = konnektor(&["suite", "--seeds", "2"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{stdout}");
    assert!(stdout.contains("duplicate_join"));
    assert!(!stdout.contains("FAIL"));

    let dir = tempfile::tempdir().unwrap();
    let easy = dir.path().join("easy.toml");
    fs::write(&easy, "[protocol]\npow_difficulty = 0\n").unwrap();
    let out = konnektor(&["suite", "-c", easy.to_str().unwrap(), "--seeds", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));

    let slow = dir.path().join("slow.toml");
    fs::write(&slow, "[protocol]\nkeepalive_interval_ms = 20000\n").unwrap();
    let out = konnektor(&["suite", "-c", slow.to_str().unwrap(), "--seeds", "1"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 1, "{stdout}");
    assert!(stdout.contains("warning: "), "{stdout}");
    assert!(stdout.contains("FAIL happy_path"), "{stdout}");
}
