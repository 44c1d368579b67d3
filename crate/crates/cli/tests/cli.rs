use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

const SIMPLE_OPTIMUM: &str = "S1 S2 S3 S5 S7 S9 S10 S12 S15 S18 S20 S23 S25 S28";

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(path).unwrap()
}

fn fuzzcfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fuzzcfg")).args(args).output().unwrap()
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = fuzzcfg(args);
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn optima(stdout: &str) -> Vec<&str> {
    stdout
        .lines()
        .skip_while(|l| !l.starts_with("optimal configurations"))
        .skip(1)
        .take_while(|l| !l.is_empty())
        .map(|l| l.trim().split("  score").next().unwrap())
        .collect()
}

#[test]
fn conveyor_run_prints_the_simple_optimum() {
    let path = fixture("conveyor.toml");
    let (code, out, err) = run(&["run", path.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(optima(&out), vec![SIMPLE_OPTIMUM]);
    assert_eq!(out, golden("conveyor.txt"));
}

#[test]
fn generalized_tie_fixture_prints_four_rows() {
    let path = fixture("conveyor-generalized.toml");
    let (code, out, _) = run(&["run", path.to_str().unwrap(), "--generalized", "--matrix"]);
    assert_eq!(code, 0);
    let rows = optima(&out);
    assert_eq!(rows.len(), 4);
    for row in &rows {
        let differs: Vec<(&str, &str)> = row
            .split(' ')
            .zip(SIMPLE_OPTIMUM.split(' '))
            .filter(|(a, b)| a != b)
            .collect();
        assert!(differs.iter().all(|d| *d == ("S13", "S12") || *d == ("S29", "S28")), "{row}");
    }
    assert_eq!(out, golden("conveyor-generalized.txt"));
}

#[test]
fn output_is_byte_identical_across_runs() {
    let path = fixture("desk-lamp.toml");
    let p = path.to_str().unwrap();
    let json = run(&["run", p, "--format", "json"]).1;
    assert_eq!(json, run(&["run", p, "--format", "json"]).1);
    assert_eq!(json, golden("desk-lamp.json"));
    let flags = ["run", p, "--alpha", "1", "--score", "min", "--seed-order", "S6,S5"];
    assert_eq!(run(&flags).1, golden("desk-lamp-flags.txt"));
}

#[test]
fn malformed_files_exit_2_with_locations() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "format_version = 1\n\n[[functions]\nid = \"F1\"\n").unwrap();
    for cmd in ["run", "validate"] {
        let (code, out, err) = run(&[cmd, bad.to_str().unwrap()]);
        assert_eq!(code, 2, "{cmd}");
        assert!(out.is_empty());
        assert!(err.contains("line 3"), "{err}");
    }
    let missing = dir.path().join("missing.toml");
    assert_eq!(run(&["run", missing.to_str().unwrap()]).0, 2);
}

#[test]
fn validate_reports_clean_fixtures() {
    for name in ["conveyor.toml", "conveyor-generalized.toml", "desk-lamp.toml"] {
        let path = fixture(name);
        let (code, out, err) = run(&["validate", path.to_str().unwrap()]);
        assert_eq!(code, 0, "{name}: {err}");
        assert!(out.contains(": ok ("), "{out}");
        assert!(err.is_empty());
    }
}

#[test]
fn an_out_of_range_entry_is_one_violation() {
    let text = std::fs::read_to_string(fixture("conveyor.toml")).unwrap().replacen(
        r#"{ row = "F3", col = "S4", value = 0.6 }"#,
        r#"{ row = "F3", col = "S4", value = 1.5 }"#,
        1,
    );
    let line = text.lines().position(|l| l.contains("1.5")).unwrap() + 1;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("injected.toml");
    std::fs::write(&path, text).unwrap();
    let (code, _, err) = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(code, 1);
    let errors: Vec<&str> = err.lines().filter(|l| l.contains("error:")).collect();
    assert_eq!(errors.len(), 1, "{err}");
    assert!(errors[0].contains(&format!("line {line}")) && errors[0].contains("1.5"));
    assert_eq!(run(&["run", path.to_str().unwrap()]).0, 1);
}

#[test]
fn bad_flag_values_are_validation_failures() {
    let path = fixture("conveyor.toml");
    let p = path.to_str().unwrap();
    let (code, out, err) = run(&["run", p, "--alpha", "1.5"]);
    assert_eq!(code, 1);
    assert!(out.is_empty() && err.contains("alpha"));
    assert_eq!(run(&["run", p, "--seed-order", "S1,X9"]).0, 1);
    assert_eq!(run(&["run", p, "--format", "json", "--matrix"]).0, 2);
    assert_eq!(run(&["run", p, "--score", "median"]).0, 2);
}

#[test]
fn serve_answers_a_session_request() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_fuzzcfg"))
        .args(["serve", "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap().to_owned();

    let doc = std::fs::read_to_string(fixture("desk-lamp.toml")).unwrap();
    let body = serde_json::json!({ "document": doc }).to_string();
    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(
        stream,
        "POST /sessions HTTP/1.1\r\nhost: {addr}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut reply = String::new();
    stream.read_to_string(&mut reply).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 201"), "{reply}");
    assert!(reply.contains("\"id\":\"s1\""), "{reply}");
}
