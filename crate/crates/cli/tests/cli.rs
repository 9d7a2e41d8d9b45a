use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn ompbook(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ompbook")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8(bytes.to_vec()).unwrap()
}

fn fixture_book() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/book/book.json")
}

fn table_outline(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/outlines").join(name))
        .unwrap()
}

fn write_json(dir: &Path, name: &str, value: &Value) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_vec(value).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn validate_seeded_corpus() {
    let out = ompbook(&["validate", fixture_book().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.ends_with("PASS 12/12  compile-fail 0  run-fail 0  nondet 0\n"), "{stdout}");
    assert_eq!(stdout.lines().count(), 13);
}

#[test]
fn validate_writes_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = ompbook(&[
        "validate",
        fixture_book().to_str().unwrap(),
        "--jobs",
        "2",
        "--format",
        "json",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(text(&out.stdout), "PASS 12/12  compile-fail 0  run-fail 0  nondet 0\n");
    let doc: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(doc["totals"]["passed"], 12);
    assert_eq!(doc["results"].as_array().unwrap().len(), 12);
}

#[test]
fn failing_examples_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ch.md"), "# Broken\n\n```c\nint main(void) { return 3; }\n```\n").unwrap();
    let manifest =
        write_json(dir.path(), "book.json", &json!({"title": "B", "chapters": [{"path": "ch.md", "title": "B"}]}));
    let out = ompbook(&["validate", &manifest]);
    assert_eq!(code(&out), 1);
    assert!(text(&out.stdout).contains("FAIL(run-fail)"));
}

#[test]
fn missing_manifest_is_exit_two() {
    let out = ompbook(&["build", "missing.json"]);
    assert_eq!(code(&out), 2);
    assert!(out.stdout.is_empty());
    assert!(text(&out.stderr).contains("missing.json"));
}

#[test]
fn usage_errors_are_exit_two() {
    assert_eq!(code(&ompbook(&["validate"])), 2);
    assert_eq!(code(&ompbook(&["frobnicate"])), 2);
    assert_eq!(code(&ompbook(&["outline", "--topic", "x"])), 2);
    let version = ompbook(&["kernel", "install", "--version"]);
    assert_eq!(code(&version), 0);
    assert!(text(&version.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn build_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let src = fixture_book();
    let src = src.parent().unwrap();
    fs::create_dir(dir.path().join("chapters")).unwrap();
    fs::copy(src.join("book.json"), dir.path().join("book.json")).unwrap();
    for entry in fs::read_dir(src.join("chapters")).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), dir.path().join("chapters").join(entry.file_name())).unwrap();
    }
    let manifest = dir.path().join("book.json");
    let out = ompbook(&["build", manifest.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let listed: Vec<String> = text(&out.stdout).lines().map(str::to_owned).collect();
    assert_eq!(listed.len(), 5);
    assert!(listed.iter().all(|p| Path::new(p).is_file()));

    let out = ompbook(&["stats", manifest.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let stats: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        stats["total"],
        json!({"example_count": 12, "code_line_count": 240, "text_line_count": 310, "total_line_count": 550})
    );
}

#[test]
fn outline_from_a_single_mock() {
    let dir = tempfile::tempdir().unwrap();
    let fix = write_json(
        dir.path(),
        "fix.json",
        &json!(["Sure.", "Happy to.", "- **Introduction**\n- **Barrier**\n  - Syntax\n"]),
    );
    let out = ompbook(&["outline", "--topic", "barrier", "--mock", &fix]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout), "- **Introduction**\n- **Barrier**\n  - Syntax\n");
}

#[test]
fn outline_merges_three_reviewed_outlines() {
    let dir = tempfile::tempdir().unwrap();
    let provider = |id: &str, file: &str| json!({"id": id, "responses": ["Sure.", "Happy to.", table_outline(file), "Looks fine.", "Add a summary."]});
    let fix = write_json(
        dir.path(),
        "fix.json",
        &json!({"providers": [
            provider("gemini", "gemini.md"),
            provider("chatgpt4", "chatgpt4.md"),
            provider("claude3", "claude3.md"),
        ]}),
    );
    let args = ["outline", "--topic", "synchronization", "--mock", &fix, "--format", "json"];
    let first = ompbook(&args);
    assert_eq!(code(&first), 0, "{}", text(&first.stderr));
    assert_eq!(first.stdout, ompbook(&args).stdout);
    let doc: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(doc["critiques"].as_array().unwrap().len(), 6);
    let top: Vec<&str> =
        doc["merged"]["nodes"].as_array().unwrap().iter().map(|n| n["title"].as_str().unwrap()).collect();
    for title in ["Introduction", "Barrier Directive", "Ordered Directive", "Implicit Barriers"] {
        assert_eq!(top.iter().filter(|t| **t == title).count(), 1, "{title}");
    }
}

#[test]
fn chapter_draft_and_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("teams.md");
    fs::write(&reference, "# Teams\n\nThe teams construct.\n").unwrap();
    let material = dir.path().join("usage.md");
    fs::write(&material, "barrier: all threads wait.\n").unwrap();
    let draft = "## Barrier\n\nExample:\n\n```c\n#include <stdio.h>\nint main(void) { return 0; }\n```\n";
    let fix = write_json(dir.path(), "fix.json", &json!(["Yes.", "Understood.", "Got it.", draft]));
    let transcript = dir.path().join("t.json");
    let out = ompbook(&[
        "chapter",
        "--topic",
        "synchronization",
        "--reference",
        reference.to_str().unwrap(),
        "--material",
        material.to_str().unwrap(),
        "--mock",
        &fix,
        "--transcript",
        transcript.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("```c\n//%lang: c\n#include <stdio.h>"));
    let t: Value = serde_json::from_slice(&fs::read(&transcript).unwrap()).unwrap();
    let steps = t["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 4);
    assert_eq!(
        steps[0]["rendered_prompt"],
        "I am writing a book on teaching others OpenMP parallel programming. Can you help me?"
    );
    assert!(steps[1]["rendered_prompt"].as_str().unwrap().contains("The teams construct."));
    assert!(steps[2]["rendered_prompt"].as_str().unwrap().contains("barrier: all threads wait."));
    assert_eq!(t["conversation"][0]["role"], "system");
}

#[test]
fn provider_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("teams.md");
    fs::write(&reference, "# Teams\n").unwrap();
    let fix = write_json(dir.path(), "fix.json", &json!(["only one answer"]));
    let out = ompbook(&["chapter", "--topic", "x", "--reference", reference.to_str().unwrap(), "--mock", &fix]);
    assert_eq!(code(&out), 1);
    assert!(out.stdout.is_empty());
}

#[test]
fn kernel_install_writes_kernelspec() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().to_str().unwrap();
    let out = ompbook(&["kernel", "install", "--name", "omp-test", "--prefix", prefix]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let path = dir.path().join("omp-test/kernel.json");
    assert_eq!(text(&out.stdout).trim(), path.to_str().unwrap());
    let spec: Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    let exe = fs::canonicalize(env!("CARGO_BIN_EXE_ompbook")).unwrap();
    assert_eq!(fs::canonicalize(spec["argv"][0].as_str().unwrap()).unwrap(), exe);
    assert_eq!(
        spec["argv"].as_array().unwrap()[1..],
        [json!("kernel"), json!("run"), json!("--connection-file"), json!("{connection_file}")]
    );

    assert_eq!(code(&ompbook(&["kernel", "install", "--name", "omp-test", "--prefix", prefix])), 2);
    assert_eq!(code(&ompbook(&["kernel", "install", "--name", "omp-test", "--prefix", prefix, "--force"])), 0);
}

#[test]
fn kernel_run_rejects_bad_connection_files() {
    let dir = tempfile::tempdir().unwrap();
    let conn = write_json(dir.path(), "conn.json", &json!({"ip": "127.0.0.1"}));
    let out = ompbook(&["kernel", "run", "--connection-file", &conn]);
    assert_eq!(code(&out), 2);
    assert!(text(&out.stderr).contains("shell_port"));
}
