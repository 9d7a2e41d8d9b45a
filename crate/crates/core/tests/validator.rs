use std::fs;
use std::path::{Path, PathBuf};

use ompbook_core::book::{BookError, BookManifest};
use ompbook_core::exec::{find_executable, ExitCode, Expect, ToolchainConfig};
use ompbook_core::validator::{
    collect_examples, corpus_stats, render_report, validate, CorpusStats, ExampleResult, FailureKind, ReportFormat,
    Totals, ValidationReport, ValidatorError, MIN_RACE_RUNS,
};
use proptest::prelude::*;

fn fixture_book() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/book/book.json")
}

fn toolchain() -> Option<ToolchainConfig> {
    let cfg = ToolchainConfig::default();
    if find_executable(&cfg.cc).is_none() || find_executable(&cfg.cxx).is_none() {
        eprintln!("skipping: no C/C++ compiler");
        return None;
    }
    Some(cfg)
}

fn write_book(dir: &Path, chapters: &[(&str, &str)]) -> BookManifest {
    let entries: Vec<_> = chapters
        .iter()
        .map(|(path, text)| {
            let full = dir.join(path);
            fs::create_dir_all(full.parent().unwrap()).unwrap();
            fs::write(full, text).unwrap();
            serde_json::json!({"path": path, "title": path})
        })
        .collect();
    let manifest = serde_json::json!({"title": "T", "chapters": entries});
    let path = dir.join("book.json");
    fs::write(&path, serde_json::to_vec(&manifest).unwrap()).unwrap();
    BookManifest::load(&path).unwrap()
}

/// Copy of the fixture book with every `expect:` directive line removed.
fn stripped_book(dir: &Path) -> BookManifest {
    let src = BookManifest::load(&fixture_book()).unwrap();
    let chapters: Vec<(String, String)> = src
        .chapters
        .iter()
        .map(|ch| {
            let text = fs::read_to_string(src.chapter_path(ch)).unwrap();
            let kept: String = text.split_inclusive('\n').filter(|l| !l.starts_with("//%expect:")).collect();
            (ch.path.clone(), kept)
        })
        .collect();
    let refs: Vec<(&str, &str)> = chapters.iter().map(|(p, t)| (p.as_str(), t.as_str())).collect();
    write_book(dir, &refs)
}

#[test]
fn collects_in_chapter_then_cell_order() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_book(
        dir.path(),
        &[
            ("b.md", "# B\n\n```c\nint main(){return 0;}\n```\n\ntext\n\n```cpp\nint main(){}\n```\n"),
            ("a.md", "```c norun\nnot a cell\n```\n\n```c\n//%runs: 2\nint main(){return 0;}\n```\n"),
        ],
    );
    let records = collect_examples(&m).unwrap();
    let keys: Vec<_> = records.iter().map(|r| (r.chapter.as_str(), r.cell_index)).collect();
    assert_eq!(keys, vec![("b.md", 1), ("b.md", 3), ("a.md", 1)]);
    assert_eq!(records[2].directives.runs, 2);
    assert_eq!(records[2].body(), "int main(){return 0;}");
    assert_eq!(records[1].lang, ompbook_core::Lang::Cpp);
}

#[test]
fn book_without_code_has_no_examples() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_book(dir.path(), &[("a.md", "# Only prose\n\n```text\nx\n```\n")]);
    assert!(collect_examples(&m).unwrap().is_empty());
}

#[test]
fn unterminated_fence_and_missing_chapter_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_book(dir.path(), &[("a.md", "```c\nint x;\n")]);
    assert!(matches!(collect_examples(&m), Err(ValidatorError::Book(BookError::UnterminatedFence { .. }))));
    fs::remove_file(dir.path().join("a.md")).unwrap();
    assert!(matches!(corpus_stats(&m), Err(ValidatorError::Book(BookError::Io { .. }))));
}

#[test]
fn race_cells_get_at_least_twenty_runs() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_book(dir.path(), &[("a.md", "```c\n//%runs: 3\n//%expect: nondeterministic\nint main(){}\n```\n")]);
    assert_eq!(collect_examples(&m).unwrap()[0].directives.runs, MIN_RACE_RUNS);
}

#[test]
fn fixture_stats_match_hand_count() {
    let m = BookManifest::load(&fixture_book()).unwrap();
    let stats = corpus_stats(&m).unwrap();
    assert_eq!(
        stats,
        CorpusStats { example_count: 12, code_line_count: 240, text_line_count: 310, total_line_count: 550 }
    );
}

#[test]
fn empty_book_stats_are_zero() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_book(dir.path(), &[]);
    assert_eq!(corpus_stats(&m).unwrap(), CorpusStats::default());
}

#[test]
fn adding_a_ten_line_cell() {
    let dir = tempfile::tempdir().unwrap();
    let base = "# T\n\nSome prose.\n";
    let before = corpus_stats(&write_book(dir.path(), &[("a.md", base)])).unwrap();
    let cell = format!("{base}\n```c\n{}```\n", "int x;\n".repeat(10));
    let after = corpus_stats(&write_book(dir.path(), &[("a.md", &cell)])).unwrap();
    assert_eq!(after.example_count, before.example_count + 1);
    assert_eq!(after.code_line_count, before.code_line_count + 10);
    assert_eq!(after.text_line_count, before.text_line_count);
}

fn rejudge(r: &ExampleResult) -> bool {
    match r.expect {
        Expect::CompileError => !r.compile_ok,
        expect => {
            let clean = r.compile_ok && !r.timed_out && r.exit_codes.iter().all(|c| *c == ExitCode::Code(0));
            let racy = r.deterministic == Some(false);
            clean && if expect == Expect::Nondeterministic { racy } else { !racy }
        }
    }
}

fn check_report_invariants(report: &ValidationReport) {
    let t = &report.totals;
    assert_eq!(t.passed + t.failed, t.examples);
    assert_eq!(t.compile_failures + t.run_failures + t.timeouts + t.nondeterministic, t.failed);
    assert_eq!(Totals::from_results(&report.results), *t);
    for r in &report.results {
        assert_eq!(r.passed, rejudge(r), "{} cell {}", r.chapter, r.cell_index);
        assert_eq!(r.passed, r.failure.is_none());
    }
}

#[test]
fn seeded_corpus_passes_and_stripped_corpus_fails_three() {
    let Some(cfg) = toolchain() else { return };
    let m = BookManifest::load(&fixture_book()).unwrap();

    let serial = validate(&m, &cfg, 1).unwrap();
    check_report_invariants(&serial);
    assert_eq!(serial.totals.examples, 12);
    assert_eq!(serial.totals.passed, 12, "{}", String::from_utf8_lossy(&render_report(&serial, ReportFormat::Text)));
    assert_eq!(serial.totals.failed, 0);
    let text = String::from_utf8(render_report(&serial, ReportFormat::Text)).unwrap();
    assert!(text.ends_with("PASS 12/12  compile-fail 0  run-fail 0  nondet 0\n"));
    assert_eq!(text.lines().count(), 13);

    let pooled = validate(&m, &cfg, 8).unwrap();
    let normalize = |mut r: ValidationReport| {
        r.wall_time_ms = 0;
        r
    };
    assert_eq!(normalize(serial.clone()), normalize(pooled.clone()));
    assert_eq!(
        render_report(&normalize(serial), ReportFormat::Json),
        render_report(&normalize(pooled), ReportFormat::Json)
    );

    let dir = tempfile::tempdir().unwrap();
    let stripped = validate(&stripped_book(dir.path()), &cfg, 2).unwrap();
    check_report_invariants(&stripped);
    assert_eq!(stripped.totals.failed, 3);
    assert_eq!(stripped.totals.compile_failures, 2);
    assert_eq!(stripped.totals.nondeterministic, 1);
    assert_eq!(stripped.totals.run_failures + stripped.totals.timeouts, 0);
    let race = stripped.results.iter().find(|r| r.failure == Some(FailureKind::Nondeterministic)).unwrap();
    assert_eq!(race.runs, 20);
    assert_eq!(race.deterministic, Some(false));
    let compile = stripped.results.iter().find(|r| r.failure == Some(FailureKind::CompileFailure)).unwrap();
    assert!(compile.diagnostics.contains("error"));
    assert!(compile.diagnostics.len() <= 2048);
}

#[test]
fn empty_book_validates_as_all_pass() {
    let Some(cfg) = toolchain() else { return };
    let dir = tempfile::tempdir().unwrap();
    let report = validate(&write_book(dir.path(), &[]), &cfg, 4).unwrap();
    assert_eq!(report.totals, Totals::default());
    assert!(report.totals.all_passed());
}

#[test]
fn failures_land_in_one_bucket_each() {
    let Some(cfg) = toolchain() else { return };
    let dir = tempfile::tempdir().unwrap();
    let m = write_book(
        dir.path(),
        &[(
            "a.md",
            "```c\nint main(){return 3;}\n```\n\n```c\n//%timeout: 0.5\nint main(){for(;;){}}\n```\n\n```c\n//%expect: compile_error\nint main(){return 0;}\n```\n",
        )],
    );
    let report = validate(&m, &cfg, 2).unwrap();
    check_report_invariants(&report);
    let kinds: Vec<_> = report.results.iter().map(|r| r.failure).collect();
    assert_eq!(
        kinds,
        vec![Some(FailureKind::RunFailure), Some(FailureKind::Timeout), Some(FailureKind::CompileFailure)]
    );
    let text = String::from_utf8(render_report(&report, ReportFormat::Text)).unwrap();
    assert!(text.contains("PASS 0/3  compile-fail 1  run-fail 1  nondet 0\n"));
    assert!(text.ends_with("timeout 1\n"));
}

#[test]
fn missing_toolchain_is_infrastructure_error() {
    let cfg = ToolchainConfig { cc: "no-such-cc".into(), ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let m = write_book(dir.path(), &[("a.md", "```c\nint main(){}\n```\n")]);
    assert!(matches!(validate(&m, &cfg, 1), Err(ValidatorError::Infrastructure(_))));
}

#[test]
fn json_report_round_trips() {
    let Some(cfg) = toolchain() else { return };
    let dir = tempfile::tempdir().unwrap();
    let m = write_book(
        dir.path(),
        &[("a.md", "Intro\n\n```c\n#include <stdio.h>\nint main(){puts(\"x\");return 0;}\n```\n")],
    );
    let report = validate(&m, &cfg, 1).unwrap();
    let bytes = render_report(&report, ReportFormat::Json);
    assert_eq!(bytes, render_report(&report, ReportFormat::Json));
    let back: ValidationReport = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.stats.text_line_count, 1);
}

fn chapter_text() -> impl Strategy<Value = String> {
    let prose = "[a-z #*]{0,12}(\n[a-z ]{0,12}){0,4}".prop_map(|s| s);
    let code = ("(c|cpp|c norun|text)", "[a-z;]{0,10}(\n[a-z;]{0,10}){0,5}")
        .prop_map(|(lang, body)| format!("```{lang}\n{body}\n```"));
    prop::collection::vec(prop_oneof![prose, code], 0..6).prop_map(|parts| parts.join("\n\n") + "\n")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stats_are_additive_over_chapters(a in chapter_text(), b in chapter_text()) {
        let dir = tempfile::tempdir().unwrap();
        let both = corpus_stats(&write_book(dir.path(), &[("a.md", &a), ("b.md", &b)])).unwrap();
        let sa = corpus_stats(&write_book(dir.path(), &[("a.md", &a)])).unwrap();
        let sb = corpus_stats(&write_book(dir.path(), &[("b.md", &b)])).unwrap();
        prop_assert_eq!(both, sa + sb);
        prop_assert_eq!(both.total_line_count, both.code_line_count + both.text_line_count);
    }

    #[test]
    fn stats_are_additive_over_text_concatenation(a in chapter_text(), b in chapter_text()) {
        // A trailing code cell keeps the two chapters' prose from merging.
        let a = format!("{a}\n```c\nint end;\n```\n");
        let dir = tempfile::tempdir().unwrap();
        let joined = corpus_stats(&write_book(dir.path(), &[("ab.md", &format!("{a}{b}"))])).unwrap();
        let sa = corpus_stats(&write_book(dir.path(), &[("a.md", &a)])).unwrap();
        let sb = corpus_stats(&write_book(dir.path(), &[("b.md", &b)])).unwrap();
        prop_assert_eq!(joined, sa + sb);
    }
}
