use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn ska(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ska"))
        .arg("--store")
        .arg(store)
        .args(args)
        .output()
        .unwrap()
}

fn ok(store: &Path, args: &[&str]) -> String {
    let out = ska(store, args);
    assert!(
        out.status.success(),
        "ska {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn seeded(dir: &Path) -> PathBuf {
    let store = dir.join("s.json");
    let book = fixture("sample-book.md");
    ok(&store, &["ingest", book.to_str().unwrap(), "--id", "iir"]);
    ok(
        &store,
        &[
            "qualify",
            "set-test",
            "--section",
            "iir.ch1.s1",
            "--gold",
            "inverted index",
        ],
    );
    for who in ["ann", "bob", "cyd"] {
        ok(
            &store,
            &[
                "annotator",
                "add",
                who,
                "--token",
                &format!("{who}-token-1"),
            ],
        );
        ok(
            &store,
            &["qualify", "run", who, "--answer", "Inverted index"],
        );
    }
    store
}

#[test]
fn ingest_reports_sections_and_honours_the_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("s.json");
    let book = fixture("sample-book.md");
    let out = ok(
        &store,
        &[
            "ingest",
            book.to_str().unwrap(),
            "--min-section-chars",
            "200",
        ],
    );
    assert_eq!(out.trim(), "ingested textbook: 2 chapters, 4 sections");
    let out = ok(
        &store,
        &[
            "ingest",
            book.to_str().unwrap(),
            "--id",
            "raw",
            "--min-section-chars",
            "0",
        ],
    );
    assert_eq!(out.trim(), "ingested raw: 2 chapters, 5 sections");
    let again = ska(&store, &["ingest", book.to_str().unwrap(), "--id", "raw"]);
    assert_eq!(again.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("s.json");
    assert_eq!(ska(&store, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        ska(&store, &["stats", "--format", "xml"]).status.code(),
        Some(2)
    );
    assert_eq!(ska(&store, &["round", "create"]).status.code(), Some(2));
    assert!(!store.exists(), "usage errors never touch the store");
}

#[test]
fn incomplete_agreement_names_the_annotator() {
    let dir = tempfile::tempdir().unwrap();
    let store = seeded(dir.path());
    assert_eq!(
        ok(
            &store,
            &[
                "round",
                "create",
                "--chapter",
                "iir.ch1",
                "--participants",
                "ann,bob,cyd"
            ]
        )
        .trim(),
        "r1"
    );
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "section_id,start,end,surface\n").unwrap();
    ok(
        &store,
        &["submit", "1", "--as", "ann", empty.to_str().unwrap()],
    );
    ok(
        &store,
        &["submit", "r1", "--as", "cyd", empty.to_str().unwrap()],
    );

    let out = ska(&store, &["agreement", "--round", "1", "--phase", "after"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("annotator bob"), "{err}");

    let out = ska(&store, &["agreement", "--round", "1", "--phase", "before"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("annotator bob"));
}

#[test]
fn wrong_phase_and_mismatch_are_domain_errors() {
    let dir = tempfile::tempdir().unwrap();
    let store = seeded(dir.path());
    ok(
        &store,
        &[
            "round",
            "create",
            "--chapter",
            "iir.ch1",
            "--participants",
            "ann,bob,cyd",
        ],
    );
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "section_id,start,end,surface\niir.ch1.s1,0,6,query\n").unwrap();
    let out = ska(
        &store,
        &["submit", "r1", "--as", "ann", bad.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locate mismatch"));

    let out = ska(&store, &["review", "generate", "r1", "--as", "ann"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("phase error"));
}

#[test]
fn export_import_round_trip_and_guard() {
    let dir = tempfile::tempdir().unwrap();
    let store = seeded(dir.path());
    let doc = dir.path().join("doc.json");
    ok(&store, &["export", "-o", doc.to_str().unwrap()]);
    let printed = ok(&store, &["export"]);
    assert_eq!(std::fs::read_to_string(&doc).unwrap(), printed);

    let out = ska(&store, &["import", doc.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "import over a populated store needs --force"
    );
    ok(&store, &["import", doc.to_str().unwrap(), "--force"]);

    let other = dir.path().join("other.json");
    ok(&other, &["import", doc.to_str().unwrap()]);
    assert_eq!(ok(&other, &["export"]), printed);

    let concepts_only = ok(&store, &["export", "--no-text"]);
    assert!(!concepts_only.contains("Scanning the text"));
}

#[test]
fn validate_flags_a_corrupted_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = seeded(dir.path());
    assert!(
        ok(&store, &["validate"]).starts_with("ok: 1 textbook(s), 4 section(s), 3 annotator(s)")
    );
    let text = std::fs::read_to_string(&store).unwrap();
    std::fs::write(
        &store,
        text.replace(
            "\"gold_section_id\": \"iir.ch1.s1\"",
            "\"gold_section_id\": \"iir.ch9.s9\"",
        ),
    )
    .unwrap();
    let out = ska(&store, &["validate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iir.ch9.s9"));
}

#[test]
fn config_file_sets_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("s.json");
    let config = dir.path().join("study.toml");
    std::fs::write(&config, "participants = 2\nmin_section_chars = 0\n").unwrap();
    let book = fixture("sample-book.md");
    let out = ok(
        &store,
        &[
            "--config",
            config.to_str().unwrap(),
            "ingest",
            book.to_str().unwrap(),
        ],
    );
    assert!(out.contains("5 sections"));
    std::fs::write(&config, "participants = 1\n").unwrap();
    let out = ska(&store, &["--config", config.to_str().unwrap(), "validate"]);
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(&config, "particpants = 3\n").unwrap();
    assert_eq!(
        ska(&store, &["--config", config.to_str().unwrap(), "validate"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn codebook_commands() {
    let dir = tempfile::tempdir().unwrap();
    let store = seeded(dir.path());
    assert_eq!(
        ok(&store, &["codebook", "seed", "Tag technical terms"]).trim(),
        "R1"
    );
    let md = ok(&store, &["codebook", "show"]);
    assert!(md.contains("Tag technical terms"));
    let conv: serde_json::Value =
        serde_json::from_str(&ok(&store, &["codebook", "convergence"])).unwrap();
    assert!(conv["converged_at"].is_null());
}
