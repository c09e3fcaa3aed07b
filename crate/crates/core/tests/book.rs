use std::path::{Path, PathBuf};

use ask1_core::obsbuild::layout_table;

fn book_src() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../book/src")
}

#[test]
fn observation_chapter_matches_layout_constants() {
    let chapter = std::fs::read_to_string(book_src().join("observations.md")).unwrap();
    assert!(chapter.contains(&layout_table()), "book/src/observations.md is out of date; paste in the output of obsbuild::layout_table()");
}

#[test]
fn summary_lists_every_chapter_and_lib_includes_them() {
    let summary = std::fs::read_to_string(book_src().join("SUMMARY.md")).unwrap();
    let lib = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let mut chapters: Vec<String> = std::fs::read_dir(book_src())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".md") && n != "SUMMARY.md")
        .collect();
    chapters.sort();
    assert!(!chapters.is_empty());
    for name in &chapters {
        assert!(summary.contains(&format!("({name})")), "{name} missing from SUMMARY.md");
        assert!(lib.contains(&format!("book/src/{name}")), "{name} is not compiled as a doc-test");
    }
}
