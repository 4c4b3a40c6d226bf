//! Generates a small raw corpus with a metadata CSV, crops and resizes it into
//! a class tree and prints the distribution tables.
//!
//! cargo run --example preprocess_fixture -- [out_dir]

use std::path::PathBuf;

use dcnn::cli::{cmd_preprocess, cmd_stats};
use dcnn::data::CLASS_NAMES;
use dcnn::synth::write_raw_corpus;

fn main() -> dcnn::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dcnn_preprocess"));
    let _ = std::fs::remove_dir_all(&out);
    let raw = out.join("raw");
    let records = write_raw_corpus(&raw, 160, 6, 1)?;
    println!("{} raw images in {}", records.len(), raw.display());

    let tree = out.join("tree");
    let summary = cmd_preprocess(&raw.join("metadata.csv"), &raw, &tree, 64, Some(42))?;
    for ((split, class), n) in &summary.counts {
        println!("{split:<6} {:<10} {n}", CLASS_NAMES[*class]);
    }
    println!("{} written, {} rejected", summary.written(), summary.rejected.len());

    let stats = out.join("stats.csv");
    for row in cmd_stats(&raw.join("metadata.csv"), &stats)? {
        println!("{:<12} {:<8} {:<10} {:>3} {:6.2}%", row.section, row.key, row.class, row.count, row.percent);
    }
    println!("{}", stats.display());
    Ok(())
}
