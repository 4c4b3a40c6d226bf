//! Scores a fixed set of predictions: confusion matrix, per-class report and
//! Cohen's kappa.
//!
//! cargo run --example evaluate

use dcnn::metrics::{classification_report, cohens_kappa, confusion_matrix, format_report, normalize_rows};

fn main() -> dcnn::Result<()> {
    let truth = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2];
    let predicted = [0, 0, 0, 1, 0, 1, 1, 2, 1, 1, 2, 2, 2, 0, 2, 2];
    let cm = confusion_matrix(&truth, &predicted, 3)?;

    println!("confusion (rows truth, columns predicted)");
    for (name, (row, norm)) in cm.class_names.iter().zip(cm.counts.iter().zip(normalize_rows(&cm)?)) {
        println!("{name:<10} {row:?}  {norm:.2?}");
    }
    println!("accuracy {:.4}  kappa {:.4}\n", cm.accuracy(), cohens_kappa(&cm));
    print!("{}", format_report(&classification_report(&cm, &[])));
    Ok(())
}
