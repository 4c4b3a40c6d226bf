//! Trains the reference network on generated blob / stripes / checkerboard
//! textures and prints the epoch log.
//!
//! cargo run --release --example train_synthetic -- [out_dir] [epochs] [per_class]

use std::path::PathBuf;

use dcnn::cli::{train, RunOverrides};
use dcnn::data::Split;
use dcnn::synth::write_texture_tree;

fn main() -> dcnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dcnn_synth"));
    let epochs: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let per_class: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let valid = per_class / 5;

    let data = out.join("data");
    let run = out.join("run");
    let _ = std::fs::remove_dir_all(&out);
    write_texture_tree(&data, 128, &[(Split::Train, per_class - valid), (Split::Valid, valid)], 7)?;

    let cfg = RunOverrides {
        data_dir: Some(data),
        run_dir: Some(run),
        epochs: Some(epochs),
        batch_size: Some(32),
        seed: Some(7),
        lr: Some(1e-2),
        clr_min_lr: Some(1e-3),
        bn_momentum: Some(0.9),
        ..Default::default()
    }
    .finish()?;
    let summary = train(&cfg, &mut |r| {
        println!(
            "epoch {:2}  lr {:.2e}  train loss {:.4} acc {:.3}  val loss {:.4} acc {:.3} kappa {:.3}  {:.1}s",
            r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.val_kappa, r.seconds
        )
    })?;
    println!("{} steps; run directory {}", summary.steps, summary.run_dir.display());
    Ok(())
}
