//! Prints a triangular cyclical schedule and a plateau-reduction trace.
//!
//! cargo run --example lr_schedules

use dcnn::optim::{ClrSchedule, PlateauPolicy, PlateauTracker};

fn main() -> dcnn::Result<()> {
    let clr = ClrSchedule::new(1e-3, 1e-2, 5)?;
    println!("step  lr");
    for step in 0..=20 {
        let lr = clr.lr(step);
        println!("{step:4}  {lr:.4e}  {}", "#".repeat((lr * 4000.0) as usize));
    }

    let policy = PlateauPolicy {
        factor: 0.5,
        patience: 2,
        floor: 1e-3,
        threshold: 1e-4,
    };
    let val_loss = [1.0, 0.8, 0.7, 0.7, 0.7, 0.7, 0.69995, 0.7, 0.7, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6];
    let mut tracker = PlateauTracker::new();
    let mut lr = 1e-2;
    println!("\nepoch  val_loss  lr");
    for (epoch, &v) in val_loss.iter().enumerate() {
        lr = tracker.update(&policy, v, lr);
        println!("{:5}  {v:.5}  {lr:.2e}", epoch + 1);
    }
    Ok(())
}
