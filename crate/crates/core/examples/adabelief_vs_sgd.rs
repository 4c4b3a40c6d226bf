//! Minimises the ill-conditioned bowl x² + 10y² with AdaBelief and with
//! plain SGD from the same start and prints both loss curves.
//!
//! cargo run --example adabelief_vs_sgd -- [steps]

use dcnn::optim::{adabelief_step, sgd_step, AdaBeliefConfig};

fn grad(p: &[f64; 2]) -> [f64; 2] {
    [2.0 * p[0], 20.0 * p[1]]
}

fn loss(p: &[f64; 2]) -> f64 {
    p[0] * p[0] + 10.0 * p[1] * p[1]
}

fn main() -> dcnn::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let cfg = AdaBeliefConfig::default();
    let mut ada = [1.0, 1.0];
    let (mut m, mut s) = ([0.0; 2], [0.0; 2]);
    let mut sgd = [1.0, 1.0];

    println!("step  adabelief     sgd");
    for t in 1..=steps {
        let (ga, gs) = (grad(&ada), grad(&sgd));
        adabelief_step(&mut ada, &ga, &mut m, &mut s, t, &cfg, 1e-2);
        sgd_step(&mut sgd, &gs, 1e-2)?;
        if t == 1 || t % (steps / 10).max(1) == 0 {
            println!("{t:4}  {:.3e}  {:.3e}", loss(&ada), loss(&sgd));
        }
    }
    Ok(())
}
