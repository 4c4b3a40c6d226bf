//! Prints the reference architecture layer by layer with output shapes and
//! parameter counts.
//!
//! cargo run --example reference_model -- [image_size]

use dcnn::network::{build_network, Network, NetworkSpec, ReferenceOptions};
use dcnn::rng::SeededRng;

fn main() -> dcnn::Result<()> {
    let size: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(128);
    let spec = NetworkSpec::reference(ReferenceOptions {
        image_size: size,
        ..Default::default()
    });
    let shapes = spec.validate()?;
    let net: Network<f32> = build_network(&spec, &mut SeededRng::new(0))?;

    println!("input {}×{}×{}", spec.input.channels, spec.input.height, spec.input.width);
    for (i, ((layer, (c, h, w)), built)) in spec.layers.iter().zip(&shapes).zip(net.layers()).enumerate() {
        let (mut trainable, mut frozen) = (0, 0);
        for p in built.params() {
            if p.trainable {
                trainable += p.values.len();
            } else {
                frozen += p.values.len();
            }
        }
        println!("{i:2} {:<10} {:>4}×{:>3}×{:<3} {trainable:>7} {frozen:>4}", layer.kind(), c, h, w);
    }
    let count = net.param_count();
    println!(
        "trainable {}  non-trainable {}  total {}",
        count.trainable, count.non_trainable, count.total
    );
    println!("batch-norm features {}", spec.batchnorm_features()?);
    Ok(())
}
