//! Compares backpropagated gradients of a small conv net against central
//! finite differences, one line per parameter tensor.
//!
//! cargo run --example gradient_check

use dcnn::layers::{ActivationKind, Mode};
use dcnn::network::{build_network, InputShape, LayerSpec, Network, NetworkSpec};
use dcnn::rng::SeededRng;
use dcnn::tensor::Tensor;

const STEP: f64 = 1e-5;

fn loss(net: &mut Network<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    net.backward(x, labels, &mut SeededRng::new(0)).unwrap().loss
}

fn nudge(net: &mut Network<f64>, name: &str, i: usize, delta: f64) {
    let mut params = net.named_params_mut();
    let slot = params.iter_mut().find(|(n, _, _)| n == name).unwrap();
    slot.1[i] += delta;
}

fn main() -> dcnn::Result<()> {
    let spec = NetworkSpec {
        input: InputShape {
            channels: 2,
            height: 8,
            width: 8,
        },
        layers: vec![
            LayerSpec::conv3x3(3),
            LayerSpec::batchnorm(),
            LayerSpec::Activation {
                activation: ActivationKind::Mish,
            },
            LayerSpec::MaxPool { window: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 5 },
            LayerSpec::Activation {
                activation: ActivationKind::Gelu,
            },
            LayerSpec::Dense { units: 3 },
        ],
    };
    let mut rng = SeededRng::new(3);
    let mut net: Network<f64> = build_network(&spec, &mut rng)?;
    net.set_mode(Mode::Training);
    let x = Tensor::uniform(net.input_shape(4), -1.0, 1.0, &mut rng);
    let labels = [0, 1, 2, 1];
    let analytic = net.backward(&x, &labels, &mut SeededRng::new(0))?.gradients;

    for entry in &analytic.entries {
        let mut worst: f64 = 0.0;
        for i in 0..entry.values.len() {
            nudge(&mut net, &entry.name, i, STEP);
            let up = loss(&mut net, &x, &labels);
            nudge(&mut net, &entry.name, i, -2.0 * STEP);
            let down = loss(&mut net, &x, &labels);
            nudge(&mut net, &entry.name, i, STEP);
            let numeric = (up - down) / (2.0 * STEP);
            let a = entry.values[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        println!("{:<18} {:>4} values  max rel err {worst:.2e}", entry.name, entry.values.len());
    }
    Ok(())
}
