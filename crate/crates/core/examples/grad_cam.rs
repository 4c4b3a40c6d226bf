//! Trains a small conv net on 32×32 textures for a few hundred steps, then
//! writes a Grad-CAM overlay for one held-out image of each class.
//!
//! cargo run --example grad_cam -- [out_dir]

use std::path::PathBuf;

use dcnn::data::save_png;
use dcnn::interpret::{grad_cam, image_tensor, overlay};
use dcnn::layers::{ActivationKind, Mode};
use dcnn::network::{build_network, InputShape, LayerSpec, Network, NetworkSpec};
use dcnn::optim::{AdaBeliefConfig, Optimizer, OptimizerKind};
use dcnn::rng::SeededRng;
use dcnn::synth::{texture_image, Texture};
use dcnn::tensor::{Shape4, Tensor};

const SIZE: u32 = 32;

fn block(filters: usize) -> [LayerSpec; 4] {
    [
        LayerSpec::conv3x3(filters),
        LayerSpec::batchnorm(),
        LayerSpec::Activation {
            activation: ActivationKind::Mish,
        },
        LayerSpec::MaxPool { window: 2, stride: 2 },
    ]
}

fn batch(rng: &mut SeededRng, n: usize) -> dcnn::Result<(Tensor<f32>, Vec<usize>)> {
    let side = SIZE as usize;
    let mut data = Vec::with_capacity(n * 3 * side * side);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let texture = Texture::ALL[rng.below(3) as usize];
        data.extend_from_slice(image_tensor::<f32>(&texture_image(texture, SIZE, rng), true).data());
        labels.push(texture.label());
    }
    Ok((Tensor::from_vec(Shape4::new(n, 3, side, side)?, data)?, labels))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dcnn_grad_cam"));
    let mut layers: Vec<LayerSpec> = [block(8), block(16), block(16)].concat();
    layers.extend([LayerSpec::Flatten, LayerSpec::Dense { units: 3 }]);
    let spec = NetworkSpec {
        input: InputShape {
            channels: 3,
            height: SIZE as usize,
            width: SIZE as usize,
        },
        layers,
    };
    let mut rng = SeededRng::new(9);
    let mut net: Network<f32> = build_network(&spec, &mut rng)?;
    let mut opt = Optimizer::new(OptimizerKind::AdaBelief, AdaBeliefConfig::default(), 3e-3);

    net.set_mode(Mode::Training);
    for step in 1..=300 {
        let (x, y) = batch(&mut rng, 16)?;
        let result = net.backward(&x, &y, &mut rng)?;
        opt.update(&mut net, &result.gradients)?;
        if step % 50 == 0 {
            println!("step {step:3}  loss {:.4}", result.loss);
        }
    }
    net.set_mode(Mode::Inference);

    std::fs::create_dir_all(&out)?;
    let mut test_rng = SeededRng::new(1234);
    for texture in Texture::ALL {
        let image = texture_image(texture, SIZE, &mut test_rng);
        let x = image_tensor::<f32>(&image, true);
        let predicted = net.predict(&x)?[0];
        let heatmap = grad_cam(&net, &x, texture.label())?;
        let (hx, hy) = heatmap.argmax();
        let path = out.join(format!("{texture:?}_gradcam.png").to_lowercase());
        save_png(&overlay(&image, &heatmap, 0.4)?, &path)?;
        println!(
            "{texture:?}: predicted {predicted}, peak at ({hx}, {hy}) -> {}",
            path.display()
        );
    }
    Ok(())
}
