//! Runs four hand-set edge kernels over a stripe texture and writes the
//! activation grid of each layer as a grey PNG.
//!
//! cargo run --example feature_maps -- [out_dir]

use std::path::PathBuf;

use dcnn::data::encode_gray_png;
use dcnn::interpret::{activation_grid, image_tensor};
use dcnn::layers::{ActivationKind, ConvParams, Layer, PoolMode};
use dcnn::network::{InputShape, LayerSpec, Network, NetworkSpec};
use dcnn::rng::SeededRng;
use dcnn::synth::{texture_image, Texture};
use dcnn::tensor::{Shape4, Tensor};

const EDGES: [[f64; 9]; 4] = [
    [-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
    [-1.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0, -1.0, 0.0, 1.0, -1.0, -1.0, 0.0],
    [1.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, -1.0, -1.0],
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dcnn_feature_maps"));
    std::fs::create_dir_all(&out)?;
    let size = 64;
    let half = size as usize / 2;
    let image = texture_image(Texture::Stripes, size, &mut SeededRng::new(5));

    // the same edge kernel on every input channel, scaled to average them
    let kernels = Tensor::from_fn(Shape4::new(4, 3, 3, 3)?, |o, _, y, x| EDGES[o][y * 3 + x] / 3.0);
    let spec = NetworkSpec {
        input: InputShape {
            channels: 3,
            height: size as usize,
            width: size as usize,
        },
        layers: vec![
            LayerSpec::conv3x3(4),
            LayerSpec::Activation {
                activation: ActivationKind::Relu,
            },
            LayerSpec::MaxPool { window: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 3 },
        ],
    };
    let net: Network<f64> = Network::from_layers(
        spec,
        vec![
            Layer::Conv(ConvParams::new(kernels, vec![0.0; 4], 1, 1)?),
            Layer::Activation(ActivationKind::Relu),
            Layer::Pool {
                mode: PoolMode::Max,
                window: 2,
                stride: 2,
            },
            Layer::Flatten,
            Layer::Dense {
                weights: Tensor::zeros(Shape4::new(3, 4 * half * half, 1, 1)?),
                bias: vec![0.0; 3],
            },
        ],
    )?;

    let x = image_tensor(&image, true);
    // the dense head is unused; grids stop at the first flatten
    for layer in 0..3 {
        let grid = activation_grid(&net, &x, layer)?;
        let path = out.join(format!("layer{layer:02}_{}.png", net.layers()[layer].kind()));
        let png = encode_gray_png(grid.width() as u32, grid.height() as u32, &grid.pixels)?;
        std::fs::write(&path, png)?;
        let means: Vec<String> = (0..grid.channels)
            .map(|c| {
                let tile = grid.tile(c);
                format!("{:.1}", tile.iter().map(|&v| v as f64).sum::<f64>() / tile.len() as f64)
            })
            .collect();
        println!("{}  mean grey per map {}", path.display(), means.join(" "));
    }
    Ok(())
}
