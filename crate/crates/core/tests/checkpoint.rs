//! File round trips of trained reference networks.

use dcnn::checkpoint::{load_checkpoint, save_checkpoint, TrainProgress};
use dcnn::cli::per_sample_losses;
use dcnn::layers::Mode;
use dcnn::metrics::{classification_report, confusion_matrix};
use dcnn::network::{argmax_rows, build_network, Network, NetworkSpec, ReferenceOptions};
use dcnn::optim::{AdaBeliefConfig, Optimizer, OptimizerKind};
use dcnn::rng::SeededRng;
use dcnn::tensor::Tensor;

fn trained(kind: OptimizerKind, steps: usize) -> (Network<f32>, Optimizer<f32>, Tensor<f32>, Vec<usize>) {
    let spec = NetworkSpec::reference(ReferenceOptions {
        image_size: 64,
        input_scale: 1.0,
        ..Default::default()
    });
    let mut rng = SeededRng::new(21);
    let mut net: Network<f32> = build_network(&spec, &mut rng).unwrap();
    let mut opt = Optimizer::new(kind, AdaBeliefConfig::default(), 1e-3);
    let x = Tensor::uniform(net.input_shape(6), 0.0, 1.0, &mut rng);
    let labels = vec![0, 1, 2, 2, 1, 0];
    net.set_mode(Mode::Training);
    for _ in 0..steps {
        let out = net.backward(&x, &labels, &mut rng).unwrap();
        opt.update(&mut net, &out.gradients).unwrap();
    }
    net.set_mode(Mode::Inference);
    (net, opt, x, labels)
}

#[test]
fn save_load_save_is_byte_identical() {
    for kind in [OptimizerKind::AdaBelief, OptimizerKind::Sgd] {
        let (net, opt, _, _) = trained(kind, 2);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let progress = TrainProgress::new(99, 1e-3);
        save_checkpoint(&net, &opt, &progress, &a).unwrap();
        let ck = load_checkpoint(&a).unwrap();
        save_checkpoint(&ck.network, &ck.optimizer, &ck.progress, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(ck.progress.seed, 99);
        assert_eq!(ck.optimizer, opt);
        assert_eq!(ck.network, net);
    }
}

#[test]
fn logits_and_metrics_survive_bitwise() {
    let (net, opt, x, labels) = trained(OptimizerKind::AdaBelief, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&net, &opt, &TrainProgress::new(1, 1e-3), &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap().network;
    assert_eq!(loaded.mode(), Mode::Inference);

    let (before, after) = (net.infer(&x).unwrap(), loaded.infer(&x).unwrap());
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&before), bits(&after));

    let report = |logits: &Tensor<f32>| {
        let cm = confusion_matrix(&labels, &argmax_rows(logits), 3).unwrap();
        classification_report(&cm, &per_sample_losses(logits, &labels))
    };
    assert_eq!(report(&before), report(&after));
}

#[test]
fn optimizer_step_counter_is_kept() {
    let (net, opt, _, _) = trained(OptimizerKind::AdaBelief, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    let mut progress = TrainProgress::new(3, 5e-3);
    progress.epoch = 2;
    save_checkpoint(&net, &opt, &progress, &path).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.optimizer.step_count(), 4);
    assert_eq!(ck.progress.epoch, 2);
    assert_eq!(ck.progress.base_lr, 5e-3);
}

#[test]
fn damaged_files_are_data_errors() {
    let (net, opt, _, _) = trained(OptimizerKind::Sgd, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.ckpt");
    save_checkpoint(&net, &opt, &TrainProgress::new(1, 1e-3), &path).unwrap();
    let good = std::fs::read(&path).unwrap();
    for cut in [2, 10, good.len() / 2, good.len() - 1] {
        std::fs::write(&path, &good[..cut]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2, "cut {cut}: {err}");
    }
    assert_eq!(load_checkpoint(&dir.path().join("none.ckpt")).unwrap_err().exit_code(), 2);
}
