use popgrid::estimator::{ForwardMode, LogBase, LogCosh, ModelConfig, Network};
use popgrid::patch::PatchTensor;
use popgrid::Xoshiro256StarStar;

fn random_batch(rng: &mut Xoshiro256StarStar, n: usize, side: usize) -> Vec<PatchTensor<f64>> {
    (0..n)
        .map(|i| {
            let v = (0..4 * side * side).map(|_| rng.uniform(0.0, 1.0)).collect();
            PatchTensor::new(side, side, v, (i, 0), 1).unwrap()
        })
        .collect()
}

fn loss_at(net: &Network<f64>, batch: &[PatchTensor<f64>], truth: &[f64], loss: &LogCosh) -> f64 {
    let pass = net.forward(batch, ForwardMode::Inference).unwrap();
    loss.loss(&pass.outputs, truth).unwrap()
}

/// Largest relative error between backprop and central differences over
/// every parameter. Pairs where both magnitudes are below `floor` are
/// compared absolutely.
fn max_rel_error(conv: Vec<usize>, base: LogBase, seed: u64) -> (f64, usize) {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let cfg = ModelConfig {
        input_size: 8,
        conv_channels: conv,
        dropout: 0.5,
    };
    let mut net = Network::<f64>::new(cfg, &mut rng).unwrap();
    // Biases start at zero; perturb them so their gradients are generic.
    for slot in net.params().slots().to_vec() {
        if slot.name.ends_with(".bias") {
            for v in net.params_mut().get_mut(&slot.name) {
                *v = rng.uniform(-0.1, 0.1);
            }
        }
    }
    let batch = random_batch(&mut rng, 3, 8);
    let truth: Vec<f64> = (0..3).map(|_| rng.uniform(0.0, 4.0)).collect();
    let loss = LogCosh::new(base);

    let pass = net.forward(&batch, ForwardMode::TrainNoDropout).unwrap();
    let analytic = net.backward(&batch, &pass, &truth, &loss).unwrap();

    let h = 1e-6;
    let floor = 1e-7;
    let mut worst: f64 = 0.0;
    for i in 0..analytic.len() {
        let orig = net.params().values[i];
        net.params_mut().values[i] = orig + h;
        let up = loss_at(&net, &batch, &truth, &loss);
        net.params_mut().values[i] = orig - h;
        let down = loss_at(&net, &batch, &truth, &loss);
        net.params_mut().values[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        let err = if scale < floor {
            (a - numeric).abs()
        } else {
            (a - numeric).abs() / scale
        };
        worst = worst.max(err);
    }
    (worst, analytic.len())
}

#[test]
fn one_block_backward_matches_finite_differences() {
    for seed in [1, 2, 3] {
        let (err, n) = max_rel_error(vec![4], LogBase::Ten, seed);
        assert!(n > 100);
        assert!(err <= 1e-4, "seed {seed}: max relative error {err:e} over {n} parameters");
    }
}

#[test]
fn two_blocks_natural_log_backward_matches_finite_differences() {
    let (err, n) = max_rel_error(vec![3, 5], LogBase::E, 9);
    assert!(err <= 1e-4, "max relative error {err:e} over {n} parameters");
}
