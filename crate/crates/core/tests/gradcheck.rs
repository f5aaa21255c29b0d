//! Finite-difference checks for every graph operation and a whole network.

use auhm_core::gradcheck::{check_model, check_op, random_tensor, rel_err, GradReport};
use auhm_core::model::{Model, ModelConfig};
use auhm_core::tensor::BatchNormMode;

const TOL: f64 = 1e-4;

fn assert_ok(what: &str, r: GradReport) {
    assert!(r.checked > 0, "{what}: nothing checked");
    assert!(r.max_rel_err <= TOL, "{what}: rel err {:e} at {}", r.max_rel_err, r.worst);
}

#[test]
fn rel_err_floor() {
    assert_eq!(rel_err(2.0, 2.0), 0.0);
    assert!((rel_err(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    // tiny gradients are judged against the floor, not each other
    assert!((rel_err(1e-9, -1e-9) - 2e-6).abs() < 1e-15);
}

#[test]
fn conv_with_bias() {
    for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 3)] {
        let x = random_tensor(&[2, 3, 7, 6], -1.0, 1.0, 1);
        let w = random_tensor(&[4, 3, 3, 3], -0.5, 0.5, 2);
        let b = random_tensor(&[4], -0.5, 0.5, 3);
        let r = check_op(&[x, w, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad)).unwrap();
        assert_ok(&format!("conv stride {stride} pad {pad}"), r);
    }
}

#[test]
fn conv_1x1_without_bias() {
    let x = random_tensor(&[2, 5, 4, 4], -1.0, 1.0, 4);
    let w = random_tensor(&[3, 5, 1, 1], -0.5, 0.5, 5);
    assert_ok("conv 1x1", check_op(&[x, w], |g, v| g.conv2d(v[0], v[1], None, 1, 0)).unwrap());
}

#[test]
fn batchnorm_train() {
    let x = random_tensor(&[3, 4, 3, 3], -2.0, 2.0, 6);
    let gamma = random_tensor(&[4], 0.5, 1.5, 7);
    let beta = random_tensor(&[4], -0.5, 0.5, 8);
    let r = check_op(&[x, gamma, beta], |g, v| {
        Ok(g.batchnorm2d(v[0], v[1], v[2], BatchNormMode::Train)?.0)
    })
    .unwrap();
    assert_ok("batchnorm train", r);
}

#[test]
fn batchnorm_eval() {
    let x = random_tensor(&[2, 4, 3, 3], -2.0, 2.0, 9);
    let gamma = random_tensor(&[4], 0.5, 1.5, 10);
    let beta = random_tensor(&[4], -0.5, 0.5, 11);
    let mean = [0.1, -0.2, 0.3, 0.0];
    let var = [0.5, 1.0, 2.0, 0.8];
    let r = check_op(&[x, gamma, beta], |g, v| {
        Ok(g.batchnorm2d(v[0], v[1], v[2], BatchNormMode::Eval { mean: &mean, var: &var })?.0)
    })
    .unwrap();
    assert_ok("batchnorm eval", r);
}

#[test]
fn relu() {
    let x = random_tensor(&[2, 3, 5, 5], -1.0, 1.0, 12);
    assert_ok("relu", check_op(&[x], |g, v| Ok(g.relu(v[0]))).unwrap());
}

#[test]
fn maxpool() {
    let x = random_tensor(&[2, 3, 6, 4], -1.0, 1.0, 13);
    assert_ok("maxpool", check_op(&[x], |g, v| g.maxpool2(v[0])).unwrap());
}

#[test]
fn upsample() {
    let x = random_tensor(&[2, 3, 3, 4], -1.0, 1.0, 14);
    assert_ok("upsample", check_op(&[x], |g, v| g.upsample_nearest2(v[0])).unwrap());
}

#[test]
fn add_and_mul() {
    let a = random_tensor(&[2, 3, 4], -1.0, 1.0, 15);
    let b = random_tensor(&[2, 3, 4], -1.0, 1.0, 16);
    assert_ok("add", check_op(&[a.clone(), b.clone()], |g, v| g.add(v[0], v[1])).unwrap());
    assert_ok("mul", check_op(&[a.clone(), b], |g, v| g.mul(v[0], v[1])).unwrap());
    // same operand on both sides
    assert_ok("square", check_op(&[a], |g, v| g.mul(v[0], v[0])).unwrap());
}

#[test]
fn sum() {
    let a = random_tensor(&[3, 5], -1.0, 1.0, 17);
    assert_ok("sum", check_op(&[a], |g, v| Ok(g.sum(v[0]))).unwrap());
}

#[test]
fn huber_both_branches() {
    // residuals span the quadratic and linear parts
    let pred = random_tensor(&[2, 3, 4, 4], -3.0, 3.0, 18);
    let target = random_tensor(&[2, 3, 4, 4], -1.0, 1.0, 19);
    let weights = [0.2, 0.5, 0.3];
    let r = check_op(&[pred], |g, v| g.huber_loss(v[0], &target, &weights)).unwrap();
    assert_ok("huber", r);
}

#[test]
fn composed_chain() {
    let x = random_tensor(&[2, 2, 8, 8], -1.0, 1.0, 20);
    let w = random_tensor(&[3, 2, 3, 3], -0.5, 0.5, 21);
    let gamma = random_tensor(&[3], 0.5, 1.5, 22);
    let beta = random_tensor(&[3], -0.5, 0.5, 23);
    let r = check_op(&[x, w, gamma, beta], |g, v| {
        let c = g.conv2d(v[0], v[1], None, 1, 1)?;
        let (n, _) = g.batchnorm2d(c, v[2], v[3], BatchNormMode::Train)?;
        let a = g.relu(n);
        let p = g.maxpool2(a)?;
        let u = g.upsample_nearest2(p)?;
        g.add(u, c)
    })
    .unwrap();
    assert_ok("chain", r);
}

#[test]
fn whole_tiny_network() {
    let cfg = ModelConfig {
        input_size: 16,
        heatmap_size: 4,
        n_aus: 2,
        base_channels: 8,
        mid_channels: 4,
        hourglass_depth: 1,
    };
    let model = Model::<f64>::build(&cfg, 3).unwrap();
    let x = random_tensor(&[2, 3, 16, 16], 0.0, 1.0, 24);
    let r = check_model(&model, &x, 1).unwrap();
    assert!(r.checked > 100, "{}", r.checked);
    assert_ok("network", r);
}
