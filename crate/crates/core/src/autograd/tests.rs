use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Central-difference check of every leaf element against the tape's gradient.
fn check<Fb>(leaves: Vec<Tensor<f64>>, build: Fb) -> f64
where
    Fb: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |ls: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ls.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = build(&mut g, &vars);
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars);
    let grads = g.backward(out);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(vars[li]).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for i in 0..leaf.numel() {
            let mut plus = leaves.clone();
            plus[li].data_mut()[i] += h;
            let mut minus = leaves.clone();
            minus[li].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let err = (numeric - analytic[i]).abs() / (numeric.abs() + analytic[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

/// Reduces any node to a scalar with fixed random weights so every element matters.
fn probe(g: &mut Graph<f64>, v: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(v).to_vec();
    let target = g.constant(random_tensor(&mut rng, &shape));
    g.mse(v, target).unwrap()
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let leaves = vec![
        random_tensor(&mut rng, &[2, 3, 4]),
        random_tensor(&mut rng, &[4, 5]),
        random_tensor(&mut rng, &[5]),
    ];
    let err = check(leaves, |g, v| {
        let y = g.linear(v[0], v[1], Some(v[2])).unwrap();
        probe(g, y, 9)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn layer_norm_and_gelu_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let leaves = vec![
        random_tensor(&mut rng, &[3, 6]),
        random_tensor(&mut rng, &[6]),
        random_tensor(&mut rng, &[6]),
    ];
    let err = check(leaves, |g, v| {
        let y = g.layer_norm(v[0], Some(v[1]), Some(v[2]), 1e-5).unwrap();
        let y = g.gelu(y);
        probe(g, y, 3)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let leaves = vec![
        random_tensor(&mut rng, &[2, 3, 4]),
        random_tensor(&mut rng, &[2, 5, 4]),
        random_tensor(&mut rng, &[2, 5, 4]),
    ];
    let err = check(leaves, |g, v| {
        let y = g.attention(v[0], v[1], v[2], 2).unwrap();
        probe(g, y, 4)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn conv_pool_concat_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let leaves = vec![
        random_tensor(&mut rng, &[2, 2, 17]),
        random_tensor(&mut rng, &[3, 2, 5]),
        random_tensor(&mut rng, &[3]),
        random_tensor(&mut rng, &[2, 4]),
    ];
    let err = check(leaves, |g, v| {
        let y = g.conv1d(v[0], v[1], v[2], 3).unwrap();
        let y = g.gelu(y);
        let y = g.mean_axis(y, 2).unwrap();
        let y = g.concat_last(&[y, v[3]]).unwrap();
        probe(g, y, 5)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn loss_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let leaves = vec![
        random_tensor(&mut rng, &[4, 3]),
        random_tensor(&mut rng, &[2, 6]),
        random_tensor(&mut rng, &[2, 6]),
    ];
    let err = check(leaves, |g, v| {
        let ce = g.cross_entropy(v[0], &[0, 2, 1, 2]).unwrap();
        let mse = g.mse(v[1], v[2]).unwrap();
        let capped = g.clamp_max(ce, Some(100.0));
        g.weighted_sum(&[(capped, 3.0), (mse, -0.5)])
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn gather_reshape_and_const_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let leaves = vec![random_tensor(&mut rng, &[2, 6])];
    let pe = random_tensor(&mut rng, &[3]);
    let err = check(leaves, move |g, v| {
        let idx: Vec<usize> = (0..12).rev().collect();
        let y = g.gather(v[0], idx, &[4, 3]).unwrap();
        let y = g.add_const(y, &pe).unwrap();
        let y = g.reshape(y, &[12]).unwrap();
        let y = g.scale(y, 1.5);
        probe(g, y, 7)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn frozen_leaves_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::filled(&[2, 3], 1.0), true);
    let w = g.leaf(Tensor::filled(&[3, 2], 0.5), false);
    let y = g.linear(x, w, None).unwrap();
    let t = g.constant(Tensor::zeros(&[2, 2]));
    let l = g.mse(y, t).unwrap();
    let grads = g.backward(l);
    assert!(grads.get(w).is_none());
    assert!(grads.get(x).is_some());
}

#[test]
fn clamp_blocks_gradient_above_ceiling() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::scalar(5.0), true);
    let c = g.clamp_max(x, Some(2.0));
    assert_eq!(g.value(c).item(), 2.0);
    let grads = g.backward(c);
    assert!(grads.get(x).is_none());
}

#[test]
fn cross_entropy_of_uniform_logits_is_ln_classes() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[3, 5]));
    let l = g.cross_entropy(x, &[0, 1, 4]).unwrap();
    assert!((g.value(l).item() - 5f64.ln()).abs() < 1e-12);
}
