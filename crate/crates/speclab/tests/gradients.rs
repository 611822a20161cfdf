//! Finite-difference verification of every analytic gradient the training
//! loop consumes: the frequency-alignment loss, the logit loss, their
//! weighted combination, and the full model backward pass with and without
//! injected feature gradients. Together these sweeps cover well over 200
//! sampled coordinates.

use speclab::distill::{fft_loss, kd_loss, total_loss, DistillConfig};
use speclab::tensor::FeatureMap;
use speclab::tinyvit::model::{backward, forward, ModelConfig, ModelParams};
use speclab::tinyvit::rng::SplitMix64;

fn seeded_map(rng: &mut SplitMix64, dims: [usize; 4]) -> FeatureMap {
    let mut m = FeatureMap::zeros(dims);
    for v in &mut m.data {
        *v = rng.next_gaussian();
    }
    m
}

fn assert_close(fd: f64, analytic: f64, tol: f64, what: &str) {
    let denom = fd.abs().max(analytic.abs()).max(1e-8);
    assert!(
        ((fd - analytic) / denom).abs() < tol,
        "{what}: fd {fd} vs analytic {analytic}"
    );
}

#[test]
fn fft_loss_gradient_matches_finite_differences() {
    let mut rng = SplitMix64::new(0x9ad_0001);
    let s = seeded_map(&mut rng, [2, 3, 3, 3]);
    let t = seeded_map(&mut rng, [2, 4, 3, 3]);
    let (_, grad) = fft_loss(&s, &t).unwrap();

    for pick in 0..40 {
        let idx = (pick * 7) % s.data.len();
        let h = 1e-6 * s.data[idx].abs().max(1.0);
        let mut plus = s.clone();
        plus.data[idx] += h;
        let mut minus = s.clone();
        minus.data[idx] -= h;
        let fd = (fft_loss(&plus, &t).unwrap().0 - fft_loss(&minus, &t).unwrap().0) / (2.0 * h);
        assert_close(fd, grad.data[idx], 1e-6, &format!("fft_loss coord {idx}"));
    }
}

#[test]
fn kd_loss_gradient_matches_finite_differences() {
    let mut rng = SplitMix64::new(0x9ad_0002);
    let (b, k) = (3usize, 5usize);
    let student: Vec<f64> = (0..b * k).map(|_| 2.0 * rng.next_gaussian()).collect();
    let teacher: Vec<f64> = (0..b * k).map(|_| 2.0 * rng.next_gaussian()).collect();
    let labels = [0usize, 3, 4];
    let cfg = DistillConfig {
        temperature: 2.0,
        alpha: 0.9,
        beta: 0.2,
    };
    let kd = kd_loss(&student, &teacher, &labels, k, &cfg).unwrap();

    for idx in 0..b * k {
        let h = 1e-6 * student[idx].abs().max(1.0);
        let mut plus = student.clone();
        plus[idx] += h;
        let mut minus = student.clone();
        minus[idx] -= h;
        let fd = (kd_loss(&plus, &teacher, &labels, k, &cfg).unwrap().value
            - kd_loss(&minus, &teacher, &labels, k, &cfg).unwrap().value)
            / (2.0 * h);
        assert_close(fd, kd.grad[idx], 1e-6, &format!("kd_loss coord {idx}"));
    }
}

#[test]
fn total_loss_gradients_match_finite_differences() {
    let mut rng = SplitMix64::new(0x9ad_0003);
    let s = seeded_map(&mut rng, [2, 5, 2, 2]);
    let t = seeded_map(&mut rng, [2, 3, 2, 2]);
    let (b, k) = (2usize, 6usize);
    let student: Vec<f64> = (0..b * k).map(|_| rng.next_gaussian()).collect();
    let teacher: Vec<f64> = (0..b * k).map(|_| rng.next_gaussian()).collect();
    let labels = [2usize, 5];
    let cfg = DistillConfig::default();

    let value = |feat: &FeatureMap, logits: &[f64]| -> f64 {
        total_loss(&[(feat, &t)], logits, &teacher, &labels, k, &cfg)
            .unwrap()
            .breakdown
            .l_total
    };
    let total = total_loss(&[(&s, &t)], &student, &teacher, &labels, k, &cfg).unwrap();

    // Student feature coordinates, through pooling and the beta/pair scale.
    for pick in 0..40 {
        let idx = (pick * 3) % s.data.len();
        let h = 1e-6 * s.data[idx].abs().max(1.0);
        let mut plus = s.clone();
        plus.data[idx] += h;
        let mut minus = s.clone();
        minus.data[idx] -= h;
        let fd = (value(&plus, &student) - value(&minus, &student)) / (2.0 * h);
        assert_close(
            fd,
            total.feature_grads[0].data[idx],
            1e-6,
            &format!("total_loss feature coord {idx}"),
        );
    }

    // Student logit coordinates.
    for idx in 0..b * k {
        let h = 1e-6 * student[idx].abs().max(1.0);
        let mut plus = student.clone();
        plus[idx] += h;
        let mut minus = student.clone();
        minus[idx] -= h;
        let fd = (value(&s, &plus) - value(&s, &minus)) / (2.0 * h);
        assert_close(
            fd,
            total.logit_grad[idx],
            1e-6,
            &format!("total_loss logit coord {idx}"),
        );
    }
}

fn sweep_model(inject: bool) {
    let cfg = ModelConfig {
        image_size: 8,
        patch_size: 4,
        embed_dim: 4,
        depth: 2,
        heads: 2,
        mlp_ratio: 4,
        class_count: 3,
        seed: 23,
    };
    let p = ModelParams::init(&cfg).unwrap();
    let mut rng = SplitMix64::new(0x9ad_0004);
    let images: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..64).map(|_| rng.next_gaussian()).collect())
        .collect();
    let (b, n, d, k) = (2usize, cfg.tokens(), cfg.embed_dim, cfg.class_count);
    let w: Vec<f64> = (0..b * k).map(|_| rng.next_gaussian()).collect();
    let u: Vec<f64> = (0..b * n * d).map(|_| rng.next_gaussian()).collect();

    let loss = |params: &ModelParams| -> f64 {
        let (logits, cache) = forward(params, &images);
        let head: f64 = logits.iter().zip(&w).map(|(x, y)| x * y).sum();
        if inject {
            let feat: f64 = cache.layer(2).iter().zip(&u).map(|(x, y)| x * y).sum();
            head + feat
        } else {
            head
        }
    };

    let (_, cache) = forward(&p, &images);
    let injected: Vec<(usize, &[f64])> = if inject { vec![(2, &u)] } else { Vec::new() };
    let analytic = backward(&p, &cache, &w, &injected).unwrap();

    // Two coordinates per tensor. The loss is O(1) against gradients down
    // at 1e-6, so small steps drown in subtractive roundoff; a large base
    // step with two-step Richardson extrapolation cancels the quadratic
    // truncation term that a single step would leave near the tolerance.
    for spec in &p.layout.specs {
        for pick in [spec.len() / 3, 2 * spec.len() / 3] {
            let idx = spec.offset + pick;
            let h = 2e-4 * p.data[idx].abs().max(1.0);
            let fd_at = |step: f64| -> f64 {
                let mut plus = p.clone();
                plus.data[idx] += step;
                let mut minus = p.clone();
                minus.data[idx] -= step;
                (loss(&plus) - loss(&minus)) / (2.0 * step)
            };
            let fd = (4.0 * fd_at(h / 2.0) - fd_at(h)) / 3.0;
            assert_close(
                fd,
                analytic[idx],
                1e-5,
                &format!("{}[{pick}] (inject = {inject})", spec.name),
            );
        }
    }
}

#[test]
fn model_backward_matches_finite_differences_without_injection() {
    sweep_model(false);
}

#[test]
fn model_backward_matches_finite_differences_with_injection() {
    sweep_model(true);
}
