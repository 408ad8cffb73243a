mod common;

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use smoothcert::certify::{self, CertifyParams};
use smoothcert::dataset::{self, SyntheticKind, SyntheticModel};
use smoothcert::oracle::{ClassifierOracle, EnsembleOracle, LinearModel};
use smoothcert::partition::{self, ImageTensor, Interpolation, ResizePlan};
use smoothcert::radius;
use smoothcert::stream::Branch;

fn problem(d: usize, count: usize, seed: u64) -> (smoothcert::dataset::Dataset, LinearModel) {
    let (ds, model) = dataset::generate(SyntheticKind::LinearMargin, d, 2, count, seed).unwrap();
    match model {
        SyntheticModel::Linear(m) => (ds, m),
        SyntheticModel::Centroids(_) => unreachable!(),
    }
}

#[test]
fn dual_certificate_reuses_single_branch_noise() {
    let (ds, model) = problem(32, 12, 3);
    let idx = partition::make_diagonal_partition(4, 8).unwrap();
    let mut params = CertifyParams::new(0.25);
    params.n = 20_000;
    let mut compared = 0;
    for i in 0..ds.len() {
        params.seed = 1000 + i as u64;
        let x = ds.image(i).unwrap();
        let dual = certify::certify_drs(&model, &model, &x, &idx, &params).unwrap();
        let left = certify::certify_rs_branch(&model, &x, &idx, Branch::Left, &params).unwrap();
        let right = certify::certify_rs_branch(&model, &x, &idx, Branch::Right, &params).unwrap();
        assert_eq!(dual.estimation_counts.counts_left, left.estimation_counts.counts_left);
        assert_eq!(dual.estimation_counts.counts_right, right.estimation_counts.counts_left);
        if left.top_class == dual.top_class && right.top_class == dual.top_class {
            assert_eq!(dual.p_lower_left, left.p_lower_left);
            assert_eq!(dual.p_lower_right, Some(right.p_lower_left));
            if left.p_lower_left > 0.5 && right.p_lower_left > 0.5 {
                assert!(!dual.abstained());
                let combined = (left.radius + right.radius) / SQRT_2;
                assert!((dual.radius - combined).abs() <= 1e-12, "{} vs {combined}", dual.radius);
                compared += 1;
            }
        }
    }
    assert!(compared >= 3, "only {compared} images exercised the radius identity");
}

#[test]
fn branch_frequencies_match_closed_form() {
    let (ds, model) = problem(32, 6, 8);
    let idx = partition::make_diagonal_partition(4, 8).unwrap();
    let plan = ResizePlan::new(idx.sub_shape(), idx.padded_shape(), Interpolation::Bilinear).unwrap();
    let sigma = 0.3;
    let n = 200_000u64;
    for i in 0..ds.len() {
        let x = ds.image(i).unwrap();
        let pair = partition::downsample(&x, &idx).unwrap();
        let counts = certify::sample_under_noise(
            &model,
            &model,
            &pair.left,
            &pair.right,
            &plan,
            n,
            sigma,
            sigma,
            77 + i as u64,
            smoothcert::stream::Phase::Estimation,
            4096,
        )
        .unwrap();
        for (sub, votes) in [(&pair.left, &counts.counts_left), (&pair.right, &counts.counts_right)] {
            let p = common::branch_prob_class0(&model, &plan, 1, sub.data(), sigma);
            let freq = votes[0] as f64 / n as f64;
            let sd = (p * (1.0 - p) / n as f64).sqrt().max(1e-6);
            assert!((freq - p).abs() <= 5.0 * sd, "image {i}: freq {freq}, analytic {p}");
        }
    }
}

#[test]
fn full_resolution_frequencies_match_closed_form() {
    let (ds, model) = problem(20, 4, 12);
    let sigma = 0.2;
    let n = 100_000u64;
    let (_, h, w) = ds.shape();
    let identity = ResizePlan::new((h, w), (h, w), Interpolation::Bilinear).unwrap();
    let mut params = CertifyParams::new(sigma);
    params.n = n;
    for i in 0..ds.len() {
        let x = ds.image(i).unwrap();
        params.seed = i as u64;
        let cert = certify::certify_rs(&model, &x, &params).unwrap();
        let p = common::branch_prob_class0(&model, &identity, 1, x.data(), sigma);
        let freq = cert.estimation_counts.counts_left[0] as f64 / n as f64;
        let sd = (p * (1.0 - p) / n as f64).sqrt().max(1e-6);
        assert!((freq - p).abs() <= 5.0 * sd, "image {i}: freq {freq}, analytic {p}");
        // A sound lower bound can only shrink the radius below the true one.
        let truth = if cert.top_class == 0 { p } else { 1.0 - p };
        if !cert.abstained() && cert.p_lower_left <= truth {
            let ideal = sigma * common::quantile(truth);
            assert!(cert.radius <= ideal + 1e-12, "{} vs {ideal}", cert.radius);
        }
    }
}

#[test]
fn certificates_do_not_depend_on_batch_size() {
    let (ds, model) = problem(24, 3, 4);
    let (_, h, w) = ds.shape();
    let idx = partition::make_diagonal_partition(h, w).unwrap();
    let mut params = CertifyParams::new(0.4);
    params.n = 3000;
    params.seed = 5;
    for i in 0..ds.len() {
        let x = ds.image(i).unwrap();
        let reference = certify::certify_drs(&model, &model, &x, &idx, &params).unwrap();
        for batch in [1, 7, 256, 5000] {
            let mut p = params;
            p.batch_size = batch;
            assert_eq!(certify::certify_drs(&model, &model, &x, &idx, &p).unwrap(), reference, "batch {batch}");
        }
    }
}

#[test]
fn ensemble_votes_count_once_per_member() {
    let (ds, model) = problem(16, 1, 6);
    let idx = partition::make_diagonal_partition(4, 4).unwrap();
    let shared: Arc<dyn ClassifierOracle> = Arc::new(model.clone());
    let ensemble = EnsembleOracle::new(vec![shared.clone(), shared]).unwrap();
    let mut params = CertifyParams::new(0.3);
    params.n = 2000;
    let x = ds.image(0).unwrap();
    let single = certify::certify_drs(&model, &model, &x, &idx, &params).unwrap();
    let double = certify::certify_drs(&ensemble, &ensemble, &x, &idx, &params).unwrap();
    assert_eq!(double.estimation_counts.trials, 2 * single.estimation_counts.trials);
    let doubled: Vec<u64> = single.estimation_counts.counts_left.iter().map(|c| 2 * c).collect();
    assert_eq!(double.estimation_counts.counts_left, doubled);
}

#[test]
fn asymmetric_certificate_uses_its_radius_rule() {
    let x = ImageTensor::new(1, 4, 4, (0..16).map(|i| i as f64 / 16.0).collect()).unwrap();
    let idx = partition::make_diagonal_partition(4, 4).unwrap();
    let model = LinearModel::new(
        vec![(0..16).map(|i| if i % 2 == 0 { 1.0 } else { 0.5 }).collect(), vec![0.0; 16]],
        vec![-3.0, 0.0],
    )
    .unwrap();
    let mut params = CertifyParams::new(0.25);
    params.sigma_right = Some(0.5);
    params.n = 20_000;
    let cert = certify::certify_drs_asym(&model, &model, &x, &idx, &params).unwrap();
    assert!(!cert.abstained());
    let (pl, pr) = (cert.p_lower_left, cert.p_lower_right.unwrap());
    let expected = radius::asym_variance_radius(
        radius::BranchProbs::worst_case(pl).unwrap(),
        radius::BranchProbs::worst_case(pr).unwrap(),
        0.25,
        0.5,
    )
    .unwrap();
    assert!((cert.radius - expected.radius).abs() < 1e-12);
    // With p_B = 1 − p_A the adversary moves all mass through the branch
    // with the smaller noise: budget min(σ_l, σ_r)·(Φ⁻¹(p̲^l) + Φ⁻¹(p̲^r)).
    let closed = 0.25 * (common::quantile(pl) + common::quantile(pr)) / SQRT_2;
    assert!((cert.radius - closed).abs() < 1e-9, "{} vs {closed}", cert.radius);
}
