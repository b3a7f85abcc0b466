use qmc_feedback::averaging::{fitted_slope, size_ladder, RateMethod, RateTable};
use qmc_feedback::config::{ModelConfig, PointMethod, QmcConfig, QoiKind};
use qmc_feedback::experiment::rate_study;
use qmc_feedback::qmc::lattice::nearest_prime;
use qmc_feedback::qmc::{cbc_lattice, mc_points, random_shift, to_symmetric, QmcPointSet, WeightSpec};

const S: usize = 16;
const SHIFTS: u64 = 16;

fn bseq() -> Vec<f64> {
    WeightSpec::power_decay(0.1, 2.0, S)
}

// Each factor has mean 1 - b_j / 12 over [-1/2, 1/2].
fn integrand(x: &[f64], b: &[f64]) -> f64 {
    x.iter().zip(b).map(|(&s, bj)| 1.0 + bj * (s + 0.5).powi(2) * (s - 0.5)).product()
}

fn mean(points: &QmcPointSet, b: &[f64]) -> f64 {
    points.iter().map(|x| integrand(x, b)).sum::<f64>() / points.n() as f64
}

fn rms(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

#[test]
fn product_integrand_rates() {
    let b = bseq();
    let exact: f64 = b.iter().map(|bj| 1.0 - bj / 12.0).product();
    let w = WeightSpec::pod(b.clone()).unwrap();
    let sizes: Vec<usize> = (5..=12).map(|m| nearest_prime(1 << m)).collect();
    let mut lat = Vec::new();
    let mut mc = Vec::new();
    for &n in &sizes {
        let rule = cbc_lattice(n, S, &w).unwrap();
        let el: Vec<f64> = (0..SHIFTS)
            .map(|r| mean(&to_symmetric(&random_shift(&rule, 100 + r)), &b) - exact)
            .collect();
        let em: Vec<f64> = (0..SHIFTS).map(|r| mean(&mc_points(n, S, 900 + r), &b) - exact).collect();
        lat.push(rms(&el));
        mc.push(rms(&em));
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let (sl, sm) = (fitted_slope(&xs, &lat), fitted_slope(&xs, &mc));
    assert!(sl <= -0.85, "lattice slope {sl}");
    assert!((sm + 0.5).abs() <= 0.1, "mc slope {sm}");
}

#[test]
fn rate_study_is_reproducible() {
    let model = ModelConfig {
        n: 6,
        nt: 8,
        cbar: 0.1,
        smax: 8,
        ..ModelConfig::default()
    };
    let sizes = size_ladder(RateMethod::Shifted, &[4, 5, 6]);
    let q = QmcConfig {
        method: PointMethod::Shifted,
        n: None,
        n_list: Some(sizes),
        s: 8,
        alpha: 2,
        repeats: 4,
        seed: 3,
        qoi: QoiKind::Feedback,
        b_scale: 0.1,
        b_decay: 2.0,
    };
    let a = rate_study(&model, &q, RateMethod::Shifted, None).unwrap();
    let b = rate_study(&model, &q, RateMethod::Shifted, None).unwrap();
    let bits = |t: &RateTable| {
        t.rows.iter().map(|r| (r.n, r.rms_error.to_bits())).collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    assert!(a.rows.iter().all(|r| r.rms_error.is_finite() && r.rms_error > 0.0));
}
