use defect_chain::klfield::{BasisCache, CovarianceSpec, GeometrySpec, SectionGrid, WrinkleField};
use defect_chain::mfia::{estimate_angle, synth_bscan, true_misalignment, RenderSpec, SynthPrior, TrialFibreConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fraction of random interior points whose recovered angle is within
/// 0.044 rad of the truth, over several prior-drawn wrinkles.
fn recovery_rate(noise: f64, seed: u64) -> f64 {
    let geom = GeometrySpec::default();
    let cov = CovarianceSpec::new(0.1425, 12.9, geom.arc_length(), 256).unwrap();
    let cache = BasisCache::new(cov, 30, 0.05).unwrap();
    let decay = geom.decay(4.8, 4, 1e-6).unwrap();
    let grid = SectionGrid::for_geometry(&geom);
    let spec = RenderSpec {
        noise_sigma: noise,
        ..RenderSpec::default()
    };
    let cfg = TrialFibreConfig::for_ply_thickness(geom.ply_thickness / spec.pitch[1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hits, mut total) = (0, 0);
    let mut worst: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for _ in 0..4 {
        let xi = SynthPrior::default()
            .draw_admissible(&cache, &decay, &grid, &mut rng, 1000)
            .unwrap();
        let basis = cache.get(xi.length_scale).unwrap();
        let scan = synth_bscan(&xi, &basis, &decay, &geom, &spec, &mut rng).unwrap();
        let field = WrinkleField::new(&xi, &basis, &decay).unwrap();
        for _ in 0..250 {
            let c = rng.random_range(2..scan.image.width() - 2);
            let r = rng.random_range(0..scan.image.height());
            let est = scan.image.physical_angle(estimate_angle(&scan.image, (c as f64, r as f64), &cfg).unwrap());
            let (x1, x3) = scan.image.to_mm(c as f64, r as f64);
            let truth = true_misalignment(&field, x1, x3);
            peak = peak.max(truth.abs());
            let err = (est - truth).abs();
            worst = worst.max(err);
            total += 1;
            if err <= 0.044 {
                hits += 1;
            }
        }
    }
    eprintln!("noise {noise}: {hits}/{total}, worst error {worst:.4}, largest angle {peak:.3}");
    hits as f64 / total as f64
}

#[test]
fn noiseless_scans_recover_misalignment() {
    assert!(recovery_rate(0.0, 11) >= 0.95);
}

#[test]
fn noisy_scans_mostly_recover_misalignment() {
    assert!(recovery_rate(8.0, 12) >= 0.80);
}
