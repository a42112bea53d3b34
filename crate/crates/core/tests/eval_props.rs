mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use segcam::data::{generate_synthetic, Dataset, SyntheticSceneConfig};
use segcam::eval::*;
use segcam::pixels::PixelSet;
use segcam::segnet::Model;
use segcam::Tensor;

fn set_of(p: &PixelSet) -> BTreeSet<(usize, usize)> {
    p.iter().collect()
}

#[test]
fn kept_sets_match_set_algebra() {
    let mut r = rng(101);
    for _ in 0..1000 {
        let (h, w) = (r.gen_range(1..=9), r.gen_range(1..=9));
        let (p1, p2) = (r.gen_range(0.0..1.0), r.gen_range(0.0..1.0));
        let phi = random_region(&mut r, h, w, p1);
        let phi = if r.gen_bool(0.1) { PixelSet::empty(h, w) } else { phi };
        let target = random_region(&mut r, h, w, p2);
        let omega: BTreeSet<_> = (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).collect();
        let (sp, st) = (set_of(&phi), set_of(&target));

        let m1 = PerturbationPolicy::new(Methodology::BackgroundOnly).kept_set(&phi, &target).unwrap();
        let m2 = PerturbationPolicy::new(Methodology::HighlightedOnly).kept_set(&phi, &target).unwrap();
        let m3 = PerturbationPolicy::new(Methodology::HighlightedPlusTarget).kept_set(&phi, &target).unwrap();
        assert_eq!(set_of(&m1), omega.difference(&sp).copied().collect());
        assert_eq!(set_of(&m2), sp);
        assert_eq!(set_of(&m3), sp.union(&st).copied().collect());
        // |Φ ∪ T| = |Φ| + |T| − |Φ ∩ T|
        assert_eq!(m3.len(), phi.len() + target.len() - sp.intersection(&st).count());
        assert_eq!(m1.len() + m2.len(), h * w);
    }
}

#[test]
fn perturbation_copies_kept_pixels_and_fills_the_rest() {
    let mut r = rng(102);
    for _ in 0..100 {
        let (h, w) = (r.gen_range(2..=8), r.gen_range(2..=8));
        let image = random_tensor(&mut r, &[3, h, w], 0.0, 1.0);
        let phi = random_region(&mut r, h, w, 0.4);
        let target = random_region(&mut r, h, w, 0.3);
        let means = vec![0.1, 0.2, 0.3];
        for mode in Methodology::ALL {
            let policy = PerturbationPolicy { mode, fill: FillRule::ChannelMean(means.clone()) };
            let kept = policy.kept_set(&phi, &target).unwrap();
            let out = perturb_image(&image, &phi, &target, &policy).unwrap();
            for c in 0..3 {
                for i in 0..h {
                    for j in 0..w {
                        let idx = c * h * w + i * w + j;
                        let want = if kept.contains((i, j)) { image.data()[idx] } else { means[c] };
                        assert_eq!(out.data()[idx], want);
                    }
                }
            }
        }
    }
}

#[test]
fn trivial_perturbations_leave_the_score_unchanged() {
    let mut r = rng(103);
    let model = small_model(1);
    for _ in 0..10 {
        let image = random_image(&mut r, model.config());
        let target = random_region(&mut r, 12, 12, 0.3);
        let base = segmentation_score(&model.forward(&image).unwrap(), &target, 1).unwrap();
        let cases = [(Methodology::BackgroundOnly, PixelSet::empty(12, 12)), (Methodology::HighlightedOnly, PixelSet::full(12, 12))];
        for (mode, phi) in cases {
            let img = perturb_image(&image, &phi, &target, &PerturbationPolicy::new(mode)).unwrap();
            assert_eq!(img, image);
            let ss = segmentation_score(&model.forward(&img).unwrap(), &target, 1).unwrap();
            assert_eq!(ss.to_bits(), base.to_bits());
        }
    }
}

#[test]
fn segmentation_score_matches_softmax_oracle() {
    let mut r = rng(104);
    let model = small_model(2);
    for _ in 0..20 {
        let image = random_image(&mut r, model.config());
        let region = random_region(&mut r, 12, 12, 0.3);
        let out = model.forward(&image).unwrap();
        for class in 0..2 {
            let ss = segmentation_score(&out, &region, class).unwrap();
            assert!((ss - mean_probability(&model, &image, class, &region)).abs() < 1e-12);
        }
    }
}

fn entropy_of(p: &[f64]) -> f64 {
    let t = Tensor::new(vec![p.len(), 1, 1], p.to_vec()).unwrap();
    pixel_entropy_map(&t).unwrap().values.data()[0]
}

#[test]
fn entropy_reference_values() {
    assert!((entropy_of(&[0.5, 0.5]) - 1.0).abs() < 1e-15);
    assert!((entropy_of(&[0.25; 4]) - 1.0).abs() < 1e-15);
    assert_eq!(entropy_of(&[1.0, 0.0, 0.0]), 0.0);
    assert_eq!(format!("{:.5}", entropy_of(&[0.9, 0.1])), "0.46900");
    let bad = Tensor::new(vec![2, 1, 1], vec![0.6, 0.6]).unwrap();
    assert!(pixel_entropy_map(&bad).is_err());
}

#[test]
fn exai_mean_and_sum() {
    let probs = Tensor::new(vec![2, 1, 3], vec![0.5, 1.0, 0.9, 0.5, 0.0, 0.1]).unwrap();
    let map = pixel_entropy_map(&probs).unwrap();
    let t = PixelSet::new(1, 3, [(0, 0), (0, 1)]).unwrap();
    let s = e_xai(&map, &t).unwrap();
    assert_eq!((s.mean, s.sum), (0.5, 1.0));
    assert!(e_xai(&map, &PixelSet::empty(1, 3)).is_err());
}

#[test]
fn percent_round_trip() {
    let p = perturbed_from_drop(0.8911, 13.04).unwrap();
    assert!((p - 0.77491).abs() < 1e-4);
    assert!((percent_drop(0.8911, p).unwrap() - 13.04).abs() < 1e-9);
    assert!(percent_drop(0.0, 0.5).is_err());
    assert!(percent_increase(-1.0, 0.5).is_err());
}

proptest! {
    #[test]
    fn entropy_is_bounded(raw in prop::collection::vec(0.0f64..1.0, 2..6)) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 1e-3);
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let e = entropy_of(&p);
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn threshold_is_monotone(seed in 0u64..10_000, t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let values = random_tensor(&mut r, &[6, 7], 0.0, 1.0);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = set_of(&threshold_values(&values, ThresholdRule::Absolute(lo)).unwrap());
        let b = set_of(&threshold_values(&values, ThresholdRule::Absolute(hi)).unwrap());
        prop_assert!(b.is_subset(&a));
        let qa = threshold_values(&values, ThresholdRule::TopQuantile(hi.max(0.01))).unwrap();
        let qb = threshold_values(&values, ThresholdRule::TopQuantile(lo.max(0.01))).unwrap();
        prop_assert!(set_of(&qb).is_subset(&set_of(&qa)));
        prop_assert_eq!(qa.len(), (hi.max(0.01) * 42.0).ceil() as usize);
    }
}

#[test]
fn threshold_rules_reject_bad_values() {
    for s in ["1.5", "-0.1", "q:0", "q:1.2", "abc"] {
        assert!(s.parse::<ThresholdRule>().is_err(), "{s}");
    }
    assert_eq!("q:0.25".parse::<ThresholdRule>().unwrap(), ThresholdRule::TopQuantile(0.25));
}

fn tiny_dataset(count: usize) -> Dataset {
    let config = SyntheticSceneConfig { height: 12, width: 12, rect_size: (2, 5), seed: 3, ..Default::default() };
    generate_synthetic(&config, count).unwrap()
}

fn tiny_benchmark(workers: usize) -> (Model, Dataset, BenchmarkConfig) {
    let config = BenchmarkConfig { region: RegionMode::GroundTruth, workers, ..Default::default() };
    (small_model(5), tiny_dataset(10), config)
}

#[test]
fn benchmark_row_count_and_order() {
    let (model, data, config) = tiny_benchmark(1);
    let report = run_benchmark(&model, &data, &config).unwrap();
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    assert_eq!(report.rows.len(), 6 * 3 * 10);
    assert_eq!(report.means.len(), 6 * 3);
    assert_eq!(report.rows[0].image, image_name(0));
    assert_eq!(report.rows.last().unwrap().image, "img_0009");
    let csv = report.to_csv();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(csv.lines().count(), 1 + 180 + 18);
    assert!(!csv.contains('\r'));
}

#[test]
fn benchmark_is_independent_of_worker_count() {
    let (model, data, config) = tiny_benchmark(1);
    let one = run_benchmark(&model, &data, &config).unwrap();
    let three = run_benchmark(&model, &data, &BenchmarkConfig { workers: 3, ..config.clone() }).unwrap();
    assert_eq!(one.to_csv(), three.to_csv());
    assert_eq!(one, three);
}

#[test]
fn single_image_means_equal_its_rows() {
    let (model, data, mut config) = tiny_benchmark(1);
    config.explainers = vec![ExplainerKind::Oracle, ExplainerKind::Random];
    let data = Dataset::new(data.samples()[..1].to_vec()).unwrap();
    let report = run_benchmark(&model, &data, &config).unwrap();
    for row in &report.rows {
        let m = report.mean(&row.method, row.methodology).unwrap();
        assert_eq!(m.count, 1);
        assert_eq!((m.baseline_ss, m.perturbed_ss, m.drop_pct), (row.baseline_ss, row.perturbed_ss, row.drop_pct));
        assert_eq!((m.baseline_exai, m.perturbed_exai, m.increase_pct), (row.baseline_exai, row.perturbed_exai, row.increase_pct));
    }
}

#[test]
fn means_are_recomputed_from_mean_scores() {
    let (model, data, config) = tiny_benchmark(1);
    let report = run_benchmark(&model, &data, &config).unwrap();
    for m in &report.means {
        let rows: Vec<_> = report.rows.iter().filter(|r| r.method == m.method && r.methodology == m.methodology).collect();
        let b = rows.iter().map(|r| r.baseline_ss).sum::<f64>() / rows.len() as f64;
        let p = rows.iter().map(|r| r.perturbed_ss).sum::<f64>() / rows.len() as f64;
        assert!((m.drop_pct - 100.0 * (b - p) / b).abs() < 1e-9);
    }
}

#[test]
fn explainer_and_methodology_filters() {
    let (model, data, mut config) = tiny_benchmark(1);
    config.explainers = vec!["seg-eigen-cam".parse().unwrap(), "oracle-saliency".parse().unwrap()];
    config.methodologies = vec![Methodology::HighlightedPlusTarget];
    let report = run_benchmark(&model, &data, &config).unwrap();
    assert_eq!(report.rows.len(), 2 * 10);
    assert!(report.rows.iter().all(|r| r.methodology == Methodology::HighlightedPlusTarget));
    let methods: BTreeSet<_> = report.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, BTreeSet::from(["oracle-saliency", "seg-eigen-cam"]));
}

#[test]
fn empty_target_rows_are_excluded() {
    let (model, data, mut config) = tiny_benchmark(1);
    config.explainers = vec![ExplainerKind::Oracle];
    let mut samples = data.samples()[..3].to_vec();
    samples[1].mask.iter_mut().for_each(|m| *m = 0);
    let report = run_benchmark(&model, &Dataset::new(samples).unwrap(), &config).unwrap();
    assert_eq!(report.rows.len(), 2 * 3);
    assert_eq!(report.errors.len(), 1);
    assert_eq!(report.errors[0].image, "img_0001");
    assert_eq!(report.mean("oracle-saliency", Methodology::BackgroundOnly).unwrap().count, 2);
}

#[test]
fn invalid_benchmark_configs_fail_fast() {
    let (model, data, config) = tiny_benchmark(1);
    assert!(run_benchmark(&model, &data, &BenchmarkConfig { workers: 0, ..config.clone() }).is_err());
    assert!(run_benchmark(&model, &data, &BenchmarkConfig { class: 2, ..config.clone() }).is_err());
    assert!(run_benchmark(&model, &data, &BenchmarkConfig { layer: Some("nope".into()), ..config.clone() }).is_err());
    let bad = BenchmarkConfig { threshold: ThresholdRule::Absolute(2.0), ..config };
    assert!(run_benchmark(&model, &data, &bad).is_err());
}

#[test]
fn empty_report_exports_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let report = EvalReport::from_rows(Vec::new(), Vec::new()).unwrap();
    segcam::data::export_report(&report, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), format!("{CSV_HEADER}\n"));
}

#[test]
fn csv_parses_back() {
    let (model, data, mut config) = tiny_benchmark(1);
    config.explainers = vec![ExplainerKind::Random];
    let report = run_benchmark(&model, &data, &config).unwrap();
    let parsed = parse_report_csv(&report.to_csv()).unwrap();
    assert_eq!(parsed.len(), 30 + 3);
    for (p, r) in parsed.iter().zip(&report.rows) {
        assert_eq!(p.image, r.image);
        assert!((p.values[0] - r.baseline_ss).abs() <= 1e-5 * r.baseline_ss.abs());
    }
    assert_eq!(parsed.last().unwrap().image, "mean");
}
