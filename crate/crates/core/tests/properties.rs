use arterial_risk::diagnostics::{normalize_scores, predict_relative_odds, roc_auc, roc_auc_values, DicResult};
use arterial_risk::ingest::{
    attach_weather, slice_aggregates, CorpusRecords, CrashEvent, RawCorpus, SegmentMeta, SliceConfig, TravelTimeRecord,
    VolumeRecord, WeatherRecord, Approach,
};
use arterial_risk::matching::{build_matched_dataset, FeatureSpec, MatchKey, MatchedDataset, CONTAMINATION_GUARD_SECONDS};
use arterial_risk::models::{
    cond_gradient, cond_log_likelihood, latent_log_density, logistic_log_likelihood, ranef_log_likelihood, Grouping,
    Groups, LogisticParams, RanefParams,
};
use arterial_risk::report::{parse_table_csv, render_table, Format, ReportRow, ReportTable, SigMark};
use arterial_risk::sampler::{run_chains, summarize, McmcConfig, ParamSummary};
use arterial_risk::simulator::{simulate_matched, softmax_choice, FeatureDist, SimConfig, SimOutput};
use arterial_risk::time::{Timestamp, HOUR, MINUTE, WEEK};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const START: Timestamp = Timestamp(1_488_758_400);

/// Strata with `m + 1` members of `k` features in [-3, 3].
fn strata(max_n: usize, max_m: usize, k: usize) -> impl Strategy<Value = Vec<Vec<Vec<f64>>>> {
    (1..=max_n, 1..=max_m).prop_flat_map(move |(n, m)| {
        prop::collection::vec(prop::collection::vec(prop::collection::vec(-3.0..3.0f64, k), m + 1), n)
    })
}

fn beta(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, k)
}

fn ds(rows: &[Vec<Vec<f64>>]) -> MatchedDataset {
    MatchedDataset::from_rows(rows).unwrap()
}

fn segment() -> SegmentMeta {
    SegmentMeta {
        segment_id: "S1".into(),
        length_m: 500.0,
        upstream_intersection_id: "U".into(),
        downstream_intersection_id: "D".into(),
    }
}

fn weather_hours(hours: i64) -> Vec<WeatherRecord> {
    (0..hours)
        .map(|h| WeatherRecord {
            station_id: "MCO".into(),
            hour_start: START + h * HOUR,
            precipitation: if h % 7 == 0 { 0.05 } else { 0.0 },
            visibility: 10.0 - (h % 3) as f64,
            rainy: false,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn translation_leaves_likelihood_unchanged(rows in strata(6, 6, 2), b in beta(2), shift in prop::collection::vec(-50.0..50.0f64, 2)) {
        let moved: Vec<Vec<Vec<f64>>> = rows
            .iter()
            .map(|s| s.iter().map(|x| vec![x[0] + shift[0], x[1] + shift[1]]).collect())
            .collect();
        let a = cond_log_likelihood(&b, &ds(&rows)).unwrap();
        let c = cond_log_likelihood(&b, &ds(&moved)).unwrap();
        prop_assert!((a - c).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn likelihood_is_nonpositive_with_closed_form_null(rows in strata(8, 8, 3), b in beta(3)) {
        let d = ds(&rows);
        prop_assert!(cond_log_likelihood(&b, &d).unwrap() <= 0.0);
        let null = cond_log_likelihood(&[0.0; 3], &d).unwrap();
        let expected = -(d.n_strata() as f64) * ((d.m() + 1) as f64).ln();
        prop_assert!((null - expected).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences(rows in strata(6, 6, 3), b in beta(3)) {
        let d = ds(&rows);
        let g = cond_gradient(&b, &d).unwrap();
        let h = 1e-5;
        let f = |v: &[f64]| cond_log_likelihood(v, &d).unwrap();
        let mut diff = 0.0;
        for j in 0..3 {
            let (mut up, mut down) = (b.clone(), b.clone());
            up[j] += h;
            down[j] -= h;
            diff += ((f(&up) - f(&down)) / (2.0 * h) - g[j]).powi(2);
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
        prop_assert!(diff.sqrt() / norm < 1e-6);
    }

    #[test]
    fn likelihood_is_concave(rows in strata(6, 6, 2), b1 in beta(2), b2 in beta(2), t in 0.01..0.99f64) {
        let d = ds(&rows);
        let f = |v: &[f64]| cond_log_likelihood(v, &d).unwrap();
        let mix: Vec<f64> = b1.iter().zip(&b2).map(|(a, c)| t * a + (1.0 - t) * c).collect();
        prop_assert!(f(&mix) >= t * f(&b1) + (1.0 - t) * f(&b2) - 1e-10);
    }

    #[test]
    fn likelihood_matches_direct_ratio(rows in strata(5, 3, 2), b in beta(2)) {
        let d = ds(&rows);
        let direct: f64 = rows
            .iter()
            .map(|s| {
                let e: Vec<f64> = s.iter().map(|x| (b[0] * x[0] + b[1] * x[1]).exp()).collect();
                e[0] / e.iter().sum::<f64>()
            })
            .product();
        let ll = cond_log_likelihood(&b, &d).unwrap();
        prop_assert!((ll.exp() - direct).abs() < 1e-12);
    }

    #[test]
    fn random_effect_at_zero_reduces_to_pooled(rows in strata(6, 4, 2), b in beta(2), alpha in -3.0..3.0f64, tau in 0.01..50.0f64) {
        let d = ds(&rows);
        let groups = Groups::new(&d, Grouping::Stratum);
        let u = vec![0.0; groups.count()];
        let ranef = RanefParams { alpha, beta: b.clone(), u: u.clone(), tau };
        let joint = ranef_log_likelihood(&ranef, &d, &groups).unwrap();
        let pooled = logistic_log_likelihood(&LogisticParams { alpha, beta: b }, &d).unwrap();
        prop_assert!((joint - latent_log_density(&u, tau) - pooled).abs() <= 1e-10 * pooled.abs().max(1.0));
    }

    #[test]
    fn deviance_falls_as_likelihood_rises(rows in strata(6, 6, 2), b1 in beta(2), b2 in beta(2)) {
        use arterial_risk::diagnostics::deviance;
        use arterial_risk::models::ModelParams;
        let d = ds(&rows);
        let (l1, l2) = (cond_log_likelihood(&b1, &d).unwrap(), cond_log_likelihood(&b2, &d).unwrap());
        let d1 = deviance(&ModelParams::Conditional(b1), &d, None).unwrap();
        let d2 = deviance(&ModelParams::Conditional(b2), &d, None).unwrap();
        prop_assert_eq!(l1 > l2, d1 < d2);
    }

    #[test]
    fn dic_identity(d_bar in 0.0..1e4f64, gap in -10.0..10.0f64) {
        let r = DicResult::from_parts(d_bar, d_bar - gap);
        prop_assert_eq!(r.dic, r.d_bar + r.p_d);
        prop_assert!((r.dic - (2.0 * r.d_bar - r.d_hat)).abs() <= 1e-9 * r.dic.abs().max(1.0));
    }

    #[test]
    fn auc_rank_statistic_equals_pair_count(
        data in prop::collection::vec((0u8..12, any::<bool>()), 2..200)
    ) {
        let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s) / 4.0).collect();
        let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, si) in scores.iter().enumerate() {
            for (j, sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    credit += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        let r = roc_auc_values(&scores, &labels).unwrap();
        prop_assert_eq!(r.auc, credit / pairs);
        prop_assert_eq!((r.curve[0].fpr, r.curve[0].tpr), (0.0, 0.0));
        let last = r.curve.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        prop_assert!(r.curve.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
    }

    #[test]
    fn auc_invariant_under_monotone_maps(
        data in prop::collection::vec((-5.0..5.0f64, any::<bool>()), 2..120),
        a in 0.1..5.0f64,
        c in -3.0..3.0f64,
    ) {
        let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
        let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let base = roc_auc_values(&scores, &labels).unwrap().auc;
        let cubic: Vec<f64> = scores.iter().map(|s| a * s.powi(3) + c).collect();
        let logistic: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
        prop_assert_eq!(roc_auc_values(&cubic, &labels).unwrap().auc, base);
        prop_assert_eq!(roc_auc_values(&logistic, &labels).unwrap().auc, base);
    }

    #[test]
    fn normalisation_keeps_auc_and_peaks_at_one(rows in strata(10, 6, 2), b in beta(2)) {
        let d = ds(&rows);
        let s = predict_relative_odds(&b, &d).unwrap();
        let raw_auc = roc_auc_values(&s.raw(), &s.labels()).unwrap().auc;
        let again = normalize_scores(s.clone()).unwrap();
        prop_assert_eq!(roc_auc(&again).unwrap().auc, raw_auc);
        let max = again.normalized().into_iter().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(max, 1.0);
        prop_assert!(again.scores.iter().all(|x| x.normalized > 0.0 && x.normalized <= 1.0));
    }

    #[test]
    fn zero_coefficients_give_flat_scores(rows in strata(10, 6, 3)) {
        let s = predict_relative_odds(&[0.0; 3], &ds(&rows)).unwrap();
        prop_assert!(s.scores.iter().all(|x| x.raw_odds == 1.0 && x.normalized == 1.0));
        prop_assert_eq!(roc_auc(&s).unwrap().auc, 0.5);
    }

    #[test]
    fn nested_interval_significance(draws in prop::collection::vec(-3.0..3.0f64, 2..400), shift in -4.0..4.0f64) {
        let shifted: Vec<f64> = draws.iter().map(|d| d + shift).collect();
        let s = ParamSummary::from_draws("x", &shifted);
        prop_assert!(!s.sig_05 || s.sig_10);
        prop_assert!(s.q025 <= s.q05 && s.q05 <= s.q95 && s.q95 <= s.q975);
    }

    #[test]
    fn report_csv_round_trips(values in prop::collection::vec((-50.0..50.0f64, 0.0..5.0f64, 0u8..3), 1..10), dic in 0.0..1e4f64) {
        let rows: Vec<ReportRow> = values
            .iter()
            .enumerate()
            .map(|(i, (m, w, s))| ReportRow {
                parameter: format!("p{i}"),
                mean: *m,
                bci_low: m - w,
                bci_high: m + w,
                hazard_ratio: (i % 3 != 0).then(|| (m / 10.0).exp()),
                sig: [SigMark::None, SigMark::Star, SigMark::Bold][usize::from(*s)],
            })
            .collect();
        let table = ReportTable { title: "t".into(), rows, footer: vec![("DIC".into(), dic)] };
        let back = parse_table_csv(&render_table(&table, Format::Csv)).unwrap();
        prop_assert_eq!(back.rows.len(), table.rows.len());
        for (a, b) in table.rows.iter().zip(&back.rows) {
            prop_assert_eq!(&a.parameter, &b.parameter);
            prop_assert_eq!(a.sig, b.sig);
            prop_assert_eq!(a.hazard_ratio.is_some(), b.hazard_ratio.is_some());
            let hr = (a.hazard_ratio.unwrap_or(0.0), b.hazard_ratio.unwrap_or(0.0));
            for (x, y) in [(a.mean, b.mean), (a.bci_low, b.bci_low), (a.bci_high, b.bci_high), hr] {
                prop_assert!((x - y).abs() <= 5e-4 + 1e-12);
            }
        }
        prop_assert!((back.footer[0].1 - dic).abs() <= 5e-4 + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slices_tile_the_lead_window(offsets in prop::collection::vec(-1500i64..100, 1..60), anchor_min in 60i64..1380) {
        let anchor = START + anchor_min * MINUTE;
        let mut r = CorpusRecords { segments: vec![segment()], weather: weather_hours(24), ..Default::default() };
        for o in &offsets {
            r.travel_times.push(TravelTimeRecord { segment_id: "S1".into(), timestamp: anchor + *o, travel_time: 60.0 });
        }
        let c = RawCorpus::new(r).unwrap();
        let s = slice_aggregates(&c, "S1", anchor, &SliceConfig::default()).unwrap();
        for (i, agg) in s.iter().enumerate() {
            let (lo, hi) = (-300 * (i as i64 + 1), -300 * i as i64);
            let expected = offsets.iter().filter(|&&o| o >= lo && o < hi).count();
            prop_assert_eq!(agg.vehicle_count, expected);
            prop_assert_eq!(usize::from(agg.slice_index), i + 1);
        }
        let inside = offsets.iter().filter(|&&o| (-1200..0).contains(&o)).count();
        prop_assert_eq!(s.iter().map(|a| a.vehicle_count).sum::<usize>(), inside);
    }

    #[test]
    fn speed_is_order_free_and_cv_follows_sample_size(
        times in prop::collection::vec((0i64..300, 20.0..200.0f64), 0..12),
        min_sample in 2usize..5,
    ) {
        let anchor = START + 2 * HOUR;
        let build = |order: &[(i64, f64)]| {
            let mut r = CorpusRecords { segments: vec![segment()], weather: weather_hours(24), ..Default::default() };
            for (o, tt) in order {
                r.travel_times.push(TravelTimeRecord { segment_id: "S1".into(), timestamp: anchor - 300 + *o, travel_time: *tt });
            }
            RawCorpus::new(r).unwrap()
        };
        let config = SliceConfig { min_speed_sample: min_sample, ..SliceConfig::default() };
        let mut reversed = times.clone();
        reversed.reverse();
        let a = slice_aggregates(&build(&times), "S1", anchor, &config).unwrap();
        let b = slice_aggregates(&build(&reversed), "S1", anchor, &config).unwrap();
        match (a[0].avg_speed, b[0].avg_speed) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-9 * x),
            (x, y) => prop_assert_eq!(x, y),
        }
        prop_assert_eq!(a[0].avg_speed.is_some(), !times.is_empty());
        prop_assert_eq!(a[0].cv_speed.is_some(), times.len() >= min_sample);
        if let Some(cv) = a[0].cv_speed {
            prop_assert!(cv >= 0.0);
        }
    }

    #[test]
    fn aligned_slices_get_a_third_of_the_volume(volume in 0u32..2000, quarter in 4i64..90) {
        let mut r = CorpusRecords { segments: vec![segment()], weather: weather_hours(24), ..Default::default() };
        for q in 0..96 {
            for (id, v) in [("U", volume), ("D", volume + 1)] {
                r.volumes.push(VolumeRecord {
                    intersection_id: id.into(),
                    interval_start: START + q * 15 * MINUTE,
                    approach: Approach::All,
                    volume: if q == quarter { v } else { 7 },
                });
            }
        }
        let c = RawCorpus::new(r).unwrap();
        // anchor 10 minutes into the interval after `quarter`: slices 3 and 4 sit inside `quarter`
        let anchor = START + (quarter + 1) * 15 * MINUTE + 10 * MINUTE;
        let s = slice_aggregates(&c, "S1", anchor, &SliceConfig::default()).unwrap();
        for agg in &s[2..4] {
            prop_assert_eq!(agg.up_vol, Some(f64::from(volume) / 3.0));
            prop_assert_eq!(agg.down_vol, Some(f64::from(volume + 1) / 3.0));
            prop_assert!(agg.up_vol.unwrap() >= 0.0);
        }
    }

    #[test]
    fn weather_is_constant_within_an_hour(hour in 0i64..24, a in 0i64..3600, b in 0i64..3600) {
        let r = CorpusRecords { segments: vec![segment()], weather: weather_hours(24), ..Default::default() };
        let c = RawCorpus::new(r).unwrap();
        let t = START + hour * HOUR;
        prop_assert_eq!(attach_weather(&c, t + a).unwrap(), attach_weather(&c, t + b).unwrap());
    }
}

/// Four weeks of one-per-minute detections and hourly weather on S1, with
/// crashes at the given minute offsets.
fn matching_corpus(crash_minutes: &[i64]) -> RawCorpus {
    let minutes = 4 * WEEK / MINUTE;
    let mut r = CorpusRecords {
        segments: vec![segment()],
        weather: weather_hours(4 * WEEK / HOUR),
        ..Default::default()
    };
    for min in 0..minutes {
        r.travel_times.push(TravelTimeRecord {
            segment_id: "S1".into(),
            timestamp: START + min * MINUTE + 30,
            travel_time: 40.0 + (min * 7 % 23) as f64,
        });
    }
    for (i, m) in crash_minutes.iter().enumerate() {
        r.crashes.push(CrashEvent {
            crash_id: format!("C{i}"),
            segment_id: "S1".into(),
            timestamp: START + m * MINUTE,
        });
    }
    RawCorpus::new(r).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn matched_strata_respect_key_guard_and_size(
        crashes in prop::collection::btree_set(30i64..(4 * 7 * 1440 - 1), 1..12),
        m in 1usize..3,
        seed in any::<u64>(),
    ) {
        let crashes: Vec<i64> = crashes.into_iter().collect();
        let c = matching_corpus(&crashes);
        let spec = FeatureSpec::parse("avg_speed_s1,cv_speed_s2,rainy").unwrap();
        let out = match build_matched_dataset(&c, m, &spec, seed, &SliceConfig::default()) {
            Ok(o) => o,
            Err(arterial_risk::Error::NoViableStrata { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let d = &out.dataset;
        prop_assert_eq!(d.total_observations(), d.n_strata() * (m + 1));
        prop_assert_eq!(d.n_strata() + out.dropped.len(), crashes.len());
        let crash_times = c.crash_times("S1");
        for s in d.strata() {
            for ctl in &s.controls {
                prop_assert_eq!(MatchKey::of(&ctl.segment_id, ctl.anchor), s.key.clone());
                prop_assert!(crash_times.iter().all(|t| (*t - ctl.anchor).abs() > CONTAMINATION_GUARD_SECONDS));
            }
        }
        let again = build_matched_dataset(&c, m, &spec, seed, &SliceConfig::default()).unwrap();
        prop_assert_eq!(&again, &out);
    }

    #[test]
    fn sampler_is_deterministic_and_acceptance_is_moderate(dim in 1usize..=10, scales in prop::collection::vec(0.2..5.0f64, 10), seed in any::<u64>()) {
        let scales = &scales[..dim];
        let target = |x: &[f64]| -0.5 * x.iter().zip(scales).map(|(v, s)| (v / s).powi(2)).sum::<f64>();
        let config = McmcConfig { iterations: 6000, burn_in: 3000, seed, ..McmcConfig::default() };
        let names: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        let a = run_chains(&target, &vec![0.0; dim], None, names.clone(), &config).unwrap();
        let b = run_chains(&target, &vec![0.0; dim], None, names, &config).unwrap();
        prop_assert_eq!(&a, &b);
        for c in &a.chains {
            prop_assert!((0.1..=0.5).contains(&c.acceptance_rate), "rate {}", c.acceptance_rate);
        }
        for p in summarize(&a).unwrap().params {
            prop_assert!(!p.sig_05 || p.sig_10);
        }
    }
}

fn chi_square_passes(observed: &[u64], expected: &[f64], alpha: f64) -> (bool, f64) {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let critical = ChiSquared::new((observed.len() - 1) as f64).unwrap().inverse_cdf(1.0 - alpha);
    (stat < critical, stat)
}

#[test]
fn case_selection_follows_the_conditional_law() {
    let x = [[1.0, 0.2], [-0.5, 1.0], [0.0, 0.0], [2.0, -1.0], [0.3, 0.3]];
    let beta = [0.7, -0.4];
    let eta: Vec<f64> = x.iter().map(|r| r[0] * beta[0] + r[1] * beta[1]).collect();
    let total: f64 = eta.iter().map(|e| e.exp()).sum();
    let n = 100_000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut counts = [0u64; 5];
    for _ in 0..n {
        counts[softmax_choice(&eta, &mut rng)] += 1;
    }
    let expected: Vec<f64> = eta.iter().map(|e| e.exp() / total * n as f64).collect();
    let (ok, stat) = chi_square_passes(&counts, &expected, 0.01);
    assert!(ok, "chi-square {stat}");
}

#[test]
fn null_coefficients_place_the_case_uniformly() {
    // five independent replicates of 10 000 strata, pooled
    let mut counts = [0u64; 5];
    for seed in 1..=5 {
        let mut config = SimConfig::new(FeatureSpec::parse("avg_speed_s1").unwrap(), vec![0.0]);
        config.feature_model = vec![FeatureDist::Normal { mean: 0.0, sd: 1.0 }];
        config.n_strata = 10_000;
        config.m = 4;
        config.seed = seed;
        let SimOutput::Matched(d) = simulate_matched(&config).unwrap().output else { unreachable!() };
        for i in 0..d.n_strata() {
            let rows = d.stratum_rows(i);
            let rank = rows[1..].iter().filter(|&&v| v < rows[0]).count();
            counts[rank] += 1;
        }
    }
    let (ok, stat) = chi_square_passes(&counts, &[10_000.0; 5], 0.01);
    assert!(ok, "chi-square {stat}");
}

#[test]
fn substreams_make_strata_independent_of_count() {
    let mut small = SimConfig::default();
    small.n_strata = 20;
    small.seed = 3;
    let mut large = small.clone();
    large.n_strata = 60;
    let (SimOutput::Matched(a), SimOutput::Matched(b)) =
        (simulate_matched(&small).unwrap().output, simulate_matched(&large).unwrap().output)
    else {
        unreachable!()
    };
    assert_eq!(a.strata(), &b.strata()[..20]);
}
