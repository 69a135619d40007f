use proptest::prelude::*;

use wganc::autodiff::{Graph, Tensor};
use wganc::checkpoint::Checkpoint;
use wganc::curriculum::{blended_schedule, compare, composite_critic, one_hot_schedule, Lambda, OrderResult};
use wganc::families::{build_seq_bank, downsample, prefix};
use wganc::nn::{init_mlp, Activation, MlpSpec};
use wganc::samples::{parse_samples, write_samples};
use wganc::sinusoid::{grid_axes, nearest_sine_distance, nearest_sine_error, GridResolution, SineParams, SineRanges};

fn lambda_strategy(d: usize) -> impl Strategy<Value = Lambda> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..1.0f64], d).prop_map(move |mut w| {
        if w.iter().sum::<f64>() == 0.0 {
            w[d - 1] = 1.0;
        }
        let total: f64 = w.iter().sum();
        Lambda::new(w.iter().map(|x| x / total).collect()).unwrap()
    })
}

fn triple() -> impl Strategy<Value = (Lambda, Lambda, Lambda)> {
    (1usize..=8).prop_flat_map(|d| (lambda_strategy(d), lambda_strategy(d), lambda_strategy(d)))
}

fn dominates_or_equal(r: OrderResult) -> bool {
    matches!(r, OrderResult::Dominates | OrderResult::Equal)
}

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-3.0..3.0f64, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn image(max_blocks: usize) -> impl Strategy<Value = Tensor> {
    (1usize..3, 1..=max_blocks, 1usize..3).prop_flat_map(|(b, s, c)| tensor(vec![b, 4 * s, 4 * s, c]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn compare_is_a_partial_order((a, b, c) in triple()) {
        prop_assert_eq!(compare(&a, &a).unwrap(), OrderResult::Equal);
        let ab = compare(&a, &b).unwrap();
        let ba = compare(&b, &a).unwrap();
        let flipped = match ab {
            OrderResult::Dominates => OrderResult::DominatedBy,
            OrderResult::DominatedBy => OrderResult::Dominates,
            other => other,
        };
        prop_assert_eq!(ba, flipped);
        if dominates_or_equal(ab) && dominates_or_equal(compare(&b, &c).unwrap()) {
            prop_assert!(dominates_or_equal(compare(&a, &c).unwrap()));
        }
    }

    #[test]
    fn schedules_are_chains(d in 1usize..=16, s in 1usize..5, ramp in 0usize..5) {
        for schedule in [one_hot_schedule(d, s).unwrap(), blended_schedule(d, s, ramp).unwrap()] {
            for pair in schedule.stages().windows(2) {
                prop_assert!(dominates_or_equal(compare(&pair[1].lambda, &pair[0].lambda).unwrap()));
            }
        }
    }

    #[test]
    fn downsample_preserves_mean_and_range(x in image(3), k in prop::sample::select(vec![1usize, 2, 4])) {
        let y = downsample(&x, k).unwrap();
        prop_assert!((y.mean() - x.mean()).abs() < 1e-12);
        let (lo, hi) = x.data().iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        prop_assert!(y.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn downsample_composes(x in image(2)) {
        prop_assert_eq!(downsample(&x, 1).unwrap(), x.clone());
        let twice = downsample(&downsample(&x, 2).unwrap(), 2).unwrap();
        prop_assert!(twice.max_abs_diff(&downsample(&x, 4).unwrap()) < 1e-12);
    }

    #[test]
    fn prefixes_compose(t in 1usize..10, rows in 1usize..4, seed in any::<u64>()) {
        let data: Vec<f64> = (0..rows * t).map(|i| (seed.wrapping_add(i as u64) % 1000) as f64 / 7.0).collect();
        let x = Tensor::new(vec![rows, t], data).unwrap();
        for i in 1..=t {
            for j in 1..=t {
                let lhs = prefix(&prefix(&x, j).unwrap(), i.min(j)).unwrap();
                prop_assert_eq!(lhs, prefix(&x, i.min(j)).unwrap());
            }
        }
    }

    #[test]
    fn composite_with_one_hot_is_that_critic(seed in any::<u64>(), x in tensor(vec![3, 6])) {
        let bank = build_seq_bank(6, &[2, 4, 6], &[5], seed).unwrap();
        for i in 0..3 {
            let mut g = Graph::new();
            let lambda = Lambda::one_hot(3, i);
            let bound = bank.bind(&mut g, [i], false).unwrap();
            let xn = g.constant(x.clone());
            let out = composite_critic(&mut g, &bank, &bound, &lambda, xn).unwrap();
            let view = prefix(&x, bank.entries()[i].transform.param()).unwrap();
            prop_assert_eq!(g.value(out), &bank.entries()[i].params.forward(&view).unwrap());
        }
    }

    #[test]
    fn zero_weight_critics_are_ignored(seed in any::<u64>(), x in tensor(vec![2, 6])) {
        let bank = build_seq_bank(6, &[2, 4, 6], &[5], seed).unwrap();
        let lambda = Lambda::new(vec![0.25, 0.0, 0.75]).unwrap();
        let mut other = bank.clone();
        other.reinit_stage(1, seed ^ 1).unwrap();
        let run = |b: &wganc::families::CriticBank| {
            let mut g = Graph::new();
            let bound = b.bind(&mut g, [0, 1, 2], false).unwrap();
            let xn = g.constant(x.clone());
            let out = composite_critic(&mut g, b, &bound, &lambda, xn).unwrap();
            g.value(out).clone()
        };
        prop_assert_eq!(run(&bank), run(&other));
    }

    #[test]
    fn samples_csv_round_trips(rows in 1usize..5, cols in 1usize..8, seed in any::<u64>()) {
        let data: Vec<f64> = (0..rows * cols)
            .map(|i| f64::from_bits(wganc::rng::mix(seed ^ i as u64)))
            .map(|v| if v.is_finite() { v } else { 0.5 })
            .collect();
        let t = Tensor::new(vec![rows, cols], data).unwrap();
        prop_assert_eq!(parse_samples(write_samples(&t).as_bytes()).unwrap(), t);
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), hidden in prop::collection::vec(1usize..5, 0..3)) {
        let gen = init_mlp(&MlpSpec::new(3, hidden.clone(), 4, Activation::Tanh).unwrap(), seed);
        let bank = build_seq_bank(4, &[1, 4], &hidden, seed).unwrap();
        let ck = Checkpoint::from_run(seed as usize % 1000, &gen, &bank);
        prop_assert_eq!(Checkpoint::parse(&ck.to_text()).unwrap(), ck);
    }

    #[test]
    fn parsers_do_not_panic(text in ".{0,200}") {
        let _ = Checkpoint::parse(&text);
        let _ = parse_samples(text.as_bytes());
        let _ = wganc::config::RunConfig::from_toml(&text);
    }
}

fn small_ranges() -> SineRanges {
    SineRanges {
        amplitude: [0.5, 1.5],
        frequency: [0.2, 0.8],
        phase: [0.0, std::f64::consts::TAU],
    }
}

/// The definition, evaluated point by point over the whole grid.
fn brute_force(x: &[f64], ranges: &SineRanges, grid: GridResolution) -> f64 {
    let (amps, freqs, phases) = grid_axes(ranges, grid);
    let mut best = f64::INFINITY;
    for &a in &amps {
        for &w in &freqs {
            for &b in &phases {
                let p = SineParams { amplitude: a, frequency: w, phase: b };
                let d: f64 = x.iter().enumerate().map(|(t, &v)| (v - p.value(t)).powi(2)).sum();
                best = best.min(d.sqrt());
            }
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nearest_sine_matches_brute_force(
        x in prop::collection::vec(-2.0..2.0f64, 12),
        na in 2usize..7, nw in 2usize..7, nb in 2usize..7,
    ) {
        let grid = GridResolution { amplitude: na, frequency: nw, phase: nb };
        let fast = nearest_sine_distance(&x, &small_ranges(), grid);
        let slow = brute_force(&x, &small_ranges(), grid);
        prop_assert!((fast - slow).abs() < 1e-12, "fast {} vs brute force {}", fast, slow);
    }

    #[test]
    fn refining_the_grid_never_increases_the_distance(
        x in prop::collection::vec(-2.0..2.0f64, 16),
        n in 2usize..8,
    ) {
        let grid = GridResolution::uniform(n);
        let coarse = nearest_sine_distance(&x, &small_ranges(), grid);
        let fine = nearest_sine_distance(&x, &small_ranges(), grid.refined());
        prop_assert!(fine <= coarse);
    }

    #[test]
    fn zero_exactly_on_grid(ia in 0usize..5, iw in 0usize..5, ib in 0usize..5, jitter in 1e-6..1e-2f64) {
        let grid = GridResolution::uniform(5);
        let (a, w, b) = grid_axes(&small_ranges(), grid);
        let wave = SineParams { amplitude: a[ia], frequency: w[iw], phase: b[ib] }.wave(20);
        prop_assert_eq!(nearest_sine_distance(&wave, &small_ranges(), grid), 0.0);
        let mut off = wave.clone();
        off[7] += jitter;
        prop_assert!(nearest_sine_distance(&off, &small_ranges(), grid) > 1e-12);
    }

    #[test]
    fn report_is_permutation_invariant(rows in prop::collection::vec(prop::collection::vec(-1.5..1.5f64, 8), 2..6)) {
        let grid = GridResolution::uniform(6);
        let t = Tensor::from_rows(&rows);
        let mut rev = rows.clone();
        rev.reverse();
        let a = nearest_sine_error(&t, &small_ranges(), grid).unwrap();
        let b = nearest_sine_error(&Tensor::from_rows(&rev), &small_ranges(), grid).unwrap();
        prop_assert!((a.mean - b.mean).abs() < 1e-12);
        prop_assert!((a.std_err - b.std_err).abs() < 1e-12);
    }
}

#[test]
fn all_zero_wave_is_nearest_the_smallest_amplitude() {
    let r = SineRanges { amplitude: [0.9, 1.1], ..small_ranges() };
    let grid = GridResolution::uniform(6);
    let (_, freqs, phases) = grid_axes(&r, grid);
    let zero = vec![0.0; 16];
    let mut expected = f64::INFINITY;
    for &w in &freqs {
        for &b in &phases {
            let s = SineParams { amplitude: 1.0, frequency: w, phase: b }.wave(16);
            expected = expected.min(0.9 * s.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }
    let got = nearest_sine_distance(&zero, &r, grid);
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}
