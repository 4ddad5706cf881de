//! Property tests: layer invariants and agreement with naive oracles.

use proptest::prelude::*;
use spikmamba::events::{read_binary, write_binary, Event, EventStream, Polarity, SensorSize};
use spikmamba::model::{
    selective_scan, window_reshape, window_reverse, zoh_discretize, Checkpoint, ModelConfig, Preset, SpikMamba,
};
use spikmamba::snn::{lif_sequence, lif_step, LifConfig, LifState};
use spikmamba::tensor::{conv1d_depthwise_values, conv3d_values, matmul_values, Tape, Tensor};

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_f64(shape, &data).unwrap()
}

fn values(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lif_step_is_binary_resets_and_is_monotone(
        x in values(16, -5.0, 5.0),
        v in values(16, -2.0, 1.0),
        bump in 0.0f64..3.0,
    ) {
        let cfg = LifConfig::default();
        let state = LifState { v: tensor(&[16], v.clone()) };
        let (s, next) = lif_step(&tensor(&[16], x.clone()), &state, &cfg).unwrap();
        for (i, &si) in s.data().iter().enumerate() {
            prop_assert!(si == 0.0 || si == 1.0);
            if si == 1.0 {
                prop_assert_eq!(next.v.data()[i], cfg.v_reset);
            }
        }
        let higher: Vec<f64> = x.iter().map(|v| v + bump).collect();
        let (s2, _) = lif_step(&tensor(&[16], higher), &state, &cfg).unwrap();
        for (a, b) in s.data().iter().zip(s2.data()) {
            prop_assert!(b >= a, "raising the input removed a spike");
        }
    }

    #[test]
    fn lif_sequence_threads_single_steps(x in values(5 * 6, -2.0, 4.0)) {
        let cfg = LifConfig::default();
        let seq = lif_sequence(&tensor(&[5, 6], x.clone()), &cfg).unwrap();
        let mut state = LifState::at_reset(&[6], &cfg);
        for t in 0..5 {
            let (s, next) = lif_step(&tensor(&[6], x[t * 6..(t + 1) * 6].to_vec()), &state, &cfg).unwrap();
            prop_assert_eq!(s.data(), &seq.data()[t * 6..(t + 1) * 6]);
            state = next;
        }
    }

    #[test]
    fn tape_lif_matches_reference_sequence(x in values(2 * 4 * 3, -2.0, 4.0)) {
        let cfg = LifConfig::default();
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(tensor(&[2, 4, 3], x.clone()));
        let s = tape.lif(v, 1, &cfg).unwrap();
        for b in 0..2 {
            let seq = lif_sequence(&tensor(&[4, 3], x[b * 12..(b + 1) * 12].to_vec()), &cfg).unwrap();
            prop_assert_eq!(&tape.value(s).data()[b * 12..(b + 1) * 12], seq.data());
        }
    }

    #[test]
    fn matmul_matches_triple_loop(a in values(3 * 4, -1.0, 1.0), b in values(4 * 5, -1.0, 1.0)) {
        let c = matmul_values(&tensor(&[3, 4], a.clone()), &tensor(&[4, 5], b.clone())).unwrap();
        let mut want = vec![0.0; 15];
        for i in 0..3 {
            for j in 0..5 {
                want[i * 5 + j] = (0..4).map(|k| a[i * 4 + k] * b[k * 5 + j]).sum();
            }
        }
        prop_assert!(close(c.data(), &want, 1e-12));
    }

    #[test]
    fn conv3d_matches_direct_sum(
        x in values(2 * 2 * 3 * 4 * 4, -1.0, 1.0),
        w in values(3 * 2 * 1 * 2 * 2, -1.0, 1.0),
    ) {
        let xt = tensor(&[2, 2, 3, 4, 4], x);
        let wt = tensor(&[3, 2, 1, 2, 2], w);
        let y = conv3d_values(&xt, &wt, [1, 2, 2]).unwrap();
        prop_assert_eq!(y.shape(), &[2, 3, 3, 2, 2]);
        for b in 0..2 { for o in 0..3 { for t in 0..3 { for h in 0..2 { for ww in 0..2 {
            let mut acc = 0.0;
            for c in 0..2 { for i in 0..2 { for j in 0..2 {
                acc += xt.at(&[b, c, t, 2 * h + i, 2 * ww + j]) * wt.at(&[o, c, 0, i, j]);
            }}}
            prop_assert!((y.at(&[b, o, t, h, ww]) - acc).abs() < 1e-12);
        }}}}}
    }

    #[test]
    fn depthwise_conv_is_causal_sum(x in values(2 * 6 * 3, -1.0, 1.0), w in values(3 * 4, -1.0, 1.0)) {
        let xt = tensor(&[2, 6, 3], x);
        let wt = tensor(&[3, 4], w);
        let y = conv1d_depthwise_values(&xt, &wt).unwrap();
        for b in 0..2 { for l in 0..6 { for d in 0..3 {
            let acc: f64 = (0..4).filter(|&j| j <= l).map(|j| wt.at(&[d, j]) * xt.at(&[b, l - j, d])).sum();
            prop_assert!((y.at(&[b, l, d]) - acc).abs() < 1e-12);
        }}}
    }

    #[test]
    fn fused_ssm_equals_discretize_then_scan(
        seed in any::<u64>(),
        len in 1usize..10,
        d in 1usize..5,
        n in 1usize..4,
    ) {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut gen = |k: usize, lo: f64, hi: f64| -> Vec<f64> { (0..k).map(|_| r.random_range(lo..hi)).collect() };
        let u = tensor(&[2, len, d], gen(2 * len * d, -1.0, 1.0));
        let delta = tensor(&[2, len, d], gen(2 * len * d, 1e-3, 2.0));
        let a = tensor(&[d, n], gen(d * n, -3.0, -0.01));
        let b = tensor(&[2, len, n], gen(2 * len * n, -1.0, 1.0));
        let c = tensor(&[2, len, n], gen(2 * len * n, -1.0, 1.0));

        let (a_bar, factor) = zoh_discretize(&a, &delta).unwrap();
        let mut b_bar = factor.clone();
        for (k, v) in b_bar.data_mut().iter_mut().enumerate() {
            let (bl, s) = (k / (d * n), k % n);
            *v *= b.data()[bl * n + s];
        }
        let want = selective_scan(&u, &a_bar, &b_bar, &c).unwrap();

        let mut tape = Tape::<f64>::new();
        let vars = [u, delta, a, b, c].map(|t| tape.constant(t));
        let y = tape.selective_ssm(vars[0], vars[1], vars[2], vars[3], vars[4]).unwrap();
        prop_assert!(close(tape.value(y).data(), want.data(), 1e-12));
    }

    #[test]
    fn window_reshape_round_trips(x in values(2 * 4 * 3 * 2, -1.0, 1.0), w in prop::sample::select(vec![1usize, 2, 4])) {
        let t = tensor(&[2, 4, 3, 2], x);
        let back = window_reverse(&window_reshape(&t, w).unwrap(), w).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn event_binary_round_trips(
        h in 1u32..300,
        w in 1u32..300,
        raw in prop::collection::vec((any::<u64>(), any::<u16>(), any::<u16>(), any::<bool>()), 0..200),
    ) {
        let events = raw
            .into_iter()
            .map(|(t, x, y, p)| Event {
                t,
                x: x % w as u16,
                y: y % h as u16,
                p: if p { Polarity::Positive } else { Polarity::Negative },
            })
            .collect();
        let stream = EventStream::new(SensorSize::new(h, w), events).unwrap();
        let mut first = Vec::new();
        write_binary(&stream, &mut first).unwrap();
        let back = read_binary(first.as_slice()).unwrap();
        prop_assert_eq!(&back, &stream);
        let mut second = Vec::new();
        write_binary(&back, &mut second).unwrap();
        prop_assert_eq!(first, second);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>()) {
        let model = SpikMamba::<f32>::new(ModelConfig::preset(Preset::Tiny), seed).unwrap();
        let bytes = Checkpoint::from_model(&model).to_bytes().unwrap();
        let rebuilt: SpikMamba<f32> = Checkpoint::from_bytes(&bytes).unwrap().into_model().unwrap();
        prop_assert_eq!(Checkpoint::from_model(&rebuilt).to_bytes().unwrap(), bytes);
    }
}

#[test]
fn lif_forward_is_binary_on_many_inputs() {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..100_000).map(|_| r.random_range(-10.0..10.0)).collect();
    let s = lif_sequence(&tensor(&[10, 10_000], x), &LifConfig::default()).unwrap();
    assert!(s.data().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn lif_zero_input_is_a_fixed_point() {
    let s = lif_sequence(&Tensor::<f64>::zeros(&[6, 4]), &LifConfig::default()).unwrap();
    assert!(s.data().iter().all(|&v| v == 0.0));
}
