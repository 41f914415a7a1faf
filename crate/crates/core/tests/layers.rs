use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rtfn::gradcheck::{check_params, random_tensor, weighted_sum};
use rtfn::layers::{
    attend, dropout, global_avg_pool, weigh_values, AttentionalLstm, ConvBn, HeadSpec, Lstm,
    MultiHeadConv, ResidualBlock, SelfAttention,
};
use rtfn::{Graph, ParamStore, RtfnError, Session, Tensor};

const FD_TOL: f64 = 1e-4;

fn zero_all(store: &mut ParamStore) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.is_trainable(id) {
            store.value_mut(id).data_mut().fill(0.0);
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------- LSTM ----------------

#[test]
fn lstm_with_zero_parameters_stays_at_zero() {
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "l", 2, 3, &mut rng(0)).unwrap();
    zero_all(&mut store);
    let mut s = Session::eval(&store);
    let x = s.graph.constant(random_tensor(&[2, 5, 2], 1.0, &mut rng(1)));
    let h = lstm.forward(&mut s, x, None, None).unwrap();
    assert_eq!(s.graph.value(h).shape(), &[2, 5, 3]);
    assert!(s.graph.value(h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn scalar_lstm_single_step_matches_scripted_recurrence() {
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "l", 1, 1, &mut rng(0)).unwrap();
    for id in lstm.params().collect::<Vec<_>>() {
        store.value_mut(id).data_mut().fill(0.1);
    }
    let mut s = Session::eval(&store);
    let x = s.graph.constant(Tensor::new(&[1, 1, 1], vec![1.0]).unwrap());
    let h = lstm.forward(&mut s, x, None, None).unwrap();

    // scripted oracle: every gate pre-activation = w·x + u·h0 + b = 0.1 + 0 + 0.1
    let pre: f64 = 0.1 * 1.0 + 0.1 * 0.0 + 0.1;
    let sig = 1.0 / (1.0 + (-pre).exp());
    let cand = pre.tanh();
    let c1 = sig * 0.0 + sig * cand;
    let h1 = sig * c1.tanh();
    let got = s.graph.value(h).data()[0];
    assert!((got - h1).abs() < 1e-12, "{got} vs {h1}");
}

#[test]
fn lstm_rejects_wrong_input_width() {
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "l", 2, 3, &mut rng(0)).unwrap();
    let mut s = Session::eval(&store);
    let x = s.graph.constant(Tensor::zeros(&[1, 4, 3]));
    assert!(matches!(
        lstm.forward(&mut s, x, None, None),
        Err(RtfnError::Dimension(_))
    ));
}

#[test]
fn lstm_gradients_for_all_twelve_blocks() {
    for seed in 0..20 {
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 2, 3, &mut rng(seed)).unwrap();
        assert_eq!(store.len(), 12);
        let x = random_tensor(&[1, 6, 2], 1.0, &mut rng(100 + seed));
        let err = check_params(
            &store,
            |s| {
                let xv = s.graph.constant(x.clone());
                let h = lstm.forward(s, xv, None, None)?;
                weighted_sum(&mut s.graph, h, seed)
            },
            usize::MAX,
            &mut rng(200 + seed),
        )
        .unwrap();
        assert!(err < FD_TOL, "seed {seed}: rel err {err}");
    }
}

// ---------------- attentional LSTM ----------------

#[test]
fn zero_scores_give_uniform_attention() {
    let mut store = ParamStore::new();
    let q = Lstm::new(&mut store, "q", 1, 2, &mut rng(0)).unwrap();
    let k = Lstm::new(&mut store, "k", 1, 2, &mut rng(1)).unwrap();
    zero_all(&mut store);
    let mut s = Session::eval(&store);
    let x = s.graph.constant(Tensor::new(&[1, 2, 1], vec![0.3, -0.7]).unwrap());
    let fq = q.forward(&mut s, x, None, None).unwrap();
    let fk = k.forward(&mut s, x, None, None).unwrap();
    let fv = s
        .graph
        .constant(Tensor::new(&[1, 2, 2], vec![2.0, 4.0, 6.0, 8.0]).unwrap());
    let (out, _) = attend(&mut s.graph, fq, fk, fv, false).unwrap();
    assert_eq!(s.graph.value(out).data(), &[4.0, 6.0, 4.0, 6.0]);
}

#[test]
fn unscaled_attention_worked_example() {
    let mut g = Graph::new();
    let fq = g.constant(Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap());
    let fk = g.constant(Tensor::identity(2));
    let fv = g.constant(Tensor::identity(2));
    let (out, _) = attend(&mut g, fq, fk, fv, false).unwrap();
    let e = std::f64::consts::E;
    let d = g.value(out).data();
    assert!((d[0] - e / (e + 1.0)).abs() < 1e-9);
    assert!((d[1] - 1.0 / (e + 1.0)).abs() < 1e-9);
    assert!((d[0] - 0.7311).abs() < 1e-4 && (d[1] - 0.2689).abs() < 1e-4);
}

#[test]
fn attention_weights_rows_sum_to_one() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let mut g = Graph::new();
        let fq = g.constant(random_tensor(&[2, 7, 4], 3.0, &mut r));
        let fk = g.constant(random_tensor(&[2, 7, 4], 3.0, &mut r));
        let fv = g.constant(random_tensor(&[2, 7, 4], 3.0, &mut r));
        let (_, w) = attend(&mut g, fq, fk, fv, false).unwrap();
        for row in g.value(w).data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn attention_output_invariant_to_score_shift() {
    // dyadic scores and integer shifts keep every addition exact
    let mut r = rng(9);
    for shift in [-37.0, 1.0, 512.0] {
        let scores = Tensor::new(
            &[5, 5],
            (0..25)
                .map(|_| (rand::Rng::random_range(&mut r, -4096i32..4096) as f64) / 1024.0)
                .collect(),
        )
        .unwrap();
        let values = random_tensor(&[5, 3], 2.0, &mut r);
        let shifted = Tensor::new(&[5, 5], scores.data().iter().map(|v| v + shift).collect()).unwrap();
        let run = |sc: Tensor| {
            let mut g = Graph::new();
            let s = g.constant(sc);
            let v = g.constant(values.clone());
            let (out, _) = weigh_values(&mut g, s, v).unwrap();
            g.value(out).clone()
        };
        assert_eq!(run(scores), run(shifted));
    }
}

#[test]
fn attentional_lstm_shape_and_gradients() {
    for (shared, scaled) in [(false, false), (true, false), (false, true)] {
        for seed in 0..20 {
            let mut store = ParamStore::new();
            let block = AttentionalLstm::new(&mut store, "a", 1, 3, shared, scaled, &mut rng(seed)).unwrap();
            assert_eq!(store.len(), if shared { 12 } else { 36 });
            let x = random_tensor(&[2, 5, 1], 1.5, &mut rng(50 + seed));
            let err = check_params(
                &store,
                |s| {
                    let xv = s.graph.constant(x.clone());
                    let y = block.forward(s, xv)?;
                    assert_eq!(s.graph.value(y).shape(), &[2, 5, 3]);
                    weighted_sum(&mut s.graph, y, seed)
                },
                8,
                &mut rng(seed),
            )
            .unwrap();
            assert!(err < FD_TOL, "shared={shared} scaled={scaled} seed {seed}: {err}");
        }
    }
}

// ---------------- self-attention ----------------

#[test]
fn zero_projection_self_attention_is_identity() {
    let mut store = ParamStore::new();
    let sa = SelfAttention::new(&mut store, "sa", 4, &mut rng(0)).unwrap();
    zero_all(&mut store);
    let x = random_tensor(&[2, 4, 9], 1.0, &mut rng(1));
    let mut s = Session::eval(&store);
    let xv = s.graph.constant(x.clone());
    let y = sa.forward(&mut s, xv).unwrap();
    assert_eq!(s.graph.value(y), &x);
}

#[test]
fn self_attention_preserves_shape() {
    let mut seed = 0;
    for b in 1..=4 {
        for c in [2, 5, 8] {
            for t in [4, 11, 16] {
                seed += 1;
                let mut store = ParamStore::new();
                let sa = SelfAttention::new(&mut store, "sa", c, &mut rng(seed)).unwrap();
                let mut s = Session::eval(&store);
                let xv = s.graph.constant(random_tensor(&[b, c, t], 1.0, &mut rng(seed)));
                let y = sa.forward(&mut s, xv).unwrap();
                assert_eq!(s.graph.value(y).shape(), &[b, c, t]);
            }
        }
    }
}

#[test]
fn self_attention_gradients() {
    for seed in 0..20 {
        let mut store = ParamStore::new();
        let sa = SelfAttention::new(&mut store, "sa", 3, &mut rng(seed)).unwrap();
        let x = random_tensor(&[2, 3, 6], 1.0, &mut rng(seed + 1000));
        let err = check_params(
            &store,
            |s| {
                let xv = s.graph.constant(x.clone());
                let y = sa.forward(s, xv)?;
                weighted_sum(&mut s.graph, y, seed)
            },
            usize::MAX,
            &mut rng(seed),
        )
        .unwrap();
        assert!(err < FD_TOL, "seed {seed}: {err}");
    }
}

// ---------------- convolution blocks ----------------

#[test]
fn multi_head_conv_concatenates_heads() {
    let heads = [
        HeadSpec { kernel: 3, filters: 32 },
        HeadSpec { kernel: 5, filters: 32 },
        HeadSpec { kernel: 8, filters: 32 },
    ];
    let mut store = ParamStore::new();
    let block = MultiHeadConv::new(&mut store, "mh", 1, &heads, &mut rng(0)).unwrap();
    assert_eq!(block.out_channels(), 96);
    let mut s = Session::train_deterministic(&store);
    let x = s.graph.constant(random_tensor(&[3, 1, 64], 1.0, &mut rng(1)));
    let y = block.forward(&mut s, x).unwrap();
    assert_eq!(s.graph.value(y).shape(), &[3, 96, 64]);
}

#[test]
fn training_batch_norm_normalises_each_channel() {
    let mut store = ParamStore::new();
    let conv = ConvBn::new(&mut store, "cb", 2, 5, 3, &mut rng(0)).unwrap();
    let mut s = Session::train_deterministic(&store);
    let x = s.graph.constant(random_tensor(&[4, 2, 20], 3.0, &mut rng(1)));
    let y = conv.forward(&mut s, x).unwrap();
    let v = s.graph.value(y);
    let (b, c, t) = (4, 5, 20);
    for ch in 0..c {
        let vals: Vec<f64> = (0..b)
            .flat_map(|i| (0..t).map(move |j| (i, j)))
            .map(|(i, j)| v.at(&[i, ch, j]))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6, "channel {ch} mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "channel {ch} var {var}");
    }
}

#[test]
fn running_stats_only_move_in_training() {
    let mut store = ParamStore::new();
    let conv = ConvBn::new(&mut store, "cb", 1, 2, 3, &mut rng(0)).unwrap();
    let x = random_tensor(&[2, 1, 10], 3.0, &mut rng(1));
    let before = store.clone();

    let updates = {
        let mut s = Session::eval(&store);
        let xv = s.graph.constant(x.clone());
        conv.forward(&mut s, xv).unwrap();
        s.into_stat_updates()
    };
    assert!(updates.is_empty());
    store.apply_stat_updates(&updates);
    assert!(store.bitwise_eq(&before));

    let updates = {
        let mut s = Session::train_deterministic(&store);
        let xv = s.graph.constant(x);
        conv.forward(&mut s, xv).unwrap();
        s.into_stat_updates()
    };
    assert_eq!(updates.len(), 1);
    store.apply_stat_updates(&updates);
    assert!(!store.bitwise_eq(&before));
}

#[test]
fn multi_head_conv_gradients() {
    for seed in 0..20 {
        let mut store = ParamStore::new();
        let block = MultiHeadConv::new(
            &mut store,
            "mh",
            1,
            &[HeadSpec { kernel: 3, filters: 2 }],
            &mut rng(seed),
        )
        .unwrap();
        let x = random_tensor(&[1, 1, 16], 1.0, &mut rng(seed + 7));
        let err = check_params(
            &store,
            |s| {
                let xv = s.graph.constant(x.clone());
                let y = block.forward(s, xv)?;
                weighted_sum(&mut s.graph, y, seed)
            },
            usize::MAX,
            &mut rng(seed),
        )
        .unwrap();
        assert!(err < FD_TOL, "seed {seed}: {err}");
    }
}

#[test]
fn residual_block_with_zero_kernels_is_relu_of_input() {
    let mut store = ParamStore::new();
    let block = ResidualBlock::new(&mut store, "res", 3, 3, &mut rng(0)).unwrap();
    assert!(block.shortcut.is_none());
    for conv in &block.convs {
        store.value_mut(conv.kernel_weights).data_mut().fill(0.0);
    }
    let x = random_tensor(&[2, 3, 10], 1.0, &mut rng(1));
    let mut s = Session::train_deterministic(&store);
    let xv = s.graph.constant(x.clone());
    let y = block.forward(&mut s, xv).unwrap();
    let expect: Vec<f64> = x.data().iter().map(|v| v.max(0.0)).collect();
    assert_eq!(s.graph.value(y).data(), &expect[..]);
}

#[test]
fn residual_block_preserves_length() {
    for t in [8, 9, 13, 32] {
        let mut store = ParamStore::new();
        let block = ResidualBlock::new(&mut store, "res", 2, 4, &mut rng(t as u64)).unwrap();
        let mut s = Session::train_deterministic(&store);
        let xv = s.graph.constant(random_tensor(&[2, 2, t], 1.0, &mut rng(1)));
        let y = block.forward(&mut s, xv).unwrap();
        assert_eq!(s.graph.value(y).shape(), &[2, 4, t]);
    }
}

#[test]
fn residual_block_gradients() {
    for seed in 0..20 {
        let mut store = ParamStore::new();
        let (c_in, c_out) = if seed % 2 == 0 { (2, 3) } else { (2, 2) };
        let block = ResidualBlock::new(&mut store, "res", c_in, c_out, &mut rng(seed)).unwrap();
        let x = random_tensor(&[2, c_in, 10], 1.0, &mut rng(seed + 3));
        let err = check_params(
            &store,
            |s| {
                let xv = s.graph.constant(x.clone());
                let y = block.forward(s, xv)?;
                weighted_sum(&mut s.graph, y, seed)
            },
            12,
            &mut rng(seed),
        )
        .unwrap();
        assert!(err < FD_TOL, "seed {seed}: {err}");
    }
}

// ---------------- dropout and pooling ----------------

#[test]
fn dropout_identity_cases() {
    let store = ParamStore::new();
    let x = random_tensor(&[3, 4], 1.0, &mut rng(0));
    let mut s = Session::eval(&store);
    let xv = s.graph.constant(x.clone());
    let y = dropout(&mut s, xv, 0.7).unwrap();
    assert_eq!(s.graph.value(y), &x);

    let mut gen = rng(1);
    let mut s = Session::train(&store, &mut gen);
    let xv = s.graph.constant(x.clone());
    let y = dropout(&mut s, xv, 0.0).unwrap();
    assert_eq!(s.graph.value(y), &x);
}

#[test]
fn dropout_rejects_rate_of_one() {
    let store = ParamStore::new();
    let mut gen = rng(1);
    let mut s = Session::train(&store, &mut gen);
    let xv = s.graph.constant(Tensor::ones(&[2]));
    assert!(matches!(dropout(&mut s, xv, 1.0), Err(RtfnError::Config(_))));
}

#[test]
fn dropout_preserves_expectation() {
    let store = ParamStore::new();
    let mut gen = rng(42);
    let mut s = Session::train(&store, &mut gen);
    let xv = s.graph.constant(Tensor::filled(&[100_000], 3.0));
    let y = dropout(&mut s, xv, 0.5).unwrap();
    let mean = s.graph.value(y).data().iter().sum::<f64>() / 1e5;
    assert!((mean - 3.0).abs() < 0.02 * 3.0, "mean {mean}");
}

#[test]
fn global_avg_pool_examples() {
    let store = ParamStore::new();
    let mut s = Session::eval(&store);
    let c = s.graph.variable(Tensor::filled(&[2, 3, 5], 1.25));
    let p = global_avg_pool(&mut s, c).unwrap();
    assert_eq!(s.graph.value(p), &Tensor::filled(&[2, 3], 1.25));

    let x = s
        .graph
        .variable(Tensor::new(&[1, 2, 2], vec![1.0, 3.0, 2.0, 6.0]).unwrap());
    let p = global_avg_pool(&mut s, x).unwrap();
    assert_eq!(s.graph.value(p).data(), &[2.0, 4.0]);
    let loss = s.graph.sum(p, None).unwrap();
    let grads = s.graph.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.5, 0.5, 0.5, 0.5]);
}

#[test]
fn layers_are_pure_given_inputs() {
    let mut store = ParamStore::new();
    let heads = [HeadSpec { kernel: 3, filters: 4 }, HeadSpec { kernel: 5, filters: 4 }];
    let mh = MultiHeadConv::new(&mut store, "mh", 1, &heads, &mut rng(3)).unwrap();
    let sa = SelfAttention::new(&mut store, "sa", 8, &mut rng(4)).unwrap();
    let x = random_tensor(&[2, 1, 20], 1.0, &mut rng(5));
    let run = || {
        let mut gen = rng(6);
        let mut s = Session::train(&store, &mut gen);
        let xv = s.graph.constant(x.clone());
        let h = mh.forward(&mut s, xv).unwrap();
        let h = sa.forward(&mut s, h).unwrap();
        let h = dropout(&mut s, h, 0.3).unwrap();
        s.graph.value(h).clone()
    };
    let (a, b) = (run(), run());
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}
