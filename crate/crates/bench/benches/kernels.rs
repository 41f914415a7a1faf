use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rtfn::eval::{kmeans_fit, rand_index};
use rtfn::layers::AttentionalLstm;
use rtfn::model::{batch_tensor, supervised_loss};
use rtfn::{Graph, ModelConfig, Padding, ParamStore, RtfnModel, Session, Task, Tensor};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random(&[256, 256], &mut rng);
    let b = random(&[256, 256], &mut rng);
    c.bench_function("matmul_256", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
            g.matmul(x, y).unwrap()
        })
    });
}

fn conv1d(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[16, 32, 150], &mut rng);
    let w = random(&[64, 32, 8], &mut rng);
    c.bench_function("conv1d_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
            let y = g.conv1d(xv, wv, Padding::Same).unwrap();
            let loss = g.sum(y, None).unwrap();
            g.backward(loss).unwrap()
        })
    });
}

fn alstm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let layer = AttentionalLstm::new(&mut store, "alstm", 1, 64, false, true, &mut rng).unwrap();
    let x = random(&[16, 150, 1], &mut rng);
    c.bench_function("alstm_forward", |bench| {
        bench.iter(|| {
            let mut s = Session::eval(&store);
            let xv = s.graph.constant(x.clone());
            layer.forward(&mut s, xv).unwrap()
        })
    });
}

fn train_step(c: &mut Criterion) {
    let t = 150;
    let model = RtfnModel::new(ModelConfig::new(Task::Classify, t, 2)).unwrap();
    let series: Vec<Vec<f64>> = (0..16).map(|i| (0..t).map(|j| ((i * j) as f64 * 0.1).sin()).collect()).collect();
    let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
    let x = batch_tensor(&refs, t).unwrap();
    let labels: Vec<usize> = (0..16).map(|i| i % 2).collect();
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function("train_step_b16_t150", |bench| {
        bench.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut s = Session::train(&model.store, &mut rng);
            let xv = s.graph.constant(x.clone());
            let logits = model.logits(&mut s, xv).unwrap();
            let loss = supervised_loss(&mut s.graph, logits, &labels).unwrap();
            s.backward(loss).unwrap()
        })
    });
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points = random(&[150, 192], &mut rng);
    c.bench_function("kmeans_150x192_k2", |bench| bench.iter(|| kmeans_fit(&points, 2, 10, 0).unwrap()));

    let labels = |rng: &mut ChaCha8Rng| (0..10_000).map(|_| rng.random_range(0..8)).collect::<Vec<usize>>();
    c.bench_function("rand_index_10k", |bench| {
        bench.iter_batched(
            || (labels(&mut rng), labels(&mut rng)),
            |(a, b)| rand_index(&a, &b).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, matmul, conv1d, alstm, train_step, clustering);
criterion_main!(benches);
