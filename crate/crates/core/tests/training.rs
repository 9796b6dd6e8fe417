use rand::Rng;
use reportgen_core::autodiff::{finite_diff_check_params, Graph, ParamGroup, ParamStore, Tensor};
use reportgen_core::corpus::{GrayImage, END_ID, START_ID};
use reportgen_core::model::{EncoderInput, Model, ModelConfig};
use reportgen_core::rng::seeded;
use reportgen_core::training::{
    batch_loss, sc_loss, sc_similarity, sc_term, Adam, EarlyStopping, Lambdas, MemorySink, ScEmbedder, ScMode,
    TrainConfig, TrainSample, Trainer,
};
use reportgen_core::Error;

const VOCAB: usize = 12;

fn tiny() -> ModelConfig {
    ModelConfig {
        k_topics: 3,
        d_model: 16,
        n_heads: 2,
        n_layers_enc: 1,
        n_layers_dec: 1,
        d_ff: 24,
        vocab_size: VOCAB,
        max_len: 8,
        image_size: 8,
        conv_channels: vec![4, 6],
        d_visual: 6,
        encoder_input: EncoderInput::Patches,
    }
}

fn embedder() -> ScEmbedder {
    ScEmbedder::from_idf((0..VOCAB - 4).map(|i| 1.0 + 0.1 * i as f64).collect())
}

fn samples(n: usize, seed: u64) -> Vec<TrainSample> {
    let mut rng = seeded(seed);
    let emb = embedder();
    (0..n)
        .map(|i| {
            let img = |rng: &mut rand_chacha::ChaCha8Rng| GrayImage::new(8, 8, (0..64).map(|_| rng.gen()).collect()).unwrap();
            let images = [img(&mut rng), img(&mut rng)];
            let len = rng.gen_range(2..6);
            let mut ids = vec![START_ID];
            ids.extend((0..len).map(|_| rng.gen_range(4..VOCAB)));
            ids.push(END_ID);
            TrainSample::new(format!("r{i}"), images, ids, i % 3, &emb).unwrap()
        })
        .collect()
}

fn trainer(config: TrainConfig) -> Trainer {
    let (model, store) = Model::init(&tiny(), 3).unwrap();
    Trainer::new(model, store, config, embedder()).unwrap()
}

#[test]
fn similarity_bounds() {
    let v = [1.0, 2.0, 0.0];
    assert!((sc_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(sc_similarity(&[0.0, 0.0, 3.0], &v).unwrap(), 0.0);
    assert_eq!(sc_similarity(&[-1.0, -2.0, 0.0], &v).unwrap(), 0.0);
    assert_eq!(sc_similarity(&[0.0; 3], &v).unwrap(), 0.0);
    assert!(matches!(sc_similarity(&v, &[0.0; 3]), Err(Error::DegenerateEmbedding)));
    assert!(matches!(sc_similarity(&v, &[1.0]), Err(Error::Shape(_))));
}

#[test]
fn similarity_loss_values() {
    assert_eq!(sc_loss(&[1.0, 1.0]), 0.0);
    assert!((sc_loss(&[0.0]) - 18.420_680_743_952_367).abs() < 1e-12);
    assert!((sc_loss(&[0.5, 0.0]) - (std::f64::consts::LN_2 + 18.420_680_743_952_367)).abs() < 1e-12);
}

#[test]
fn soft_similarity_agrees_with_discrete_on_one_hot_rows() {
    let emb = embedder();
    let mut rng = seeded(4);
    for _ in 0..10 {
        let truth_ids: Vec<usize> = std::iter::once(START_ID)
            .chain((0..5).map(|_| rng.gen_range(4..VOCAB)))
            .chain([END_ID])
            .collect();
        let pred_ids: Vec<usize> = truth_ids.iter().map(|&t| if t >= 4 && rng.gen_bool(0.4) { rng.gen_range(4..VOCAB) } else { t }).collect();
        let truth = emb.embed_ids(&truth_ids);
        let discrete = sc_loss(&[sc_similarity(&emb.embed_ids(&pred_ids), &truth).unwrap()]);

        // Decoder rows predicting pred_ids[1..] with certainty.
        let rows = &pred_ids[1..];
        let mut logits = vec![0.0; rows.len() * VOCAB];
        for (r, &t) in rows.iter().enumerate() {
            logits[r * VOCAB + t] = 1000.0;
        }
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[rows.len(), VOCAB], logits).unwrap());
        let soft = emb.embed_soft(&mut g, x).unwrap();
        let term = sc_term(&mut g, soft, &truth).unwrap();
        assert!((g.item(term).unwrap() - discrete).abs() < 1e-5);
    }
}

#[test]
fn adam_first_step_is_learning_rate_sized() {
    for g0 in [1e-6f64, -3e-3, 0.7, -250.0] {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::new(&[2], vec![1.0, 1.0]).unwrap(), ParamGroup::Generator);
        store.get_mut(id).grad = vec![g0, 0.0];
        let mut adam = Adam::new(&store);
        adam.step(&mut store, |_| 1e-3).unwrap();
        let w = store.get(id).value.data();
        let moved = 1.0 - w[0];
        // |g| / (|g| + eps): within 1% even for the smallest gradient here.
        assert!((moved / (1e-3 * g0.signum()) - 1.0).abs() < 0.011, "g {g0} moved {moved}");
        assert_eq!(w[1], 1.0, "zero gradient must leave the parameter unchanged");
    }
}

#[test]
fn adam_identical_tensors_stay_identical_and_groups_use_their_rates() {
    let mut store = ParamStore::<f32>::new();
    let a = store.add("a", Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap(), ParamGroup::Generator);
    let b = store.add("b", Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap(), ParamGroup::Generator);
    let c = store.add("c", Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap(), ParamGroup::Visual);
    let mut adam = Adam::new(&store);
    for step in 0..20 {
        for id in [a, b, c] {
            let p = store.get_mut(id);
            p.grad = p.value.data().iter().map(|&w| w * 2.0 - step as f32 * 0.1).collect();
        }
        adam.step(&mut store, |g| if g == ParamGroup::Visual { 0.0 } else { 1e-2 }).unwrap();
    }
    assert_eq!(store.get(a).value.data(), store.get(b).value.data());
    assert_eq!(store.get(c).value.data(), &[0.5, -1.0, 2.0]);
    assert_eq!(adam.steps(), 20);

    store.get_mut(a).grad[1] = f32::NAN;
    let before = store.digest();
    assert!(matches!(adam.step(&mut store, |_| 1e-2), Err(Error::Numerics { .. })));
    assert_eq!(store.digest(), before);
}

#[test]
fn early_stopping_trace() {
    let trace = [5.0, 4.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0];
    let mut s = EarlyStopping::new(10);
    let mut stopped = None;
    for (i, &v) in trace.iter().enumerate() {
        if s.observe(i + 1, v).stop {
            stopped = Some(i + 1);
            break;
        }
    }
    assert_eq!(stopped, Some(13));
    assert_eq!(s.best(), Some((3, 3.0)));

    let mut s = EarlyStopping::new(10);
    assert!((0..50).all(|e| !s.observe(e + 1, 100.0 - e as f64).stop));
    assert_eq!(s.best().unwrap().0, 50);
}

#[test]
fn config_validation() {
    let ok = TrainConfig::default();
    ok.validate().unwrap();
    for bad in [
        TrainConfig { lambdas: Lambdas { kmve: -0.1, ..Lambdas::default() }, ..ok.clone() },
        TrainConfig { lr_decay_per_epoch: 0.0, ..ok.clone() },
        TrainConfig { lr_decay_per_epoch: 1.5, ..ok.clone() },
        TrainConfig { patience: 0, ..ok.clone() },
        TrainConfig { batch_size: 0, ..ok.clone() },
        TrainConfig { max_epochs: 0, ..ok.clone() },
        TrainConfig { max_epochs: 501, ..ok.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
    }
    let json: TrainConfig = serde_json::from_str(r#"{"batch_size": 4, "sc_mode": "discrete-eval-only"}"#).unwrap();
    assert_eq!(json.batch_size, 4);
    assert_eq!(json.sc_mode, ScMode::DiscreteEvalOnly);
    assert_eq!(json.lambdas, Lambdas::default());
}

#[test]
fn epoch_contracts() {
    let data = samples(10, 1);
    let mut t = trainer(TrainConfig { batch_size: 3, ..TrainConfig::default() });
    for e in 0..3 {
        let out = t.train_epoch(&data).unwrap();
        assert_eq!(out.batches.len(), 4);
        for b in &out.batches {
            assert_eq!(b.freeze_hash_before, b.freeze_hash_after);
            assert!((b.total - b.components.total(&t.config.lambdas)).abs() < 1e-9);
        }
        let r = &out.record;
        assert_eq!(r.epoch, e + 1);
        assert!((r.mean_loss - (0.4 * r.kmve + 0.6 * r.tf + 0.4 * r.sc)).abs() < 1e-9);
        assert_eq!(r.lr_kmve, 5e-4 * 0.8f64.powi(e as i32));
    }
    assert!((t.lr(ParamGroup::Visual) - 5e-4 * 0.512).abs() < 1e-12);
    assert!((t.lr(ParamGroup::Generator) - 1e-4 * 0.512).abs() < 1e-12);
}

#[test]
fn teacher_forcing_only_weighting() {
    let data = samples(4, 2);
    let l = Lambdas { kmve: 0.0, tf: 1.0, sc: 0.0 };
    let t = trainer(TrainConfig { lambdas: l, ..TrainConfig::default() });
    let batch: Vec<_> = data.iter().collect();
    let mut g = Graph::new();
    let (loss, c) = batch_loss(&t.model, &mut g, &t.store, &batch, &t.config, &t.embedder).unwrap();
    assert_eq!(c.total(&l), c.tf);
    assert!((g.item(loss).unwrap() as f64 - c.tf).abs() < 1e-5);

    // Standalone per-token teacher-forced cross-entropy.
    let mut sum = 0.0;
    let mut n = 0;
    for s in &data {
        let mut g = Graph::inference();
        let f = t.model.encode_images(&mut g, &t.store, &s.images).unwrap();
        let mem = t.model.memory(&mut g, &t.store, &f).unwrap();
        let (input, target) = t.model.teacher_forcing_pair(&s.token_ids).unwrap();
        let d = t.model.transformer_decode(&mut g, &t.store, mem, &input).unwrap();
        let ce = g.cross_entropy(d.logits, &target).unwrap();
        sum += g.item(ce).unwrap() as f64 * target.len() as f64;
        n += target.len();
    }
    assert!((c.tf - sum / n as f64).abs() < 1e-9);
}

#[test]
fn training_is_deterministic() {
    let data = samples(6, 3);
    let run = || {
        let mut t = trainer(TrainConfig { batch_size: 4, seed: 9, ..TrainConfig::default() });
        let recs: Vec<_> = (0..3).map(|_| t.train_epoch(&data).unwrap().record).collect();
        (recs, t.store.digest())
    };
    let (a, da) = run();
    let (b, db) = run();
    assert_eq!(da, db);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.mean_loss.to_bits(), y.mean_loss.to_bits());
        assert_eq!(x, y);
    }
}

#[test]
fn fit_writes_one_checkpoint_per_epoch() {
    let data = samples(6, 4);
    let mut t = trainer(TrainConfig { max_epochs: 1, ..TrainConfig::default() });
    let mut sink = MemorySink::default();
    let s = t.fit(&data, &data[..2], &mut sink, |_| {}).unwrap();
    assert_eq!(sink.saved, 1);
    assert_eq!(s.records.len(), 1);
    assert_eq!(s.best_epoch, 1);
    assert_eq!(sink.best.as_ref().unwrap().0, 1);
    assert!(s.records[0].val_loss.is_some());

    let mut t = trainer(TrainConfig { max_epochs: 4, lr_rg: 1e-3, lr_kmve: 1e-3, ..TrainConfig::default() });
    let mut sink = MemorySink::default();
    let s = t.fit(&data, &data[..2], &mut sink, |_| {}).unwrap();
    assert_eq!(sink.saved, 4);
    let best = s.records.iter().map(|r| r.val_loss.unwrap()).fold(f64::INFINITY, f64::min);
    assert_eq!(s.best_val_loss, best);
}

#[test]
fn failures_are_reported() {
    let data = samples(4, 5);
    let mut t = trainer(TrainConfig::default());
    let w = t.store.find("generator.out.bias").unwrap();
    t.store.get_mut(w).value.data_mut()[0] = f32::NAN;
    let mut sink = MemorySink::default();
    match t.fit(&data, &data, &mut sink, |_| {}) {
        Err(Error::Numerics { last_good_epoch, .. }) => assert_eq!(last_good_epoch, None),
        other => panic!("expected a numerics failure, got {other:?}"),
    }

    let mut bad = samples(1, 6);
    bad[0].topic = 3;
    let mut t = trainer(TrainConfig::default());
    assert!(matches!(t.train_epoch(&bad), Err(Error::Label { label: 3, k: 3 })));
    assert!(matches!(t.train_epoch(&[]), Err(Error::DatasetTooSmall { .. })));

    let emb = embedder();
    let imgs = data[0].images.clone();
    assert!(matches!(
        TrainSample::new("x", imgs, vec![START_ID, END_ID], 0, &emb),
        Err(Error::DegenerateEmbedding)
    ));
}

#[test]
fn composite_loss_gradient_matches_finite_differences() {
    let data = samples(2, 7);
    let (model, store) = Model::init(&tiny(), 11).unwrap();
    let store: ParamStore<f64> = store.cast();
    let config = TrainConfig::default();
    let emb = embedder();
    let batch: Vec<_> = data.iter().collect();
    let check = finite_diff_check_params(
        &store,
        |g, s| Ok(batch_loss(&model, g, s, &batch, &config, &emb)?.0),
        1e-5,
        3,
    )
    .unwrap();
    assert!(check.checked > 100, "{check:?}");
    assert!(check.max_rel_error < 1e-3, "{check:?}");
}
