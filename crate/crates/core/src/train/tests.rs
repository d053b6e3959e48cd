use super::*;
use crate::model::{GraphBatch, ModelConfig, ModelKind};
use crate::sim::{generate_dataset, SystemSpec};

fn tiny_dataset(p: usize, s: usize, h: usize, num: usize, seed: u64) -> TrajectoryDataset {
    let spec = SystemSpec::sample(p, s, h, seed);
    generate_dataset(&spec, num, 200, 1e-3, 1e-2, seed).unwrap().0
}

fn tiny_train_config(train: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: train,
        train_size: train,
        val_size: 5,
        test_size: 5,
        ..TrainConfig::default()
    }
}

fn tiny_model(kind: ModelKind) -> ModelConfig {
    let mut cfg = ModelConfig::new(kind);
    cfg.layers = 2;
    cfg.hidden = 16;
    cfg
}

#[test]
fn features_are_invariant_under_rotation() {
    use crate::checks::{random_orthogonal, transform_batch};
    let ds = tiny_dataset(1, 1, 1, 2, 3);
    let batch = GraphBatch::from_dataset(&ds, 0..2).unwrap();
    let mut rng = crate::rng::rng_for(5, 0, 0);
    let o = random_orthogonal(&mut rng, true);
    let b = crate::rng::gaussian_vec3(&mut rng);
    let moved = transform_batch(&batch, o, b);
    for (a, bb) in batch.velocity_norms.data().iter().zip(moved.velocity_norms.data()) {
        assert!((a - bb).abs() < 1e-12);
    }
    assert_eq!(batch.edge_features, moved.edge_features);
}

#[test]
fn zero_velocity_feature_is_bias_only() {
    // v = 0 means the embedded node feature equals the bias row
    use crate::ad::{Session, Tensor};
    use crate::model::{embed_features, BatchNodes, ModelSpecs};
    let specs = ModelSpecs::new(tiny_model(ModelKind::Egnn));
    let mut params = specs.register(1);
    params.get_mut("embed.b").unwrap().data_mut().fill(0.25);
    let ds = tiny_dataset(2, 0, 0, 1, 1);
    let mut batch = GraphBatch::from_dataset(&ds, 0..1).unwrap();
    batch.velocity_norms = Tensor::zeros(2, 1);
    let mut sess = Session::new(&params);
    let nodes = BatchNodes::new(&mut sess, &batch);
    let h0 = embed_features(&mut sess, &nodes);
    assert!(sess.tape.value(h0).data().iter().all(|&v| v == 0.25));
}

#[test]
fn mse_closed_forms() {
    use crate::ad::{Session, Tensor};
    let params = crate::ad::ParamStore::new();
    let mut sess = Session::new(&params);
    let a = sess.constant(Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let same = sess.constant(Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let zero = mse_loss(&mut sess, a, same);
    assert_eq!(sess.tape.value(zero).at(0, 0), 0.0);

    // uniform offset delta in one coordinate: mean contribution delta^2 / 3
    let delta = 0.3;
    let shifted = sess.constant(Tensor::from_vec(2, 3, vec![1.0 + delta, 2.0, 3.0, 4.0 + delta, 5.0, 6.0]));
    let loss = mse_loss(&mut sess, shifted, a);
    assert!((sess.tape.value(loss).at(0, 0) - delta * delta / 3.0).abs() < 1e-15);

    // gradient is 2 (pred - target) / count
    let grads = sess.tape.backward(loss);
    let g = grads.get(shifted).unwrap();
    assert!((g.at(0, 0) - 2.0 * delta / 6.0).abs() < 1e-15);
    assert_eq!(g.at(0, 1), 0.0);
}

#[test]
fn constraint_error_definition() {
    let ds = tiny_dataset(0, 1, 0, 1, 7);
    let batch = GraphBatch::from_dataset(&ds, 0..1).unwrap();
    let xs = batch.positions.to_vec3s();
    assert_eq!(constraint_error(&batch, &xs), 0.0);

    // stretch the stick from its rest length to rest + 0.3
    let len = (xs[0] - xs[1]).norm();
    let dir = (xs[0] - xs[1]) / len;
    let stretched = vec![xs[1] + dir * (len + 0.3), xs[1]];
    assert!((constraint_error(&batch, &stretched) - 0.3).abs() < 1e-12);
}

#[test]
fn gmn_predictions_have_near_zero_constraint_error() {
    let ds = tiny_dataset(1, 1, 1, 3, 9);
    let batch = GraphBatch::from_dataset(&ds, 0..3).unwrap();
    let cfg = tiny_model(ModelKind::Gmn);
    let specs = crate::model::ModelSpecs::new(cfg);
    let params = specs.register(11);
    let pred = predict(&params, &cfg, &batch);
    let mean_len: f64 = 1.0; // sampled lengths are O(1)
    assert!(constraint_error(&batch, &pred) < 1e-9 * mean_len);
}

#[test]
fn training_loss_decreases_early_for_most_seeds() {
    let ds = tiny_dataset(1, 1, 0, 20, 13);
    let model = tiny_model(ModelKind::Gmn);
    let mut ok = 0;
    for seed in 0..10 {
        let mut cfg = tiny_train_config(10, 12);
        cfg.seed = seed;
        let out = train(&model, &cfg, &ds).unwrap();
        let losses = &out.history.train_loss;
        let decreasing = (0..10).all(|i| losses[i + 1] < losses[i]);
        if decreasing {
            ok += 1;
        }
    }
    assert!(ok >= 8, "only {ok}/10 seeds decreased monotonically");
}

#[test]
fn training_is_deterministic() {
    let ds = tiny_dataset(1, 1, 0, 16, 17);
    let model = tiny_model(ModelKind::Gmn);
    let cfg = tiny_train_config(6, 3);
    let a = train(&model, &cfg, &ds).unwrap();
    let b = train(&model, &cfg, &ds).unwrap();
    assert_eq!(a.history.train_loss, b.history.train_loss);
    assert_eq!(a.history.val_mse, b.history.val_mse);
    assert_eq!(a.params.to_json(), b.params.to_json());
}

#[test]
fn zero_epochs_returns_initialized_parameters() {
    let ds = tiny_dataset(1, 0, 0, 12, 19);
    let model = tiny_model(ModelKind::Egnn);
    let cfg = tiny_train_config(2, 0);
    let out = train(&model, &cfg, &ds).unwrap();
    assert!(out.history.train_loss.is_empty());
    let specs = crate::model::ModelSpecs::new(model);
    assert_eq!(out.params.to_json(), specs.register(cfg.seed).to_json());
}

#[test]
fn linear_baseline_is_exact_on_force_free_data() {
    // a single particle feels no force, so motion is exactly linear
    let ds = tiny_dataset(1, 0, 0, 14, 23);
    let model = ModelConfig::new(ModelKind::Linear);
    let cfg = tiny_train_config(4, 1);
    let out = train(&model, &cfg, &ds).unwrap();
    let splits = cfg.splits(ds.len()).unwrap();
    let metrics = evaluate(&out.params, &model, &ds, splits.test, 4).unwrap();
    assert!(metrics.mse < 1e-20, "mse {:e}", metrics.mse);
    let alpha = out.params.get("alpha").unwrap().at(0, 0);
    assert!((alpha - 0.2).abs() < 1e-9, "alpha {alpha} for 200 steps of dt 1e-3");
}

#[test]
fn regularized_egnn_beats_plain_egnn_on_constraint_error() {
    let ds = tiny_dataset(0, 1, 0, 40, 29);
    let cerr = |kind: ModelKind, seed: u64| {
        let model = tiny_model(kind);
        let mut cfg = tiny_train_config(30, 25);
        cfg.seed = seed;
        cfg.lambda = 0.1;
        let out = train(&model, &cfg, &ds).unwrap();
        let splits = cfg.splits(ds.len()).unwrap();
        evaluate(&out.params, &model, &ds, splits.test, 30).unwrap().constraint_error
    };
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let plain = median((0..3).map(|s| cerr(ModelKind::Egnn, s)).collect());
    let reg = median((0..3).map(|s| cerr(ModelKind::EgnnReg, s)).collect());
    assert!(reg < plain, "regularized {reg:e} vs plain {plain:e}");
}

#[test]
fn divergence_is_reported() {
    let ds = tiny_dataset(2, 0, 0, 12, 31);
    let model = tiny_model(ModelKind::Egnn);
    let mut cfg = tiny_train_config(2, 8);
    cfg.learning_rate = 1e120;
    match train(&model, &cfg, &ds) {
        Err(TrainError::Diverged { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|_| ()).err()),
    }
}

#[test]
fn batch_size_cannot_exceed_train_size() {
    let ds = tiny_dataset(1, 0, 0, 12, 37);
    let model = tiny_model(ModelKind::Egnn);
    let mut cfg = tiny_train_config(2, 1);
    cfg.batch_size = 3;
    assert!(matches!(train(&model, &cfg, &ds), Err(TrainError::Invalid(_))));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = tiny_model(ModelKind::Gmn);
    let specs = crate::model::ModelSpecs::new(model);
    let params = specs.register(3);
    let path = dir.path().join("model.json");
    save_checkpoint(&path, &params, &model).unwrap();
    let (back, cfg_back) = load_checkpoint(&path).unwrap();
    assert_eq!(params.to_json(), back.to_json());
    assert_eq!(model, cfg_back);
}

#[test]
fn evaluation_matches_recorded_best_validation() {
    let ds = tiny_dataset(1, 1, 0, 16, 41);
    let model = tiny_model(ModelKind::Egnn);
    let cfg = tiny_train_config(6, 4);
    let out = train(&model, &cfg, &ds).unwrap();
    let splits = cfg.splits(ds.len()).unwrap();
    let val = evaluate(&out.params, &model, &ds, splits.val, cfg.batch_size).unwrap();
    assert_eq!(val.mse, out.history.best_val_mse);
}

mod sweep_tests {
    use super::*;
    use crate::train::{sweep, SweepCell};

    #[test]
    fn single_cell_sweep_matches_train_plus_evaluate() {
        let ds = tiny_dataset(1, 1, 0, 16, 43);
        let base = tiny_train_config(6, 2);
        let cells = [SweepCell { kind: ModelKind::Egnn, train_size: 6, seed: base.seed }];
        let eval_sets = [("1,1,0".to_string(), &ds)];
        let rows = sweep(&cells, &base, &ds, &eval_sets, 1);
        assert_eq!(rows.len(), 1);

        let out = train(&ModelConfig::new(ModelKind::Egnn), &base, &ds).unwrap();
        let splits = base.splits(ds.len()).unwrap();
        let direct = evaluate(&out.params, &ModelConfig::new(ModelKind::Egnn), &ds, splits.test, 6).unwrap();
        let got = rows[0].metrics.unwrap();
        assert_eq!(got.mse, direct.mse);
        assert_eq!(got.constraint_error, direct.constraint_error);
    }

    #[test]
    fn sweep_row_count_and_jobs_invariance() {
        let ds = tiny_dataset(1, 0, 0, 14, 47);
        let base = tiny_train_config(4, 1);
        let cells: Vec<SweepCell> = [2usize, 4]
            .iter()
            .flat_map(|&ts| {
                [0u64, 1].iter().map(move |&seed| SweepCell { kind: ModelKind::Linear, train_size: ts, seed })
            })
            .collect();
        let eval_sets = [("a".to_string(), &ds), ("b".to_string(), &ds)];
        let serial = sweep(&cells, &base, &ds, &eval_sets, 1);
        let parallel = sweep(&cells, &base, &ds, &eval_sets, 3);
        assert_eq!(serial.len(), cells.len() * eval_sets.len());
        let lines: Vec<String> = serial.iter().map(|r| r.to_csv()).collect();
        let lines_p: Vec<String> = parallel.iter().map(|r| r.to_csv()).collect();
        // wall-clock differs between runs; compare the deterministic fields
        let strip = |s: &String| {
            let parts: Vec<&str> = s.split(',').collect();
            format!("{},{},{},{},{},{},{}", parts[0], parts[1], parts[2], parts[3], parts[4], parts[5], parts[8])
        };
        assert_eq!(lines.iter().map(strip).collect::<Vec<_>>(), lines_p.iter().map(strip).collect::<Vec<_>>());
    }
}
