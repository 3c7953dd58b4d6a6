use polytraj::config::RunConfig;
use polytraj::data::Dataset;
use polytraj::eval::rmse_at_offsets;
use polytraj::model::Model;
use polytraj::pipeline::{build_dataset, evaluate, generate, samples_of, train_model};
use polytraj::tensor::Checkpoint;

fn small(dir: &std::path::Path) -> RunConfig {
    RunConfig::new()
        .with("run.out_dir", dir.display())
        .unwrap()
        .with("synthetic.n", 16)
        .unwrap()
        .with("data.history", 5)
        .unwrap()
        .with("model.units", 4)
        .unwrap()
        .with("train.epochs", 2)
        .unwrap()
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn generated_dataset_round_trips_and_is_seeded() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ds = generate(&small(a.path())).unwrap();
    generate(&small(b.path())).unwrap();
    assert_eq!(dir_bytes(&a.path().join("data")), dir_bytes(&b.path().join("data")));

    let back = Dataset::load(&a.path().join("data")).unwrap();
    assert_eq!(back.train, ds.train);
    assert_eq!(back.test, ds.test);

    let c = tempfile::tempdir().unwrap();
    generate(&small(c.path()).with("run.seed", 1).unwrap()).unwrap();
    assert_ne!(dir_bytes(&a.path().join("data")), dir_bytes(&c.path().join("data")));
}

#[test]
fn samples_from_disk_match_samples_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let ds = generate(&cfg).unwrap();
    let back = Dataset::load(&cfg.data_dir()).unwrap();
    assert_eq!(
        samples_of(&cfg, &ds.train).unwrap(),
        samples_of(&cfg, &back.train).unwrap()
    );
}

#[test]
fn checkpoint_reproduces_evaluation_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let ds = build_dataset(&cfg).unwrap();
    let train = samples_of(&cfg, &ds.train).unwrap();
    let test = samples_of(&cfg, &ds.test).unwrap();
    let (model, curve) = train_model(&cfg, &train).unwrap();
    assert_eq!(curve.len(), 2);
    let before = evaluate(&cfg, &model, &test).unwrap();
    assert_eq!(before.fingerprint, cfg.fingerprint());

    let path = dir.path().join("m.ckpt");
    model.to_checkpoint().save(&path).unwrap();
    let restored = Model::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    let after = evaluate(&cfg, &restored, &test).unwrap();
    assert_eq!(before, after);

    let (again, _) = train_model(&cfg, &train).unwrap();
    let offsets = cfg.eval_offsets().unwrap();
    assert_eq!(
        rmse_at_offsets(&again, &test, &offsets, 10.0).unwrap().rmse,
        rmse_at_offsets(&model, &test, &offsets, 10.0).unwrap().rmse
    );
}

#[test]
fn history_longer_than_t0_is_rejected() {
    let cfg = RunConfig::new().with("data.history", 51).unwrap();
    assert!(build_dataset(&cfg).is_err());
}
