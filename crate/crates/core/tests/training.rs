use std::fs;

use hstrnet::config::{Settings, Variant};
use hstrnet::data::{DatasetIndex, Layout};
use hstrnet::network::Model;
use hstrnet::optim::Adam;
use hstrnet::selftest::small_config;
use hstrnet::train::{train, Trainer};
use hstrnet::{toy, Error, ImageF};

fn small_settings(steps: usize) -> Settings {
    let mut s = Settings::default();
    s.seed = 3;
    s.model = small_config(Variant::Full);
    s.data.crop = 32;
    s.train.learning_rate = 1e-3;
    s.train.batch_size = 2;
    s.train.epochs = 1000;
    s.train.max_steps = Some(steps);
    s
}

#[test]
fn single_batch_overfits() {
    let frames = toy::clip(9, 3, 32, 32);
    let lr = hstrnet::resample::degrade(&frames[1], 4).unwrap();
    let batch = |img: &ImageF| ImageF::batch::<f32>(&[img]).unwrap();
    let (l, r, g) = (batch(&lr), batch(&frames[0]), batch(&frames[1]));
    let settings = small_settings(100);
    let mut tr = Trainer::new(Model::new(settings.model.clone(), 1).unwrap(), Adam::from_config(&settings.train));
    let losses: Vec<f64> = (0..100).map(|_| tr.step(&l, &r, &g).unwrap()).collect();
    assert!(losses[99] < 0.5 * losses[0], "loss {} -> {}", losses[0], losses[99]);
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let index = toy::write_septuplets(&dir.path().join("data"), 3, 32, 5).unwrap();
    let straight = train(&small_settings(4), &index, &dir.path().join("a"), None).unwrap();
    let first = train(&small_settings(2), &index, &dir.path().join("b"), None).unwrap();
    let resumed = train(&small_settings(4), &index, &dir.path().join("c"), Some(&first.final_path)).unwrap();
    assert_eq!(resumed.checkpoint.step, 4);
    assert_eq!(resumed.steps.len(), 2);
    assert_eq!(fs::read(straight.final_path).unwrap(), fs::read(resumed.final_path).unwrap());
    let log = fs::read_to_string(dir.path().join("a/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn empty_index_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let index = DatasetIndex { layout: Layout::Septuplet, root: dir.path().to_path_buf(), entries: vec![] };
    match train(&small_settings(1), &index, dir.path(), None) {
        Err(Error::Data(m)) => assert!(m.contains("empty")),
        other => panic!("unexpected {:?}", other.map(|s| s.steps.len())),
    }
}
