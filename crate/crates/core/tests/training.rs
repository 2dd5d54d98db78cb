use srforge_core::datagen::{build_corpus, build_skeleton_bank, Corpus, GenerationConfig, TabularDataset};
use srforge_core::model::{EncoderKind, Model, ModelConfig};
use srforge_core::train::{make_batch, TrainConfig, Trainer};

fn tiny_model(kind: EncoderKind, p_drop: f64) -> Model<f32> {
    let config = ModelConfig {
        d_model: 16,
        n_enc: 1,
        n_dec: 1,
        heads: 2,
        p_drop,
        ..ModelConfig::default()
    }
    .with_encoder(kind);
    Model::new(config, 1).unwrap()
}

fn corpus() -> Corpus {
    let gen = GenerationConfig {
        n_raw_samples: 600,
        n_realizations: 2,
        seed: 4,
        ..GenerationConfig::default()
    };
    let bank = build_skeleton_bank(&gen).unwrap();
    build_corpus(&bank.skeletons, &gen).unwrap().0
}

fn trainer(p_drop: f64) -> Trainer {
    let config = TrainConfig {
        batch_size: 16,
        epochs: 3,
        seed: 2,
        warmup_steps: 100,
        ..TrainConfig::default()
    };
    Trainer::new(tiny_model(EncoderKind::Mix, p_drop), config).unwrap()
}

#[test]
fn fixed_batch_loss_decreases_for_fifty_steps() {
    let corpus = corpus();
    let items: Vec<&TabularDataset> = corpus.datasets.iter().take(8).collect();
    let batch = make_batch(&items, 31).unwrap();
    for kind in EncoderKind::ALL {
        let mut t = Trainer::new(
            tiny_model(kind, 0.0),
            TrainConfig {
                warmup_steps: 400,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let losses: Vec<f64> = (0..51).map(|_| t.step(&batch).unwrap().loss).collect();
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{kind}: {losses:?}");
        }
        assert_eq!(t.global_step(), 51);
    }
}

#[test]
fn identical_seeds_give_identical_histories() {
    let corpus = corpus();
    let a = trainer(0.25).train(&corpus, |_, _, _| Ok(())).unwrap();
    let b = trainer(0.25).train(&corpus, |_, _, _| Ok(())).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().filter(|r| r.split == "train").count(), 3);
    assert_eq!(a.last().unwrap().epoch, 2);
    for split in ["validation", "test"] {
        assert!(a.iter().any(|r| r.split == split));
    }
}

#[test]
fn interrupted_training_resumes_exactly() {
    let corpus = corpus();
    let mut full = trainer(0.25);
    let history = full.train(&corpus, |_, _, _| Ok(())).unwrap();

    let mut part = trainer(0.25);
    let per_epoch = corpus.split.train.len().div_ceil(16) as u64;
    part.config.max_steps = Some(per_epoch + 3);
    part.train(&corpus, |_, _, _| Ok(())).unwrap();
    assert_eq!(part.global_step(), per_epoch + 3);

    let mut bytes = Vec::new();
    part.model.write_to(&mut bytes, true).unwrap();
    let restored = Model::<f32>::read_from(&mut bytes.as_slice()).unwrap();
    let mut resumed = Trainer::new(restored, TrainConfig { max_steps: None, ..part.config.clone() }).unwrap();
    assert_eq!(resumed.global_step(), per_epoch + 3);
    let tail = resumed.train(&corpus, |_, _, _| Ok(())).unwrap();
    assert_eq!(resumed.global_step(), full.global_step());
    assert_eq!(resumed.model.store(), full.model.store());
    assert_eq!(tail.last(), history.last());
}
