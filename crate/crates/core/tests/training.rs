use salite_core::checkpoint::Checkpoint;
use salite_core::data::Sample;
use salite_core::model::{ModelSpec, Salite};
use salite_core::optim::{TrainConfig, Trainer};
use salite_core::params::ParamStore;
use salite_core::synth::{generate, SynthSpec};
use salite_core::Error;

fn spec() -> ModelSpec {
    ModelSpec {
        input_size: 32,
        ..ModelSpec::desk()
    }
}

fn config(steps: u64) -> TrainConfig {
    TrainConfig {
        batch: 3,
        max_steps: steps,
        seed: 11,
        flip_augment: true,
        ..TrainConfig::desk()
    }
}

fn data() -> Vec<Sample> {
    let synth = SynthSpec {
        seed: 3,
        count: 7,
        size: 32,
        ..SynthSpec::default()
    };
    generate(&synth)
        .unwrap()
        .iter()
        .map(|item| Sample::new(&item.image, &item.mask, 32, 32, 32).unwrap())
        .collect()
}

fn run(trainer: &mut Trainer, data: &[Sample]) -> Vec<f64> {
    let mut losses = Vec::new();
    while !trainer.done() {
        losses.push(trainer.step(data).unwrap().loss);
    }
    losses
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let data = data();
    let mut a = Trainer::new(&spec(), &config(6)).unwrap();
    let mut b = Trainer::new(&spec(), &config(6)).unwrap();
    assert_eq!(run(&mut a, &data), run(&mut b, &data));
    assert_eq!(Checkpoint::from_trainer(&a).encode(), Checkpoint::from_trainer(&b).encode());
}

#[test]
fn resume_continues_bit_exactly() {
    let data = data();
    let mut full = Trainer::new(&spec(), &config(9)).unwrap();
    run(&mut full, &data);

    let mut first = Trainer::new(&spec(), &config(4)).unwrap();
    run(&mut first, &data);
    let bytes = Checkpoint::from_trainer(&first).encode();
    let mut resumed = Checkpoint::decode(&bytes).unwrap().trainer().unwrap();
    resumed.cfg.max_steps = 9;
    run(&mut resumed, &data);

    assert_eq!(resumed.step, 9);
    let mut a = Checkpoint::from_trainer(&full);
    let mut b = Checkpoint::from_trainer(&resumed);
    // the stored config records the original run length
    a.train_config.clear();
    b.train_config.clear();
    assert_eq!(a, b);
}

#[test]
fn zero_steps_leaves_the_initial_state() {
    let trainer = Trainer::new(&spec(), &config(0)).unwrap();
    assert!(trainer.done());
    let ck = Checkpoint::from_trainer(&trainer);
    assert_eq!(ck.step, 0);
    let fresh = ParamStore::<f32>::init(trainer.model.params().to_vec(), 11);
    assert_eq!(ck.params_for(&trainer.model).unwrap().values(), fresh.values());
}

#[test]
fn zero_learning_rates_keep_weights() {
    let data = data();
    let cfg = TrainConfig {
        lr_encoder: 1e-300,
        lr_decoder: 1e-300,
        ..config(2)
    };
    let mut t = Trainer::new(&spec(), &cfg).unwrap();
    let before = t.params.clone();
    let losses = run(&mut t, &data);
    assert!(losses.iter().all(|l| l.is_finite() && *l > 0.0));
    assert_eq!(t.params.values(), before.values());
}

#[test]
fn save_load_save_is_byte_identical() {
    let data = data();
    let mut t = Trainer::new(&spec(), &config(2)).unwrap();
    run(&mut t, &data);
    let bytes = Checkpoint::from_trainer(&t).encode();
    let again = Checkpoint::from_trainer(&Checkpoint::decode(&bytes).unwrap().trainer().unwrap()).encode();
    assert_eq!(bytes, again);
}

#[test]
fn checkpoint_errors_are_distinct_kinds() {
    let t = Trainer::new(&spec(), &config(0)).unwrap();
    let bytes = Checkpoint::from_trainer(&t).encode();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(Checkpoint::decode(&bad).unwrap_err(), Error::BadMagic);

    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(Checkpoint::decode(&bad).unwrap_err(), Error::Version { found: 9, .. }));

    assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 3]).unwrap_err(), Error::Truncated { .. }));

    let other = Salite::new(&ModelSpec {
        decoder_channels: [8, 16, 16, 16, 8],
        ..spec()
    })
    .unwrap();
    match Checkpoint::decode(&bytes).unwrap().params_for(&other).unwrap_err() {
        Error::TensorShape { name, .. } => assert!(name.starts_with("decoder.stage"), "{name}"),
        e => panic!("unexpected {e}"),
    }
}
