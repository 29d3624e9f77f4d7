//! Dataset loading, synthetic data, augmentation, training, inference and
//! evaluation on small inputs.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sod_net::objective::aggregate;
use sod_net::pipeline::augment::{hflip, rot90, vflip};
use sod_net::pipeline::eval::evaluate_dirs;
use sod_net::pipeline::infer::quantize;
use sod_net::pipeline::{
    augment, evaluate, generate, infer, load_dataset, train, train_on, AugmentConfig, AugmentDraw, Sample,
    SyntheticSpec, TrainConfig,
};
use sod_net::{gradsuite, Error, ModelConfig};
use sod_tensor::Tensor;

fn write_pair(dir: &Path, stem: &str, w: u32, h: u32, gray: u8) {
    std::fs::create_dir_all(dir.join("images")).unwrap();
    std::fs::create_dir_all(dir.join("masks")).unwrap();
    RgbImage::from_pixel(w, h, Rgb([10, 20, 30])).save(dir.join("images").join(format!("{stem}.png"))).unwrap();
    GrayImage::from_pixel(w, h, Luma([gray])).save(dir.join("masks").join(format!("{stem}.png"))).unwrap();
}

fn small_model() -> ModelConfig {
    ModelConfig { input_size: 32, ..ModelConfig::tiny() }
}

fn synth(dir: &Path, count: usize, size: usize, seed: u64) -> (PathBuf, PathBuf) {
    generate(&SyntheticSpec::new(count, size, seed), dir).unwrap()
}

fn short_run(data: &Path, out: &Path) -> TrainConfig {
    let mut cfg = TrainConfig::new(small_model(), data.join("images"), data.join("masks"), out.to_path_buf());
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.learning_rate = 1e-3;
    cfg.seed = 4;
    cfg
}

fn random_sample(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Sample {
    Sample {
        name: "r".into(),
        image_path: PathBuf::new(),
        mask_path: PathBuf::new(),
        image: Tensor::from_fn([1, 3, h, w], |_| rng.gen_range(0.0..1.0)),
        mask: Tensor::from_fn([1, 1, h, w], |_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }),
    }
}

#[test]
fn empty_image_directory_has_no_samples() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    std::fs::create_dir_all(dir.path().join("masks")).unwrap();
    let err = load_dataset(&dir.path().join("images"), &dir.path().join("masks"), 32).unwrap_err();
    assert!(err.to_string().contains("no samples"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn missing_mask_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), "a", 20, 20, 255);
    write_pair(dir.path(), "b", 20, 20, 255);
    std::fs::remove_file(dir.path().join("masks/b.png")).unwrap();
    let err = load_dataset(&dir.path().join("images"), &dir.path().join("masks"), 32).unwrap_err();
    assert!(err.to_string().contains("b.png"), "{err}");
    assert!(!err.to_string().contains("a.png"), "{err}");
}

#[test]
fn masks_are_binarized_and_samples_sorted() {
    let dir = tempfile::tempdir().unwrap();
    for (stem, gray) in [("c", 200), ("a", 100), ("b", 128)] {
        write_pair(dir.path(), stem, 24, 40, gray);
    }
    let samples = load_dataset(&dir.path().join("images"), &dir.path().join("masks"), 32).unwrap();
    let names: Vec<_> = samples.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["a", "b", "c"]);
    // 100/255 and 128/255 straddle the 0.5 threshold differently
    assert!(samples[0].mask.data().iter().all(|&v| v == 0.0));
    assert!(samples[1].mask.data().iter().all(|&v| v == 1.0));
    assert!(samples[2].mask.data().iter().all(|&v| v == 1.0));
    for s in &samples {
        assert_eq!(s.image.shape().dims(), [1, 3, 32, 32]);
        assert_eq!(s.mask.shape().dims(), [1, 1, 32, 32]);
    }
    assert!((samples[0].image.at(0, 2, 5, 5) - 30.0 / 255.0).abs() < 1e-6);
}

#[test]
fn synthetic_data_is_deterministic_and_in_range() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ia, ma) = synth(a.path(), 8, 64, 9);
    let (ib, mb) = synth(b.path(), 8, 64, 9);
    for (x, y) in [(&ia, &ib), (&ma, &mb)] {
        let mut files: Vec<_> = std::fs::read_dir(x).unwrap().map(|e| e.unwrap().file_name()).collect();
        files.sort();
        assert_eq!(files.len(), 8);
        for f in files {
            assert_eq!(std::fs::read(x.join(&f)).unwrap(), std::fs::read(y.join(&f)).unwrap(), "{f:?}");
        }
    }
    for s in load_dataset(&ia, &ma, 64).unwrap() {
        let ratio = s.mask.data().iter().sum::<f32>() / 4096.0;
        assert!((0.02..=0.6).contains(&ratio), "{}: {ratio}", s.name);
    }
    let other = tempfile::tempdir().unwrap();
    let (io, _) = synth(other.path(), 8, 64, 10);
    assert_ne!(std::fs::read(ia.join("0000.png")).unwrap(), std::fs::read(io.join("0000.png")).unwrap());
}

#[test]
fn flips_and_rotations_follow_index_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t: Tensor<f32> = Tensor::from_fn([1, 3, 5, 7], |_| rng.gen_range(0.0..1.0));
    assert_eq!(hflip(&hflip(&t)), t);
    assert_eq!(vflip(&vflip(&t)), t);
    let r = rot90(&t, 1);
    assert_eq!(r.shape().dims(), [1, 3, 7, 5]);
    for c in 0..3 {
        for i in 0..7 {
            for j in 0..5 {
                assert_eq!(r.at(0, c, i, j), t.at(0, c, j, 6 - i));
            }
        }
    }
    for c in 0..3 {
        for i in 0..5 {
            for j in 0..7 {
                assert_eq!(hflip(&t).at(0, c, i, j), t.at(0, c, i, 6 - j));
            }
        }
    }
    assert_eq!(rot90(&t, 4), t);
    assert_eq!(rot90(&rot90(&t, 3), 1), t);
}

#[test]
fn disabled_augmentation_is_the_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_sample(&mut rng, 16, 16);
    for _ in 0..10 {
        assert_eq!(augment(&s, &AugmentConfig::none(), &mut rng), s);
    }
}

#[test]
fn geometric_augmentation_moves_image_and_mask_together() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = AugmentConfig { blur: false, ..AugmentConfig::default() };
    for _ in 0..50 {
        let mut s = random_sample(&mut rng, 12, 12);
        // every image channel carries the mask itself
        s.image = Tensor::from_fn([1, 3, 12, 12], |[_, _, y, x]| s.mask.at(0, 0, y, x));
        let out = augment(&s, &cfg, &mut rng);
        for c in 0..3 {
            for y in 0..12 {
                for x in 0..12 {
                    assert_eq!(out.image.at(0, c, y, x), out.mask.at(0, 0, y, x));
                }
            }
        }
    }
}

#[test]
fn blur_leaves_the_mask_binary() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = random_sample(&mut rng, 16, 16);
    let draw = AugmentDraw { quarter_turns: 0, hflip: false, vflip: false, sigma: 1.2 };
    let out = draw.apply(&s);
    assert_eq!(out.mask, s.mask);
    assert_ne!(out.image, s.image);
}

#[test]
fn default_schedule_decays_tenfold_every_thirty_epochs() {
    let cfg = TrainConfig::new(ModelConfig::tiny(), "i".into(), "m".into(), "o".into());
    assert_eq!(cfg.lr_at(1), cfg.learning_rate);
    assert_eq!(cfg.lr_at(30), cfg.learning_rate);
    assert!((cfg.lr_at(31) - 1e-5).abs() < 1e-18);
    assert!((cfg.lr_at(61) - 1e-6).abs() < 1e-18);
    let flat = TrainConfig { lr_decay_every: 0, ..cfg };
    assert_eq!(flat.lr_at(100), flat.learning_rate);
}

#[test]
fn invalid_training_configs_are_config_errors() {
    let base = TrainConfig::new(ModelConfig::tiny(), "i".into(), "m".into(), "o".into());
    for bad in [
        TrainConfig { batch_size: 0, ..base.clone() },
        TrainConfig { epochs: 0, ..base.clone() },
        TrainConfig { max_steps: Some(0), ..base.clone() },
        TrainConfig { learning_rate: -1.0, ..base.clone() },
        TrainConfig { learning_rate: f64::NAN, ..base.clone() },
        TrainConfig { lr_decay: 0.0, ..base.clone() },
        TrainConfig { model: ModelConfig { input_size: 40, ..ModelConfig::tiny() }, ..base.clone() },
    ] {
        let err = bad.validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert_eq!(err.exit_code(), 1);
    }
}

#[test]
fn config_files_resolve_relative_paths_against_their_directory() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    let model = serde_json::to_value(ModelConfig::tiny()).unwrap();
    let text = serde_json::json!({
        "model": model,
        "train_images": "data/images",
        "train_masks": "/abs/masks",
        "output_dir": "out",
        "max_steps": 7
    });
    std::fs::write(&path, text.to_string()).unwrap();
    let cfg = TrainConfig::from_file(&path).unwrap();
    assert_eq!(cfg.train_images, dir.path().join("data/images"));
    assert_eq!(cfg.train_masks, PathBuf::from("/abs/masks"));
    assert_eq!(cfg.output_dir, dir.path().join("out"));
    assert_eq!(cfg.max_steps, Some(7));
    assert_eq!(cfg.batch_size, 8);
    assert!(cfg.deterministic);

    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(TrainConfig::from_file(&path).unwrap_err().exit_code(), 1);
}

#[test]
fn a_non_finite_loss_stops_training_with_its_location() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut samples: Vec<Sample> = (0..2).map(|_| random_sample(&mut rng, 32, 32)).collect();
    samples[1].image.set(0, 0, 3, 3, f32::NAN);
    let mut cfg = short_run(dir.path(), dir.path());
    cfg.augment = AugmentConfig::none();
    let err = train_on(&cfg, &samples).unwrap_err();
    match &err {
        Error::Numerical { epoch, batch, term } => {
            assert_eq!((*epoch, *batch), (1, 1));
            assert!(term.starts_with("output "), "{term}");
        }
        other => panic!("expected a numerical error, got {other}"),
    }
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn short_training_run_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 4, 32, 1);
    let out = dir.path().join("run");
    let report = train(&short_run(dir.path(), &out)).unwrap();
    assert_eq!(report.steps, 4);
    assert_eq!(report.epochs.len(), 2);
    assert!(report.final_checkpoint.is_file() && report.best_checkpoint.is_file());
    let log = std::fs::read_to_string(&report.log).unwrap();
    let lines: Vec<_> = log.lines().collect();
    assert_eq!(lines[0], "epoch,lr,steps,loss,bce,iou");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,1e-3,2,"), "{}", lines[1]);
    for e in &report.epochs {
        // the joint loss is accumulated in f32, the parts in f64
        assert!(e.loss.is_finite() && (e.loss - e.bce - e.iou).abs() < 1e-5 * e.loss, "{e:?}");
    }

    // a step cap stops mid-epoch
    let capped = TrainConfig { max_steps: Some(3), output_dir: dir.path().join("capped"), ..short_run(dir.path(), &out) };
    assert_eq!(train(&capped).unwrap().steps, 3);
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 4, 32, 2);
    let a = train(&short_run(dir.path(), &dir.path().join("a"))).unwrap();
    let b = train(&short_run(dir.path(), &dir.path().join("b"))).unwrap();
    assert_eq!(std::fs::read(&a.final_checkpoint).unwrap(), std::fs::read(&b.final_checkpoint).unwrap());
    assert_eq!(std::fs::read(&a.log).unwrap(), std::fs::read(&b.log).unwrap());
}

#[test]
fn inference_writes_one_map_per_image_at_the_original_size() {
    assert_eq!(quantize(0.0), 0);
    assert_eq!(quantize(1.0), 255);
    assert_eq!(quantize(0.5), 128);
    assert_eq!(quantize(-3.0), 0);
    assert_eq!(quantize(7.0), 255);

    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), "wide", 50, 20, 255);
    write_pair(dir.path(), "tall", 17, 33, 255);
    let cfg = TrainConfig { max_steps: Some(1), epochs: 1, ..short_run(dir.path(), &dir.path().join("run")) };
    let report = train(&cfg).unwrap();
    let written = infer(&report.final_checkpoint, &dir.path().join("images"), &dir.path().join("pred")).unwrap();
    let stems: Vec<_> = written.iter().map(|p| p.file_stem().unwrap().to_str().unwrap().to_owned()).collect();
    assert_eq!(stems, ["tall", "wide"]);
    assert_eq!(image::open(&written[0]).unwrap().to_luma8().dimensions(), (17, 33));
    assert_eq!(image::open(&written[1]).unwrap().to_luma8().dimensions(), (50, 20));

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert!(infer(&report.final_checkpoint, &empty, &dir.path().join("p2")).is_err());
}

#[test]
fn ground_truth_evaluated_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (_, masks) = synth(dir.path(), 3, 48, 6);
    let out = dir.path().join("eval");
    let agg = evaluate(&masks, &masks, &out).unwrap();
    assert_eq!(agg.count, 3);
    assert_eq!(agg.mae, 0.0);
    assert!((agg.max_f - 1.0).abs() < 1e-9);
    let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().next(), Some("threshold,precision,recall,f"));
    assert_eq!(curves.lines().count(), 257);
    let per_image = std::fs::read_to_string(out.join("per_image.csv")).unwrap();
    assert_eq!(per_image.lines().count(), 4);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("aggregate.json")).unwrap()).unwrap();
    let direct = aggregate(&evaluate_dirs(&masks, &masks).unwrap()).unwrap();
    assert_eq!(json["count"], 3);
    assert_eq!(json["mean_f"].as_array().unwrap().len(), 256);
    // decimal text round trips to within an ulp
    for key in ["mae", "s_measure", "max_f", "curve_max_f"] {
        let direct = serde_json::to_value(&direct).unwrap()[key].as_f64().unwrap();
        assert!((json[key].as_f64().unwrap() - direct).abs() < 1e-12, "{key}");
    }
}

#[test]
fn unmatched_and_mismatched_files_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    GrayImage::new(8, 8).save(pred.join("a.png")).unwrap();
    GrayImage::new(8, 8).save(pred.join("only_pred.png")).unwrap();
    GrayImage::new(8, 8).save(gt.join("a.png")).unwrap();
    GrayImage::new(8, 8).save(gt.join("only_gt.png")).unwrap();
    let msg = evaluate_dirs(&pred, &gt).unwrap_err().to_string();
    assert!(msg.contains("unmatched files") && msg.contains("only_pred") && msg.contains("only_gt"), "{msg}");

    std::fs::remove_file(pred.join("only_pred.png")).unwrap();
    GrayImage::new(9, 8).save(pred.join("only_gt.png")).unwrap();
    let msg = evaluate_dirs(&pred, &gt).unwrap_err().to_string();
    assert!(msg.contains("size mismatches") && msg.contains("only_gt"), "{msg}");
}

#[test]
fn gradient_suite_passes() {
    let reports = gradsuite::run(0).unwrap();
    assert!(!reports.is_empty());
    for r in &reports {
        assert!(r.passed, "{r}");
    }
}
