use rand::{Rng, SeedableRng};
use wifi2vision::cgan::{train_gan, DiscriminatorConfig, GanTrainConfig, GeneratorConfig};
use wifi2vision::csi::{CsiTensor, PairedSample, CSI_LEN};
use wifi2vision::dataset::Dataset;
use wifi2vision::frame::{Color, Frame, FRAME_HEIGHT, FRAME_WIDTH};
use wifi2vision::SimRng;

const DARK: Color = Color([40, 40, 60]);
const LIT: Color = Color([230, 200, 80]);

/// Quadrant `k` is lit when CSI value `k` is positive.
fn toy_frame(csi: &[f32]) -> Frame {
    let mut f = Frame::filled(DARK);
    for y in 0..FRAME_HEIGHT {
        for x in 0..FRAME_WIDTH {
            let k = 2 * (y * 2 / FRAME_HEIGHT) + x * 2 / FRAME_WIDTH;
            if csi[k] > 0.0 {
                f.set(y, x, LIT);
            }
        }
    }
    f
}

fn toy_dataset(n: usize) -> Dataset {
    let mut rng = SimRng::seed_from_u64(3);
    let samples = (0..n as u64)
        .map(|id| {
            let values: Vec<f32> = (0..CSI_LEN).map(|_| rng.random_range(-1.0..1.0)).collect();
            let frame = toy_frame(&values);
            PairedSample {
                sample_id: id,
                timestamp: id as f64 * 0.2,
                csi: CsiTensor::from_values(values).unwrap(),
                frame,
                gt_boxes: Vec::new(),
            }
        })
        .collect();
    Dataset::from_samples("toy".into(), samples)
}

fn small_nets() -> (GeneratorConfig, DiscriminatorConfig) {
    (
        GeneratorConfig {
            widths: vec![8, 8, 8, 4],
            dropout: 0.0,
            seed: 0,
        },
        DiscriminatorConfig {
            embed_channels: 4,
            widths: vec![4, 4, 4, 4],
            seed: 1,
        },
    )
}

fn toy_config(epochs: usize, lambda_l1: f64) -> GanTrainConfig {
    GanTrainConfig {
        epochs,
        lambda_l1,
        g_learning_rate: 1e-3,
        d_learning_rate: 2e-4,
        sample_every: 0,
        ..Default::default()
    }
}

#[test]
fn one_epoch_writes_checkpoints_and_one_metrics_row() {
    let dir = tempfile::tempdir().unwrap();
    let (g, d) = small_nets();
    let cfg = GanTrainConfig {
        epochs: 1,
        ..Default::default()
    };
    let run = train_gan(&toy_dataset(8), &g, &d, &cfg, Some(dir.path())).unwrap();
    assert_eq!(run.metrics.len(), 1);
    assert!(dir.path().join("generator.ckpt").is_file());
    assert!(dir.path().join("discriminator.ckpt").is_file());
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines, ["epoch,d_loss,g_loss,l1", lines[1]]);
    assert!(lines[1].starts_with("1,"));
    assert!(dir.path().join("samples/epoch_0001.png").is_file());
}

#[test]
fn generator_learns_a_sign_pattern_mapping() {
    let (g, d) = small_nets();
    let run = train_gan(&toy_dataset(10), &g, &d, &toy_config(200, 100.0), None).unwrap();
    let best = run.metrics.iter().map(|m| m.l1).fold(f64::INFINITY, f64::min);
    assert!(best < 0.05, "best L1 {best}");
}

#[test]
fn reconstruction_term_speeds_up_fitting() {
    let (g, d) = small_nets();
    let data = toy_dataset(10);
    let with = train_gan(&data, &g, &d, &toy_config(30, 100.0), None).unwrap();
    let without = train_gan(&data, &g, &d, &toy_config(30, 0.0), None).unwrap();
    let (a, b) = (with.metrics.last().unwrap().l1, without.metrics.last().unwrap().l1);
    assert!(a < b, "λ=100 L1 {a} vs λ=0 L1 {b}");
}
