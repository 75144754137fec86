#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempagg::tensor::{BatchNormStats, Mode, Tape, Tensor, Var};
use tempagg::Result;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values at least `gap` apart in random order, so max pooling and relu
/// have no ties or kinks within reach of the finite-difference step.
pub fn spread(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    // a quarter-gap shift keeps every value off zero
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - (n as f64 - 1.0) / 2.0 + 0.25) * gap).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).unwrap()
}

/// Largest relative error between the tape gradient and a central
/// difference, over every element of every input.
pub fn max_rel_error<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.variable(t.clone())).collect();
        let loss = build(&mut tape, &vars).unwrap();
        tape.value(loss).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-8 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
            worst = worst.max(err);
        }
    }
    worst
}

fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let n = tape.value(out).len();
    let mut r = rng(seed);
    let w: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    tape.weighted_sum(out, &w)
}

pub struct GradCase {
    pub op: &'static str,
    pub shape: String,
    pub error: f64,
    pub tolerance: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

/// Finite-difference checks of every differentiable op on several shapes.
pub fn gradient_suite() -> Vec<GradCase> {
    let mut cases = Vec::new();
    let mut r = rng(2024);

    // (batch, channels, h, w, kernels, k, stride, padding)
    let conv_shapes = [
        (1, 1, 5, 5, 1, 3, 1, 1),
        (2, 3, 6, 5, 4, 3, 1, 0),
        (2, 2, 7, 7, 3, 3, 2, 1),
        (1, 4, 4, 6, 2, 1, 1, 0),
        (3, 2, 5, 4, 2, 2, 2, 0),
        (1, 1, 3, 3, 2, 3, 1, 2),
    ];
    for (i, &(b, c, h, w, k, ks, s, p)) in conv_shapes.iter().enumerate() {
        let inputs = [
            uniform(&[b, c, h, w], -1.0, 1.0, &mut r),
            uniform(&[k, c, ks, ks], -1.0, 1.0, &mut r),
            uniform(&[k], -0.5, 0.5, &mut r),
        ];
        let error = max_rel_error(&inputs, |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], s, p)?;
            project(t, y, i as u64)
        });
        cases.push(GradCase {
            op: "conv2d",
            shape: format!("x[{b},{c},{h},{w}] w[{k},{c},{ks},{ks}] s{s} p{p}"),
            error,
            tolerance: 1e-5,
        });
    }

    let pool_shapes = [(1, 1, 4, 4, 2, 2), (2, 3, 6, 6, 2, 2), (1, 2, 5, 7, 2, 2), (2, 1, 6, 6, 3, 3), (1, 2, 5, 5, 3, 2)];
    for (i, &(b, c, h, w, k, s)) in pool_shapes.iter().enumerate() {
        let inputs = [spread(&[b, c, h, w], 0.01, &mut r)];
        let error = max_rel_error(&inputs, |t, v| {
            let y = t.maxpool2d(v[0], k, s)?;
            project(t, y, 10 + i as u64)
        });
        cases.push(GradCase {
            op: "maxpool2d",
            shape: format!("x[{b},{c},{h},{w}] k{k} s{s}"),
            error,
            tolerance: 1e-5,
        });
    }

    for (i, shape) in [vec![7], vec![3, 4], vec![2, 3, 4], vec![2, 2, 3, 3], vec![1, 5, 2, 2]].iter().enumerate() {
        let inputs = [spread(shape, 0.013, &mut r)];
        let error = max_rel_error(&inputs, |t, v| {
            let y = t.relu(v[0])?;
            project(t, y, 20 + i as u64)
        });
        cases.push(GradCase {
            op: "relu",
            shape: format!("{shape:?}"),
            error,
            tolerance: 1e-5,
        });
    }

    for (i, &(b, c, h, w)) in [(2, 1, 3, 3), (4, 2, 2, 2), (3, 3, 2, 4), (2, 4, 3, 2), (5, 2, 1, 1)].iter().enumerate() {
        let inputs = [
            uniform(&[b, c, h, w], -2.0, 2.0, &mut r),
            uniform(&[c], 0.5, 1.5, &mut r),
            uniform(&[c], -0.5, 0.5, &mut r),
        ];
        let stats = BatchNormStats::new(c);
        let error = max_rel_error(&inputs, |t, v| {
            let (y, _) = t.batchnorm2d(v[0], v[1], v[2], &stats, Mode::Train)?;
            project(t, y, 30 + i as u64)
        });
        cases.push(GradCase {
            op: "batchnorm2d",
            shape: format!("x[{b},{c},{h},{w}]"),
            error,
            tolerance: 1e-4,
        });
    }

    for (i, &(b, f, o)) in [(1, 1, 1), (2, 3, 4), (4, 8, 6), (3, 64, 6), (5, 2, 7)].iter().enumerate() {
        let inputs = [
            uniform(&[b, f], -1.0, 1.0, &mut r),
            uniform(&[o, f], -1.0, 1.0, &mut r),
            uniform(&[o], -1.0, 1.0, &mut r),
        ];
        let error = max_rel_error(&inputs, |t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            project(t, y, 40 + i as u64)
        });
        cases.push(GradCase {
            op: "linear",
            shape: format!("x[{b},{f}] w[{o},{f}]"),
            error,
            tolerance: 1e-5,
        });
    }

    for &(b, k) in &[(1, 2), (2, 6), (4, 6), (3, 3), (8, 10)] {
        let labels: Vec<usize> = (0..b).map(|i| (i * 7 + 1) % k).collect();
        let inputs = [uniform(&[b, k], -3.0, 3.0, &mut r)];
        let error = max_rel_error(&inputs, |t, v| {
            let p = t.softmax(v[0])?;
            t.cross_entropy(p, &labels)
        });
        cases.push(GradCase {
            op: "softmax+cross_entropy",
            shape: format!("z[{b},{k}]"),
            error,
            tolerance: 1e-5,
        });
    }

    // the glue ops used to assemble the network
    for (i, &(b, c, h, w)) in [(1, 1, 2, 2), (2, 3, 3, 2), (3, 2, 4, 4), (2, 5, 1, 3), (1, 4, 3, 3)].iter().enumerate() {
        let inputs = [uniform(&[b, c, h, w], -1.0, 1.0, &mut r)];
        let error = max_rel_error(&inputs, |t, v| {
            let y = t.global_avg_pool(v[0])?;
            project(t, y, 50 + i as u64)
        });
        cases.push(GradCase {
            op: "global_avg_pool",
            shape: format!("x[{b},{c},{h},{w}]"),
            error,
            tolerance: 1e-5,
        });
    }
    for (i, &(b, f1, f2)) in [(1, 1, 1), (2, 3, 2), (4, 5, 6), (3, 2, 7), (2, 8, 8)].iter().enumerate() {
        let inputs = [
            uniform(&[b, f1], -1.0, 1.0, &mut r),
            uniform(&[b, f2], -1.0, 1.0, &mut r),
            uniform(&[b, f1 + f2], -1.0, 1.0, &mut r),
        ];
        let error = max_rel_error(&inputs, |t, v| {
            let cat = t.concat(&[v[0], v[1]])?;
            let s = t.sum(&[cat, v[2]])?;
            let y = t.scale(s, 0.25)?;
            project(t, y, 60 + i as u64)
        });
        cases.push(GradCase {
            op: "concat+sum+scale",
            shape: format!("[{b},{f1}]+[{b},{f2}]"),
            error,
            tolerance: 1e-5,
        });
    }
    cases
}

use tempagg::sampler::{partition, sample_segment, slice_audio, SamplerConfig, SamplingMode};
use tempagg::signal::Waveform;

/// Draws `draws` random segment samples over random clip geometries and
/// returns the descriptions of any that break a bound.
pub fn sampler_fuzz(draws: usize, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let mut violations = Vec::new();
    for draw in 0..draws {
        let fps = [10.0, 15.0, 24.0, 25.0, 29.97, 30.0][r.gen_range(0..6)];
        let rate = [8000u32, 16000, 22050, 44100][r.gen_range(0..4)];
        let window_s = r.gen_range(0.1..1.5);
        let frames = r.gen_range(1..120usize);
        let duration = frames as f64 / fps;
        // audio at least one window long, within a frame of the video
        let len = ((duration.max(window_s) + r.gen_range(0.0..1.0 / fps)) * rate as f64).ceil() as usize;
        let cfg = SamplerConfig {
            segments: r.gen_range(1..=frames.min(12)),
            offset_s: r.gen_range(0.0..0.05),
            window_s,
            mode: if r.gen_bool(0.8) { SamplingMode::Stochastic } else { SamplingMode::Deterministic },
        };
        let ranges = partition(frames, cfg.segments).unwrap();
        let n = r.gen_range(0..cfg.segments);
        let s = match sample_segment(n, ranges[n].clone(), &cfg, fps, rate, len, &mut r) {
            Ok(s) => s,
            Err(e) => {
                violations.push(format!("draw {draw}: unexpected error {e}"));
                continue;
            }
        };
        let half = window_s / 2.0;
        let hi = (len as f64 / rate as f64 - half).max(half);
        let want = (rate as f64 * window_s).round() as usize;
        let audio = Waveform::new(vec![0.0; len], rate).unwrap();
        let checks = [
            (ranges[n].contains(&s.frame_index), "frame outside its segment"),
            (
                (s.center_unclamped_s - s.frame_index as f64 / fps).abs() <= cfg.offset_s + 1e-12,
                "centre further than b from its frame",
            ),
            (s.center_s >= half - 1e-12 && s.center_s <= hi + 1e-12, "clamped centre outside the clip"),
            (s.audio_first <= s.audio_last, "empty audio window"),
            (s.audio_last < len, "audio window past the end"),
            (s.raw_len().abs_diff(want) <= 1, "window length off by more than one sample"),
            (slice_audio(&audio, &s, window_s).len() == want, "slice length differs from round(r_a d)"),
        ];
        for (ok, what) in checks {
            if !ok {
                violations.push(format!("draw {draw}: {what}: {s:?} cfg {cfg:?} fps {fps} rate {rate} len {len}"));
            }
        }
    }
    violations
}
