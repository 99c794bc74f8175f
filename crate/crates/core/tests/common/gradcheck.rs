//! Central finite differences against the tape's reverse pass.

use diffgmm::grad::{Tape, Tensor, Var};
use diffgmm::model::{AblationMode, LossKind, ModelState, UNetConfig};
use diffgmm::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const PRIMITIVE_LIMIT: f64 = 1e-4;
pub const COMPOSITE_LIMIT: f64 = 1e-3;
/// Gradients smaller than this are compared in absolute terms.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub max_rel_err: f64,
    pub limit: f64,
    pub compared: usize,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.limit
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Scalarizes `build`'s output as `sum(out * r)` with a fixed random `r`.
fn scalar_loss(build: &Build, inputs: &[Tensor], probe: &mut Option<Tensor>) -> (Tape, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).expect("op builds");
    let (c, l) = tape.value(out).shape();
    let r = probe.get_or_insert_with(|| {
        let mut rng = ChaCha8Rng::seed_from_u64((c * 131 + l) as u64);
        Tensor::uniform(c, l, 1.0, &mut rng)
    });
    let rv = tape.leaf(r.clone());
    let prod = tape.mul(out, rv).unwrap();
    let loss = tape.sum(prod);
    (tape, vars, loss)
}

pub fn check_op(name: &str, inputs: Vec<Tensor>, build: &Build) -> Check {
    let mut probe = None;
    let (tape, vars, loss) = scalar_loss(build, &inputs, &mut probe);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for (i, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v);
        for j in 0..inputs[i].len() {
            let eval = |delta: f64| {
                let mut shifted = inputs.clone();
                shifted[i].data_mut()[j] += delta;
                let (t, _, l) = scalar_loss(build, &shifted, &mut probe.clone());
                t.value(l).item()
            };
            let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            worst = worst.max(rel_err(g.data()[j], numeric));
            compared += 1;
        }
    }
    Check {
        name: name.to_owned(),
        max_rel_err: worst,
        limit: PRIMITIVE_LIMIT,
        compared,
    }
}

fn rand_t(rng: &mut ChaCha8Rng, c: usize, l: usize) -> Tensor {
    Tensor::uniform(c, l, 1.0, rng)
}

/// Values bounded away from zero, for ops with a kink or pole there.
fn away_from_zero(rng: &mut ChaCha8Rng, c: usize, l: usize) -> Tensor {
    let data = (0..c * l)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(c, l, data).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, c: usize, l: usize) -> Tensor {
    Tensor::new(c, l, (0..c * l).map(|_| rng.gen_range(0.2..2.0)).collect()).unwrap()
}

pub fn primitive_checks() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let mut out = Vec::new();

    let (x, w, b) = (rand_t(&mut rng, 3, 11), rand_t(&mut rng, 2, 3 * 5), rand_t(&mut rng, 2, 1));
    out.push(check_op("conv1d same padding", vec![x.clone(), w.clone(), b.clone()], &|t, v| {
        t.conv1d(v[0], v[1], Some(v[2]), 5, 1, 2)
    }));
    out.push(check_op(
        "conv1d strided",
        vec![x.clone(), rand_t(&mut rng, 4, 3 * 2), rand_t(&mut rng, 4, 1)],
        &|t, v| t.conv1d(v[0], v[1], Some(v[2]), 2, 2, 0),
    ));
    out.push(check_op("conv1d no bias", vec![x.clone(), w.clone()], &|t, v| {
        t.conv1d(v[0], v[1], None, 5, 1, 2)
    }));
    out.push(check_op("upsample_linear", vec![rand_t(&mut rng, 2, 6)], &|t, v| t.upsample_linear(v[0], 3)));
    out.push(check_op(
        "linear",
        vec![rand_t(&mut rng, 4, 1), rand_t(&mut rng, 3, 4), rand_t(&mut rng, 3, 1)],
        &|t, v| t.linear(v[0], v[1], v[2]),
    ));
    out.push(check_op("relu", vec![away_from_zero(&mut rng, 2, 9)], &|t, v| Ok(t.relu(v[0]))));
    out.push(check_op("tanh", vec![rand_t(&mut rng, 2, 9)], &|t, v| Ok(t.tanh(v[0]))));
    out.push(check_op("exp", vec![rand_t(&mut rng, 2, 9)], &|t, v| Ok(t.exp(v[0]))));
    out.push(check_op("ln", vec![positive(&mut rng, 2, 9)], &|t, v| Ok(t.ln(v[0]))));
    out.push(check_op("abs", vec![away_from_zero(&mut rng, 2, 9)], &|t, v| Ok(t.abs(v[0]))));
    out.push(check_op("square", vec![rand_t(&mut rng, 2, 9)], &|t, v| Ok(t.square(v[0]))));
    out.push(check_op("scale", vec![rand_t(&mut rng, 2, 9)], &|t, v| Ok(t.scale(v[0], -2.5))));

    let shapes = [((3, 7), (3, 7)), ((3, 7), (1, 7)), ((3, 7), (3, 1)), ((1, 1), (3, 7))];
    for (sa, sb) in shapes {
        let a = rand_t(&mut rng, sa.0, sa.1);
        let bb = rand_t(&mut rng, sb.0, sb.1);
        let pb = positive(&mut rng, sb.0, sb.1);
        let tag = format!("{sa:?}x{sb:?}");
        out.push(check_op(&format!("add {tag}"), vec![a.clone(), bb.clone()], &|t, v| t.add(v[0], v[1])));
        out.push(check_op(&format!("sub {tag}"), vec![a.clone(), bb.clone()], &|t, v| t.sub(v[0], v[1])));
        out.push(check_op(&format!("mul {tag}"), vec![a.clone(), bb.clone()], &|t, v| t.mul(v[0], v[1])));
        out.push(check_op(&format!("div {tag}"), vec![a.clone(), pb], &|t, v| t.div(v[0], v[1])));
    }

    out.push(check_op("softmax", vec![rand_t(&mut rng, 4, 6)], &|t, v| Ok(t.softmax(v[0]))));
    out.push(check_op("logsumexp", vec![rand_t(&mut rng, 4, 6)], &|t, v| Ok(t.logsumexp(v[0]))));
    out.push(check_op("sum", vec![rand_t(&mut rng, 3, 5)], &|t, v| Ok(t.sum(v[0]))));
    out.push(check_op("mean", vec![rand_t(&mut rng, 3, 5)], &|t, v| Ok(t.mean(v[0]))));
    out.push(check_op("mean_length", vec![rand_t(&mut rng, 3, 5)], &|t, v| Ok(t.mean_length(v[0]))));
    out.push(check_op("sum_channels", vec![rand_t(&mut rng, 3, 5)], &|t, v| Ok(t.sum_channels(v[0]))));
    out.push(check_op("reshape", vec![rand_t(&mut rng, 3, 4)], &|t, v| {
        let r = t.reshape(v[0], 2, 6)?;
        Ok(t.square(r))
    }));
    out
}

/// Sampled-parameter check of the whole network under one loss.
pub fn model_check(mode: AblationMode, kind: LossKind, samples: usize, seed: u64) -> Check {
    let config = UNetConfig {
        filters: 4,
        k: 3,
        ..UNetConfig::default()
    };
    let mut state = ModelState::new(config, mode, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let len = config.length_multiple();
    let input: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target: Vec<f64> = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let batch = vec![(input, target)];
    let lambda = 0.1;
    let (_, grads) = state.loss_and_grads(&batch, kind, lambda).unwrap();

    // only parameters the mode actually uses
    let live: Vec<usize> = (0..state.params().len())
        .filter(|&i| {
            let n = &state.param_names()[i];
            match mode {
                AblationMode::DiffusionOnly => !n.starts_with("head_resp") && !n.starts_with("head_global"),
                _ => !n.starts_with("head_direct"),
            }
        })
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let p = live[rng.gen_range(0..live.len())];
        let j = rng.gen_range(0..state.params()[p].len());
        let orig = state.params()[p].data()[j];
        state.params_mut()[p].data_mut()[j] = orig + STEP;
        let up = state.loss(&batch, kind, lambda).unwrap();
        state.params_mut()[p].data_mut()[j] = orig - STEP;
        let down = state.loss(&batch, kind, lambda).unwrap();
        state.params_mut()[p].data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(rel_err(grads[p].data()[j], numeric));
    }
    Check {
        name: format!("model {mode} {kind:?}"),
        max_rel_err: worst,
        limit: COMPOSITE_LIMIT,
        compared: samples,
    }
}

pub fn model_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for kind in [LossKind::L2, LossKind::L1, LossKind::L2PlusNll, LossKind::Simple] {
        out.push(model_check(AblationMode::Full, kind, 50, 11));
    }
    for kind in [LossKind::L2, LossKind::L1, LossKind::Simple] {
        out.push(model_check(AblationMode::DiffusionOnly, kind, 50, 12));
    }
    out
}
