//! Finite-difference checks over every layer primitive and both training
//! objectives, on small fixed-seed instances.

use crate::data::PulsePair;
use crate::diffcore::{
    finite_diff_check, GradCheckReport, ParamId, ParamStore, Padding, RngStream, Tape, Tensor, Var,
};
use crate::error::Result;
use crate::gp_head::GpHead;
use crate::layers::{build_encoder, Activation, BatchNorm1D, Conv1DLayer, Dense, EncoderSpec, Mode, ResNetBlock};
use crate::siamese::{SiameseConfig, SiameseModel};
use crate::surrogate::{bilipschitz_term, sample_index_pairs, LipschitzParams, Standardizer, SurrogateConfig, SurrogateModel};

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passes(&self, tol: f64) -> bool {
        self.report.passes(tol)
    }
}

fn probe(store: &mut ParamStore, name: &str, shape: &[usize], rng: &mut RngStream) -> Result<ParamId> {
    let n: usize = shape.iter().product();
    let t = Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect())?;
    Ok(store.add(name, t, true))
}

/// `Σ cᵢ yᵢ` with fixed random `c`, so every output coordinate matters.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let mut rng = RngStream::new(seed);
    let n: usize = shape.iter().product();
    let c = tape.constant(Tensor::new(shape, (0..n).map(|_| rng.normal()).collect())?);
    let p = tape.mul(y, c)?;
    Ok(tape.sum(p))
}

fn dense_case(act: Activation, step: f64, coords: usize) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(11);
    let mut store = ParamStore::new();
    let x = probe(&mut store, "x", &[4, 6], &mut rng)?;
    let layer = Dense::new(&mut store, "dense", 6, 5, act, &mut rng)?;
    finite_diff_check(&mut store, step, coords, &mut rng, |tape, s| {
        let xv = tape.param(s, x);
        let y = layer.forward(tape, s, xv)?;
        project(tape, y, 1)
    })
}

fn conv_case(stride: usize, padding: Padding, step: f64, coords: usize) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(12);
    let mut store = ParamStore::new();
    let x = probe(&mut store, "x", &[2, 3, 9], &mut rng)?;
    let layer = Conv1DLayer::new(&mut store, "conv", 3, 4, 3, stride, padding, &mut rng)?;
    finite_diff_check(&mut store, step, coords, &mut rng, |tape, s| {
        let xv = tape.param(s, x);
        let y = layer.forward(tape, s, xv)?;
        project(tape, y, 2)
    })
}

fn batchnorm_case(step: f64, coords: usize) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(13);
    let mut store = ParamStore::new();
    let x = probe(&mut store, "x", &[3, 4, 5], &mut rng)?;
    let mut bn = BatchNorm1D::new(&mut store, "bn", 4);
    // move the running statistics away from (0, 1)
    for k in 0..20 {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..60).map(|_| 2.0 * rng.normal() + k as f64 * 0.1).collect();
        let v = tape.constant(Tensor::new(vec![3, 4, 5], data)?);
        bn.forward(&mut tape, &store, v, Mode::Train)?;
    }
    finite_diff_check(&mut store, step, coords, &mut rng, |tape, s| {
        let xv = tape.param(s, x);
        let y = bn.forward(tape, s, xv, Mode::Infer)?;
        project(tape, y, 3)
    })
}

fn maxpool_case(step: f64, coords: usize) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(14);
    let mut store = ParamStore::new();
    let x = probe(&mut store, "x", &[2, 3, 7], &mut rng)?;
    finite_diff_check(&mut store, step, coords, &mut rng, |tape, s| {
        let xv = tape.param(s, x);
        let y = tape.max_pool1d(xv, 2)?;
        project(tape, y, 4)
    })
}

fn elementwise_case(step: f64, coords: usize) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(15);
    let mut store = ParamStore::new();
    let x = probe(&mut store, "x", &[3, 5], &mut rng)?;
    let z = probe(&mut store, "z", &[3, 5], &mut rng)?;
    finite_diff_check(&mut store, step, coords, &mut rng, |tape, s| {
        let xv = tape.param(s, x);
        let zv = tape.param(s, z);
        let a = tape.tanh(xv);
        let b = tape.cos(zv);
        let c = tape.mul(a, b)?;
        let d = tape.abs(c);
        let e = tape.square(xv);
        let e = tape.add_scalar(e, 1.0);
        let e = tape.sqrt(e);
        let f = tape.relu(zv);
        let g = tape.sub(e, f)?;
        let g = tape.scale(g, 0.7);
        let h = tape.add(d, g)?;
        project(tape, h, 5)
    })
}

fn shape_case(step: f64, coords: usize) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(16);
    let mut store = ParamStore::new();
    let x = probe(&mut store, "x", &[3, 2, 4], &mut rng)?;
    let y = probe(&mut store, "y", &[2, 2, 4], &mut rng)?;
    let bias = probe(&mut store, "bias", &[8], &mut rng)?;
    finite_diff_check(&mut store, step, coords, &mut rng, |tape, s| {
        let xv = tape.param(s, x);
        let yv = tape.param(s, y);
        let b = tape.param(s, bias);
        let c = tape.concat(xv, yv)?;
        let g = tape.gather_rows(c, &[4, 0, 0, 2])?;
        let sl = tape.slice_rows(c, 1, 5)?;
        let m = tape.mul(g, sl)?;
        let f = tape.flatten(m)?;
        let f = tape.add_bias(f, b)?;
        let r = tape.reshape(f, &[4, 2, 4])?;
        let rs = tape.sum_rows(r);
        let sq = tape.square(rs);
        let mean = tape.mean(sq);
        let p = project(tape, f, 6)?;
        tape.add(mean, p)
    })
}

fn resnet_case(step: f64, coords: usize) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(17);
    let mut store = ParamStore::new();
    let x = probe(&mut store, "x", &[2, 2, 12], &mut rng)?;
    let mut block = ResNetBlock::new(&mut store, "block", 2, 4, 3, 2, 2, 0.05, &mut rng)?;
    for _ in 0..5 {
        let mut tape = Tape::new();
        let v = tape.param(&store, x);
        block.forward(&mut tape, &store, v, Mode::Train, &mut rng)?;
    }
    finite_diff_check(&mut store, step, coords, &mut rng, |tape, s| {
        let xv = tape.param(s, x);
        let y = block.forward(tape, s, xv, Mode::Infer, &mut RngStream::new(0))?;
        project(tape, y, 7)
    })
}

fn surrogate_trunk_case(step: f64, coords: usize) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(18);
    let mut store = ParamStore::new();
    let x = probe(&mut store, "x", &[3, 5, 15], &mut rng)?;
    let mut enc = build_encoder(&EncoderSpec::surrogate(5, 15, 6, 8), &mut store, "trunk.", &mut rng)?;
    for _ in 0..5 {
        let mut tape = Tape::new();
        let v = tape.param(&store, x);
        enc.forward(&mut tape, &store, v, Mode::Train, &mut rng)?;
    }
    finite_diff_check(&mut store, step, coords, &mut rng, |tape, s| {
        let xv = tape.param(s, x);
        let y = enc.forward(tape, s, xv, Mode::Infer, &mut RngStream::new(0))?;
        project(tape, y, 8)
    })
}

fn gp_head_case(step: f64, coords: usize) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(19);
    let mut store = ParamStore::new();
    let h = probe(&mut store, "h", &[4, 6], &mut rng)?;
    let head = GpHead::new(&mut store, "head.", 6, 32, 1.5, 1.0, &mut rng)?;
    let beta = Tensor::new(vec![1, 32], (0..32).map(|_| rng.normal()).collect())?;
    store.set_value(head.beta, beta)?;
    finite_diff_check(&mut store, step, coords, &mut rng, |tape, s| {
        let hv = tape.param(s, h);
        let (out, _) = head.forward(tape, s, hv)?;
        project(tape, out, 9)
    })
}

fn bilipschitz_case(step: f64, coords: usize) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(20);
    let mut store = ParamStore::new();
    let inputs = Tensor::new(vec![6, 4], (0..24).map(|_| rng.normal()).collect())?;
    let h = probe(&mut store, "h", &[6, 5], &mut rng)?;
    let pairs = sample_index_pairs(6, 15, &mut rng);
    let params = LipschitzParams::default();
    finite_diff_check(&mut store, step, coords, &mut rng, |tape, s| {
        let hv = tape.param(s, h);
        bilipschitz_term(tape, &inputs, hv, &pairs, &params)
    })
}

fn siamese_case(step: f64, coords: usize) -> Result<GradCheckReport> {
    let cfg = SiameseConfig { filters: vec![4, 8], trace_len: 32, features: 64, ..Default::default() };
    let mut m = SiameseModel::new(&cfg, &RngStream::new(8))?;
    let d = cfg.features;
    m.store.set_value(m.net.head.beta, Tensor::new(vec![1, d], (0..d).map(|i| 0.3 * (i as f64).cos()).collect())?)?;
    let mut rng = RngStream::new(1);
    let pairs: Vec<PulsePair> = (0..4)
        .map(|i| {
            let label = (i % 2) as u8;
            let a: Vec<f64> = (0..32).map(|_| 0.1 * rng.normal()).collect();
            let b: Vec<f64> = (0..32).map(|t| 0.1 * rng.normal() + f64::from(label) * (t as f64 / 4.0).sin()).collect();
            Ok(PulsePair {
                id: i,
                trace_a: Tensor::new(vec![1, 32], a)?,
                trace_b: Tensor::new(vec![1, 32], b)?,
                label,
                a_id: 0,
                b_id: 1,
                anomaly: None,
            })
        })
        .collect::<Result<_>>()?;
    let mut rng = RngStream::new(0);
    let refs: Vec<&PulsePair> = pairs.iter().collect();
    let mut net = m.net.clone();
    let params = cfg.contrastive;
    finite_diff_check(&mut m.store, step, coords, &mut rng, |tape, s| {
        net.loss(tape, s, &refs, &params, Mode::Infer, &mut RngStream::new(0))
    })
}

fn surrogate_case(step: f64, coords: usize) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(23);
    let series = crate::data::gen_booster_series(6 + crate::data::WINDOW, &[], &rng.fork_named("series"))?;
    let windows = crate::data::make_windows(&series, crate::data::OUTPUT_CHANNEL)?;
    let cfg = SurrogateConfig { conv_features: 6, hidden: 8, features: 32, ..Default::default() };
    let mut m = SurrogateModel::new(&cfg, Standardizer::fit(&windows)?, &RngStream::new(24))?;
    let d = cfg.features;
    m.store.set_value(m.net.head.beta, Tensor::new(vec![1, d], (0..d).map(|_| 0.5 * rng.normal()).collect())?)?;
    let refs: Vec<_> = windows.iter().collect();
    let x = m.scaler.inputs(&refs)?;
    let targets: Vec<f64> = windows.iter().map(|w| w.target).collect();
    let pairs = sample_index_pairs(windows.len(), cfg.lipschitz.pairs_per_batch, &mut rng);
    let scaler = m.scaler.clone();
    let lip = cfg.lipschitz;
    let mut net = m.net.clone();
    finite_diff_check(&mut m.store, step, coords, &mut rng, |tape, s| {
        net.loss(tape, s, &x, &targets, &scaler, &lip, &pairs, Mode::Infer, &mut RngStream::new(0))
    })
}

/// Runs every check with central-difference step `step`, probing up to
/// `coords` coordinates per parameter tensor.
pub fn gradient_suite(step: f64, coords: usize) -> Result<Vec<SuiteEntry>> {
    type Case = fn(f64, usize) -> Result<GradCheckReport>;
    let cases: [(&'static str, Case); 15] = [
        ("dense_tanh", |s, c| dense_case(Activation::Tanh, s, c)),
        ("dense_relu", |s, c| dense_case(Activation::Relu, s, c)),
        ("conv1d_same", |s, c| conv_case(1, Padding::Same, s, c)),
        ("conv1d_valid_stride2", |s, c| conv_case(2, Padding::Valid, s, c)),
        ("batchnorm_infer", batchnorm_case),
        ("maxpool_odd", maxpool_case),
        ("elementwise", elementwise_case),
        ("shape_ops", shape_case),
        ("resnet_block", resnet_case),
        ("surrogate_trunk", surrogate_trunk_case),
        ("rff_gp_head", gp_head_case),
        ("bilipschitz_penalty", bilipschitz_case),
        ("siamese_objective", siamese_case),
        ("surrogate_objective", surrogate_case),
        ("dropout_infer", dropout_case),
    ];
    cases.iter().map(|&(name, f)| Ok(SuiteEntry { name, report: f(step, coords)? })).collect()
}

fn dropout_case(step: f64, coords: usize) -> Result<GradCheckReport> {
    let mut rng = RngStream::new(25);
    let mut store = ParamStore::new();
    let x = probe(&mut store, "x", &[3, 4], &mut rng)?;
    finite_diff_check(&mut store, step, coords, &mut rng, |tape, s| {
        let xv = tape.param(s, x);
        let y = crate::layers::dropout(tape, xv, 0.5, Mode::Infer, &mut RngStream::new(0))?;
        let y = tape.tanh(y);
        project(tape, y, 10)
    })
}
