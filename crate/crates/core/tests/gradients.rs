//! Tape gradients against closed forms and central differences.

mod common;

use common::{rng, uniform};
use imamba_core::autodiff::{gradcheck, GradcheckConfig, GradcheckReport, Tape, Var};
use imamba_core::config::{BlockConfig, ConvMixerKind, GlobalMixerKind, StemKind};
use imamba_core::nn::{Head, InceptionMambaBlock, Mlp, ParamSpecs, ParamStore, PatchEmbed};
use imamba_core::ssm::Direction;
use imamba_core::{Result, Tensor};

fn named(pairs: &[(&str, Tensor<f64>)]) -> Vec<(String, Tensor<f64>)> {
    pairs.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

/// `sum(y ⊙ r)` for a fixed random readout `r`, so every output element
/// carries its own weight.
fn readout(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = uniform(&mut rng(seed), tape.value(y).dims(), 1.0);
    let rv = tape.leaf(r);
    let weighted = tape.mul(y, rv)?;
    Ok(tape.sum(weighted))
}

fn assert_passes(report: GradcheckReport, what: &str) {
    assert!(report.passed(), "{what}\n{report}");
}

#[test]
fn gelu_gradient_matches_closed_form() {
    let x = Tensor::from_fn(&[81], |i| -4.0 + i as f64 * 0.1).unwrap();
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = tape.gelu(xv);
    let loss = tape.sum(y);
    let g = tape.backward(loss).unwrap().wrt(&tape, xv);
    let k = (2.0 / std::f64::consts::PI).sqrt();
    for (&xi, &gi) in x.data().iter().zip(g.data()) {
        let t = (k * (xi + 0.044715 * xi.powi(3))).tanh();
        let want = 0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * k * (1.0 + 3.0 * 0.044715 * xi * xi);
        assert!((gi - want).abs() < 1e-12, "x={xi}: {gi} vs {want}");
    }
}

#[test]
fn elementwise_gradients() {
    let x = uniform(&mut rng(1), &[2, 3, 2, 2], 2.0);
    let y = uniform(&mut rng(2), &[2, 3, 2, 2], 2.0);
    let report = gradcheck(
        &named(&[("x", x), ("y", y)]),
        |tape, p| {
            let g = tape.gelu(p[0]);
            let s = tape.silu(p[1]);
            let sp = tape.softplus(p[0]);
            let e = tape.exp(p[1]);
            let prod = tape.mul(g, s)?;
            let sum = tape.add(prod, sp)?;
            let sum = tape.add(sum, e)?;
            let scaled = tape.scale(sum, -0.5);
            readout(tape, scaled, 3)
        },
        &GradcheckConfig::default(),
    )
    .unwrap();
    assert_passes(report, "elementwise");
}

#[test]
fn layer_norm_gradients() {
    let x = uniform(&mut rng(4), &[2, 5, 3, 2], 1.5);
    let gamma = uniform(&mut rng(5), &[5], 1.0);
    let beta = uniform(&mut rng(6), &[5], 1.0);
    let report = gradcheck(
        &named(&[("x", x), ("gamma", gamma), ("beta", beta)]),
        |tape, p| {
            let y = tape.layer_norm(p[0], p[1], p[2], 1e-6)?;
            readout(tape, y, 7)
        },
        &GradcheckConfig::default(),
    )
    .unwrap();
    assert_passes(report, "layer norm");
}

#[test]
fn conv_gradients() {
    let x = uniform(&mut rng(8), &[2, 3, 6, 5], 1.0);
    let w = uniform(&mut rng(9), &[4, 3, 3, 3], 0.5);
    let b = uniform(&mut rng(10), &[4], 0.5);
    let dw = uniform(&mut rng(11), &[4, 1, 3, 7], 0.5);
    let db = uniform(&mut rng(12), &[4], 0.5);
    let report = gradcheck(
        &named(&[("x", x), ("w", w), ("b", b), ("dw", dw), ("db", db)]),
        |tape, p| {
            let y = tape.conv2d(p[0], p[1], Some(p[2]), (2, 1), (1, 1), false)?;
            let y = tape.conv2d(y, p[3], Some(p[4]), (1, 1), (1, 3), true)?;
            readout(tape, y, 13)
        },
        &GradcheckConfig::default(),
    )
    .unwrap();
    assert_passes(report, "conv");
}

#[test]
fn split_concat_pool_linear_and_cross_entropy_gradients() {
    let x = uniform(&mut rng(14), &[3, 6, 2, 3], 1.0);
    let w = uniform(&mut rng(15), &[4, 6], 1.0);
    let b = uniform(&mut rng(16), &[4], 1.0);
    let report = gradcheck(
        &named(&[("x", x), ("w", w), ("b", b)]),
        |tape, p| {
            let lo = tape.slice_channels(p[0], 0, 2)?;
            let hi = tape.slice_channels(p[0], 2, 4)?;
            let hi = tape.gelu(hi);
            let y = tape.concat_channels(&[hi, lo])?;
            let pooled = tape.global_avg_pool(y)?;
            let logits = tape.linear(pooled, p[1], Some(p[2]))?;
            tape.cross_entropy(logits, &[0, 3, 1])
        },
        &GradcheckConfig::default(),
    )
    .unwrap();
    assert_passes(report, "head path");
}

#[test]
fn selective_scan_gradients_in_every_direction() {
    let (ch, state) = (2, 4);
    // eight sites arranged 2x4, so row and column orders differ
    let dims = [1, ch, 2, 4];
    let u = uniform(&mut rng(17), &dims, 1.0);
    let dt = uniform(&mut rng(18), &dims, 1.0);
    let a_log = uniform(&mut rng(19), &[ch, state], 1.0);
    let b = uniform(&mut rng(20), &[1, state, 2, 4], 1.0);
    let c = uniform(&mut rng(21), &[1, state, 2, 4], 1.0);
    let d = uniform(&mut rng(22), &[ch], 1.0);
    for dir in Direction::ALL {
        let report = gradcheck(
            &named(&[("u", u.clone()), ("dt", dt.clone()), ("a_log", a_log.clone()), ("b", b.clone()), ("c", c.clone()), ("d", d.clone())]),
            |tape, p| {
                let delta = tape.softplus(p[1]);
                let a = tape.exp(p[2]);
                let a = tape.scale(a, -1.0);
                let y = tape.selective_scan(p[0], delta, a, p[3], p[4], p[5], dir)?;
                readout(tape, y, 23)
            },
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert_passes(report, dir.name());
    }
}

fn layer_gradcheck(build: impl Fn(&mut ParamSpecs) -> Box<dyn Fn(&mut Tape<f64>, &[Var], Var) -> Result<Var>>, x_dims: &[usize]) -> GradcheckReport {
    let mut specs = ParamSpecs::new();
    let forward = build(&mut specs);
    let mut params = ParamStore::<f64>::materialize(&specs, 24).unwrap().into_named();
    params.push(("input".into(), uniform(&mut rng(25), x_dims, 1.0)));
    let n = params.len() - 1;
    gradcheck(
        &params,
        |tape, p| {
            let y = forward(tape, &p[..n], p[n])?;
            readout(tape, y, 26)
        },
        &GradcheckConfig::default(),
    )
    .unwrap()
}

#[test]
fn mlp_gradients() {
    let report = layer_gradcheck(
        |specs| {
            let mlp = Mlp::new(specs, "mlp", 3, 12);
            Box::new(move |tape, p, x| mlp.forward(tape, p, x))
        },
        &[2, 3, 3, 3],
    );
    assert_passes(report, "mlp");
}

#[test]
fn stem_and_head_gradients() {
    let report = layer_gradcheck(
        |specs| {
            let stem = PatchEmbed::new(specs, "stem", StemKind::Standard, 3, 4, 1e-6);
            let head = Head::new(specs, "head", 4, 12, 3, 1e-6);
            Box::new(move |tape, p, x| {
                let h = stem.forward(tape, p, x)?;
                head.forward(tape, p, h)
            })
        },
        &[2, 3, 8, 8],
    );
    assert_passes(report, "stem and head");
}

fn block_report(cfg: BlockConfig) -> GradcheckReport {
    layer_gradcheck(
        |specs| {
            let block = InceptionMambaBlock::new(specs, "block", &cfg, 1e-6).unwrap();
            Box::new(move |tape, p, x| block.forward(tape, p, x))
        },
        &[1, cfg.channels, 6, 6],
    )
}

fn tiny_block() -> BlockConfig {
    let mut cfg = BlockConfig::new(8);
    cfg.ssm.state_dim = 4;
    cfg
}

#[test]
fn block_with_plain_global_mixer() {
    let cfg = BlockConfig { global_mixer: GlobalMixerKind::Plain, ..tiny_block() };
    assert_passes(block_report(cfg), "plain global mixer");
}

#[test]
fn blocks_with_every_conv_mixer() {
    for kind in [ConvMixerKind::Band, ConvMixerKind::Strip, ConvMixerKind::Dw3x3, ConvMixerKind::InceptionDw] {
        let cfg = BlockConfig { conv_mixer: kind, global_mixer: GlobalMixerKind::None, ..tiny_block() };
        assert_passes(block_report(cfg), &format!("{kind:?}"));
    }
}
