//! Finite-difference checks of every hand-written backward pass. Each check
//! panics with the worst parameter on failure.

use ndarray::{Array2, Array3, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subband_se::dsp::{ComplexSpectrogram, StftConfig};
use subband_se::extractor::{Extractor, TcnBlock};
use subband_se::model::{ExtractorConfig, ForwardMode, Model, ModelConfig, MulcaConfig};
use subband_se::mulca::Mulca;
use subband_se::nn::{
    avg_pool_time, avg_pool_time_backward, fill_params, grad_check, param_vector, prelu, prelu_backward,
    set_param_vector, ChannelNorm, Dense, DepthwiseConv, GradReport, Lstm, LstmState, NormMode,
    Params, PoolMode,
};
use subband_se::subband::Gsub;

const EPS: f64 = 1e-5;
const LAYER_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random2(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.gen_range(-1.0..1.0))
}

fn random3(r: &mut ChaCha8Rng, d: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_fn(d, |_| r.gen_range(-1.0..1.0))
}

/// Adds uniform noise in `±scale` to every parameter so that no gradient
/// is checked only at its special initial value (unit gains, zero biases).
fn jitter<P: Params<f64>>(p: &mut P, r: &mut ChaCha8Rng, scale: f64) {
    p.visit_mut("", &mut |_, _, v| {
        v.iter_mut().for_each(|x| *x += r.gen_range(-scale..scale));
    });
}

/// `Σ w ⊙ y`, the scalar loss whose gradient with respect to `y` is `w`.
fn project(y: ArrayView2<f64>, w: &Array2<f64>) -> f64 {
    (&y * w).sum()
}

fn assert_passed(what: &str, r: &GradReport) {
    assert!(
        r.passed(),
        "{what}: max relative error {:.3e} at {} (analytic {:.6e}, numeric {:.6e})",
        r.max_rel_err,
        r.worst_index,
        r.worst_analytic,
        r.worst_numeric
    );
}

/// Checks parameter gradients of `layer` given a loss closure that
/// evaluates the layer and an analytic gradient structure.
fn check_params<P: Params<f64> + Clone>(
    what: &str,
    layer: &P,
    grad: &P,
    loss: impl Fn(&P) -> f64,
    tol: f64,
) {
    let point = param_vector(layer);
    let analytic = param_vector(grad);
    let mut probe = layer.clone();
    let report = grad_check(
        |v| {
            set_param_vector(&mut probe, v);
            loss(&probe)
        },
        &point,
        &analytic,
        EPS,
        None,
        tol,
    );
    assert_passed(&format!("{what} [{}]", param_name(layer, report.worst_index)), &report);
}

/// Name and offset of the tensor holding flat parameter `index`.
fn param_name<P: Params<f64>>(p: &P, index: usize) -> String {
    let mut start = 0;
    let mut found = String::new();
    p.visit("", &mut |name, _, v| {
        if found.is_empty() && index < start + v.len() {
            found = format!("{name}[{}]", index - start);
        }
        start += v.len();
    });
    found
}

fn check_input(
    what: &str,
    x: &Array2<f64>,
    dx: &Array2<f64>,
    loss: impl Fn(ArrayView2<f64>) -> f64,
    tol: f64,
) {
    let shape = x.dim();
    let report = grad_check(
        |v| loss(ArrayView2::from_shape(shape, v).unwrap()),
        x.as_slice().unwrap(),
        dx.as_standard_layout().as_slice().unwrap(),
        EPS,
        None,
        tol,
    );
    assert_passed(what, &report);
}

pub fn dense_layer() {
    let mut r = rng(1);
    let mut layer = Dense::<f64>::init(5, 4, true, &mut r);
    jitter(&mut layer, &mut r, 0.3);
    let x = random2(&mut r, 5, 7);
    let w = random2(&mut r, 4, 7);
    let mut grad = Dense::zeros(5, 4, true);
    let dx = layer.backward(x.view(), w.view(), &mut grad);
    let f = |l: &Dense<f64>, x: ArrayView2<f64>| project(l.forward(x).unwrap().view(), &w);
    check_params("dense params", &layer, &grad, |l| f(l, x.view()), LAYER_TOL);
    check_input("dense input", &x, &dx, |x| f(&layer, x), LAYER_TOL);
}

pub fn depthwise_dilated_conv() {
    let mut r = rng(2);
    let mut layer = DepthwiseConv::<f64>::init(3, 3, 2, true, &mut r);
    jitter(&mut layer, &mut r, 0.5);
    let x = random2(&mut r, 3, 9);
    let w = random2(&mut r, 3, 9);
    let mut grad = DepthwiseConv::zeros(3, 3, 2, true);
    let dx = layer.backward(x.view(), w.view(), &mut grad);
    let f = |l: &DepthwiseConv<f64>, x: ArrayView2<f64>| project(l.forward(x).unwrap().view(), &w);
    check_params("conv params", &layer, &grad, |l| f(l, x.view()), LAYER_TOL);
    check_input("conv input", &x, &dx, |x| f(&layer, x), LAYER_TOL);
}

pub fn lstm_unrolled_sequence() {
    let mut r = rng(3);
    let (frames, batch, input, hidden) = (8, 2, 3, 4);
    let mut layer = Lstm::<f64>::init(input, hidden, &mut r);
    jitter(&mut layer, &mut r, 0.3);
    let x = random3(&mut r, (frames, batch, input));
    let w = random3(&mut r, (frames, batch, hidden));
    let run = |l: &Lstm<f64>, x: &Array3<f64>| {
        let mut s = LstmState::zeros(batch, hidden);
        let (y, _) = l.forward(x.view(), &mut s, false).unwrap();
        (&y * &w).sum()
    };
    let mut s = LstmState::zeros(batch, hidden);
    let (_, cache) = layer.forward(x.view(), &mut s, true).unwrap();
    let mut grad = Lstm::zeros(input, hidden);
    let dx = layer.backward(&cache.unwrap(), w.view(), &mut grad);
    check_params("lstm params", &layer, &grad, |l| run(l, &x), LAYER_TOL);
    let report = grad_check(
        |v| run(&layer, &Array3::from_shape_vec(x.dim(), v.to_vec()).unwrap()),
        x.as_slice().unwrap(),
        dx.as_slice().unwrap(),
        EPS,
        None,
        LAYER_TOL,
    );
    assert_passed("lstm input", &report);
}

pub fn prelu_including_slope() {
    let mut r = rng(4);
    let x = random2(&mut r, 4, 6);
    let w = random2(&mut r, 4, 6);
    let slope = 0.3;
    let (dx, dslope) = prelu_backward(x.view(), slope, w.view());
    check_input("prelu input", &x, &dx, |x| project(prelu(x, slope).view(), &w), LAYER_TOL);
    let report = grad_check(
        |v| project(prelu(x.view(), v[0]).view(), &w),
        &[slope],
        &[dslope],
        EPS,
        None,
        LAYER_TOL,
    );
    assert_passed("prelu slope", &report);
}

pub fn channel_norm_all_modes() {
    for (i, mode) in [NormMode::PerFrame, NormMode::Cumulative, NormMode::Global]
        .into_iter()
        .enumerate()
    {
        let mut r = rng(10 + i as u64);
        let mut layer = ChannelNorm::<f64>::new(5);
        layer.gain.mapv_inplace(|_| r.gen_range(0.5..1.5));
        layer.bias.mapv_inplace(|_| r.gen_range(-0.5..0.5));
        let x = random2(&mut r, 5, 6);
        let w = random2(&mut r, 5, 6);
        let (_, cache) = layer.forward(x.view(), mode).unwrap();
        let mut grad = ChannelNorm::new(5);
        grad.gain.fill(0.0);
        let dx = layer.backward(x.view(), mode, &cache, w.view(), &mut grad);
        let f = |l: &ChannelNorm<f64>, x: ArrayView2<f64>| project(l.forward(x, mode).unwrap().0.view(), &w);
        check_params(&format!("norm {mode:?} params"), &layer, &grad, |l| f(l, x.view()), LAYER_TOL);
        check_input(&format!("norm {mode:?} input"), &x, &dx, |x| f(&layer, x), LAYER_TOL);
    }
}

pub fn average_pooling_both_modes() {
    for mode in [PoolMode::Utterance, PoolMode::Cumulative] {
        let mut r = rng(20);
        let x = random2(&mut r, 3, 5);
        let y = avg_pool_time(x.view(), mode);
        let w = random2(&mut r, y.nrows(), y.ncols());
        let dx = avg_pool_time_backward(w.view(), x.ncols(), mode);
        check_input(
            &format!("pool {mode:?}"),
            &x,
            &dx,
            |x| project(avg_pool_time(x, mode).view(), &w),
            LAYER_TOL,
        );
    }
}

fn small_mulca(full_fusion: bool) -> MulcaConfig {
    MulcaConfig {
        reduction: 3,
        full_fusion,
        ..MulcaConfig::default()
    }
}

pub fn mulca_module() {
    for (full_fusion, pool) in [
        (false, PoolMode::Utterance),
        (false, PoolMode::Cumulative),
        (true, PoolMode::Cumulative),
    ] {
        let cfg = small_mulca(full_fusion);
        let mut r = rng(30);
        let mut m = Mulca::<f64>::init(&cfg, 9, &mut r);
        jitter(&mut m, &mut r, 0.3);
        let x = random2(&mut r, 9, 12);
        let (y, cache) = m.forward(x.view(), pool).unwrap();
        let w = random2(&mut r, y.nrows(), y.ncols());
        let mut grad = Mulca::zeros(&cfg, 9);
        m.backward(x.view(), pool, &cache, w.view(), &mut grad);
        check_params(
            &format!("mulca full_fusion={full_fusion} {pool:?}"),
            &m,
            &grad,
            |l| project(l.forward(x.view(), pool).unwrap().0.view(), &w),
            LAYER_TOL,
        );
    }
}

pub fn tcn_block_and_extractor() {
    let mut r = rng(40);
    for mode in [NormMode::Cumulative, NormMode::Global] {
        let mut block = TcnBlock::<f64>::init(6, 4, 3, 2, &mut r);
        jitter(&mut block, &mut r, 0.3);
        let x = random2(&mut r, 6, 10);
        let w = random2(&mut r, 6, 10);
        let (_, cache) = block.forward(x.view(), mode).unwrap();
        let mut grad = TcnBlock::zeros(6, 4, 3, 2);
        grad.visit_mut("", &mut |_, _, v| v.fill(0.0));
        let dx = block.backward(x.view(), mode, &cache, w.view(), &mut grad);
        let f = |b: &TcnBlock<f64>, x: ArrayView2<f64>| project(b.forward(x, mode).unwrap().0.view(), &w);
        check_params(&format!("tcn block {mode:?}"), &block, &grad, |b| f(b, x.view()), LAYER_TOL);
        check_input(&format!("tcn block {mode:?} input"), &x, &dx, |x| f(&block, x), LAYER_TOL);
    }

    let cfg = ExtractorConfig {
        bottleneck: 4,
        ..ExtractorConfig::default()
    };
    let mut ext = Extractor::<f64>::init(&cfg, 5, &mut r);
    jitter(&mut ext, &mut r, 0.3);
    let x = random2(&mut r, 5, 8);
    let w = random2(&mut r, 5, 8);
    let mode = NormMode::Cumulative;
    let (_, cache) = ext.forward(x.view(), mode, true).unwrap();
    let mut grad = Extractor::zeros(&cfg, 5);
    grad.visit_mut("", &mut |_, _, v| v.fill(0.0));
    let dx = ext.backward(mode, &cache.unwrap(), w.view(), &mut grad);
    let f = |e: &Extractor<f64>, x: ArrayView2<f64>| project(e.forward(x, mode, false).unwrap().0.view(), &w);
    check_params("extractor", &ext, &grad, |e| f(e, x.view()), LAYER_TOL);
    check_input("extractor input", &x, &dx, |x| f(&ext, x), LAYER_TOL);
}

pub fn subband_model() {
    let mut r = rng(50);
    let mut g = Gsub::<f64>::init(8, 5, &mut r);
    jitter(&mut g, &mut r, 0.3);
    let x = random3(&mut r, (6, 3, 8));
    let w = random3(&mut r, (6, 3, 2));
    let (_, cache) = g.forward(x.view(), true).unwrap();
    let mut grad = Gsub::zeros(8, 5);
    let dx = g.backward(&cache.unwrap(), w.view(), &mut grad);
    let run = |g: &Gsub<f64>, x: &Array3<f64>| (&g.forward(x.view(), false).unwrap().0 * &w).sum();
    check_params("gsub", &g, &grad, |g| run(g, &x), LAYER_TOL);
    let report = grad_check(
        |v| run(&g, &Array3::from_shape_vec(x.dim(), v.to_vec()).unwrap()),
        x.as_slice().unwrap(),
        dx.as_slice().unwrap(),
        EPS,
        None,
        LAYER_TOL,
    );
    assert_passed("gsub input", &report);
}

fn mini_config() -> ModelConfig {
    ModelConfig {
        freq_bins: 9,
        subband_n: 2,
        t_train: 6,
        mulca: MulcaConfig {
            reduction: 3,
            ..MulcaConfig::default()
        },
        extractor: ExtractorConfig {
            bottleneck: 8,
            ..ExtractorConfig::default()
        },
        gsub_hidden: 8,
        ..ModelConfig::default()
    }
}

fn random_spec(r: &mut ChaCha8Rng, bins: usize, frames: usize) -> ComplexSpectrogram {
    let mut s = ComplexSpectrogram::zeros(bins, frames, StftConfig::default());
    s.re.mapv_inplace(|_| r.gen_range(-1.0..1.0));
    s.im.mapv_inplace(|_| r.gen_range(-1.0..1.0));
    s
}

pub fn miniature_full_model() {
    for (mode, input_norm) in [
        (ForwardMode::Causal, false),
        (ForwardMode::Offline, false),
        (ForwardMode::Causal, true),
    ] {
        let mut cfg = mini_config();
        cfg.mode = mode;
        cfg.input_norm = input_norm;
        let mut r = rng(60);
        let mut model = Model::<f64>::init(&cfg, 7).unwrap();
        jitter(&mut model, &mut r, 0.2);
        let noisy = random_spec(&mut r, 9, 6);
        let bins: Vec<usize> = (0..9).collect();
        let (pred, cache) = model.forward_train(&noisy, mode, &bins).unwrap();
        let w = random3(&mut r, pred.dim());
        let mut grad = model.clone();
        fill_params(&mut grad, 0.0);
        model.backward(&cache, w.view(), &mut grad);
        check_params(
            &format!("full model {mode} input_norm={input_norm}"),
            &model,
            &grad,
            |m| (&m.forward_train(&noisy, mode, &bins).unwrap().0 * &w).sum(),
            MODEL_TOL,
        );
    }
}

pub fn miniature_model_with_sampled_bins() {
    let cfg = mini_config();
    // Seed chosen so that no activation sits within the difference step of
    // its kink; a kink makes the central difference meaningless there.
    let mut r = rng(72);
    let mut model = Model::<f64>::init(&cfg, 8).unwrap();
    jitter(&mut model, &mut r, 0.2);
    let noisy = random_spec(&mut r, 9, 6);
    let bins = [0usize, 4, 8];
    let mode = ForwardMode::Causal;
    let (pred, cache) = model.forward_train(&noisy, mode, &bins).unwrap();
    let w = random3(&mut r, pred.dim());
    let mut grad = model.clone();
    fill_params(&mut grad, 0.0);
    model.backward(&cache, w.view(), &mut grad);
    check_params(
        "full model, sampled bins",
        &model,
        &grad,
        |m| (&m.forward_train(&noisy, mode, &bins).unwrap().0 * &w).sum(),
        MODEL_TOL,
    );
}


/// Every check, in order, with a short name.
pub const CHECKS: &[(&str, fn())] = &[
    ("dense_layer", dense_layer),
    ("depthwise_dilated_conv", depthwise_dilated_conv),
    ("lstm_unrolled_sequence", lstm_unrolled_sequence),
    ("prelu_including_slope", prelu_including_slope),
    ("channel_norm_all_modes", channel_norm_all_modes),
    ("average_pooling_both_modes", average_pooling_both_modes),
    ("mulca_module", mulca_module),
    ("tcn_block_and_extractor", tcn_block_and_extractor),
    ("subband_model", subband_model),
    ("miniature_full_model", miniature_full_model),
    ("miniature_model_with_sampled_bins", miniature_model_with_sampled_bins),
];
