//! Central finite-difference harness shared by the gradcheck and
//! acceptance test targets. Each `*_check` function panics on the
//! first coordinate whose analytic gradient disagrees with the
//! numeric estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfseg::cin::{CinConfig, CinModel};
use vfseg::losses::{dice_loss_graph, total_loss_graph, LossWeights};
use vfseg::nn::layers::TransformerBlock;
use vfseg::nn::{BnState, Graph, ParamStore, Session, Tensor, Var};
use vfseg::Tensor64;

const H: f64 = 1e-5;
const OP_TOL: f64 = 1e-4;
pub const SEEDS: u64 = 20;

fn rel_err(a: f64, n: f64) -> f64 {
    let d = (a - n).abs();
    if d < 1e-9 {
        return 0.0;
    }
    d / a.abs().max(n.abs()).max(1e-6)
}

/// Random tensor with entries kept away from zero (ReLU kink safety).
fn randt(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor64 {
    let data = (0..shape.iter().product())
        .map(|_| {
            let v: f64 = rng.gen_range(-1.0..1.0);
            v + 0.1 * v.signum()
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Deterministic projection weights so the scalar loss exercises every
/// output coordinate.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let shape = g.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = randt(&mut rng, &shape);
    let wv = g.constant(w);
    let prod = g.mul(out, wv).unwrap();
    g.sum_all(prod)
}

/// Compare analytic gradients of `build` (a deterministic graph
/// builder over leaf inputs) against central differences on at most
/// `max_coords` coordinates per input.
fn fd_check<B>(inputs: &[Tensor64], build: B, max_coords: usize, tol: f64, label: &str)
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Tensor64> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.grad_or_zeros(v, t.shape()))
        .collect();

    let eval = |ins: &[Tensor64]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).item()
    };

    let mut coord_rng = ChaCha8Rng::seed_from_u64(0x5EED);
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|_| coord_rng.gen_range(0..n)).collect()
        };
        for j in coords {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic[i].data()[j];
            assert!(
                rel_err(a, numeric) <= tol,
                "{label}: input {i} coord {j}: analytic {a}, numeric {numeric}"
            );
        }
    }
}

pub fn conv2d_check() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randt(&mut rng, &[2, 3, 6, 6]);
        let w = randt(&mut rng, &[4, 3, 3, 3]);
        let b = randt(&mut rng, &[4]);
        fd_check(
            &[x, w, b],
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 1, 1).unwrap();
                project(g, y, seed)
            },
            40,
            OP_TOL,
            "conv2d",
        );
        // strided variant
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let x = randt(&mut rng, &[1, 2, 8, 8]);
        let w = randt(&mut rng, &[3, 2, 3, 3]);
        let b = randt(&mut rng, &[3]);
        fd_check(
            &[x, w, b],
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 2, 1).unwrap();
                project(g, y, seed)
            },
            30,
            OP_TOL,
            "conv2d stride 2",
        );
    }
}

pub fn pen_conv_check() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randt(&mut rng, &[1, 5, 9, 9]);
        let w = randt(&mut rng, &[3, 5, 7, 7]);
        let b = randt(&mut rng, &[3]);
        fd_check(
            &[x, w, b],
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 1, 3).unwrap();
                let r = g.relu(y);
                project(g, r, seed)
            },
            30,
            OP_TOL,
            "pen 7x7 conv+relu",
        );
    }
}

pub fn batchnorm_check() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randt(&mut rng, &[3, 4, 5, 5]);
        let gamma = randt(&mut rng, &[4]);
        let beta = randt(&mut rng, &[4]);
        fd_check(
            &[x, gamma, beta],
            |g, v| {
                let mut state: BnState<f64> = BnState::new(4);
                let y = g.batchnorm2d(v[0], v[1], v[2], &mut state, true).unwrap();
                project(g, y, seed)
            },
            40,
            OP_TOL,
            "batchnorm train",
        );
    }
}

pub fn activations_check() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randt(&mut rng, &[2, 3, 4, 4]);
        for (name, f) in [
            ("relu", (|g: &mut Graph<f64>, v: Var| g.relu(v)) as fn(&mut Graph<f64>, Var) -> Var),
            ("sigmoid", |g, v| g.sigmoid(v)),
            ("gelu", |g, v| g.gelu(v)),
        ] {
            fd_check(
                &[x.clone()],
                |g, v| {
                    let y = f(g, v[0]);
                    project(g, y, seed)
                },
                40,
                OP_TOL,
                name,
            );
        }
    }
}

pub fn bilinear_check() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randt(&mut rng, &[2, 3, 4, 4]);
        fd_check(
            &[x],
            |g, v| {
                let y = g.bilinear_up2(v[0]).unwrap();
                project(g, y, seed)
            },
            48,
            OP_TOL,
            "bilinear_up2",
        );
    }
}

pub fn linear_attention_check() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randt(&mut rng, &[2, 5, 6]);
        let w = randt(&mut rng, &[4, 6]);
        let b = randt(&mut rng, &[4]);
        fd_check(
            &[x.clone(), w, b],
            |g, v| {
                let y = g.linear(v[0], v[1], v[2]).unwrap();
                project(g, y, seed)
            },
            30,
            OP_TOL,
            "linear",
        );
        let a = randt(&mut rng, &[3, 4, 5]);
        let bm = randt(&mut rng, &[3, 5, 2]);
        fd_check(
            &[a, bm],
            |g, v| {
                let y = g.bmm(v[0], v[1]).unwrap();
                project(g, y, seed)
            },
            30,
            OP_TOL,
            "bmm",
        );
        fd_check(
            &[x.clone()],
            |g, v| {
                let y = g.softmax_lastdim(v[0]).unwrap();
                project(g, y, seed)
            },
            40,
            OP_TOL,
            "softmax",
        );
        let gamma = randt(&mut rng, &[6]);
        let beta = randt(&mut rng, &[6]);
        fd_check(
            &[x.clone(), gamma, beta],
            |g, v| {
                let y = g.layernorm(v[0], v[1], v[2], 1e-6).unwrap();
                project(g, y, seed)
            },
            40,
            OP_TOL,
            "layernorm",
        );
    }
}

pub fn transformer_check() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store: ParamStore<f64> = ParamStore::new();
        let blk = TransformerBlock::new(&mut store, &mut rng, "blk", 8, 2, 16).unwrap();
        let x = randt(&mut rng, &[2, 4, 8]);

        let eval = |store: &ParamStore<f64>, x: &Tensor64| -> f64 {
            let mut sess = Session::new(store);
            let xv = sess.graph.leaf(x.clone(), true);
            let y = blk.forward(store, &mut sess, xv).unwrap();
            let loss = project(&mut sess.graph, y, seed);
            sess.graph.value(loss).item()
        };

        // analytic pass
        let mut sess = Session::new(&store);
        let xv = sess.graph.leaf(x.clone(), true);
        let y = blk.forward(&store, &mut sess, xv).unwrap();
        let loss = project(&mut sess.graph, y, seed);
        let grads = sess.graph.backward(loss).unwrap();

        // input coordinates
        let gx = grads.grad_or_zeros(xv, x.shape());
        let mut coord_rng = ChaCha8Rng::seed_from_u64(seed + 99);
        for _ in 0..12 {
            let j = coord_rng.gen_range(0..x.numel());
            let mut plus = x.clone();
            plus.data_mut()[j] += H;
            let mut minus = x.clone();
            minus.data_mut()[j] -= H;
            let numeric = (eval(&store, &plus) - eval(&store, &minus)) / (2.0 * H);
            assert!(
                rel_err(gx.data()[j], numeric) <= OP_TOL,
                "transformer x coord {j}: analytic {}, numeric {numeric}",
                gx.data()[j]
            );
        }
        // a few coordinates of every parameter
        let param_ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in param_ids {
            let shape = store.get(id).shape().to_vec();
            let pv = sess.param_var(id).expect("all block params touched");
            let gp = grads.grad_or_zeros(pv, &shape);
            for _ in 0..3 {
                let j = coord_rng.gen_range(0..store.get(id).numel());
                let mut s_plus = store.clone();
                s_plus.get_mut(id).data_mut()[j] += H;
                let mut s_minus = store.clone();
                s_minus.get_mut(id).data_mut()[j] -= H;
                let numeric = (eval(&s_plus, &x) - eval(&s_minus, &x)) / (2.0 * H);
                assert!(
                    rel_err(gp.data()[j], numeric) <= OP_TOL,
                    "transformer param {} coord {j}: analytic {}, numeric {numeric}",
                    store.name(id),
                    gp.data()[j]
                );
            }
        }
    }
}

pub fn dice_check() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // probabilities strictly inside (0, 1)
        let probs_data: Vec<f64> = (0..2 * 3 * 4 * 4)
            .map(|_| 0.5 + 0.45 * (rng.gen_range(-1.0..1.0f64)).tanh())
            .collect();
        let probs = Tensor::from_vec(&[2, 3, 4, 4], probs_data).unwrap();
        let target_data: Vec<f64> = (0..2 * 3 * 4 * 4)
            .map(|_| f64::from(rng.gen_bool(0.4)))
            .collect();
        let target = Tensor::from_vec(&[2, 3, 4, 4], target_data).unwrap();
        fd_check(
            &[probs],
            |g, v| {
                let per = dice_loss_graph(g, v[0], &target).unwrap();
                project(g, per, seed)
            },
            40,
            OP_TOL,
            "dice_loss",
        );
    }
}

/// End-to-end check of the fused-preprocessing gradient through the
/// full two-stage cascade on a mini model with 32x32 input.
pub fn end_to_end_pen_check() {
    let config = CinConfig {
        resolution: 32,
        seed: 12,
        ..CinConfig::mini()
    };
    let mut model: CinModel<f64> = CinModel::build(config).unwrap();
    let img = vfseg::imgproc::GrayImage::random(32, 32, 77);
    let stack = model.enhance(&img).unwrap();
    let n = stack.shape()[0];
    let stack4 = stack.reshaped(&[1, n, 32, 32]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target_data: Vec<f64> = (0..6 * 32 * 32).map(|_| f64::from(rng.gen_bool(0.3))).collect();
    let target = Tensor::from_vec(&[1, 6, 32, 32], target_data).unwrap();
    let weights = LossWeights::default_for_stages(2);

    let eval = |model: &mut CinModel<f64>| -> f64 {
        let mut fwd = model.forward(&stack4, true).unwrap();
        let loss = total_loss_graph(&mut fwd.sess.graph, &fwd.probs, &target, &weights).unwrap();
        fwd.sess.graph.value(loss).item()
    };

    let mut fwd = model.forward(&stack4, true).unwrap();
    let loss = total_loss_graph(&mut fwd.sess.graph, &fwd.probs, &target, &weights).unwrap();
    let grads = fwd.sess.graph.backward(loss).unwrap();
    let pen_id = model.params.by_name("pen.conv.weight").unwrap();
    let pen_var = fwd.sess.param_var(pen_id).unwrap();
    let shape = model.params.get(pen_id).shape().to_vec();
    let analytic = grads.grad_or_zeros(pen_var, &shape);
    drop(fwd);

    // the composite loss has strong curvature through batch norm, so
    // no single step size suits every coordinate; sweep a few and take
    // the best central-difference estimate (float64 leaves cancellation
    // headroom down to 1e-7)
    let numel = model.params.get(pen_id).numel();
    let mut coord_rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let j = coord_rng.gen_range(0..numel);
        let orig = model.params.get(pen_id).data()[j];
        let a = analytic.data()[j];
        let best = [1e-5, 1e-6, 1e-7]
            .iter()
            .map(|&h| {
                model.params.get_mut(pen_id).data_mut()[j] = orig + h;
                let plus = eval(&mut model);
                model.params.get_mut(pen_id).data_mut()[j] = orig - h;
                let minus = eval(&mut model);
                model.params.get_mut(pen_id).data_mut()[j] = orig;
                rel_err(a, (plus - minus) / (2.0 * h))
            })
            .fold(f64::INFINITY, f64::min);
        assert!(best <= 1e-3, "pen coord {j}: analytic {a}, best rel err {best}");
    }
}
