//! Reusable finite-difference cases for every differentiable layer type.
//!
//! Analytic gradients come from the float32 tape; finite differences run on
//! the 64-bit reference ops with a central step of 1e-3 and a step-halving
//! validity filter (components whose stencil straddles a relu/clamp kink
//! are excluded). Each case reports its max relative error and how many
//! components were actually compared.

use lcr::nn::{grads_for, Conv2d};
use lcr::seg::{DualGraphHead, ResidualBlock, SegNetConfig};
use lcr::tensor::init::seeded_rng;
use lcr::tensor::{Shape, Tape, Tensor, Var};
use rand::Rng;

use crate::refops;
use crate::{central_diff_grad_checked, compare_grads_checked, GradCheck, RefTensor};

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
pub const FLOOR: f64 = 1e-4;

/// One finished finite-difference comparison.
pub struct CaseOutcome {
    pub name: String,
    pub check: GradCheck,
    /// Lower bound on `check.checked` for the case to count as meaningful.
    pub min_checked: usize,
}

impl CaseOutcome {
    pub fn passed(&self) -> bool {
        self.check.max_rel_error < REL_TOL && self.check.checked >= self.min_checked
    }
}

fn random_vec(len: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f32> {
    (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

fn random_vec_off_zero(len: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f32> {
    (0..len)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0f32 } else { -1.0 };
            sign * rng.gen_range(0.05f32..1.0)
        })
        .collect()
}

fn tensor(shape: Shape, data: &[f32]) -> Tensor {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

fn ref_of(shape: Shape, data: &[f64]) -> RefTensor {
    RefTensor::new([shape.n, shape.c, shape.h, shape.w], data.to_vec())
}

fn unpack<'a, T>(packed: &'a [T], sizes: &[usize]) -> Vec<&'a [T]> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut off = 0;
    for s in sizes {
        out.push(&packed[off..off + s]);
        off += s;
    }
    assert_eq!(off, packed.len());
    out
}

fn run_case(
    name: String,
    init: &[f32],
    min_checked: usize,
    analytic: impl Fn(&[f32]) -> Vec<f32>,
    mut reference: impl FnMut(&[f64]) -> f64,
) -> CaseOutcome {
    let x64: Vec<f64> = init.iter().map(|v| *v as f64).collect();
    let grads = analytic(init);
    assert_eq!(grads.len(), init.len(), "{name}: gradient length");
    let fd = central_diff_grad_checked(&mut reference, &x64, FD_STEP, FLOOR);
    let check = compare_grads_checked(&grads, &fd, FLOOR);
    CaseOutcome {
        name,
        check,
        min_checked,
    }
}

pub fn conv_cases() -> Vec<CaseOutcome> {
    let cases = [
        (Shape::new(1, 2, 5, 5), 3usize, 3usize, 1usize, 1usize),
        (Shape::new(1, 3, 8, 8), 4, 4, 4, 0),
        (Shape::new(2, 2, 6, 7), 2, 3, 2, 1),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(case, (ishape, cout, k, stride, padding))| {
            let mut rng = seeded_rng(40 + case as u64);
            let wshape = Shape::new(cout, ishape.c, k, k);
            let bshape = Shape::new(1, cout, 1, 1);
            let sizes = [ishape.numel(), wshape.numel(), cout];
            let mut init = random_vec(ishape.numel(), &mut rng);
            init.extend(random_vec(wshape.numel(), &mut rng));
            init.extend(random_vec(cout, &mut rng));
            let oshape =
                lcr::tensor::kernels::conv2d_check(ishape, wshape, cout, stride, padding).unwrap();
            let target = random_vec(oshape.numel(), &mut rng);
            let target64: Vec<f64> = target.iter().map(|v| *v as f64).collect();

            run_case(
                format!("conv2d[{case}]"),
                &init,
                sizes.iter().sum::<usize>() / 2,
                |packed| {
                    let parts = unpack(packed, &sizes);
                    let mut tape = Tape::new();
                    let x = tape.leaf(tensor(ishape, parts[0]), true);
                    let w = tape.leaf(tensor(wshape, parts[1]), true);
                    let b = tape.leaf(tensor(bshape, parts[2]), true);
                    let y = tape.conv2d(x, w, b, stride, padding).unwrap();
                    let t = tape.leaf(tensor(oshape, &target), false);
                    let loss = tape.mse_loss(y, t).unwrap();
                    tape.backward(loss).unwrap();
                    grads_for(&tape, &[x, w, b]).concat()
                },
                |packed| {
                    let parts = unpack(packed, &sizes);
                    let x = ref_of(ishape, parts[0]);
                    let w = ref_of(wshape, parts[1]);
                    let y = refops::conv2d(&x, &w, parts[2], stride, padding);
                    refops::mse(&y, &ref_of(oshape, &target64))
                },
            )
        })
        .collect()
}

pub fn upsample_conv_cases() -> Vec<CaseOutcome> {
    let cases = [
        (Shape::new(1, 2, 3, 3), 2usize, 2usize, 3usize, 1usize),
        (Shape::new(1, 1, 2, 2), 4, 2, 3, 1),
        (Shape::new(1, 3, 4, 4), 2, 1, 1, 0),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(case, (ishape, factor, cout, k, padding))| {
            let mut rng = seeded_rng(60 + case as u64);
            let wshape = Shape::new(cout, ishape.c, k, k);
            let bshape = Shape::new(1, cout, 1, 1);
            let sizes = [ishape.numel(), wshape.numel(), cout];
            let mut init = random_vec(ishape.numel(), &mut rng);
            init.extend(random_vec(wshape.numel(), &mut rng));
            init.extend(random_vec(cout, &mut rng));
            let up_shape = Shape::new(ishape.n, ishape.c, ishape.h * factor, ishape.w * factor);
            let oshape =
                lcr::tensor::kernels::conv2d_check(up_shape, wshape, cout, 1, padding).unwrap();
            let target = random_vec(oshape.numel(), &mut rng);
            let target64: Vec<f64> = target.iter().map(|v| *v as f64).collect();

            run_case(
                format!("upsample_conv2d[{case}]"),
                &init,
                sizes.iter().sum::<usize>() / 2,
                |packed| {
                    let parts = unpack(packed, &sizes);
                    let mut tape = Tape::new();
                    let x = tape.leaf(tensor(ishape, parts[0]), true);
                    let w = tape.leaf(tensor(wshape, parts[1]), true);
                    let b = tape.leaf(tensor(bshape, parts[2]), true);
                    let y = tape.upsample_conv2d(x, w, b, factor, padding).unwrap();
                    let t = tape.leaf(tensor(oshape, &target), false);
                    let loss = tape.mse_loss(y, t).unwrap();
                    tape.backward(loss).unwrap();
                    grads_for(&tape, &[x, w, b]).concat()
                },
                |packed| {
                    let parts = unpack(packed, &sizes);
                    let x = ref_of(ishape, parts[0]);
                    let w = ref_of(wshape, parts[1]);
                    let up = refops::upsample_nearest(&x, factor);
                    let y = refops::conv2d(&up, &w, parts[2], 1, padding);
                    refops::mse(&y, &ref_of(oshape, &target64))
                },
            )
        })
        .collect()
}

pub fn relu_cases() -> Vec<CaseOutcome> {
    [
        Shape::new(1, 1, 4, 4),
        Shape::new(1, 3, 6, 6),
        Shape::new(2, 2, 8, 4),
    ]
    .into_iter()
    .enumerate()
    .map(|(case, ishape)| {
        let mut rng = seeded_rng(80 + case as u64);
        let init = random_vec_off_zero(ishape.numel(), &mut rng);
        let pooled = Shape::new(ishape.n, ishape.c, ishape.h / 2, ishape.w / 2);
        let target = random_vec(pooled.numel(), &mut rng);
        let target64: Vec<f64> = target.iter().map(|v| *v as f64).collect();
        run_case(
            format!("relu+avg_pool[{case}]"),
            &init,
            init.len() / 4,
            |packed| {
                let mut tape = Tape::new();
                let x = tape.leaf(tensor(ishape, packed), true);
                let r = tape.relu(x);
                let y = tape.avg_pool2(r).unwrap();
                let t = tape.leaf(tensor(pooled, &target), false);
                let loss = tape.mse_loss(y, t).unwrap();
                tape.backward(loss).unwrap();
                grads_for(&tape, &[x]).concat()
            },
            |packed| {
                let x = ref_of(ishape, packed);
                let y = refops::avg_pool2(&refops::relu(&x));
                refops::mse(&y, &ref_of(pooled, &target64))
            },
        )
    })
    .collect()
}

pub fn loss_cases() -> Vec<CaseOutcome> {
    let mut out = Vec::new();
    for (case, (lshape, scale)) in [
        (Shape::new(1, 4, 4, 4), 2usize),
        (Shape::new(1, 3, 2, 2), 4),
        (Shape::new(1, 5, 3, 3), 2),
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = seeded_rng(100 + case as u64);
        let init = random_vec(lshape.numel(), &mut rng);
        let (oh, ow) = (lshape.h * scale, lshape.w * scale);
        let targets: Vec<u8> = (0..lshape.n * oh * ow)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    255
                } else {
                    rng.gen_range(0..lshape.c as u8)
                }
            })
            .collect();
        let targets_ref = targets.clone();
        out.push(run_case(
            format!("cross_entropy+bilinear[{case}]"),
            &init,
            init.len() / 2,
            |packed| {
                let mut tape = Tape::new();
                let x = tape.leaf(tensor(lshape, packed), true);
                let up = tape.upsample_bilinear(x, oh, ow).unwrap();
                let loss = tape.cross_entropy(up, &targets, 255).unwrap();
                tape.backward(loss).unwrap();
                grads_for(&tape, &[x]).concat()
            },
            move |packed| {
                let x = ref_of(lshape, packed);
                let up = refops::upsample_bilinear(&x, oh, ow);
                refops::cross_entropy(&up, &targets_ref, 255)
            },
        ));
    }
    for (case, shape) in [
        Shape::new(1, 2, 3, 3),
        Shape::new(1, 1, 7, 5),
        Shape::new(2, 3, 2, 2),
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = seeded_rng(120 + case as u64);
        let init = random_vec(shape.numel(), &mut rng);
        let target = random_vec(shape.numel(), &mut rng);
        let target64: Vec<f64> = target.iter().map(|v| *v as f64).collect();
        out.push(run_case(
            format!("mse[{case}]"),
            &init,
            init.len() / 2,
            |packed| {
                let mut tape = Tape::new();
                let x = tape.leaf(tensor(shape, packed), true);
                let t = tape.leaf(tensor(shape, &target), false);
                let loss = tape.mse_loss(x, t).unwrap();
                tape.backward(loss).unwrap();
                grads_for(&tape, &[x]).concat()
            },
            move |packed| refops::mse(&ref_of(shape, packed), &ref_of(shape, &target64)),
        ));
    }
    out
}

fn ref_residual(
    x: &RefTensor,
    c1w: &RefTensor,
    c1b: &[f64],
    c2w: &RefTensor,
    c2b: &[f64],
    proj: Option<(&RefTensor, &[f64])>,
) -> RefTensor {
    let t = refops::relu(x);
    let t = refops::conv2d(&t, c1w, c1b, 1, 1);
    let t = refops::relu(&t);
    let t = refops::conv2d(&t, c2w, c2b, 1, 1);
    let skip = match proj {
        Some((w, b)) => refops::conv2d(x, w, b, 1, 0),
        None => x.clone(),
    };
    refops::add(&t, &skip)
}

pub fn residual_block_cases() -> Vec<CaseOutcome> {
    let cases = [
        (Shape::new(1, 4, 5, 5), 4usize),
        (Shape::new(1, 3, 4, 4), 5),
        (Shape::new(1, 6, 6, 6), 6),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(case, (ishape, cout))| {
            let mut rng = seeded_rng(140 + case as u64);
            let block = ResidualBlock::new(ishape.c, cout, &mut rng);
            let mut named = Vec::new();
            block.collect("block", &mut named);
            let mut sizes = vec![ishape.numel()];
            sizes.extend(named.iter().map(|(_, t)| t.numel()));
            let shapes: Vec<Shape> = named.iter().map(|(_, t)| t.shape()).collect();
            let mut init = random_vec_off_zero(ishape.numel(), &mut rng);
            for (_, t) in &named {
                init.extend(random_vec(t.numel(), &mut rng).iter().map(|v| v * 0.5));
            }
            let oshape = Shape::new(ishape.n, cout, ishape.h, ishape.w);
            let target = random_vec(oshape.numel(), &mut rng);
            let target64: Vec<f64> = target.iter().map(|v| *v as f64).collect();
            let has_proj = ishape.c != cout;

            run_case(
                format!("residual_block[{case}]"),
                &init,
                init.len() / 3,
                |packed| {
                    let parts = unpack(packed, &sizes);
                    let mut block = block.clone();
                    let mut named_mut = Vec::new();
                    block.collect_mut("block", &mut named_mut);
                    for ((_, slot), values) in named_mut.iter_mut().zip(&parts[1..]) {
                        **slot = tensor(slot.shape(), values);
                    }
                    let mut tape = Tape::new();
                    let mut rec = Vec::new();
                    let bound = block.bind(&mut tape, &mut rec, true);
                    let x = tape.leaf(tensor(ishape, parts[0]), true);
                    let y = bound.forward(&mut tape, x).unwrap();
                    let t = tape.leaf(tensor(oshape, &target), false);
                    let loss = tape.mse_loss(y, t).unwrap();
                    tape.backward(loss).unwrap();
                    let mut vars = vec![x];
                    vars.extend(rec);
                    grads_for(&tape, &vars).concat()
                },
                |packed| {
                    let parts = unpack(packed, &sizes);
                    let x = ref_of(ishape, parts[0]);
                    let c1w = ref_of(shapes[0], parts[1]);
                    let c2w = ref_of(shapes[2], parts[3]);
                    let proj_w;
                    let proj = if has_proj {
                        proj_w = ref_of(shapes[4], parts[5]);
                        Some((&proj_w, parts[6]))
                    } else {
                        None
                    };
                    let y = ref_residual(&x, &c1w, parts[2], &c2w, parts[4], proj);
                    refops::mse(&y, &ref_of(oshape, &target64))
                },
            )
        })
        .collect()
}

fn ref_pixels_matrix(x: &RefTensor) -> RefTensor {
    let [_, c, h, w] = x.shape;
    refops::transpose_hw(&refops::reshape(x, [1, 1, c, h * w]))
}

fn ref_matrix_pixels(m: &RefTensor, c: usize, h: usize, w: usize) -> RefTensor {
    refops::reshape(&refops::transpose_hw(m), [1, c, h, w])
}

struct HeadRef {
    parts: Vec<RefTensor>,
    biases: Vec<Vec<f64>>,
}

impl HeadRef {
    fn from_parts(parts: Vec<&[f64]>, shapes: &[Shape]) -> Self {
        let tensors: Vec<RefTensor> = parts
            .iter()
            .zip(shapes)
            .map(|(p, s)| ref_of(*s, p))
            .collect();
        HeadRef {
            biases: tensors.iter().map(|t| t.data.clone()).collect(),
            parts: tensors,
        }
    }

    fn conv(&self, i: usize) -> (&RefTensor, &[f64]) {
        (&self.parts[i], &self.biases[i + 1])
    }

    fn coord_branch(&self, x: &RefTensor) -> RefTensor {
        let [_, _, h, w] = x.shape;
        let (h2, w2) = (h / 2, w / 2);
        let pooled = refops::avg_pool2(x);
        let (rw, rb) = self.conv(0);
        let v = refops::relu(&refops::conv2d(&pooled, rw, rb, 1, 0));
        let dim = v.shape[1];
        let (qw, qb) = self.conv(2);
        let (kw, kb) = self.conv(4);
        let q = refops::conv2d(&v, qw, qb, 1, 0);
        let k = refops::conv2d(&v, kw, kb, 1, 0);
        let qm = ref_pixels_matrix(&q);
        let km_t = refops::reshape(&k, [1, 1, k.shape[1], h2 * w2]);
        let scores = refops::matmul(&qm, &km_t);
        let affinity = refops::softmax(&scores, 3);
        let vm = ref_pixels_matrix(&v);
        let mixed = refops::matmul(&affinity, &vm);
        let mixed = refops::matmul(&mixed, &self.parts[6]);
        let mixed = refops::relu(&mixed);
        let spatial = ref_matrix_pixels(&mixed, dim, h2, w2);
        let up = refops::upsample_nearest(&spatial, 2);
        let (ow, ob) = self.conv(7);
        refops::conv2d(&up, ow, ob, 1, 0)
    }

    fn feature_branch(&self, x: &RefTensor) -> RefTensor {
        let [_, _, h, w] = x.shape;
        let (aw, ab) = self.conv(9);
        let logits = refops::conv2d(x, aw, ab, 1, 0);
        let soft = refops::softmax(&logits, 1);
        let assign = ref_pixels_matrix(&soft);
        let (fw, fb) = self.conv(11);
        let reduced = refops::conv2d(x, fw, fb, 1, 0);
        let pix = ref_pixels_matrix(&reduced);
        let assign_t = refops::transpose_hw(&assign);
        let nodes = refops::matmul(&assign_t, &pix);
        let kn = self.parts[13].shape[2];
        let mut eye = RefTensor::zeros([1, 1, kn, kn]);
        for i in 0..kn {
            eye.data[i * kn + i] = 1.0;
        }
        let lap = refops::sub(&eye, &self.parts[13]);
        let mixed = refops::matmul(&lap, &nodes);
        let mixed = refops::matmul(&mixed, &self.parts[14]);
        let updated = refops::relu(&mixed);
        let back = refops::matmul(&assign, &updated);
        let spatial = ref_matrix_pixels(&back, updated.shape[3], h, w);
        let (ow, ob) = self.conv(15);
        refops::conv2d(&spatial, ow, ob, 1, 0)
    }
}

fn head_case(case: usize, coord: bool) -> CaseOutcome {
    let mut config = SegNetConfig::latent(8, 4, 8);
    config.width = 8 + case * 2;
    config.graph_nodes = 6;
    config.node_dim = 5;
    config.coord_dim = 6;
    config.attn_dim = 3;
    let spatial = [4usize, 6, 8][case];
    let ishape = Shape::new(1, config.width, spatial, spatial);

    let mut rng = seeded_rng(160 + case as u64 + if coord { 0 } else { 500 });
    let mut head = DualGraphHead::new(&config, &mut rng);
    // randomize the zero-initialized branch outputs so every internal
    // parameter receives signal during the check
    {
        let mut named = Vec::new();
        head.collect_mut("head", &mut named);
        for (_, t) in named.iter_mut() {
            let fresh: Vec<f32> = random_vec(t.numel(), &mut rng)
                .iter()
                .map(|v| v * 0.5)
                .collect();
            **t = tensor(t.shape(), &fresh);
        }
    }
    let mut named = Vec::new();
    head.collect("head", &mut named);
    assert_eq!(named.len(), 17);
    let shapes: Vec<Shape> = named.iter().map(|(_, t)| t.shape()).collect();
    // vars 0..9 belong to the coordinate branch, 9..17 to the feature branch
    let var_range = if coord { 0..9 } else { 9..17 };

    let mut sizes = vec![ishape.numel()];
    sizes.extend(shapes[var_range.clone()].iter().map(|s| s.numel()));
    let mut init = random_vec_off_zero(ishape.numel(), &mut rng);
    for (_, t) in &named[var_range.clone()] {
        init.extend(t.data().iter().copied());
    }
    let oshape = Shape::new(1, config.width, ishape.h, ishape.w);
    let target = random_vec(oshape.numel(), &mut rng);
    let target64: Vec<f64> = target.iter().map(|v| *v as f64).collect();

    let base_parts: Vec<Vec<f64>> = named
        .iter()
        .map(|(_, t)| t.data().iter().map(|v| *v as f64).collect())
        .collect();
    let full_shapes = shapes.clone();
    let range_a = var_range.clone();
    let range_b = var_range.clone();

    run_case(
        format!(
            "{}_branch[{case}]",
            if coord { "coordinate" } else { "feature" }
        ),
        &init,
        init.len() / 4,
        move |packed| {
            let parts = unpack(packed, &sizes);
            let mut head = head.clone();
            {
                let mut named_mut = Vec::new();
                head.collect_mut("head", &mut named_mut);
                for (slot_idx, part) in range_a.clone().zip(&parts[1..]) {
                    let (_, slot) = &mut named_mut[slot_idx];
                    **slot = tensor(slot.shape(), part);
                }
            }
            let mut tape = Tape::new();
            let mut rec = Vec::new();
            let bound = head.bind(&mut tape, &mut rec, true);
            let x = tape.leaf(tensor(ishape, parts[0]), true);
            let y = if coord {
                bound.coord_branch(&mut tape, x).unwrap()
            } else {
                bound.feature_branch(&mut tape, x).unwrap()
            };
            let t = tape.leaf(tensor(oshape, &target), false);
            let loss = tape.mse_loss(y, t).unwrap();
            tape.backward(loss).unwrap();
            let mut vars: Vec<Var> = vec![x];
            vars.extend(&rec[range_a.clone()]);
            grads_for(&tape, &vars).concat()
        },
        move |packed| {
            let sizes: Vec<usize> = {
                let mut s = vec![ishape.numel()];
                s.extend(full_shapes[range_b.clone()].iter().map(|sh| sh.numel()));
                s
            };
            let parts = unpack(packed, &sizes);
            let mut all_parts = base_parts.clone();
            for (slot_idx, part) in range_b.clone().zip(&parts[1..]) {
                all_parts[slot_idx] = part.to_vec();
            }
            let href = HeadRef::from_parts(
                all_parts.iter().map(|v| v.as_slice()).collect(),
                &full_shapes,
            );
            let x = ref_of(ishape, parts[0]);
            let y = if coord {
                href.coord_branch(&x)
            } else {
                href.feature_branch(&x)
            };
            refops::mse(&y, &ref_of(oshape, &target64))
        },
    )
}

pub fn coord_branch_cases() -> Vec<CaseOutcome> {
    (0..3).map(|c| head_case(c, true)).collect()
}

pub fn feature_branch_cases() -> Vec<CaseOutcome> {
    (0..3).map(|c| head_case(c, false)).collect()
}

pub fn conv_chain_cases() -> Vec<CaseOutcome> {
    (0..3)
        .map(|case| {
            let mut rng = seeded_rng(200 + case as u64);
            let ishape = Shape::new(1, 2, 6 + case, 6 + case);
            let convs = [
                Conv2d::new(2, 4, 3, 1, 1, &mut rng),
                Conv2d::new(4, 4, 3, 2, 1, &mut rng),
                Conv2d::new(4, 2, 1, 1, 0, &mut rng),
            ];
            let mut named = Vec::new();
            for (i, c) in convs.iter().enumerate() {
                c.collect(&format!("c{i}"), &mut named);
            }
            let mut sizes = vec![ishape.numel()];
            sizes.extend(named.iter().map(|(_, t)| t.numel()));
            let shapes: Vec<Shape> = named.iter().map(|(_, t)| t.shape()).collect();
            let mut init = random_vec(ishape.numel(), &mut rng);
            for (_, t) in &named {
                init.extend(t.data());
            }
            let mid = (6 + case).div_ceil(2);
            let oshape = Shape::new(1, 2, mid, mid);
            let target = random_vec(oshape.numel(), &mut rng);
            let target64: Vec<f64> = target.iter().map(|v| *v as f64).collect();
            let strides = [1usize, 2, 1];
            let pads = [1usize, 1, 0];

            run_case(
                format!("conv_chain[{case}]"),
                &init,
                init.len() / 3,
                |packed| {
                    let parts = unpack(packed, &sizes);
                    let mut tape = Tape::new();
                    let x = tape.leaf(tensor(ishape, parts[0]), true);
                    let mut vars = vec![x];
                    let mut h = x;
                    for i in 0..3 {
                        let w = tape.leaf(tensor(shapes[2 * i], parts[1 + 2 * i]), true);
                        let b = tape.leaf(tensor(shapes[2 * i + 1], parts[2 + 2 * i]), true);
                        vars.push(w);
                        vars.push(b);
                        h = tape.conv2d(h, w, b, strides[i], pads[i]).unwrap();
                        if i < 2 {
                            h = tape.relu(h);
                        }
                    }
                    let t = tape.leaf(tensor(oshape, &target), false);
                    let loss = tape.mse_loss(h, t).unwrap();
                    tape.backward(loss).unwrap();
                    grads_for(&tape, &vars).concat()
                },
                |packed| {
                    let parts = unpack(packed, &sizes);
                    let mut h = ref_of(ishape, parts[0]);
                    for i in 0..3 {
                        let w = ref_of(shapes[2 * i], parts[1 + 2 * i]);
                        h = refops::conv2d(&h, &w, parts[2 + 2 * i], strides[i], pads[i]);
                        if i < 2 {
                            h = refops::relu(&h);
                        }
                    }
                    refops::mse(&h, &ref_of(oshape, &target64))
                },
            )
        })
        .collect()
}

/// Every layer-type case in one list.
pub fn all_cases() -> Vec<CaseOutcome> {
    let mut all = conv_cases();
    all.extend(upsample_conv_cases());
    all.extend(relu_cases());
    all.extend(loss_cases());
    all.extend(residual_block_cases());
    all.extend(coord_branch_cases());
    all.extend(feature_branch_cases());
    all.extend(conv_chain_cases());
    all
}
