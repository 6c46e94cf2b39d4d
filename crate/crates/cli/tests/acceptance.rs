//! Acceptance gate: one line per criterion, nonzero exit if any fails.
#![allow(clippy::needless_range_loop)]

use std::collections::HashSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use favs_core::fded::{
    self as fded, enhance_high_audio, enhance_high_visual, fded_forward, preprocess, FdedParams, Modality,
};
use favs_core::fixtures::TensorFile;
use favs_core::init::SplitMix64;
use favs_core::ops::{softmax_in_place, Mlp};
use favs_core::pipeline::{metric_fscore, metric_jaccard, ModelConfig, ModelParams, RouterInit};
use favs_core::scmc::{
    bca, dynamic_k, entropy_k, route_weights, scmc_forward, sparsify, AttentionProj, Direction, ExpertParams,
    RouteSide, RouterParams, RoutingDecision, ScmcOptions, StcParams,
};
use favs_core::spectral::{self, naive_dft2, residual_decompose, ThresholdLadder};
use favs_core::{Complex64, ComplexTensor, RealTensor};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random(shape: Vec<usize>, rng: &mut SplitMix64, scale: f64) -> RealTensor {
    RealTensor::from_fn(shape, |_| rng.next_symmetric(scale))
}

fn random_ladder(rng: &mut SplitMix64) -> ThresholdLadder {
    loop {
        let mut t = [rng.next_f64(), rng.next_f64(), rng.next_f64()];
        t.sort_by(|a, b| b.total_cmp(a));
        if let Ok(l) = ThresholdLadder::new([1.0, t[0], t[1], t[2]]) {
            return l;
        }
    }
}

fn random_mlp(rng: &mut SplitMix64, i: usize, h: usize, o: usize, scale: f64) -> Mlp {
    Mlp::new(
        random(vec![i, h], rng, scale),
        random(vec![h], rng, 0.2),
        random(vec![h, o], rng, scale),
        random(vec![o], rng, 0.2),
    )
    .unwrap()
}

fn random_fded(c: usize, groups: usize, rng: &mut SplitMix64) -> FdedParams {
    let mut p = FdedParams::identity(c, groups, 2).unwrap();
    p.dwc = random(vec![c, 3, 3], rng, 0.6);
    p.group = random(vec![groups, c / groups, c / groups], rng, 0.8);
    p.conv3d = random(vec![c, 3, 3, 3], rng, 0.4);
    p.ca = random_mlp(rng, c, c / 2, c, 1.0);
    p
}

fn random_stc(rng: &mut SplitMix64, c: usize) -> StcParams {
    StcParams {
        spatial: random(vec![1, 3, 3], rng, 1.0),
        temporal: random_mlp(rng, c, c / 2, c, 1.0),
        channel: random_mlp(rng, c, c / 2, c, 1.0),
    }
}

fn random_proj(rng: &mut SplitMix64, c: usize) -> AttentionProj {
    AttentionProj {
        q: random(vec![c, c], rng, 1.0),
        k: random(vec![c, c], rng, 1.0),
        v: random(vec![c, c], rng, 1.0),
        out: random(vec![c, c], rng, 1.0),
    }
}

fn random_expert(rng: &mut SplitMix64, c: usize) -> ExpertParams {
    ExpertParams {
        stc_q: random_stc(rng, c),
        stc_k: random_stc(rng, c),
        stc_v: random_stc(rng, c),
        a2v: random_proj(rng, c),
        v2a: random_proj(rng, c),
    }
}

fn random_router(rng: &mut SplitMix64, c: usize, ne: usize, gain: f64) -> RouterParams {
    RouterParams {
        stc_a: random_stc(rng, c),
        stc_v: random_stc(rng, c),
        mlp_a: random_mlp(rng, c, c, ne, gain),
        mlp_v: random_mlp(rng, c, c, ne, gain),
    }
}

// 1. FFT oracle

fn fft_oracle() -> Check {
    let mut rng = SplitMix64::new(1);
    let mut worst_dft: f64 = 0.0;
    let mut worst_rt: f64 = 0.0;
    for (h, w) in [(8, 8), (15, 17), (16, 16), (31, 9)] {
        for _ in 0..5 {
            let x = random(vec![h, w], &mut rng, 10.0);
            let fast = spectral::fft2(&x).map_err(|e| e.to_string())?;
            let slow = naive_dft2(&x).map_err(|e| e.to_string())?;
            let err = fast.max_abs_diff(&slow);
            worst_dft = worst_dft.max(err);
            ensure(err < 1e-6, || format!("{h}x{w}: fft2 vs naive error {err:.3e}"))?;
            let back = spectral::ifft2(&fast).map_err(|e| e.to_string())?.re();
            let rel = back.max_abs_diff(&x) / x.max_abs();
            worst_rt = worst_rt.max(rel);
            ensure(rel < 1e-9, || format!("{h}x{w}: round trip relative error {rel:.3e}"))?;
        }
    }
    Ok(format!(
        "max |fft2 - dft| {worst_dft:.2e}, max round-trip rel {worst_rt:.2e}"
    ))
}

// 2. Band partition exactness

fn band_partition() -> Check {
    let mut rng = SplitMix64::new(2);
    let ladders: Vec<ThresholdLadder> = (0..10).map(|_| random_ladder(&mut rng)).collect();
    let mut worst: f64 = 0.0;
    for s in 0..100 {
        let (h, w) = (2 + (rng.next_u64() % 22) as usize, 2 + (rng.next_u64() % 22) as usize);
        let n = 2 * 3 * h * w;
        let data = (0..n)
            .map(|_| Complex64::new(rng.next_gaussian() * 5.0, rng.next_gaussian() * 5.0))
            .collect();
        let x = ComplexTensor::new(vec![2, 3, h, w], data).unwrap();
        let total = spectral::band_energy(&x);
        for l in &ladders {
            let b = residual_decompose(&x, l).map_err(|e| e.to_string())?;
            ensure(b.recombine().bit_eq(&x), || {
                format!("spectrum {s}, ladder {l}: sum is not bit-identical")
            })?;
            let rel = (b.energies().iter().sum::<f64>() - total).abs() / total;
            worst = worst.max(rel);
            ensure(rel <= 1e-9, || {
                format!("spectrum {s}, ladder {l}: energy rel error {rel:.3e}")
            })?;
        }
    }
    Ok(format!(
        "1000 decompositions bit-exact, max energy rel error {worst:.2e}"
    ))
}

// 3. Identity closure

fn identity_closure() -> Check {
    let mut rng = SplitMix64::new(3);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let (t, h, w) = (1 + i % 3, 4 + i % 7, 5 + (i * 3) % 9);
        let x = random(vec![t, 8, h, w], &mut rng, 3.0);
        let mut p = FdedParams::identity(8, 4, 2).unwrap();
        p.enhance = false;
        p.ladder = if i % 2 == 0 {
            ThresholdLadder::default()
        } else {
            random_ladder(&mut rng)
        };
        let m = if i % 2 == 0 { Modality::Visual } else { Modality::Audio };
        let y = fded_forward(&x, m, &p).map_err(|e| e.to_string())?.features;
        let rel = y.max_abs_diff(&x) / x.max_abs();
        worst = worst.max(rel);
        ensure(rel <= 1e-9, || format!("input {i}: relative error {rel:.3e}"))?;
    }
    Ok(format!("20 inputs, max relative error {worst:.2e}"))
}

// 4. High-band isolation

fn high_band_isolation() -> Check {
    let mut rng = SplitMix64::new(4);
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let x = random(vec![3, 8, 12, 12], &mut rng, 2.0);
        let mut p = random_fded(8, 2, &mut rng);
        p.ladder = if i < 5 {
            ThresholdLadder::default()
        } else {
            random_ladder(&mut rng)
        };
        for m in [Modality::Visual, Modality::Audio] {
            let out = fded_forward(&x, m, &p).map_err(|e| e.to_string())?;
            let (_, pre_spec) = preprocess(&x, &p).map_err(|e| e.to_string())?;
            let pre = residual_decompose(&pre_spec, &p.ladder).map_err(|e| e.to_string())?;
            ensure(out.enhanced_high.max_abs_diff(&pre.high) > 1e-6, || {
                format!("case {i} {m:?}: enhancement was a no-op")
            })?;

            // The recomposed spectrum carries the preprocessed mid/low/residual bins verbatim.
            let rec = residual_decompose(&out.output_spectrum(), &p.ladder).map_err(|e| e.to_string())?;
            for (name, a, b) in [
                ("mid", &rec.mid, &pre.mid),
                ("low", &rec.low, &pre.low),
                ("residual", &rec.residual, &pre.residual),
            ] {
                ensure(a.bit_eq(b), || format!("case {i} {m:?}: {name} band changed"))?;
            }

            // And so does the spectrum of the real output features.
            let back = residual_decompose(&spectral::fft2(&out.features).unwrap(), &p.ladder).unwrap();
            let scale = spectral::band_energy(&pre_spec).sqrt();
            for (a, b) in [
                (&back.mid, &pre.mid),
                (&back.low, &pre.low),
                (&back.residual, &pre.residual),
            ] {
                let rel = a.max_abs_diff(b) / scale;
                worst = worst.max(rel);
                ensure(rel < 1e-9, || {
                    format!("case {i} {m:?}: output spectrum drifted {rel:.3e}")
                })?;
            }
        }
    }
    Ok(format!(
        "20 cases bit-identical in recomposition, output re-decomposition rel {worst:.2e}"
    ))
}

// 5. Routing simplex and dynamic-k

fn routing_simplex() -> Check {
    let mut rng = SplitMix64::new(5);
    let mut rows = 0;
    for ne in [2, 4, 8] {
        let router = random_router(&mut rng, 4, ne, 3.0);
        let feats = random(vec![1000, 4, 2, 2], &mut rng, 6.0);
        let w = route_weights(&feats, &router, RouteSide::ForVisual).map_err(|e| e.to_string())?;
        let mut direct = Vec::with_capacity(1000 * ne);
        for _ in 0..1000 {
            let mut logits: Vec<f64> = (0..ne).map(|_| rng.next_symmetric(25.0)).collect();
            softmax_in_place(&mut logits);
            direct.extend(logits);
        }
        let direct = RealTensor::new(vec![1000, ne], direct).unwrap();
        for weights in [w, direct] {
            let d = RoutingDecision::from_weights(weights, false).map_err(|e| e.to_string())?;
            for f in 0..d.frames() {
                let sum: f64 = d.dense_row(f).iter().sum();
                ensure((sum - 1.0).abs() <= 1e-9, || format!("N_e={ne}: row sums to {sum}"))?;
                ensure((1..=ne).contains(&d.k_eff[f]), || {
                    format!("N_e={ne}: k_eff {}", d.k_eff[f])
                })?;
                let s: f64 = d.sparse_row(f).iter().sum();
                ensure((s - 1.0).abs() <= 1e-9, || format!("N_e={ne}: sparse row sums to {s}"))?;
                rows += 1;
            }
        }
        let uniform = vec![1.0 / ne as f64; ne];
        let ku = dynamic_k(&uniform).map_err(|e| e.to_string())?.0;
        ensure(ku == ne, || format!("uniform N_e={ne} gave k_eff {ku}"))?;
        for hot in 0..ne {
            let mut row = vec![0.0; ne];
            row[hot] = 1.0;
            let k = dynamic_k(&row).map_err(|e| e.to_string())?.0;
            ensure(k == 1, || format!("one-hot N_e={ne} gave k_eff {k}"))?;
        }
    }
    let ek = entropy_k(&[0.7, 0.1, 0.1, 0.1]).map_err(|e| e.to_string())?;
    ensure(ek.k_eff == 3, || format!("(0.7,0.1,0.1,0.1) gave k_eff {}", ek.k_eff))?;
    Ok(format!(
        "{rows} rows; (0.7,0.1,0.1,0.1): E={:.4}, norm={:.4}, k_eff=3",
        ek.entropy, ek.normalized
    ))
}

// 6. Dense equivalence

fn dense_equivalence() -> Check {
    let mut rng = SplitMix64::new(6);
    for trial in 0..4 {
        let cfg = ModelConfig {
            channels: 8,
            experts: 4,
            seed: trial,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, RouterInit::Random).map_err(|e| e.to_string())?;
        let stage = &params.stages[(trial % 3) as usize];
        let v = random(vec![2, 8, 8, 8], &mut rng, 1.5);
        let a = random(vec![2, 8, 4, 4], &mut rng, 1.5);
        let out = scmc_forward(&v, &a, &stage.experts, &stage.router, ScmcOptions { force_dense: true })
            .map_err(|e| e.to_string())?;
        for (target, source, dir, side, got) in [
            (&v, &a, Direction::AudioToVisual, RouteSide::ForVisual, &out.visual),
            (&a, &v, Direction::VisualToAudio, RouteSide::ForAudio, &out.audio),
        ] {
            let other = if side == RouteSide::ForVisual { &a } else { &v };
            let w = route_weights(other, &stage.router, side).unwrap();
            let per: Vec<RealTensor> = stage
                .experts
                .iter()
                .map(|e| bca(target, source, e, dir).unwrap())
                .collect();
            let frame = target.len() / 2;
            let mut want = vec![0.0; target.len()];
            for f in 0..2 {
                for (e, fe) in per.iter().enumerate() {
                    let we = w.data()[f * 4 + e];
                    for i in f * frame..(f + 1) * frame {
                        want[i] += we * fe.data()[i];
                    }
                }
            }
            let want = RealTensor::new(target.shape().to_vec(), want).unwrap();
            ensure(got.bit_eq(&want), || {
                format!("trial {trial} {dir:?}: max diff {:.3e}", got.max_abs_diff(&want))
            })?;
        }
    }
    Ok("4 trials, both directions bit-identical".into())
}

// 7. Brute-force composition oracle on a 1x2x2x2 toy.

mod oracle {
    use favs_core::Complex64;
    use std::f64::consts::PI;

    pub const C: usize = 2;
    pub const N: usize = 2;

    /// `[c][y][x]`
    pub type Map = [[[f64; N]; N]; C];
    pub type Spec = [[[Complex64; N]; N]; C];

    pub fn map(data: &[f64]) -> Map {
        let mut m = [[[0.0; N]; N]; C];
        for c in 0..C {
            for y in 0..N {
                for x in 0..N {
                    m[c][y][x] = data[(c * N + y) * N + x];
                }
            }
        }
        m
    }

    pub fn flat(m: &Map) -> Vec<f64> {
        m.iter().flatten().flatten().copied().collect()
    }

    pub fn flat_c(s: &Spec) -> Vec<Complex64> {
        s.iter().flatten().flatten().copied().collect()
    }

    fn at(m: &[[f64; N]; N], y: isize, x: isize) -> f64 {
        if y < 0 || x < 0 || y >= N as isize || x >= N as isize {
            0.0
        } else {
            m[y as usize][x as usize]
        }
    }

    /// 3x3 kernel centred on the output pixel, zero outside the plane.
    fn corr3(m: &[[f64; N]; N], k: &[f64]) -> [[f64; N]; N] {
        let mut out = [[0.0; N]; N];
        for y in 0..N {
            for x in 0..N {
                let mut acc = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        acc += k[dy * 3 + dx] * at(m, y as isize + dy as isize - 1, x as isize + dx as isize - 1);
                    }
                }
                out[y][x] = acc;
            }
        }
        out
    }

    pub fn dwc(x: &Map, k: &[f64]) -> Map {
        let mut out = [[[0.0; N]; N]; C];
        for c in 0..C {
            out[c] = corr3(&x[c], &k[c * 9..(c + 1) * 9]);
        }
        out
    }

    /// Single group: `y_i = Σ_j W[i][j] x_j`.
    pub fn mix(x: &Map, w: &[f64]) -> Map {
        let mut out = [[[0.0; N]; N]; C];
        for i in 0..C {
            for j in 0..C {
                for y in 0..N {
                    for xx in 0..N {
                        out[i][y][xx] += w[i * C + j] * x[j][y][xx];
                    }
                }
            }
        }
        out
    }

    pub fn dft(x: &Map) -> Spec {
        let mut out = [[[Complex64::new(0.0, 0.0); N]; N]; C];
        for c in 0..C {
            for u in 0..N {
                for v in 0..N {
                    for y in 0..N {
                        for xx in 0..N {
                            let ang = -2.0 * PI * ((u * y) as f64 / N as f64 + (v * xx) as f64 / N as f64);
                            out[c][u][v] += Complex64::from_polar(x[c][y][xx], ang);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn idft_re(s: &Spec) -> Map {
        let mut out = [[[0.0; N]; N]; C];
        for c in 0..C {
            for y in 0..N {
                for xx in 0..N {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for u in 0..N {
                        for v in 0..N {
                            let ang = 2.0 * PI * ((u * y) as f64 / N as f64 + (v * xx) as f64 / N as f64);
                            acc += s[c][u][v] * Complex64::from_polar(1.0, ang);
                        }
                    }
                    out[c][y][xx] = acc.re / (N * N) as f64;
                }
            }
        }
        out
    }

    /// Index 0 high, 1 mid, 2 low, 3 residual.
    pub fn band(u: usize, v: usize, taus: [f64; 4]) -> usize {
        let f = |k: usize| {
            let s = if k <= N / 2 { k as f64 } else { k as f64 - N as f64 };
            s / (N / 2) as f64
        };
        let r = ((f(u).powi(2) + f(v).powi(2)).sqrt() / 2f64.sqrt()).min(1.0);
        (0..3).find(|&b| taus[b + 1] < r && r <= taus[b]).unwrap_or(3)
    }

    pub fn split(s: &Spec, taus: [f64; 4]) -> [Spec; 4] {
        let zero = [[[Complex64::new(0.0, 0.0); N]; N]; C];
        let mut out = [zero; 4];
        for c in 0..C {
            for u in 0..N {
                for v in 0..N {
                    out[band(u, v, taus)][c][u][v] = s[c][u][v];
                }
            }
        }
        out
    }

    /// Single frame: only the centre time slice of the kernel meets data.
    pub fn enhance_visual(h: &Spec, k3: &[f64], taus: [f64; 4]) -> Spec {
        let mut out = *h;
        for c in 0..C {
            let k = &k3[c * 27 + 9..c * 27 + 18];
            for u in 0..N {
                for v in 0..N {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for du in 0..3 {
                        for dv in 0..3 {
                            let (su, sv) = (u as isize + du as isize - 1, v as isize + dv as isize - 1);
                            if su >= 0 && sv >= 0 && su < N as isize && sv < N as isize {
                                acc += h[c][su as usize][sv as usize] * k[du * 3 + dv];
                            }
                        }
                    }
                    out[c][u][v] += acc;
                    if band(u, v, taus) != 0 {
                        out[c][u][v] = Complex64::new(0.0, 0.0);
                    }
                }
            }
        }
        out
    }

    pub struct Net<'a> {
        pub w1: &'a [f64],
        pub b1: &'a [f64],
        pub w2: &'a [f64],
        pub b2: &'a [f64],
    }

    pub fn mlp(n: &Net, x: &[f64]) -> Vec<f64> {
        let (i, o) = (x.len(), n.b2.len());
        let h = n.b1.len();
        let hidden: Vec<f64> = (0..h)
            .map(|j| ((0..i).map(|k| x[k] * n.w1[k * h + j]).sum::<f64>() + n.b1[j]).max(0.0))
            .collect();
        (0..o)
            .map(|k| (0..h).map(|j| hidden[j] * n.w2[j * o + k]).sum::<f64>() + n.b2[k])
            .collect()
    }

    pub fn sig(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    pub fn enhance_audio(h: &Spec, ca: &Net) -> Spec {
        let mean: Vec<f64> = (0..C)
            .map(|c| h[c].iter().flatten().map(|z| z.norm()).sum::<f64>() / (N * N) as f64)
            .collect();
        let g: Vec<f64> = mlp(ca, &mean).into_iter().map(sig).collect();
        let mut out = *h;
        for c in 0..C {
            for z in out[c].iter_mut().flatten() {
                *z *= g[c];
            }
        }
        out
    }

    pub fn recompose(bands: [&Spec; 4], w: [f64; 4]) -> Map {
        let mut out = [[[0.0; N]; N]; C];
        for (b, wt) in bands.iter().zip(w) {
            let s = idft_re(b);
            for c in 0..C {
                for y in 0..N {
                    for x in 0..N {
                        out[c][y][x] += wt * s[c][y][x];
                    }
                }
            }
        }
        out
    }

    pub struct Stc<'a> {
        pub spatial: &'a [f64],
        pub temporal: Net<'a>,
        pub channel: Net<'a>,
    }

    fn plane_mean(m: &[[f64; N]; N]) -> f64 {
        m.iter().flatten().sum::<f64>() / (N * N) as f64
    }

    pub fn stc(x: &Map, p: &Stc) -> Map {
        let mut mean = [[0.0; N]; N];
        for y in 0..N {
            for xx in 0..N {
                mean[y][xx] = (0..C).map(|c| x[c][y][xx]).sum::<f64>() / C as f64;
            }
        }
        let gs = corr3(&mean, p.spatial);
        let mut out = *x;
        for c in 0..C {
            for y in 0..N {
                for xx in 0..N {
                    out[c][y][xx] *= sig(gs[y][xx]);
                }
            }
        }
        for net in [&p.temporal, &p.channel] {
            let pooled: Vec<f64> = (0..C).map(|c| plane_mean(&out[c])).collect();
            let g = mlp(net, &pooled);
            for c in 0..C {
                for z in out[c].iter_mut().flatten() {
                    *z *= sig(g[c]);
                }
            }
        }
        out
    }

    pub struct Proj<'a> {
        pub q: &'a [f64],
        pub k: &'a [f64],
        pub v: &'a [f64],
        pub out: &'a [f64],
    }

    fn apply(w: &[f64], x: &[f64]) -> Vec<f64> {
        (0..C).map(|i| (0..C).map(|j| w[i * C + j] * x[j]).sum()).collect()
    }

    fn token(m: &Map, n: usize) -> Vec<f64> {
        (0..C).map(|c| m[c][n / N][n % N]).collect()
    }

    pub fn cross_attention(target: &Map, tq: &Map, sk: &Map, sv: &Map, p: &Proj) -> Map {
        let ntok = N * N;
        let keys: Vec<Vec<f64>> = (0..ntok).map(|m| apply(p.k, &token(sk, m))).collect();
        let vals: Vec<Vec<f64>> = (0..ntok).map(|m| apply(p.v, &token(sv, m))).collect();
        let mut out = *target;
        for n in 0..ntok {
            let q = apply(p.q, &token(tq, n));
            let scores: Vec<f64> = keys
                .iter()
                .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (C as f64).sqrt())
                .collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut o = vec![0.0; C];
            for (a, v) in e.iter().zip(&vals) {
                for c in 0..C {
                    o[c] += a / z * v[c];
                }
            }
            let y = apply(p.out, &o);
            for c in 0..C {
                out[c][n / N][n % N] += y[c];
            }
        }
        out
    }

    pub fn route(x: &Map, stc_p: &Stc, net: &Net) -> Vec<f64> {
        let s = stc(x, stc_p);
        let pooled: Vec<f64> = (0..C).map(|c| plane_mean(&s[c])).collect();
        let logits = mlp(net, &pooled);
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().map(|v| v / z).collect()
    }

    /// `(k, sparse weights)`.
    pub fn select(w: &[f64]) -> (usize, Vec<f64>) {
        let ne = w.len();
        let ent = -w.iter().map(|p| p * (p + 1e-8).ln()).sum::<f64>();
        let norm = if ne > 1 {
            (ent / (ne as f64).ln()).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let k = ((ne as f64 * norm).ceil() as usize).clamp(1, ne);
        let mut keep = Vec::new();
        let mut left: Vec<usize> = (0..ne).collect();
        for _ in 0..k {
            let best = *left.iter().reduce(|a, b| if w[*b] > w[*a] { b } else { a }).unwrap();
            keep.push(best);
            left.retain(|&i| i != best);
        }
        let mass: f64 = keep.iter().map(|&i| w[i]).sum();
        let mut out = vec![0.0; ne];
        for &i in &keep {
            out[i] = w[i] / mass;
        }
        (k, out)
    }
}

fn net(m: &Mlp) -> oracle::Net<'_> {
    oracle::Net {
        w1: m.w1.data(),
        b1: m.b1.data(),
        w2: m.w2.data(),
        b2: m.b2.data(),
    }
}

fn stc_view(s: &StcParams) -> oracle::Stc<'_> {
    oracle::Stc {
        spatial: s.spatial.data(),
        temporal: net(&s.temporal),
        channel: net(&s.channel),
    }
}

fn proj_view(p: &AttentionProj) -> oracle::Proj<'_> {
    oracle::Proj {
        q: p.q.data(),
        k: p.k.data(),
        v: p.v.data(),
        out: p.out.data(),
    }
}

struct Worst(f64);

impl Worst {
    fn real(&mut self, what: &str, got: &[f64], want: &[f64]) -> Result<(), String> {
        let d = got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        self.0 = self.0.max(d);
        ensure(got.len() == want.len() && d <= 1e-12, || {
            format!("{what}: deviation {d:.3e}")
        })
    }

    fn complex(&mut self, what: &str, got: &[Complex64], want: &[Complex64]) -> Result<(), String> {
        let d = got.iter().zip(want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        self.0 = self.0.max(d);
        ensure(got.len() == want.len() && d <= 1e-12, || {
            format!("{what}: deviation {d:.3e}")
        })
    }
}

fn composition_oracle() -> Check {
    use oracle::*;
    let mut worst = Worst(0.0);
    let taus = [1.0, 0.8, 0.5, 0.1];
    let ladder = ThresholdLadder::new(taus).unwrap();
    let mut k_seen = HashSet::new();
    for trial in 0..6 {
        let mut rng = SplitMix64::new(700 + trial);
        let v = random(vec![1, C, N, N], &mut rng, 1.0);
        let a = random(vec![1, C, N, N], &mut rng, 1.0);
        let wf = |p: &mut FdedParams, rng: &mut SplitMix64| {
            p.ladder = ladder;
            p.band_weights = [
                0.5 + rng.next_f64(),
                0.5 + rng.next_f64(),
                0.5 + rng.next_f64(),
                0.5 + rng.next_f64(),
            ];
        };
        let mut pv = random_fded(C, 1, &mut rng);
        wf(&mut pv, &mut rng);
        let mut pa = random_fded(C, 1, &mut rng);
        wf(&mut pa, &mut rng);

        let mut fded_out = Vec::new();
        for (x, p, m) in [(&v, &pv, Modality::Visual), (&a, &pa, Modality::Audio)] {
            let tag = format!("trial {trial} {m:?}");
            let xm = map(x.data());
            let pre = mix(&dwc(&xm, p.dwc.data()), p.group.data());
            let spec = dft(&pre);
            let bands = split(&spec, taus);
            let high = match m {
                Modality::Visual => enhance_visual(&bands[0], p.conv3d.data(), taus),
                Modality::Audio => enhance_audio(&bands[0], &net(&p.ca)),
            };
            let feat = recompose([&high, &bands[1], &bands[2], &bands[3]], p.band_weights);

            let (lib_pre, lib_spec) = preprocess(x, p).map_err(|e| e.to_string())?;
            worst.real(&format!("{tag} preprocess"), lib_pre.data(), &flat(&pre))?;
            worst.complex(&format!("{tag} fft2"), lib_spec.data(), &flat_c(&spec))?;
            let lib_bands = residual_decompose(&lib_spec, &ladder).map_err(|e| e.to_string())?;
            for (b, name) in ["high", "mid", "low", "residual"].iter().enumerate() {
                worst.complex(
                    &format!("{tag} {name} band"),
                    lib_bands.bands()[b].data(),
                    &flat_c(&bands[b]),
                )?;
            }
            let lib_high = match m {
                Modality::Visual => enhance_high_visual(&lib_bands.high, p),
                Modality::Audio => enhance_high_audio(&lib_bands.high, p),
            }
            .map_err(|e| e.to_string())?;
            worst.complex(&format!("{tag} enhanced high"), lib_high.data(), &flat_c(&high))?;
            let lib_rec = fded::recompose(
                [&lib_high, &lib_bands.mid, &lib_bands.low, &lib_bands.residual],
                p.band_weights,
            )
            .map_err(|e| e.to_string())?;
            worst.real(&format!("{tag} recompose"), lib_rec.data(), &flat(&feat))?;
            let full = fded_forward(x, m, p).map_err(|e| e.to_string())?;
            worst.real(&format!("{tag} fded_forward"), full.features.data(), &flat(&feat))?;
            fded_out.push((full.features, feat));
        }

        let (fv, fv_o) = &fded_out[0];
        let (fa, fa_o) = &fded_out[1];
        let experts: Vec<ExpertParams> = (0..2).map(|_| random_expert(&mut rng, C)).collect();
        let router = random_router(&mut rng, C, 2, 1.0 + 3.0 * trial as f64);

        let wv = route(fa_o, &stc_view(&router.stc_a), &net(&router.mlp_a));
        let wa = route(fv_o, &stc_view(&router.stc_v), &net(&router.mlp_v));
        let lib_wv = route_weights(fa, &router, RouteSide::ForVisual).map_err(|e| e.to_string())?;
        let lib_wa = route_weights(fv, &router, RouteSide::ForAudio).map_err(|e| e.to_string())?;
        worst.real(&format!("trial {trial} visual routing"), lib_wv.data(), &wv)?;
        worst.real(&format!("trial {trial} audio routing"), lib_wa.data(), &wa)?;

        let out = scmc_forward(fv, fa, &experts, &router, ScmcOptions::default()).map_err(|e| e.to_string())?;
        for (w, lib, target, source, dir, got) in [
            (&wv, &out.routing_v, fv_o, fa_o, Direction::AudioToVisual, &out.visual),
            (&wa, &out.routing_a, fa_o, fv_o, Direction::VisualToAudio, &out.audio),
        ] {
            let tag = format!("trial {trial} {dir:?}");
            let (k, sparse) = select(w);
            k_seen.insert(k);
            ensure(lib.k_eff[0] == k, || {
                format!("{tag}: k_eff {} vs oracle {k}", lib.k_eff[0])
            })?;
            worst.real(&format!("{tag} sparse weights"), lib.sparse_row(0), &sparse)?;
            worst.real(&format!("{tag} sparsify"), &sparsify(lib.dense_row(0), k), &sparse)?;
            let mut mixed = [[[0.0; N]; N]; C];
            for (e, ex) in experts.iter().enumerate() {
                let proj = if dir == Direction::AudioToVisual {
                    &ex.a2v
                } else {
                    &ex.v2a
                };
                let tq = stc(target, &stc_view(&ex.stc_q));
                let sk = stc(source, &stc_view(&ex.stc_k));
                let sv = stc(source, &stc_view(&ex.stc_v));
                let fe = cross_attention(target, &tq, &sk, &sv, &proj_view(proj));
                let (lt, ls) = if dir == Direction::AudioToVisual {
                    (fv, fa)
                } else {
                    (fa, fv)
                };
                let lib_q = favs_core::scmc::stc_enhance(lt, &ex.stc_q).map_err(|e| e.to_string())?;
                worst.real(&format!("{tag} expert {e} stc"), lib_q.data(), &flat(&tq))?;
                let lib_fe = bca(lt, ls, ex, dir).map_err(|e| e.to_string())?;
                worst.real(&format!("{tag} expert {e} attention"), lib_fe.data(), &flat(&fe))?;
                for c in 0..C {
                    for y in 0..N {
                        for x in 0..N {
                            mixed[c][y][x] += sparse[e] * fe[c][y][x];
                        }
                    }
                }
            }
            worst.real(&format!("{tag} scmc output"), got.data(), &flat(&mixed))?;
        }
    }
    let mut ks: Vec<_> = k_seen.into_iter().collect();
    ks.sort_unstable();
    Ok(format!(
        "6 toys, every stage within {:.2e}; k_eff values exercised {ks:?}",
        worst.0
    ))
}

// 8 and 9 drive the binary.

fn favs(args: &[&str], threads: Option<&str>) -> Result<String, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_favs"));
    cmd.args(args).env_remove("FAVS_THREADS");
    if let Some(t) = threads {
        cmd.env("FAVS_THREADS", t);
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "favs {args:?}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, texture: &str) -> Result<PathBuf, String> {
    let path = dir.join(name);
    favs(
        &[
            "gen-fixture",
            "--seed",
            "42",
            "--frames",
            "2",
            "--size",
            "64",
            "--texture",
            texture,
            "--out",
            s(&path),
        ],
        None,
    )?;
    Ok(path)
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let fx = gen(d, "fx.ften", "checkerboard")?;
    let cfg = d.join("model.cfg");
    fs::write(
        &cfg,
        "stages=3\nchannels=32\nexperts=4\nqueries=8\nheight=64\nwidth=64\nseed=42\n",
    )
    .map_err(|e| e.to_string())?;
    let params = d.join("params.ften");
    favs(&["init-params", "--config", s(&cfg), "--out", s(&params)], None)?;

    let mut runs = Vec::new();
    for (i, threads) in [None, Some("1"), Some("4"), None].into_iter().enumerate() {
        let out = d.join(format!("run{i}"));
        let stdout = favs(
            &[
                "run",
                "--config",
                s(&cfg),
                "--params",
                s(&params),
                "--fixture",
                s(&fx),
                "--out",
                s(&out),
            ],
            threads,
        )?;
        runs.push((out, stdout));
    }
    let mut names: Vec<String> = fs::read_dir(&runs[0].0)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    ensure(names.len() == 7, || format!("expected 7 artifacts, found {names:?}"))?;
    for (out, _) in &runs[1..] {
        for n in &names {
            let same = fs::read(runs[0].0.join(n)).ok() == fs::read(out.join(n)).ok();
            ensure(same, || format!("{n} differs between runs"))?;
        }
    }
    for (i, side) in [(1, 16), (2, 8), (3, 4)] {
        let want = format!("stage {i}: visual [2, 32, {side}, {side}]");
        ensure(runs[0].1.contains(&want), || {
            format!("missing {want:?} in {:?}", runs[0].1)
        })?;
    }
    let pred = TensorFile::read(runs[0].0.join("prediction.ften")).map_err(|e| e.to_string())?;
    let logits = pred.real("mask_logits").map_err(|e| e.to_string())?;
    ensure(logits.shape() == [2, 8, 64, 64], || {
        format!("mask_logits {:?}", logits.shape())
    })?;
    Ok(format!(
        "{} artifacts byte-identical over 4 runs (threads default/1/4); stages 16²/8²/4²",
        names.len()
    ))
}

fn density_ratio(dir: &Path, fx: &Path, name: &str) -> Result<f64, String> {
    let out = dir.join(name);
    let stdout = favs(&["decompose", "--input", s(fx), "--out-dir", s(&out)], None)?;
    ensure(stdout.contains("partition check: exact"), || {
        "partition check failed".into()
    })?;
    let mut rd = csv::Reader::from_path(out.join("density.csv")).map_err(|e| e.to_string())?;
    let row = rd
        .records()
        .next()
        .ok_or("empty density.csv")?
        .map_err(|e| e.to_string())?;
    row[4].parse().map_err(|e| format!("{e}"))
}

fn separability() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cb = gen(dir.path(), "cb.ften", "checkerboard")?;
    let sm = gen(dir.path(), "sm.ften", "smooth")?;
    let rc = density_ratio(dir.path(), &cb, "dcb")?;
    let rs = density_ratio(dir.path(), &sm, "dsm")?;
    ensure(rc > 2.0, || format!("checkerboard ratio {rc:.3} is not above 2"))?;
    ensure(rs < 1.2, || format!("smooth ratio {rs:.3} is not below 1.2"))?;
    Ok(format!("checkerboard ratio {rc:.1}, smooth ratio {rs:.3}"))
}

// 10. Metrics

fn brute(pred: &[u8], gt: &[u8], frames: usize) -> (f64, f64) {
    let per = pred.len() / frames;
    let (mut j, mut f) = (0.0, 0.0);
    for t in 0..frames {
        let set = |m: &[u8]| -> HashSet<usize> { (0..per).filter(|&i| m[t * per + i] == 1).collect() };
        let (p, g) = (set(pred), set(gt));
        let inter = p.intersection(&g).count() as f64;
        let union = p.union(&g).count() as f64;
        j += if union == 0.0 { 1.0 } else { inter / union };
        f += if p.is_empty() && g.is_empty() {
            1.0
        } else {
            let prec = if p.is_empty() { 0.0 } else { inter / p.len() as f64 };
            let rec = if g.is_empty() { 0.0 } else { inter / g.len() as f64 };
            if prec + rec == 0.0 {
                0.0
            } else {
                1.3 * prec * rec / (0.3 * prec + rec)
            }
        };
    }
    (j / frames as f64, f / frames as f64)
}

fn mask(frames: usize, h: usize, w: usize, bits: &[u8]) -> RealTensor {
    RealTensor::new(vec![frames, h, w], bits.iter().map(|&b| b as f64).collect()).unwrap()
}

fn metrics() -> Check {
    let m = |p: &[u8], g: &[u8]| {
        let (p, g) = (mask(1, 2, 4, p), mask(1, 2, 4, g));
        (metric_jaccard(&p, &g).unwrap(), metric_fscore(&p, &g).unwrap())
    };
    let gt = [1, 1, 1, 1, 0, 0, 0, 0];
    let cases = [
        ("identical", m(&gt, &gt), (1.0, 1.0)),
        ("disjoint", m(&[0, 0, 0, 0, 1, 1, 0, 0], &gt), (0.0, 0.0)),
        (
            "half of gt",
            m(&[1, 1, 0, 0, 0, 0, 0, 0], &gt),
            (0.5, 1.3 * 0.5 / (0.3 + 0.5)),
        ),
        ("empty prediction", m(&[0; 8], &gt), (0.0, 0.0)),
        (
            "P=0.5 R=1",
            m(&[1, 1, 1, 1, 1, 1, 1, 1], &gt),
            (0.5, 1.3 * 0.5 / (0.15 + 1.0)),
        ),
    ];
    for (name, got, want) in cases {
        ensure(
            (got.0 - want.0).abs() <= 1e-12 && (got.1 - want.1).abs() <= 1e-12,
            || format!("{name}: got {got:?}, want {want:?}"),
        )?;
    }
    ensure((cases[4].2 .1 - 0.5652).abs() < 5e-5, || "F-score example".into())?;

    let mut rng = SplitMix64::new(10);
    for i in 0..200 {
        let (t, h, w) = (
            1 + i % 4,
            1 + (rng.next_u64() % 9) as usize,
            1 + (rng.next_u64() % 9) as usize,
        );
        let density = rng.next_f64();
        let bits =
            |rng: &mut SplitMix64| -> Vec<u8> { (0..t * h * w).map(|_| (rng.next_f64() < density) as u8).collect() };
        let (p, g) = (bits(&mut rng), bits(&mut rng));
        let (bj, bf) = brute(&p, &g, t);
        let (pt, gt) = (mask(t, h, w, &p), mask(t, h, w, &g));
        let (j, f) = (metric_jaccard(&pt, &gt).unwrap(), metric_fscore(&pt, &gt).unwrap());
        ensure((j - bj).abs() <= 1e-12 && (f - bf).abs() <= 1e-12, || {
            format!("random case {i}: ({j}, {f}) vs brute force ({bj}, {bf})")
        })?;
        ensure((metric_jaccard(&gt, &pt).unwrap() - j).abs() <= 1e-12, || {
            "jaccard is not symmetric".into()
        })?;
    }
    Ok("5 examples and 200 randomized cross-checks exact to 1e-12".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("FFT oracle", fft_oracle),
        ("band partition exactness", band_partition),
        ("FDED identity closure", identity_closure),
        ("high-band isolation", high_band_isolation),
        ("routing simplex and dynamic-k", routing_simplex),
        ("dense equivalence", dense_equivalence),
        ("brute-force composition oracle", composition_oracle),
        ("end-to-end determinism and shape contract", end_to_end),
        ("fixture spectral separability", separability),
        ("metric correctness", metrics),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail} ({secs:.2}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
