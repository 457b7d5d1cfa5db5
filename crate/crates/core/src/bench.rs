//! Single-threaded latency comparison of float and packed binary convolution.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binarize::{binary_conv_forward, pack_activation, pack_filters, ScaleDiag};
use crate::error::{Error, Result};
use crate::tensor::{conv2d_gemm, ConvGeometry, Tensor};

pub const MIN_REPS: usize = 30;

/// One layer geometry, written `COxCIxKxK/HxW` (stride 1, padding `K/2`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchCase {
    pub c_out: usize,
    pub c_in: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
}

impl BenchCase {
    pub fn geometry(&self) -> Result<ConvGeometry> {
        ConvGeometry::new([self.c_in, self.height, self.width], self.c_out, self.kernel, 1, self.kernel / 2)
    }
}

impl FromStr for BenchCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("bench", format!("cannot parse geometry {s:?} (expected COxCIxKxK/HxW)"));
        let (w, i) = s.split_once('/').ok_or_else(bad)?;
        let nums = |t: &str| -> Result<Vec<usize>> {
            t.split(['x', 'X'])
                .map(|v| v.trim().parse::<usize>().map_err(|_| bad()))
                .collect()
        };
        let (w, i) = (nums(w)?, nums(i)?);
        if w.len() != 4 || i.len() != 2 || w[2] != w[3] || w.iter().chain(&i).any(|&v| v == 0) {
            return Err(bad());
        }
        let case = Self {
            c_out: w[0],
            c_in: w[1],
            kernel: w[2],
            height: i[0],
            width: i[1],
        };
        case.geometry()?;
        Ok(case)
    }
}

impl fmt::Display for BenchCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}/{}x{}",
            self.c_out, self.c_in, self.kernel, self.kernel, self.height, self.width
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub case: BenchCase,
    pub reps: usize,
    /// im2col + SGEMM, seconds.
    pub float_s: f64,
    /// XNOR/popcount kernel on pre-packed operands, seconds.
    pub packed_s: f64,
    /// Same, including activation packing.
    pub packed_with_packing_s: f64,
    /// Bits per float weight over bits per binary weight.
    pub bit_ratio: f64,
    /// Float weight bytes over packed filter bytes (lane padding included).
    pub storage_ratio: f64,
}

impl BenchResult {
    pub fn speedup(&self) -> f64 {
        self.float_s / self.packed_s
    }

    pub fn speedup_with_packing(&self) -> f64 {
        self.float_s / self.packed_with_packing_s
    }
}

pub const BENCH_HEADER: &str =
    "geometry\treps\tfloat_ms\tpacked_ms\tpacked_incl_ms\tspeedup\tspeedup_incl\tbit_ratio\tstorage_ratio";

impl fmt::Display for BenchResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.2}\t{:.2}\t{}\t{:.2}",
            self.case,
            self.reps,
            self.float_s * 1e3,
            self.packed_s * 1e3,
            self.packed_with_packing_s * 1e3,
            self.speedup(),
            self.speedup_with_packing(),
            self.bit_ratio,
            self.storage_ratio
        )
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty(), "median of nothing");
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall time of `reps` calls after one warm-up call.
pub fn time_median(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    median(
        (0..reps)
            .map(|_| {
                let t = Instant::now();
                f();
                t.elapsed().as_secs_f64()
            })
            .collect(),
    )
}

pub fn run_case(case: BenchCase, reps: usize, seed: u64) -> Result<BenchResult> {
    let reps = reps.max(MIN_REPS);
    let g = case.geometry()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f32> = (0..g.in_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = Tensor::new(
        g.weight_shape().to_vec(),
        (0..g.c_out * g.patch_len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let scale = ScaleDiag::from_weights(&w);

    let mut col = vec![0f32; g.patch_len() * g.out_pixels()];
    let mut out = vec![0f32; g.out_len()];
    let float_s = time_median(reps, || {
        conv2d_gemm(black_box(&x), w.data(), &g, &mut col, &mut out);
        black_box(&out);
    });

    let filters = pack_filters(&w)?;
    let act = pack_activation(&x, g.c_in, g.height, g.width);
    let packed_s = time_median(reps, || {
        black_box(binary_conv_forward(black_box(&act), &filters, &scale, 1, g.padding).expect("geometry checked"));
    });
    let packed_with_packing_s = time_median(reps, || {
        let a = pack_activation(black_box(&x), g.c_in, g.height, g.width);
        black_box(binary_conv_forward(&a, &filters, &scale, 1, g.padding).expect("geometry checked"));
    });

    let float_bits = (w.len() * 32) as f64;
    let bit_ratio = float_bits / w.len() as f64;
    let storage_ratio = (w.len() * 4) as f64 / filters.storage_bytes() as f64;
    Ok(BenchResult {
        case,
        reps,
        float_s,
        packed_s,
        packed_with_packing_s,
        bit_ratio,
        storage_ratio,
    })
}
