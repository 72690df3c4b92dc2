//! Dense vs zero-skipping convolution timing.
//!
//! Both paths see the same masked weights; the dense path multiplies the
//! zeros, the sparse path never visits them. Timing runs on a private
//! one-thread pool so the comparison is not distorted by scheduling.

use std::fmt;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv2d_dense, conv2d_sparse, ConvGeometry, MacCounter};
use crate::error::{Error, Result};
use crate::sc_kernels::{init_std, make_mask_pair, normal_fill};
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchConfig {
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            k: 3,
            c_in: 64,
            c_out: 64,
            h: 32,
            w: 32,
            repeats: 9,
            warmup: 2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PathTiming {
    pub median: Duration,
    pub samples: Vec<Duration>,
    pub measured_macs: u64,
    pub analytic_macs: u64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub dense: PathTiming,
    pub sparse: PathTiming,
    pub mask_nnz: usize,
    pub os: &'static str,
    pub arch: &'static str,
    pub logical_cpus: usize,
}

impl BenchReport {
    /// Sparse time over dense time.
    pub fn time_ratio(&self) -> f64 {
        self.sparse.median.as_secs_f64() / self.dense.median.as_secs_f64()
    }

    pub fn speedup(&self) -> f64 {
        1.0 / self.time_ratio()
    }

    pub fn macs_match(&self) -> bool {
        self.dense.measured_macs == self.dense.analytic_macs
            && self.sparse.measured_macs == self.sparse.analytic_macs
    }
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Time two closures over `repeats` rounds after `warmup` untimed rounds,
/// alternating which runs first so drifting machine load hits both alike.
fn time_interleaved(
    repeats: usize,
    warmup: usize,
    mut a: impl FnMut() -> Result<()>,
    mut b: impl FnMut() -> Result<()>,
) -> Result<(Vec<Duration>, Vec<Duration>)> {
    for _ in 0..warmup {
        a()?;
        b()?;
    }
    let (mut ta, mut tb) = (Vec::with_capacity(repeats), Vec::with_capacity(repeats));
    for i in 0..repeats {
        for run_a in [i % 2 == 0, i % 2 == 1] {
            let t = Instant::now();
            if run_a {
                a()?;
                ta.push(t.elapsed());
            } else {
                b()?;
                tb.push(t.elapsed());
            }
        }
    }
    Ok((ta, tb))
}

/// Time one single-sample convolution with the even mask at `k`, padding `k/2`.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repeats == 0 || cfg.c_in == 0 || cfg.c_out == 0 {
        return Err(Error::InvalidConfig(
            "repeats and channel counts must be positive".into(),
        ));
    }
    let mask = make_mask_pair(cfg.k)?.even;
    let geom = ConvGeometry::new(cfg.k, 1, cfg.k / 2);
    let (ho, wo) = geom.output_hw(cfg.h, cfg.w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x: Tensor4<f32> = normal_fill(Shape4::new(1, cfg.c_in, cfg.h, cfg.w), 1.0, None, &mut rng)?;
    let std = init_std(cfg.c_in, mask.nnz());
    let w: Tensor4<f32> = normal_fill(
        Shape4::new(cfg.c_out, cfg.c_in, cfg.k, cfg.k),
        std,
        Some(&mask),
        &mut rng,
    )?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let per_tap = (cfg.c_out * cfg.c_in * ho * wo) as u64;
    let passes = (cfg.warmup + cfg.repeats) as u64;

    pool.install(|| {
        let (cd, cs) = (MacCounter::new(), MacCounter::new());
        let (ds, ss) = time_interleaved(
            cfg.repeats,
            cfg.warmup,
            || conv2d_dense(&x, &w, &geom, &cd).map(drop),
            || conv2d_sparse(&x, &w, &mask, &geom, &cs).map(drop),
        )?;
        let dense = PathTiming {
            median: median(ds.clone()),
            samples: ds,
            measured_macs: cd.get() / passes,
            analytic_macs: per_tap * (cfg.k * cfg.k) as u64,
        };
        let sparse = PathTiming {
            median: median(ss.clone()),
            samples: ss,
            measured_macs: cs.get() / passes,
            analytic_macs: per_tap * mask.nnz() as u64,
        };
        Ok(BenchReport {
            config: cfg.clone(),
            dense,
            sparse,
            mask_nnz: mask.nnz(),
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        })
    })
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "conv k={} c_in={} c_out={} {}x{} (pad {}, stride 1), {} interleaved repeats after {} warmup, 1 thread",
            c.k, c.c_in, c.c_out, c.h, c.w, c.k / 2, c.repeats, c.warmup
        )?;
        writeln!(
            f,
            "machine: {} {} ({} logical cpus)",
            self.os, self.arch, self.logical_cpus
        )?;
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        writeln!(
            f,
            "dense : median {:9.3} ms  MACs {} (analytic {})",
            ms(self.dense.median),
            self.dense.measured_macs,
            self.dense.analytic_macs
        )?;
        writeln!(
            f,
            "sparse: median {:9.3} ms  MACs {} (analytic {})",
            ms(self.sparse.median),
            self.sparse.measured_macs,
            self.sparse.analytic_macs
        )?;
        writeln!(
            f,
            "MAC ratio {}/{}  time ratio {:.3}  speedup {:.2}x  MAC counts {}",
            self.mask_nnz,
            c.k * c.k,
            self.time_ratio(),
            self.speedup(),
            if self.macs_match() {
                "match"
            } else {
                "MISMATCH"
            }
        )
    }
}
