//! Counter-based random streams and the driving noises built from them.
//!
//! Every draw is a pure function of `(master_seed, stream_id, counter)`:
//! a Philox4x32-10 block cipher keyed by the master seed encrypts the counter
//! `(counter, stream_id)`. One stream per trajectory makes every ensemble
//! independent of scheduling and worker count.

/// Stream channel tags, kept in the top bits of a stream id.
pub mod channel {
    /// Brownian or Lévy driving noise of a trajectory.
    pub const DRIVE: u64 = 0;
    /// Auxiliary process noise.
    pub const AUX: u64 = 1;
    /// Bootstrap resampling.
    pub const BOOTSTRAP: u64 = 2;
    /// Free for tests and one-off utilities.
    pub const MISC: u64 = 3;

    pub const fn stream(channel: u64, index: u64) -> u64 {
        (channel << 56) | (index & ((1 << 56) - 1))
    }
}

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
#[inline]
pub fn philox4x32_10(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = ctr;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// A deterministic random stream.
///
/// `counter` indexes 64-bit outputs; each Philox block yields two of them.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    counter: u64,
    cached_block: u64,
    cache: Option<[u64; 2]>,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        RngStream {
            master_seed,
            stream_id,
            counter: 0,
            cached_block: u64::MAX,
            cache: None,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Repositions the stream; output `i` depends only on `i`.
    pub fn seek(&mut self, counter: u64) {
        self.counter = counter;
    }

    #[inline]
    fn block(&self, block: u64) -> [u64; 2] {
        let key = [self.master_seed as u32, (self.master_seed >> 32) as u32];
        let ctr = [
            block as u32,
            (block >> 32) as u32,
            self.stream_id as u32,
            (self.stream_id >> 32) as u32,
        ];
        let o = philox4x32_10(ctr, key);
        [
            (o[0] as u64) | ((o[1] as u64) << 32),
            (o[2] as u64) | ((o[3] as u64) << 32),
        ]
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let b = self.counter >> 1;
        let words = match self.cache {
            Some(w) if self.cached_block == b => w,
            _ => {
                let w = self.block(b);
                self.cache = Some(w);
                self.cached_block = b;
                w
            }
        };
        let out = words[(self.counter & 1) as usize];
        self.counter = self.counter.wrapping_add(1);
        out
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (`n > 0`).
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        // Lemire's multiply-shift; bias < n / 2^64 is irrelevant here.
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal by inversion of one uniform.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        inverse_normal_cdf(self.uniform_open())
    }

    /// Fills `out` with standard normals; same values as repeated [`Self::normal`].
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        let mut i = 0;
        if self.counter & 1 == 1 && !out.is_empty() {
            out[0] = self.normal();
            i = 1;
        }
        let scale = 1.0 / (1u64 << 53) as f64;
        let to_open = |w: u64| ((w >> 11) as f64 + 0.5) * scale;
        while i + 1 < out.len() {
            let w = self.block(self.counter >> 1);
            out[i] = inverse_normal_cdf(to_open(w[0]));
            out[i + 1] = inverse_normal_cdf(to_open(w[1]));
            self.counter = self.counter.wrapping_add(2);
            i += 2;
        }
        if i < out.len() {
            out[i] = self.normal();
        }
    }

    /// Exponential with the given rate, by inversion.
    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -self.uniform_open().ln() / rate
    }

    /// Poisson count by sequential inversion of one uniform.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let u = self.uniform();
        poisson_quantile(mean, u)
    }
}

/// Smallest `k` with `P[N ≤ k] > u` for `N ~ Poisson(mean)`.
pub fn poisson_quantile(mean: f64, u: f64) -> u64 {
    if mean > 500.0 {
        // Sequential search would underflow e^{-mean}; start at the mode in log space.
        let mode = mean.floor();
        let log_pm = mode * mean.ln() - mean - ln_factorial(mode as u64);
        let pm = log_pm.exp();
        // cumulative below the mode via downward recursion
        let mut below = 0.0;
        let mut p = pm;
        let mut k = mode;
        while k > 0.0 && p > 1e-300 {
            p *= k / mean;
            below += p;
            k -= 1.0;
        }
        let mut cdf = below + pm;
        if u < below {
            // walk down
            let mut c = below;
            let mut p = pm;
            let mut k = mode;
            while k > 0.0 {
                p *= k / mean;
                c -= p;
                k -= 1.0;
                if u >= c {
                    return k as u64;
                }
            }
            return 0;
        }
        let mut k = mode;
        let mut p = pm;
        while u >= cdf {
            k += 1.0;
            p *= mean / k;
            cdf += p;
            if p < 1e-300 {
                break;
            }
        }
        return k as u64;
    }
    let mut k = 0u64;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u >= cdf {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        if p < 1e-300 && k as f64 > mean {
            break;
        }
    }
    k
}

fn ln_factorial(n: u64) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Inverse of the standard normal CDF.
///
/// Acklam's rational approximation; relative error below 1.2e-9.
#[inline]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

pub fn make_stream(master_seed: u64, stream_id: u64) -> RngStream {
    RngStream::new(master_seed, stream_id)
}

/// I.i.d. `N(0, dt)` increments.
pub fn brownian_increments(stream: &mut RngStream, n: usize, dt: f64) -> Vec<f64> {
    let s = dt.max(0.0).sqrt();
    (0..n).map(|_| s * stream.normal()).collect()
}

/// Space–time white noise masses on an `n_time × n_space` grid.
#[derive(Clone, Debug)]
pub struct WhiteNoiseGrid {
    pub dt: f64,
    pub dx: f64,
    pub n_time: usize,
    pub n_space: usize,
    /// Row-major, row `k` is time step `k`.
    pub cells: Vec<f64>,
}

impl WhiteNoiseGrid {
    pub fn cell(&self, k: usize, j: usize) -> f64 {
        self.cells[k * self.n_space + j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.cells[k * self.n_space..(k + 1) * self.n_space]
    }
}

/// Cells i.i.d. `N(0, dt·dx)`.
pub fn whitenoise_field(stream: &mut RngStream, n_time: usize, n_space: usize, dt: f64, dx: f64) -> WhiteNoiseGrid {
    let s = (dt * dx).sqrt();
    let cells = (0..n_time * n_space).map(|_| s * stream.normal()).collect();
    WhiteNoiseGrid {
        dt,
        dx,
        n_time,
        n_space,
        cells,
    }
}

/// Arrival times of a rate-`rate` Poisson process on `[0, horizon]`.
pub fn poisson_times(stream: &mut RngStream, rate: f64, horizon: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if rate <= 0.0 {
        return out;
    }
    let mut t = 0.0;
    loop {
        t += stream.exponential(rate);
        if t > horizon {
            return out;
        }
        out.push(t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{correlation, mean, variance};

    #[test]
    fn bulk_normals_match_sequential() {
        for (skip, len) in [(0, 7), (1, 8), (3, 1), (2, 0)] {
            let mut a = RngStream::new(5, 9);
            let mut b = a.clone();
            for _ in 0..skip {
                a.normal();
                b.normal();
            }
            let mut bulk = vec![0.0; len];
            a.fill_normal(&mut bulk);
            let seq: Vec<f64> = (0..len).map(|_| b.normal()).collect();
            assert_eq!(bulk, seq);
            assert_eq!(a.normal(), b.normal());
        }
    }

    #[test]
    fn philox_known_answer() {
        // Random123 kat_vectors: philox4x32_10, zero and all-ones inputs.
        assert_eq!(
            philox4x32_10([0, 0, 0, 0], [0, 0]),
            [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]
        );
        assert_eq!(
            philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]
        );
        assert_eq!(
            philox4x32_10([0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344], [0xa409_3822, 0x299f_31d0]),
            [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]
        );
    }

    #[test]
    fn determinism() {
        let a: Vec<u64> = {
            let mut s = make_stream(42, 7);
            (0..1000).map(|_| s.next_u64()).collect()
        };
        let mut s = make_stream(42, 7);
        let b: Vec<u64> = (0..1000).map(|_| s.next_u64()).collect();
        assert_eq!(a, b);
        // seeking reproduces the same position
        let mut s = make_stream(42, 7);
        s.seek(501);
        assert_eq!(s.next_u64(), a[501]);
    }

    #[test]
    fn distinct_streams_uncorrelated() {
        let mut s1 = make_stream(9, 1);
        let mut s2 = make_stream(9, 2);
        let a: Vec<f64> = (0..100_000).map(|_| s1.uniform()).collect();
        let b: Vec<f64> = (0..100_000).map(|_| s2.uniform()).collect();
        assert!(correlation(&a, &b).abs() < 0.02);
    }

    #[test]
    fn many_stream_pairs_uncorrelated() {
        let mut pick = make_stream(123, channel::stream(channel::MISC, 0));
        for _ in 0..100 {
            let i = pick.next_u64() >> 8;
            let j = pick.next_u64() >> 8;
            if i == j {
                continue;
            }
            let mut s1 = make_stream(5, i);
            let mut s2 = make_stream(5, j);
            let a: Vec<f64> = (0..20_000).map(|_| s1.normal()).collect();
            let b: Vec<f64> = (0..20_000).map(|_| s2.normal()).collect();
            // 5 sigma band at n = 2e4
            assert!(correlation(&a, &b).abs() < 5.0 / (20_000f64).sqrt());
        }
    }

    #[test]
    fn uniform_mean() {
        let mut s = make_stream(3, 0);
        let v: Vec<f64> = (0..1_000_000).map(|_| s.uniform()).collect();
        let m = mean(&v);
        assert!((0.498..=0.502).contains(&m), "{m}");
        assert!(v.iter().all(|&u| (0.0..1.0).contains(&u)));
    }

    #[test]
    fn inverse_normal_accuracy() {
        // Compare against the statrs quantile.
        use statrs::distribution::{ContinuousCDF, Normal};
        let n = Normal::new(0.0, 1.0).unwrap();
        for &p in &[1e-12, 1e-6, 0.01, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0 - 1e-9] {
            let got = inverse_normal_cdf(p);
            let want = n.inverse_cdf(p);
            assert!((got - want).abs() <= 1e-8 * want.abs().max(1.0), "p={p}: {got} vs {want}");
        }
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
    }

    #[test]
    fn brownian_variance() {
        let mut s = make_stream(17, 0);
        let v = brownian_increments(&mut s, 1_000_000, 0.01);
        let var = variance(&v);
        assert!((0.0099..=0.0101).contains(&var), "{var}");
    }

    #[test]
    fn zero_dt_increment() {
        let mut s = make_stream(17, 0);
        assert_eq!(brownian_increments(&mut s, 1, 0.0), vec![0.0]);
    }

    #[test]
    fn brownian_sum_is_standard_normal_ks() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut sums: Vec<f64> = (0..10_000u64)
            .map(|r| {
                let mut s = make_stream(99, r);
                brownian_increments(&mut s, 100, 0.01).iter().sum()
            })
            .collect();
        sums.sort_by(f64::total_cmp);
        let m = sums.len() as f64;
        let d = sums
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = n.cdf(x);
                (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic
        assert!(d < 1.628 / m.sqrt(), "KS D = {d}");
    }

    #[test]
    fn whitenoise_variance_and_blocks() {
        let mut s = make_stream(4, 0);
        let g = whitenoise_field(&mut s, 1000, 1000, 0.01, 0.01);
        let var = variance(&g.cells);
        assert!((0.99e-4..=1.01e-4).contains(&var), "{var}");
        // 2x2 block sums have variance 4 dt dx
        let blocks: Vec<f64> = (0..500)
            .flat_map(|bk| (0..500).map(move |bj| (bk, bj)))
            .map(|(bk, bj)| {
                g.cell(2 * bk, 2 * bj) + g.cell(2 * bk + 1, 2 * bj) + g.cell(2 * bk, 2 * bj + 1) + g.cell(2 * bk + 1, 2 * bj + 1)
            })
            .collect();
        let bv = variance(&blocks);
        assert!((bv / 4e-4 - 1.0).abs() < 0.02, "{bv}");
    }

    #[test]
    fn whitenoise_grids_independent() {
        let mut s1 = make_stream(4, 10);
        let mut s2 = make_stream(4, 11);
        let a = whitenoise_field(&mut s1, 100, 1000, 0.01, 0.01);
        let b = whitenoise_field(&mut s2, 100, 1000, 0.01, 0.01);
        assert!(correlation(&a.cells, &b.cells).abs() < 0.02);
    }

    #[test]
    fn poisson_times_basic() {
        let mut s = make_stream(1, 0);
        assert!(poisson_times(&mut s, 0.0, 1.0).is_empty());
        let t = poisson_times(&mut s, 50.0, 2.0);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert!(t.iter().all(|&x| x > 0.0 && x <= 2.0));
    }

    fn poisson_counts() -> Vec<usize> {
        (0..100_000u64)
            .map(|r| {
                let mut s = make_stream(2024, r);
                poisson_times(&mut s, 5.0, 1.0).len()
            })
            .collect()
    }

    #[test]
    fn poisson_mean_and_goodness_of_fit() {
        use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};
        let counts = poisson_counts();
        let m = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        assert!((4.93..=5.07).contains(&m), "{m}");
        // chi-square over bins 0..=12 with the upper tail pooled
        let pois = Poisson::new(5.0).unwrap();
        let nb = 13;
        let mut obs = vec![0f64; nb];
        for &c in &counts {
            obs[c.min(nb - 1)] += 1.0;
        }
        let n = counts.len() as f64;
        let mut probs: Vec<f64> = (0..nb - 1).map(|k| pois.pmf(k as u64)).collect();
        probs.push(1.0 - probs.iter().sum::<f64>());
        let chi2: f64 = obs.iter().zip(&probs).map(|(o, p)| (o - n * p).powi(2) / (n * p)).sum();
        let pval = 1.0 - ChiSquared::new((nb - 1) as f64).unwrap().cdf(chi2);
        assert!(pval > 0.01, "chi2 = {chi2}, p = {pval}");
    }

    #[test]
    fn poisson_inversion_matches_mean() {
        for &mu in &[0.002, 0.7, 3.0, 40.0, 900.0] {
            let mut s = make_stream(8, 0);
            let n = 200_000;
            let v: Vec<f64> = (0..n).map(|_| s.poisson(mu) as f64).collect();
            let m = mean(&v);
            assert!((m - mu).abs() < 5.0 * (mu / n as f64).sqrt(), "mu={mu}: {m}");
            let var = variance(&v);
            assert!((var / mu - 1.0).abs() < 0.05, "mu={mu}: var {var}");
        }
    }
}
