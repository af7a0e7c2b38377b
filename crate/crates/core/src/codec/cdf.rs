//! Quantized cumulative frequency tables for the rANS coder.

use crate::quantization::{discretized_gaussian_pmf, SIGMA_MIN};

/// Frequency precision: totals are `1 << PRECISION`.
pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;
/// Widest symbol range a table may cover.
pub const SYMBOL_MIN: i32 = -255;
pub const SYMBOL_MAX: i32 = 255;

/// Cumulative frequencies over `[s_min, s_max]` plus a trailing escape slot.
///
/// `cum` has one entry per slot plus one: `cum[0] = 0`, `cum[last] = 2^16`,
/// strictly increasing, so every slot (including escape) has frequency >= 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    pub s_min: i32,
    pub s_max: i32,
    pub cum: Vec<u32>,
}

impl CdfTable {
    pub fn num_symbols(&self) -> usize {
        (self.s_max - self.s_min + 1) as usize
    }

    /// Slot index of the escape symbol.
    pub fn escape_slot(&self) -> usize {
        self.num_symbols()
    }

    pub fn freq(&self, slot: usize) -> u32 {
        self.cum[slot + 1] - self.cum[slot]
    }

    /// Frequency of an in-range symbol, or `None` if it must be escaped.
    pub fn symbol_freq(&self, s: i32) -> Option<u32> {
        self.slot_of(s).map(|k| self.freq(k))
    }

    pub fn slot_of(&self, s: i32) -> Option<usize> {
        (self.s_min..=self.s_max).contains(&s).then(|| (s - self.s_min) as usize)
    }

    /// Slot whose interval contains `value` (`0 <= value < 2^16`).
    pub fn lookup(&self, value: u32) -> usize {
        self.cum.partition_point(|&c| c <= value) - 1
    }

    /// Builds a table from a pmf over `[SYMBOL_MIN, SYMBOL_MAX]`.
    ///
    /// The coded range is trimmed to the outermost symbols whose rounded
    /// frequency is at least one; everything outside goes to the escape slot.
    /// Frequencies are apportioned by largest remainder with a floor of one.
    pub fn from_pmf(pmf: impl Fn(i32) -> f64) -> Self {
        let probs: Vec<f64> = (SYMBOL_MIN..=SYMBOL_MAX).map(|n| pmf(n).max(0.0)).collect();
        let t = TOTAL as f64;
        let significant = |p: &f64| (p * t).round() >= 1.0;
        let (lo, hi) = match (probs.iter().position(significant), probs.iter().rposition(significant)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                // Nothing significant: keep only the most probable symbol.
                let best = (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
                (best, best)
            }
        };
        let mut p: Vec<f64> = probs[lo..=hi].to_vec();
        let inside: f64 = p.iter().sum();
        p.push((1.0 - inside).max(0.0));
        let freqs = apportion(&p, TOTAL);
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        cum.push(0);
        for f in &freqs {
            cum.push(cum.last().unwrap() + f);
        }
        Self { s_min: SYMBOL_MIN + lo as i32, s_max: SYMBOL_MIN + hi as i32, cum }
    }

    /// Table for the discretized Gaussian `N(mu, sigma^2)` (sigma clamped to the floor).
    pub fn gaussian(mu: f64, sigma: f64) -> Self {
        Self::from_pmf(|n| discretized_gaussian_pmf(n as f64, mu, sigma))
    }

    /// Checks the structural invariants; used by tests and after deserialization.
    pub fn is_valid(&self) -> bool {
        self.s_min <= self.s_max
            && self.cum.len() == self.num_symbols() + 2
            && self.cum[0] == 0
            && *self.cum.last().unwrap() == TOTAL
            && self.cum.windows(2).all(|w| w[0] < w[1])
    }
}

/// Integer frequencies summing to `total`, each at least 1, as close as
/// possible to `p * total` (largest-remainder rounding).
fn apportion(p: &[f64], total: u32) -> Vec<u32> {
    let sum: f64 = p.iter().sum();
    let scaled: Vec<f64> = p.iter().map(|v| v / sum * total as f64).collect();
    let mut f: Vec<u32> = scaled.iter().map(|v| (v.floor() as u32).max(1)).collect();
    let mut assigned: i64 = f.iter().map(|&v| v as i64).sum();
    // Order of preference for adding counts: largest fractional remainder first.
    let mut by_remainder: Vec<usize> = (0..p.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (scaled[a] - f[a] as f64, scaled[b] - f[b] as f64);
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut k = 0;
    while assigned < total as i64 {
        f[by_remainder[k % p.len()]] += 1;
        assigned += 1;
        k += 1;
    }
    // Removing counts: take from slots that overshoot their target the most.
    while assigned > total as i64 {
        let j = (0..p.len())
            .filter(|&i| f[i] > 1)
            .max_by(|&a, &b| (f[a] as f64 - scaled[a]).total_cmp(&(f[b] as f64 - scaled[b])).then(b.cmp(&a)))
            .expect("total too small for the number of slots");
        f[j] -= 1;
        assigned -= 1;
    }
    f
}

/// Log-spaced scales for which Gaussian tables are precomputed.
#[derive(Clone, Debug)]
pub struct ScaleTable {
    pub scales: Vec<f64>,
    pub tables: Vec<CdfTable>,
    log_min: f64,
    log_step: f64,
}

pub const SCALE_MAX: f64 = 64.0;
pub const SCALE_LEVELS: usize = 160;

impl ScaleTable {
    pub fn new() -> Self {
        let (log_min, log_max) = (SIGMA_MIN.ln(), SCALE_MAX.ln());
        let log_step = (log_max - log_min) / (SCALE_LEVELS - 1) as f64;
        let scales: Vec<f64> = (0..SCALE_LEVELS).map(|k| (log_min + k as f64 * log_step).exp()).collect();
        let tables = scales.iter().map(|&s| CdfTable::gaussian(0.0, s)).collect();
        Self { scales, tables, log_min, log_step }
    }

    /// Index of the table whose scale is nearest to `sigma` in log space.
    pub fn index(&self, sigma: f64) -> usize {
        let k = ((sigma.max(SIGMA_MIN).ln() - self.log_min) / self.log_step).round();
        (k.max(0.0) as usize).min(SCALE_LEVELS - 1)
    }

    pub fn table(&self, sigma: f64) -> &CdfTable {
        &self.tables[self.index(sigma)]
    }
}

impl Default for ScaleTable {
    fn default() -> Self {
        Self::new()
    }
}
