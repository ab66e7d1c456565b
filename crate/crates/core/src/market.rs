//! Price paths, running averages, execution costs and the one-day state
//! recursion.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::error::{Error, Result};

/// How price trajectories are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    /// `S_{n+1} = S_n + σ√δt ε`.
    ArithmeticBrownian,
    /// `S_{n+1} = S_n exp(σ√δt ε − σ²δt/2)`.
    GeometricBrownian,
    /// Paths drawn (with replacement) from a user-supplied set.
    External(Arc<ExternalPaths>),
}

impl Dynamics {
    pub fn name(&self) -> &'static str {
        match self {
            Dynamics::ArithmeticBrownian => "arithmetic-brownian",
            Dynamics::GeometricBrownian => "geometric-brownian",
            Dynamics::External(_) => "external-file",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    /// Initial price (€).
    pub s0: f64,
    /// Volatility (€·day^{-1/2} for arithmetic dynamics).
    pub sigma: f64,
    /// Days to expiry `N`.
    pub days: usize,
    /// Day length in days.
    pub dt: f64,
    /// Market volume; `volume[n]` is `V_{n+1}`, the volume of day `n → n+1`.
    pub volume: Vec<f64>,
    /// Execution cost scale η (€·share⁻¹·day⁻¹).
    pub eta: f64,
    /// Exponent φ in `L(ρ) = η|ρ|^{1+φ}`.
    pub cost_exponent: f64,
    pub dynamics: Dynamics,
}

impl MarketParams {
    /// Rounded Total SA figures: S0 = 45 €, σ = 0.6 €·day^{-1/2}, 63 days,
    /// V = 4·10⁶ shares/day, η = 0.1, φ = 0.75.
    pub fn reference() -> Self {
        Self {
            s0: 45.0,
            sigma: 0.6,
            days: 63,
            dt: 1.0,
            volume: vec![4.0e6; 63],
            eta: 0.1,
            cost_exponent: 0.75,
            dynamics: Dynamics::ArithmeticBrownian,
        }
    }

    /// Same market with a constant volume over `days` days.
    pub fn with_days(mut self, days: usize) -> Self {
        let v = self.volume.first().copied().unwrap_or(4.0e6);
        self.days = days;
        self.volume = vec![v; days];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("market.{field}"), msg))
            }
        };
        check(self.s0 > 0.0 && self.s0.is_finite(), "s0", "must be positive and finite")?;
        check(self.sigma >= 0.0 && self.sigma.is_finite(), "sigma", "must be non-negative")?;
        check(self.days >= 2, "days", "must be at least 2")?;
        check(self.dt > 0.0 && self.dt.is_finite(), "dt", "must be positive")?;
        check(
            self.volume.len() == self.days,
            "volume",
            "schedule length must equal the number of days",
        )?;
        check(
            self.volume.iter().all(|v| *v > 0.0 && v.is_finite()),
            "volume",
            "every entry must be positive",
        )?;
        check(self.eta >= 0.0 && self.eta.is_finite(), "eta", "must be non-negative")?;
        check(
            self.cost_exponent > 0.0 && self.cost_exponent.is_finite(),
            "cost_exponent",
            "must be positive",
        )?;
        if let Dynamics::External(paths) = &self.dynamics {
            if paths.days() != self.days {
                return Err(Error::config(
                    "market.path_file",
                    format!("paths cover {} days, market has {}", paths.days(), self.days),
                ));
            }
        }
        Ok(())
    }

    /// `L(ρ) = η|ρ|^{1+φ}` in €·share⁻¹·day⁻¹ times shares·day⁻¹ of volume.
    #[inline]
    pub fn exec_cost(&self, rho: f64) -> f64 {
        self.eta * rho.abs().powf(1.0 + self.cost_exponent)
    }

    /// Cash charged for trading at rate `v` on day `n → n+1`.
    #[inline]
    pub fn trading_cost(&self, n: usize, v: f64) -> f64 {
        let vol = self.volume[n];
        self.exec_cost(v / vol) * vol * self.dt
    }
}

/// `ℓ(x) = C x²`, the cost of the residual block at settlement.
#[inline]
pub fn terminal_penalty(x: f64, c: f64) -> f64 {
    c * x * x
}

/// State on day `n`: price, running average, cash spent and inventory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketState {
    pub n: usize,
    pub s: f64,
    pub a: f64,
    pub x: f64,
    pub q: f64,
}

impl MarketState {
    /// Day 0: nothing bought, `A_0 := S_0`.
    pub fn initial(s0: f64) -> Self {
        Self {
            n: 0,
            s: s0,
            a: s0,
            x: 0.0,
            q: 0.0,
        }
    }
}

/// Advances the state by one day of trading at rate `v`, the next price
/// being `s_next`.
pub fn step_state(state: &MarketState, v: f64, s_next: f64, mp: &MarketParams) -> Result<MarketState> {
    let n = state.n;
    if n >= mp.days {
        return Err(Error::Contract(format!("cannot step past expiry (day {n} of {})", mp.days)));
    }
    let q = state.q + v * mp.dt;
    let x = state.x + v * s_next * mp.dt + mp.trading_cost(n, v);
    let a = state.a + (s_next - state.a) / (n + 1) as f64;
    Ok(MarketState {
        n: n + 1,
        s: s_next,
        a,
        x,
        q,
    })
}

/// `A_n` for `n = 0..=N` with `A_0 := S_0` and `A_n = (1/n) Σ_{k=1..n} S_k`.
pub fn running_averages(prices: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(prices.len());
    let mut a = prices[0];
    out.push(a);
    for (n, &s) in prices.iter().enumerate().skip(1) {
        a += (s - a) / n as f64;
        out.push(a);
    }
    out
}

/// `count` simulated trajectories of `N + 1` prices with running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    days: usize,
    count: usize,
    seed: u64,
    /// Row-major `count × (N+1)`.
    prices: Vec<f64>,
    /// Row-major `count × (N+1)`, column 0 holding `A_0 = S_0`.
    averages: Vec<f64>,
}

impl PathBatch {
    /// Builds a batch from explicit trajectories of equal length.
    pub fn from_paths(paths: &[Vec<f64>], seed: u64) -> Result<Self> {
        let first = paths
            .first()
            .ok_or_else(|| Error::Contract("empty path batch".into()))?;
        let len = first.len();
        if len < 2 {
            return Err(Error::Contract("paths need at least two prices".into()));
        }
        let mut prices = Vec::with_capacity(paths.len() * len);
        let mut averages = Vec::with_capacity(paths.len() * len);
        for (i, p) in paths.iter().enumerate() {
            if p.len() != len {
                return Err(Error::Contract(format!(
                    "path {i} has {} prices, expected {len}",
                    p.len()
                )));
            }
            prices.extend_from_slice(p);
            averages.extend(running_averages(p));
        }
        Ok(Self {
            days: len - 1,
            count: paths.len(),
            seed,
            prices,
            averages,
        })
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.days + 1;
        &self.prices[i * w..(i + 1) * w]
    }

    pub fn averages(&self, i: usize) -> &[f64] {
        let w = self.days + 1;
        &self.averages[i * w..(i + 1) * w]
    }

    pub fn price(&self, i: usize, n: usize) -> f64 {
        self.prices[i * (self.days + 1) + n]
    }

    pub fn average(&self, i: usize, n: usize) -> f64 {
        self.averages[i * (self.days + 1) + n]
    }

    /// Day-`n` prices of every path as a `1 × I` row.
    pub fn price_row(&self, n: usize) -> Array {
        Array::from_fn(1, self.count, |_, i| self.price(i, n))
    }

    pub fn average_row(&self, n: usize) -> Array {
        Array::from_fn(1, self.count, |_, i| self.average(i, n))
    }

    /// Sub-batch of the given path indices.
    pub fn select(&self, indices: &[usize]) -> PathBatch {
        let paths: Vec<Vec<f64>> = indices.iter().map(|&i| self.path(i).to_vec()).collect();
        PathBatch::from_paths(&paths, self.seed).expect("non-empty selection of valid paths")
    }

    /// Writes `path_id,day,price` rows.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for i in 0..self.count {
            for (n, s) in self.path(i).iter().enumerate() {
                w.serialize(PathRow {
                    path_id: i,
                    day: n,
                    price: *s,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PathRow {
    path_id: usize,
    day: usize,
    price: f64,
}

/// Trajectories loaded from a `path_id,day,price` CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalPaths {
    paths: Vec<Vec<f64>>,
}

impl ExternalPaths {
    pub fn new(paths: Vec<Vec<f64>>) -> Result<Self> {
        let batch = PathBatch::from_paths(&paths, 0)?;
        drop(batch);
        Ok(Self { paths })
    }

    /// Reads and validates a path file: every path must list days `0..=N`
    /// exactly once, in any order, with the same `N` for every path.
    pub fn read_csv(input: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path_id", "day", "price"] {
            return Err(Error::config(
                "market.path_file",
                "header must be `path_id,day,price`",
            ));
        }
        let mut by_path: std::collections::BTreeMap<usize, Vec<(usize, f64)>> = Default::default();
        for row in rdr.deserialize::<PathRow>() {
            let row = row?;
            if !row.price.is_finite() {
                return Err(Error::config("market.path_file", "non-finite price"));
            }
            by_path.entry(row.path_id).or_default().push((row.day, row.price));
        }
        if by_path.is_empty() {
            return Err(Error::config("market.path_file", "no paths"));
        }
        let mut paths = Vec::with_capacity(by_path.len());
        let mut width = None;
        for (id, mut rows) in by_path {
            rows.sort_by_key(|r| r.0);
            let ok = rows.iter().enumerate().all(|(k, r)| r.0 == k);
            if !ok {
                return Err(Error::config(
                    "market.path_file",
                    format!("path {id} does not list days 0..N exactly once"),
                ));
            }
            match width {
                None => width = Some(rows.len()),
                Some(w) if w != rows.len() => {
                    return Err(Error::config(
                        "market.path_file",
                        format!("path {id} has {} days, expected {w} (file is not rectangular)", rows.len()),
                    ))
                }
                _ => {}
            }
            paths.push(rows.into_iter().map(|r| r.1).collect());
        }
        Self::new(paths)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| {
            Error::config(
                "market.path_file",
                format!("{}: {e}", path.as_ref().display()),
            )
        })?;
        Self::read_csv(file)
    }

    pub fn days(&self) -> usize {
        self.paths[0].len() - 1
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        &self.paths[i]
    }
}

/// Random stream for trajectory `index` of the batch seeded by `seed`.
///
/// ChaCha's stream id selects an independent keystream, so trajectory `i`
/// draws the same numbers whether generated alone, serially or in parallel.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mixes a base seed with a label (epoch, restart, purpose) into a new seed.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn simulate_one(mp: &MarketParams, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = path_rng(seed, index as u64);
    let n = mp.days;
    match &mp.dynamics {
        Dynamics::ArithmeticBrownian => {
            let step = mp.sigma * mp.dt.sqrt();
            let mut out = Vec::with_capacity(n + 1);
            let mut s = mp.s0;
            out.push(s);
            for _ in 0..n {
                let eps: f64 = rng.sample(StandardNormal);
                s += step * eps;
                out.push(s);
            }
            out
        }
        Dynamics::GeometricBrownian => {
            let vol = mp.sigma * mp.dt.sqrt();
            let drift = -0.5 * mp.sigma * mp.sigma * mp.dt;
            let mut out = Vec::with_capacity(n + 1);
            let mut s = mp.s0;
            out.push(s);
            for _ in 0..n {
                let eps: f64 = rng.sample(StandardNormal);
                s *= (drift + vol * eps).exp();
                out.push(s);
            }
            out
        }
        Dynamics::External(paths) => {
            let k = rng.random_range(0..paths.len());
            paths.path(k).to_vec()
        }
    }
}

/// Simulates `count` trajectories under `mp.dynamics`.
pub fn simulate_paths(mp: &MarketParams, count: usize, seed: u64) -> Result<PathBatch> {
    if count == 0 {
        return Err(Error::Contract("path count must be at least 1".into()));
    }
    let paths: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|i| simulate_one(mp, seed, i))
        .collect();
    PathBatch::from_paths(&paths, seed)
}

/// Qualitative price shapes for strategy illustrations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StylizedKind {
    /// +10 % linear drift over the contract.
    Up,
    /// −10 % linear drift.
    Down,
    /// −8 % to mid-contract, then +12 %.
    VShape,
}

impl std::str::FromStr for StylizedKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "up" => Ok(Self::Up),
            "down" => Ok(Self::Down),
            "v-shape" | "vshape" => Ok(Self::VShape),
            _ => Err(format!("unknown path kind `{s}` (up, down, v-shape)")),
        }
    }
}

/// Default noise amplitude for stylized paths, as a fraction of `σ`.
pub const STYLIZED_NOISE: f64 = 0.25;

/// Piecewise-linear trend plus seeded Gaussian noise of `noise · σ√δt` per
/// day (`noise = 0` gives the bare trend).
pub fn stylized_path(mp: &MarketParams, kind: StylizedKind, noise: f64, seed: u64) -> Vec<f64> {
    let n = mp.days;
    let mid = n / 2;
    let trend = |k: usize| -> f64 {
        let t = k as f64;
        let rel = match kind {
            StylizedKind::Up => 0.10 * t / n as f64,
            StylizedKind::Down => -0.10 * t / n as f64,
            StylizedKind::VShape => {
                if k <= mid {
                    -0.08 * t / mid as f64
                } else {
                    -0.08 + 0.12 * (t - mid as f64) / (n - mid) as f64
                }
            }
        };
        mp.s0 * (1.0 + rel)
    };
    let mut rng = path_rng(seed, 0);
    let amp = noise * mp.sigma * mp.dt.sqrt();
    let mut walk = 0.0;
    (0..=n)
        .map(|k| {
            if k > 0 && amp > 0.0 {
                let eps: f64 = rng.sample(StandardNormal);
                walk += amp * eps;
            }
            trend(k) + walk
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exec_cost_values() {
        let mp = MarketParams::reference();
        assert_eq!(mp.exec_cost(0.0), 0.0);
        assert!((mp.exec_cost(1.0) - 0.1).abs() < 1e-15);
        assert!((mp.exec_cost(0.25) - 8.838_834_764_831_844e-3).abs() < 1e-15);
        assert_eq!(mp.exec_cost(-0.3), mp.exec_cost(0.3));
        assert!(mp.exec_cost(1e-9) > 0.0);
    }

    #[test]
    fn terminal_penalty_values() {
        assert_eq!(terminal_penalty(0.0, 2e-7), 0.0);
        assert!((terminal_penalty(1e6, 2e-7) - 2e5).abs() < 1e-9);
        assert_eq!(terminal_penalty(-3.0, 0.5), terminal_penalty(3.0, 0.5));
    }

    #[test]
    fn zero_trade_only_advances_price_and_average() {
        let mp = MarketParams::reference();
        let s = MarketState {
            n: 3,
            s: 44.0,
            a: 45.5,
            x: 12.0,
            q: 100.0,
        };
        let t = step_state(&s, 0.0, 47.0, &mp).unwrap();
        assert_eq!((t.n, t.q, t.x, t.s), (4, 100.0, 12.0, 47.0));
        assert!((t.a - (45.5 + (47.0 - 45.5) / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn full_participation_step() {
        let mp = MarketParams::reference();
        let v = 4.0e6;
        let t = step_state(&MarketState::initial(45.0), v, 45.0, &mp).unwrap();
        assert!((t.x - (45.0 * v + 0.1 * v)).abs() < 1e-6);
        assert_eq!(t.q, v);
        assert_eq!(t.a, 45.0);
    }

    #[test]
    fn round_trip_costs_twice() {
        let mp = MarketParams::reference();
        let v = 1.0e6;
        let s0 = MarketState::initial(45.0);
        let s1 = step_state(&s0, v, 45.0, &mp).unwrap();
        let s2 = step_state(&s1, -v, 45.0, &mp).unwrap();
        assert_eq!(s2.q, 0.0);
        let cost = mp.exec_cost(v / 4.0e6) * 4.0e6;
        assert!((s2.x - 2.0 * cost).abs() < 1e-6 * cost);
    }

    #[test]
    fn step_past_expiry_is_rejected() {
        let mp = MarketParams::reference().with_days(2);
        let s = MarketState {
            n: 2,
            ..MarketState::initial(45.0)
        };
        assert!(step_state(&s, 0.0, 45.0, &mp).is_err());
    }

    #[test]
    fn zero_volatility_paths_are_flat() {
        let mut mp = MarketParams::reference();
        mp.sigma = 0.0;
        let b = simulate_paths(&mp, 5, 3).unwrap();
        for i in 0..5 {
            assert!(b.path(i).iter().all(|&s| s == 45.0));
            assert!(b.averages(i).iter().all(|&a| a == 45.0));
        }
    }

    #[test]
    fn increments_have_the_right_variance() {
        let mp = MarketParams::reference();
        let b = simulate_paths(&mp.clone().with_days(2), 100_000, 11).unwrap();
        let d: Vec<f64> = (0..b.len()).map(|i| b.price(i, 1) - b.price(i, 0)).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        assert!((var / 0.36 - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn geometric_paths_stay_positive() {
        let mut mp = MarketParams::reference();
        mp.dynamics = Dynamics::GeometricBrownian;
        mp.sigma = 0.3;
        let b = simulate_paths(&mp, 200, 5).unwrap();
        assert!((0..b.len()).all(|i| b.path(i).iter().all(|&s| s > 0.0)));
    }

    #[test]
    fn same_seed_same_batch_and_substreams_are_independent_of_count() {
        let mp = MarketParams::reference();
        let a = simulate_paths(&mp, 16, 42).unwrap();
        let b = simulate_paths(&mp, 16, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&mp, 4, 42).unwrap();
        assert_eq!(c.path(3), a.path(3));
        let d = simulate_paths(&mp, 16, 43).unwrap();
        assert_ne!(a.path(0), d.path(0));
    }

    #[test]
    fn running_average_matches_direct_mean() {
        let mp = MarketParams::reference();
        let b = simulate_paths(&mp, 20, 9).unwrap();
        for i in 0..b.len() {
            let p = b.path(i);
            assert_eq!(b.average(i, 0), p[0]);
            for n in 1..=mp.days {
                let direct = p[1..=n].iter().sum::<f64>() / n as f64;
                assert!((b.average(i, n) - direct).abs() <= 1e-12 * direct.abs());
            }
        }
    }

    #[test]
    fn stylized_shapes_without_noise() {
        let mp = MarketParams::reference();
        let up = stylized_path(&mp, StylizedKind::Up, 0.0, 1);
        assert!((up[63] - 1.10 * 45.0).abs() < 1e-12);
        let v = stylized_path(&mp, StylizedKind::VShape, 0.0, 1);
        let argmin = (0..v.len()).min_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
        assert_eq!(argmin, 63 / 2);
        let down = stylized_path(&mp, StylizedKind::Down, 0.0, 1);
        let avg = running_averages(&down);
        assert!((1..=63).all(|n| avg[n] >= down[n]));
        assert!((down[63] - 0.9 * 45.0).abs() < 1e-12);
    }

    #[test]
    fn stylized_noise_is_seeded() {
        let mp = MarketParams::reference();
        let a = stylized_path(&mp, StylizedKind::Up, 0.25, 7);
        let b = stylized_path(&mp, StylizedKind::Up, 0.25, 7);
        let c = stylized_path(&mp, StylizedKind::Up, 0.25, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn path_csv_roundtrip_and_validation() {
        let mp = MarketParams::reference().with_days(4);
        let b = simulate_paths(&mp, 3, 1).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let ext = ExternalPaths::read_csv(buf.as_slice()).unwrap();
        assert_eq!(ext.len(), 3);
        assert_eq!(ext.days(), 4);
        assert_eq!(ext.path(2), b.path(2));

        let ragged = "path_id,day,price\n0,0,45\n0,1,46\n1,0,45\n";
        assert!(ExternalPaths::read_csv(ragged.as_bytes()).is_err());
        let gap = "path_id,day,price\n0,0,45\n0,2,46\n";
        assert!(ExternalPaths::read_csv(gap.as_bytes()).is_err());
        let bad_header = "id,day,price\n0,0,45\n0,1,46\n";
        assert!(ExternalPaths::read_csv(bad_header.as_bytes()).is_err());
    }

    #[test]
    fn external_dynamics_resample_file_paths() {
        let base = MarketParams::reference().with_days(4);
        let src = simulate_paths(&base, 3, 1).unwrap();
        let paths: Vec<Vec<f64>> = (0..3).map(|i| src.path(i).to_vec()).collect();
        let mut mp = base.clone();
        mp.dynamics = Dynamics::External(Arc::new(ExternalPaths::new(paths.clone()).unwrap()));
        mp.validate().unwrap();
        let b = simulate_paths(&mp, 10, 5).unwrap();
        for i in 0..10 {
            assert!(paths.iter().any(|p| p.as_slice() == b.path(i)));
        }
        mp.days = 5;
        mp.volume = vec![4e6; 5];
        assert!(mp.validate().is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let mut mp = MarketParams::reference();
        mp.eta = -1.0;
        let err = mp.validate().unwrap_err();
        assert!(err.to_string().starts_with("market.eta"), "{err}");
        let mut mp = MarketParams::reference();
        mp.volume.pop();
        assert!(mp.validate().is_err());
    }
}
