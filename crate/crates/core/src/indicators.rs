//! Technical features for the agent's state: EWMA volatility, moving averages,
//! Bollinger Bands and the Wilder directional-movement family (DX, ADXR) plus BOP.
//!
//! Every series has the same length as its input and holds `None` until the
//! indicator's lookback is filled. All indicators are causal: the value at index
//! `t` only reads inputs at indices `<= t`.

use serde::{Deserialize, Serialize};

pub use crate::data::Candle;
use crate::error::{Error, Result};

pub type Series = Vec<Option<f64>>;

/// EWMA of squared log returns, square-rooted: `v_t = (1 − α) v_{t−1} + α r_t²`,
/// seeded with `v_1 = r_1²`. Index 0 has no return and stays `None`.
pub fn ewma_volatility(closes: &[f64], alpha: f64) -> Result<Series> {
    if closes.len() < 2 {
        return Err(Error::Validation(
            "EWMA volatility needs at least two prices".into(),
        ));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Validation(format!(
            "smoothing factor must lie in (0, 1], got {alpha}"
        )));
    }
    if let Some((i, p)) = closes.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
        return Err(Error::Domain(format!(
            "non-positive price {p} at index {i}"
        )));
    }
    let mut out = vec![None; closes.len()];
    let mut var = 0.0;
    for t in 1..closes.len() {
        let r = (closes[t] / closes[t - 1]).ln();
        var = if t == 1 {
            r * r
        } else {
            (1.0 - alpha) * var + alpha * r * r
        };
        out[t] = Some(var.sqrt());
    }
    Ok(out)
}

/// Trailing arithmetic mean over `window` closes.
pub fn moving_average(closes: &[f64], window: usize) -> Result<Series> {
    if window == 0 {
        return Err(Error::Validation(
            "moving average window must be >= 1".into(),
        ));
    }
    let mut out = vec![None; closes.len()];
    // Kahan-compensated rolling sum
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let add = |v: f64, sum: &mut f64, comp: &mut f64| {
        let y = v - *comp;
        let t = *sum + y;
        *comp = (t - *sum) - y;
        *sum = t;
    };
    for (t, &c) in closes.iter().enumerate() {
        add(c, &mut sum, &mut comp);
        if t >= window {
            add(-closes[t - window], &mut sum, &mut comp);
        }
        if t + 1 >= window {
            out[t] = Some(sum / window as f64);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bands {
    pub upper: Series,
    pub mid: Series,
    pub lower: Series,
}

/// Bollinger Bands: SMA(window) ± k · population standard deviation.
pub fn bollinger(closes: &[f64], window: usize, k: f64) -> Result<Bands> {
    if window < 2 {
        return Err(Error::Validation("Bollinger window must be >= 2".into()));
    }
    if !(k >= 0.0) {
        return Err(Error::Validation(format!(
            "band width k must be >= 0, got {k}"
        )));
    }
    let n = closes.len();
    let mut bands = Bands {
        upper: vec![None; n],
        mid: vec![None; n],
        lower: vec![None; n],
    };
    for t in (window - 1)..n {
        let w = &closes[t + 1 - window..=t];
        let mean = w.iter().sum::<f64>() / window as f64;
        let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / window as f64;
        let sd = var.sqrt();
        bands.mid[t] = Some(mean);
        bands.upper[t] = Some(mean + k * sd);
        bands.lower[t] = Some(mean - k * sd);
    }
    Ok(bands)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalMovement {
    pub dx: Series,
    pub adx: Series,
    pub adxr: Series,
    pub bop: Series,
}

/// Wilder directional movement.
///
/// `+DM`, `−DM` and true range are Wilder-smoothed over `period`
/// (initial sum, then `S_t = S_{t−1} − S_{t−1}/n + x_t`); `DX = 100·|+DI − −DI| / (+DI + −DI)`;
/// ADX starts as the mean of the first `period` DX values and is Wilder-averaged after;
/// `ADXR_t = (ADX_t + ADX_{t−period}) / 2`. BOP is `(close − open)/(high − low)`, 0 on
/// zero-range bars.
pub fn dm_family(candles: &[Candle], period: usize) -> Result<DirectionalMovement> {
    if period == 0 {
        return Err(Error::Validation(
            "directional movement period must be >= 1".into(),
        ));
    }
    let n = candles.len();
    let mut out = DirectionalMovement {
        dx: vec![None; n],
        adx: vec![None; n],
        adxr: vec![None; n],
        bop: vec![None; n],
    };
    for (t, c) in candles.iter().enumerate() {
        let range = c.high - c.low;
        out.bop[t] = Some(if range > 0.0 {
            ((c.close - c.open) / range).clamp(-1.0, 1.0)
        } else {
            0.0
        });
    }

    let p = period as f64;
    let (mut s_plus, mut s_minus, mut s_tr) = (0.0, 0.0, 0.0);
    let mut dx_seed = 0.0;
    let mut adx = 0.0;
    for t in 1..n {
        let (cur, prev) = (&candles[t], &candles[t - 1]);
        let up = cur.high - prev.high;
        let down = prev.low - cur.low;
        let plus_dm = if up > down && up > 0.0 { up } else { 0.0 };
        let minus_dm = if down > up && down > 0.0 { down } else { 0.0 };
        let tr = (cur.high - cur.low)
            .max((cur.high - prev.close).abs())
            .max((cur.low - prev.close).abs());

        if t <= period {
            s_plus += plus_dm;
            s_minus += minus_dm;
            s_tr += tr;
        } else {
            s_plus = s_plus - s_plus / p + plus_dm;
            s_minus = s_minus - s_minus / p + minus_dm;
            s_tr = s_tr - s_tr / p + tr;
        }
        if t < period {
            continue;
        }

        let dx = directional_index(s_plus, s_minus, s_tr);
        out.dx[t] = Some(dx);

        if t < 2 * period - 1 {
            dx_seed += dx;
            continue;
        }
        adx = if t == 2 * period - 1 {
            (dx_seed + dx) / p
        } else {
            (adx * (p - 1.0) + dx) / p
        };
        out.adx[t] = Some(adx);
        if t >= 3 * period - 1 {
            let lagged = out.adx[t - period].expect("ADX defined one period back");
            out.adxr[t] = Some((adx + lagged) / 2.0);
        }
    }
    Ok(out)
}

fn directional_index(s_plus: f64, s_minus: f64, s_tr: f64) -> f64 {
    if s_tr <= 0.0 {
        return 0.0;
    }
    let plus_di = 100.0 * s_plus / s_tr;
    let minus_di = 100.0 * s_minus / s_tr;
    let total = plus_di + minus_di;
    if total <= 0.0 {
        0.0
    } else {
        (100.0 * ((plus_di - minus_di).abs() / total)).min(100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureParams {
    pub ewma_alpha: f64,
    pub ma_short: usize,
    pub ma_long: usize,
    pub bb_window: usize,
    pub bb_k: f64,
    pub dm_period: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            ewma_alpha: 0.05,
            ma_short: 24,
            ma_long: 168,
            bb_window: 20,
            bb_k: 2.0,
            dm_period: 14,
        }
    }
}

impl FeatureParams {
    /// Index of the first row at which every feature is defined.
    pub fn warmup(&self) -> usize {
        [
            1,
            self.ma_short - 1,
            self.ma_long - 1,
            self.bb_window - 1,
            3 * self.dm_period - 1,
        ]
        .into_iter()
        .max()
        .unwrap_or(0)
    }
}

/// Market features at one hour. Values are 0 while `warmup_complete` is false.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub ewma_vol: f64,
    pub ma24: f64,
    pub ma168: f64,
    pub bb_upper: f64,
    pub bb_mid: f64,
    pub bb_lower: f64,
    pub adxr: f64,
    pub bop: f64,
    pub dx: f64,
    pub warmup_complete: bool,
}

pub fn compute_features(candles: &[Candle], params: &FeatureParams) -> Result<Vec<FeatureRow>> {
    let closes: Vec<f64> = candles.iter().map(|c| c.close).collect();
    let vol = ewma_volatility(&closes, params.ewma_alpha)?;
    let short = moving_average(&closes, params.ma_short)?;
    let long = moving_average(&closes, params.ma_long)?;
    let bb = bollinger(&closes, params.bb_window, params.bb_k)?;
    let dm = dm_family(candles, params.dm_period)?;

    let rows = (0..candles.len())
        .map(|t| {
            let cols = [
                vol[t],
                short[t],
                long[t],
                bb.upper[t],
                bb.mid[t],
                bb.lower[t],
                dm.adxr[t],
                dm.bop[t],
                dm.dx[t],
            ];
            let warm = cols.iter().all(Option::is_some);
            let v = |i: usize| if warm { cols[i].unwrap_or(0.0) } else { 0.0 };
            FeatureRow {
                ewma_vol: v(0),
                ma24: v(1),
                ma168: v(2),
                bb_upper: v(3),
                bb_mid: v(4),
                bb_lower: v(5),
                adxr: v(6),
                bop: v(7),
                dx: v(8),
                warmup_complete: warm,
            }
        })
        .collect();
    Ok(rows)
}
