//! Concentrated-liquidity pool math for a single LP position.
//!
//! Prices are quoted as token Y (numeraire) per token X (risky). Every monetary
//! quantity is in Y and computed in `f64`; no on-chain fixed-point emulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when snapping a price onto a tick boundary.
const TICK_GUARD: f64 = 1e-12;

fn ln_tick_base() -> f64 {
    // ln(1.0001)
    0.0001f64.ln_1p()
}

/// Immutable pool parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolSpec {
    /// Swap fee rate δ, e.g. `0.0005` for the 0.05% tier.
    pub fee_rate: f64,
    pub tick_spacing: i32,
    /// Gas cost per on-chain transaction, in numeraire units.
    pub gas_cost: f64,
}

impl PoolSpec {
    pub fn new(fee_rate: f64, tick_spacing: i32, gas_cost: f64) -> Result<Self> {
        let spec = Self {
            fee_rate,
            tick_spacing,
            gas_cost,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fee_rate > 0.0 && self.fee_rate < 1.0) {
            return Err(Error::Validation(format!(
                "fee rate must lie in (0, 1), got {}",
                self.fee_rate
            )));
        }
        if self.tick_spacing < 1 {
            return Err(Error::Validation(format!(
                "tick spacing must be >= 1, got {}",
                self.tick_spacing
            )));
        }
        if !(self.gas_cost >= 0.0 && self.gas_cost.is_finite()) {
            return Err(Error::Validation(format!(
                "gas cost must be finite and >= 0, got {}",
                self.gas_cost
            )));
        }
        Ok(())
    }

    /// δ / (1 − δ), the factor in front of every fee formula.
    pub fn fee_multiplier(&self) -> f64 {
        self.fee_rate / (1.0 - self.fee_rate)
    }
}

impl Default for PoolSpec {
    /// WETH/USDC 0.05% tier: spacing 10, $5 gas.
    fn default() -> Self {
        Self {
            fee_rate: 0.0005,
            tick_spacing: 10,
            gas_cost: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tick(pub i32);

impl Tick {
    pub fn index(self) -> i32 {
        self.0
    }

    pub fn price(self) -> f64 {
        price_at_tick(self)
    }

    pub fn is_aligned(self, spacing: i32) -> bool {
        self.0.rem_euclid(spacing) == 0
    }
}

/// `1.0001^i`, evaluated as `exp(i · ln 1.0001)`.
pub fn price_at_tick(tick: Tick) -> f64 {
    (f64::from(tick.0) * ln_tick_base()).exp()
}

/// Largest tick whose price does not exceed `price`.
///
/// Floating-point rounding can put `log(p)/log(1.0001)` a hair below an exact
/// integer, so the floor is corrected when the neighbouring tick price is within
/// a relative 1e-12 of `price`.
pub fn tick_index(price: f64) -> Result<Tick> {
    if !(price > 0.0) || !price.is_finite() {
        return Err(Error::Domain(format!(
            "tick index needs a positive finite price, got {price}"
        )));
    }
    let raw = (price.ln() / ln_tick_base()).floor();
    if raw.abs() > f64::from(i32::MAX - 1) {
        return Err(Error::Domain(format!(
            "price {price} is outside the tick range"
        )));
    }
    let mut i = raw as i32;
    let slack = price * (1.0 + TICK_GUARD);
    if price_at_tick(Tick(i + 1)) <= slack {
        i += 1;
    } else if price_at_tick(Tick(i)) > slack {
        i -= 1;
    }
    Ok(Tick(i))
}

/// Spacing-aligned range covering `center ± half_width` ticks: the lower bound is
/// floored and the upper bound ceiled onto multiples of `spacing`.
pub fn align_range(center: Tick, half_width: i32, spacing: i32) -> Result<(Tick, Tick)> {
    if spacing < 1 {
        return Err(Error::Validation(format!(
            "tick spacing must be >= 1, got {spacing}"
        )));
    }
    if half_width < spacing {
        return Err(Error::Validation(format!(
            "half width {half_width} is below the tick spacing {spacing}"
        )));
    }
    let lo = center.0.checked_sub(half_width);
    let hi = center.0.checked_add(half_width);
    let (Some(lo), Some(hi)) = (lo, hi) else {
        return Err(Error::Domain(
            "range bounds overflow the tick domain".into(),
        ));
    };
    let lower = lo.div_euclid(spacing) * spacing;
    let upper = -((-hi).div_euclid(spacing)) * spacing;
    Ok((Tick(lower), Tick(upper)))
}

/// Liquidity that holds `x0` units of X at price `price` for a range whose upper
/// bound is `upper_price`.
pub fn liquidity_from_x(x0: f64, price: f64, upper_price: f64) -> Result<f64> {
    if !(x0 > 0.0) {
        return Err(Error::Domain(format!("x0 must be positive, got {x0}")));
    }
    if !(price > 0.0) {
        return Err(Error::Domain(format!(
            "price must be positive, got {price}"
        )));
    }
    if price >= upper_price {
        return Err(Error::Domain(format!(
            "price {price} is at or above the range top {upper_price}; the position holds no X"
        )));
    }
    Ok(x0 / inv_sqrt_gap(price, upper_price))
}

// 1/√a − 1/√b for a < b, without cancellation.
fn inv_sqrt_gap(a: f64, b: f64) -> f64 {
    let (sa, sb) = (a.sqrt(), b.sqrt());
    (b - a) / (sa * sb * (sa + sb))
}

// √b − √a for a < b, without cancellation.
fn sqrt_gap(a: f64, b: f64) -> f64 {
    (b - a) / (a.sqrt() + b.sqrt())
}

/// Token balances of a position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reserves {
    pub x: f64,
    pub y: f64,
}

impl Reserves {
    pub fn value_at(&self, price: f64) -> f64 {
        self.x * price + self.y
    }
}

/// A live range position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub lower: Tick,
    pub upper: Tick,
    pub liquidity: f64,
    pub entry_price: f64,
    pub entry_reserves: Reserves,
    lower_price: f64,
    upper_price: f64,
}

impl Position {
    /// Deposits `x0` of X at `price`; the matching Y amount follows from the range.
    pub fn open(lower: Tick, upper: Tick, x0: f64, price: f64) -> Result<Self> {
        check_bounds(lower, upper)?;
        let (pl, pu) = (lower.price(), upper.price());
        if price < pl {
            return Err(Error::Domain(format!(
                "entry price {price} is below the range [{pl}, {pu}]"
            )));
        }
        let liquidity = liquidity_from_x(x0, price, pu)?;
        Self::from_liquidity(lower, upper, liquidity, price)
    }

    pub fn from_liquidity(lower: Tick, upper: Tick, liquidity: f64, price: f64) -> Result<Self> {
        check_bounds(lower, upper)?;
        if !(liquidity >= 0.0) || !liquidity.is_finite() {
            return Err(Error::Domain(format!(
                "liquidity must be finite and >= 0, got {liquidity}"
            )));
        }
        if !(price > 0.0) {
            return Err(Error::Domain(format!(
                "price must be positive, got {price}"
            )));
        }
        let mut pos = Self {
            lower,
            upper,
            liquidity,
            entry_price: price,
            entry_reserves: Reserves { x: 0.0, y: 0.0 },
            lower_price: lower.price(),
            upper_price: upper.price(),
        };
        pos.entry_reserves = pos.reserves(price);
        Ok(pos)
    }

    pub fn lower_price(&self) -> f64 {
        self.lower_price
    }

    pub fn upper_price(&self) -> f64 {
        self.upper_price
    }

    /// Whether liquidity is active at `price` (closed range).
    pub fn contains(&self, price: f64) -> bool {
        price >= self.lower_price && price <= self.upper_price
    }

    /// Real balances, frozen at the nearest boundary once the price leaves the range.
    pub fn reserves(&self, price: f64) -> Reserves {
        let (pl, pu) = (self.lower_price, self.upper_price);
        let p = price.clamp(pl, pu);
        let l = self.liquidity;
        Reserves {
            x: if p >= pu {
                0.0
            } else {
                l * inv_sqrt_gap(p, pu)
            },
            y: if p <= pl { 0.0 } else { l * sqrt_gap(pl, p) },
        }
    }

    pub fn value(&self, price: f64) -> f64 {
        self.reserves(price).value_at(price)
    }

    /// Value of simply holding the entry tokens, marked at `price`.
    pub fn hold_value(&self, price: f64) -> f64 {
        self.entry_reserves.value_at(price)
    }

    pub fn impermanent_loss(&self, price: f64) -> Result<f64> {
        let hold = self.hold_value(price);
        if !(hold > 0.0) {
            return Err(Error::Domain(format!(
                "hold value at price {price} is {hold}; impermanent loss is undefined"
            )));
        }
        Ok(self.value(price) / hold - 1.0)
    }
}

fn check_bounds(lower: Tick, upper: Tick) -> Result<()> {
    if lower >= upper {
        return Err(Error::Validation(format!(
            "lower tick {} must be below upper tick {}",
            lower.0, upper.0
        )));
    }
    Ok(())
}

pub fn reserves(pos: &Position, price: f64) -> Reserves {
    pos.reserves(price)
}

pub fn position_value(pos: &Position, price: f64) -> f64 {
    pos.value(price)
}

pub fn impermanent_loss(pos: &Position, price: f64) -> Result<f64> {
    pos.impermanent_loss(price)
}

/// Fees earned over one price move, split by the token they are paid in.
///
/// Upward moves are paid in Y. Downward moves are paid in X and marked to
/// numeraire at the clipped final price of the move.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeeAccrual {
    pub token_x: f64,
    pub token_y: f64,
    pub valuation_price: f64,
}

impl FeeAccrual {
    pub fn value(&self) -> f64 {
        self.token_y + self.token_x * self.valuation_price
    }
}

/// Token-level fee accrual for the move `from → to`, clipped to `[lower_price, upper_price]`.
pub fn fee_accrual(
    liquidity: f64,
    fee_rate: f64,
    from: f64,
    to: f64,
    lower_price: f64,
    upper_price: f64,
) -> FeeAccrual {
    let k = fee_rate / (1.0 - fee_rate) * liquidity;
    if to >= from {
        let a = from.max(lower_price);
        let b = to.min(upper_price);
        if b > a {
            return FeeAccrual {
                token_x: 0.0,
                token_y: k * sqrt_gap(a, b),
                valuation_price: b,
            };
        }
    } else {
        let a = from.min(upper_price);
        let b = to.max(lower_price);
        if a > b {
            return FeeAccrual {
                token_x: k * inv_sqrt_gap(b, a),
                token_y: 0.0,
                valuation_price: b,
            };
        }
    }
    FeeAccrual::default()
}

/// Numeraire fee for the move `from → to` earned by `liquidity` active on
/// `[lower_price, upper_price]`.
pub fn fee_for_move(
    liquidity: f64,
    fee_rate: f64,
    from: f64,
    to: f64,
    lower_price: f64,
    upper_price: f64,
) -> f64 {
    fee_accrual(liquidity, fee_rate, from, to, lower_price, upper_price).value()
}

/// Instantaneous loss-versus-rebalancing `L σ² √p / 4`; zero while the position is
/// out of range, where its value is linear in price.
pub fn lvr_penalty(liquidity: f64, volatility: f64, price: f64, in_range: bool) -> f64 {
    if !in_range {
        return 0.0;
    }
    liquidity * volatility * volatility * price.sqrt() / 4.0
}
