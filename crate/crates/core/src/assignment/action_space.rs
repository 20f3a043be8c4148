use num_bigint::BigUint;

use crate::error::{Error, Result};

fn check(n: u64, m: u64) -> Result<()> {
    if m > n {
        return Err(Error::Config(format!("order count {m} exceeds worker count {n}")));
    }
    Ok(())
}

/// Number of joint actions with `n` workers and `m` orders: every way to
/// pick `k` orders and injectively hand them to workers, summed over `k`.
pub fn count_action_space(n: u64, m: u64) -> Result<BigUint> {
    check(n, m)?;
    let mut total = BigUint::from(0u32);
    // C(m, k) and n!/(n-k)! built incrementally.
    let mut choose = BigUint::from(1u32);
    let mut falling = BigUint::from(1u32);
    for k in 0..=m {
        if k > 0 {
            choose = choose * (m - k + 1) / k;
            falling *= n - k + 1;
        }
        total += &choose * &falling;
    }
    Ok(total)
}

/// `(n - m + 2)^m`, a lower bound on [`count_action_space`].
pub fn action_space_lower_bound(n: u64, m: u64) -> Result<BigUint> {
    check(n, m)?;
    Ok(BigUint::from(n - m + 2).pow(m as u32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_values() {
        assert_eq!(count_action_space(5, 0).unwrap(), BigUint::from(1u32));
        assert_eq!(count_action_space(3, 2).unwrap(), BigUint::from(13u32));
        assert_eq!(action_space_lower_bound(0, 0).unwrap(), BigUint::from(1u32));
        assert!(count_action_space(2, 3).is_err());
        assert!(action_space_lower_bound(2, 3).is_err());
    }

    #[test]
    fn thousand_workers_ten_orders() {
        let bound = action_space_lower_bound(1000, 10).unwrap();
        assert_eq!(bound, BigUint::from(992u32).pow(10));
        assert_eq!(bound.to_string(), "922819411957263335393616461824");
        assert!(count_action_space(1000, 10).unwrap() >= bound);
    }
}
