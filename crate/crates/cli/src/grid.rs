//! `--lambda` and `--calib` parsing.

/// Largest accepted λ-grid.
pub const MAX_GRID: usize = 100_000;

/// A scalar `x` or an inclusive grid `a:b:step`.
pub fn parse_lambda(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| -> Result<f64, String> {
        let v: f64 = p
            .trim()
            .parse()
            .map_err(|_| format!("--lambda: `{p}` is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("--lambda: `{p}` is not finite"))
        }
    };
    match parts.as_slice() {
        [x] => Ok(vec![num(x)?]),
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if step == 0.0 || (b - a) * step < 0.0 {
                return Err(format!(
                    "--lambda: step {step} does not lead from {a} to {b}"
                ));
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            if count > MAX_GRID {
                return Err(format!("--lambda: grid has {count} points (limit {MAX_GRID})"));
            }
            Ok((0..count).map(|i| a + i as f64 * step).collect())
        }
        _ => Err(format!("--lambda: expected `x` or `a:b:step`, got `{s}`")),
    }
}

/// Inclusive index window `lo:hi`.
pub fn parse_calib(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("--calib: expected `lo:hi`, got `{s}`"))?;
    let lo: usize = lo
        .trim()
        .parse()
        .map_err(|_| format!("--calib: `{lo}` is not an index"))?;
    let hi: usize = hi
        .trim()
        .parse()
        .map_err(|_| format!("--calib: `{hi}` is not an index"))?;
    if lo == 0 || hi < lo {
        return Err(format!("--calib: need 1 <= lo <= hi (got {lo}:{hi})"));
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_and_grid() {
        assert_eq!(parse_lambda("-1").unwrap(), vec![-1.0]);
        assert_eq!(parse_lambda("-3:-1:1").unwrap(), vec![-3.0, -2.0, -1.0]);
        assert_eq!(parse_lambda("-1:-3:-1").unwrap(), vec![-1.0, -2.0, -3.0]);
        // 0.1 steps accumulate roundoff; the endpoint is still included
        assert_eq!(parse_lambda("-1:-0.5:0.1").unwrap().len(), 6);
        assert_eq!(parse_lambda("-1:-1:0.5").unwrap(), vec![-1.0]);
    }

    #[test]
    fn bad_lambda() {
        for bad in ["", "x", "1:2", "1:2:0", "1:2:-1", "0:1e9:1e-3", "nan"] {
            assert!(parse_lambda(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn calib() {
        assert_eq!(parse_calib("1:10").unwrap(), (1, 10));
        assert!(parse_calib("0:10").is_err());
        assert!(parse_calib("5:4").is_err());
        assert!(parse_calib("5").is_err());
    }
}
