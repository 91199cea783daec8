//! Parsing of `--family` specifications.

use std::collections::BTreeMap;
use std::path::Path;

use blockjacobi::example_st::{jc_family, st_family, StParams};
use blockjacobi::operator::OperatorFamily;

const USAGE: &str = "expected st:s=..,t=..[,alpha=..][,b1=..], jc:s=..,t=.., scalar-free, \
                     diagonal-test[:a=..,ratio=..,alpha=..] or a path to a JSON family file";

/// Default exponent for the `st` family when `alpha` is omitted.
pub const DEFAULT_ST_ALPHA: f64 = 0.6;

pub struct FamilySpec {
    pub family: OperatorFamily,
    /// Set for `st` families.
    pub st: Option<StParams>,
    /// `(s, t)` for `st` and `jc` families.
    pub st_pair: Option<(f64, f64)>,
}

impl FamilySpec {
    fn plain(family: OperatorFamily) -> Self {
        Self {
            family,
            st: None,
            st_pair: None,
        }
    }
}

pub fn parse_family(spec: &str) -> Result<FamilySpec, String> {
    let (name, rest) = match spec.split_once(':') {
        Some((n, r)) => (n, Some(r)),
        None => (spec, None),
    };
    match name {
        "st" => {
            let kv = parse_kv(spec, rest, &["s", "t", "alpha", "b1"])?;
            let s = required(spec, &kv, "s")?;
            let t = required(spec, &kv, "t")?;
            let alpha = kv.get("alpha").copied().unwrap_or(DEFAULT_ST_ALPHA);
            let p = StParams::new(s, t, alpha).map_err(|e| format!("family `{spec}`: {e}"))?;
            let mut family = st_family(p);
            if let Some(&c) = kv.get("b1") {
                family = family.with_first_block_shift(c);
            }
            Ok(FamilySpec {
                family,
                st: Some(p),
                st_pair: Some((s, t)),
            })
        }
        "jc" => {
            let kv = parse_kv(spec, rest, &["s", "t"])?;
            let s = required(spec, &kv, "s")?;
            let t = required(spec, &kv, "t")?;
            let family = jc_family(s, t).map_err(|e| format!("family `{spec}`: {e}"))?;
            Ok(FamilySpec {
                family,
                st: None,
                st_pair: Some((s, t)),
            })
        }
        "scalar-free" => {
            parse_kv(spec, rest, &[])?;
            Ok(FamilySpec::plain(OperatorFamily::scalar_free()))
        }
        "diagonal-test" => {
            let kv = parse_kv(spec, rest, &["a", "ratio", "alpha"])?;
            let a = kv.get("a").copied().unwrap_or(1.0);
            let ratio = kv.get("ratio").copied().unwrap_or(4.0);
            let alpha = kv.get("alpha").copied().unwrap_or(DEFAULT_ST_ALPHA);
            if !(a > 0.0 && ratio > 0.0 && alpha.is_finite()) {
                return Err(format!("family `{spec}`: a and ratio must be positive"));
            }
            Ok(FamilySpec::plain(OperatorFamily::diagonal_test(a, ratio, alpha)))
        }
        _ if spec.ends_with(".json") || Path::new(spec).is_file() => {
            let family = OperatorFamily::from_json_file(spec)
                .map_err(|e| format!("family file `{spec}`: {e}"))?;
            Ok(FamilySpec::plain(family))
        }
        _ => Err(format!("unknown family `{spec}`; {USAGE}")),
    }
}

fn parse_kv(
    spec: &str,
    rest: Option<&str>,
    allowed: &[&str],
) -> Result<BTreeMap<String, f64>, String> {
    let mut out = BTreeMap::new();
    let Some(rest) = rest else {
        return Ok(out);
    };
    for item in rest.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| format!("family `{spec}`: expected key=value, got `{item}`"))?;
        let k = k.trim();
        if !allowed.contains(&k) {
            return Err(format!(
                "family `{spec}`: unknown parameter `{k}` (allowed: {})",
                if allowed.is_empty() { "none".to_string() } else { allowed.join(", ") }
            ));
        }
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| format!("family `{spec}`: `{v}` is not a number"))?;
        if !v.is_finite() {
            return Err(format!("family `{spec}`: `{k}` must be finite"));
        }
        if out.insert(k.to_string(), v).is_some() {
            return Err(format!("family `{spec}`: `{k}` given twice"));
        }
    }
    Ok(out)
}

fn required(spec: &str, kv: &BTreeMap<String, f64>, key: &str) -> Result<f64, String> {
    kv.get(key)
        .copied()
        .ok_or_else(|| format!("family `{spec}`: missing parameter `{key}`"))
}
