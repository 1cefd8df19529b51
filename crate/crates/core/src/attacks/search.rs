use super::AttackParams;
use crate::error::Result;

/// Outcome of a one-dimensional search for the smallest successful scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSearch {
    /// Smallest successful scale found, or the largest one tried on failure.
    pub scale: f64,
    pub success: bool,
    pub probes: usize,
}

/// Doubles the scale from `eps_min` until `succeeds` holds, then bisects between the last
/// failing and the first successful scale. Scales are capped at `max_scale`; once the
/// cap fails the sweep stops.
pub fn scale_search(
    params: &AttackParams,
    max_scale: f64,
    mut succeeds: impl FnMut(f64) -> Result<bool>,
) -> Result<ScaleSearch> {
    let mut lo = 0.0;
    let mut hi = None;
    let mut probes = 0;
    for k in 0..=params.max_scale_doublings {
        let s = (params.eps_min * 2f64.powi(k as i32)).min(max_scale);
        probes += 1;
        if succeeds(s)? {
            hi = Some(s);
            break;
        }
        lo = s;
        if s >= max_scale {
            break;
        }
    }
    let Some(mut hi) = hi else {
        return Ok(ScaleSearch { scale: lo, success: false, probes });
    };
    for _ in 0..params.bisection_steps {
        let mid = 0.5 * (lo + hi);
        probes += 1;
        if succeeds(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(ScaleSearch { scale: hi, success: true, probes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brackets_a_monotone_threshold() {
        let p = AttackParams::default();
        let r = scale_search(&p, f64::INFINITY, |s| Ok(s >= 0.37)).unwrap();
        assert!(r.success);
        assert!(r.scale >= 0.37 && r.scale - 0.37 <= 0.37 * 2f64.powi(-10));
        assert_eq!(r.probes, 13 + 10);
    }

    #[test]
    fn first_probe_success_still_bisects_down() {
        let p = AttackParams::default();
        let mut seen = Vec::new();
        let r = scale_search(&p, f64::INFINITY, |s| {
            seen.push(s);
            Ok(s >= 1e-6)
        })
        .unwrap();
        assert_eq!(seen[0], 1e-4);
        assert_eq!(seen.len(), 11);
        assert!(r.scale < 1e-4 && r.scale >= 1e-6);
    }

    #[test]
    fn never_true_probes_each_doubling_once() {
        let p = AttackParams::default();
        let mut n = 0;
        let r = scale_search(&p, f64::INFINITY, |_| {
            n += 1;
            Ok(false)
        })
        .unwrap();
        assert!(!r.success);
        assert_eq!(n, p.max_scale_doublings as usize + 1);
        assert_eq!(r.probes, n);
        assert_eq!(r.scale, 1e-4 * 2f64.powi(20));
    }

    #[test]
    fn cap_ends_the_sweep() {
        let p = AttackParams::default();
        let r = scale_search(&p, 1.0, |_| Ok(false)).unwrap();
        assert_eq!(r.scale, 1.0);
        assert_eq!(r.probes, 15);
    }
}
