use crate::error::{Error, Result};

/// Linear warmup from 0 to `lr_init` over `warmup_steps`, then cosine
/// annealing that reaches `lr_final` exactly at the last step.
pub fn lr_schedule(
    step: u64,
    total_steps: u64,
    warmup_steps: u64,
    lr_init: f64,
    lr_final: f64,
) -> Result<f64> {
    if step >= total_steps || warmup_steps >= total_steps || lr_final > lr_init || lr_final < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "schedule needs step < total, warmup < total and 0 <= lr_final <= lr_init \
             (step={step}, total={total_steps}, warmup={warmup_steps}, lr_init={lr_init}, lr_final={lr_final})"
        )));
    }
    if step < warmup_steps {
        return Ok(lr_init * step as f64 / warmup_steps as f64);
    }
    let span = total_steps - 1 - warmup_steps;
    if span == 0 {
        return Ok(lr_init);
    }
    let progress = (step - warmup_steps) as f64 / span as f64;
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    Ok(lr_final + (lr_init - lr_final) * cosine)
}

#[cfg(test)]
mod tests {
    use super::*;

    const INIT: f64 = 5e-4;
    const FINAL: f64 = 1e-6;

    #[test]
    fn peak_after_warmup() {
        assert_eq!(lr_schedule(200, 10_000, 200, INIT, FINAL).unwrap(), 5e-4);
    }

    #[test]
    fn reaches_final_at_last_step() {
        let lr = lr_schedule(9_999, 10_000, 200, INIT, FINAL).unwrap();
        assert!((lr - 1e-6).abs() < 1e-9);
    }

    #[test]
    fn cosine_midpoint() {
        // span from 200 to 9999 has midpoint 200 + 9799/2; use an even span
        let lr = lr_schedule(600, 1001, 200, INIT, FINAL).unwrap();
        assert!((lr - (INIT + FINAL) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn warmup_is_linear_from_zero() {
        assert_eq!(lr_schedule(0, 100, 10, INIT, FINAL).unwrap(), 0.0);
        assert!((lr_schedule(5, 100, 10, INIT, FINAL).unwrap() - INIT / 2.0).abs() < 1e-15);
    }

    #[test]
    fn monotone_after_warmup() {
        let lrs: Vec<f64> = (10..100)
            .map(|s| lr_schedule(s, 100, 10, INIT, FINAL).unwrap())
            .collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn invalid_ranges() {
        assert!(lr_schedule(100, 100, 10, INIT, FINAL).is_err());
        assert!(lr_schedule(0, 100, 100, INIT, FINAL).is_err());
        assert!(lr_schedule(0, 100, 10, FINAL, INIT).is_err());
    }
}
