use super::{OptConfig, Schedule};

/// Learning rate at `step`; steps outside `[0, total_steps]` are clamped.
pub fn schedule_lr(cfg: &OptConfig, step: usize) -> f64 {
    match cfg.schedule {
        Schedule::Constant => cfg.lr_peak,
        Schedule::OneCycle { warmup_fraction } => {
            let total = cfg.total_steps as f64;
            let t = (step as f64).min(total);
            let warm = warmup_fraction * total;
            if t < warm {
                cfg.lr_peak * t / warm
            } else if total > warm {
                cfg.lr_peak * (total - t) / (total - warm)
            } else {
                cfg.lr_peak
            }
        }
    }
}
