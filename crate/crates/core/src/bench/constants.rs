//! Every constant behind the synthetic systems. Bump `VERSION` whenever a
//! value changes so stored results can be matched to the surrogates that
//! produced them.

pub const VERSION: u32 = 1;

/// Default half-width of the contaminated system's box `[-5, 5]^d`.
pub const CONTAMINATED_HALF_WIDTH: f64 = 5.0;

/// Dense grid resolution per axis for `f_max` when `d <= F_MAX_GRID_MAX_DIM`.
pub const F_MAX_GRID_POINTS: usize = 101;
pub const F_MAX_GRID_MAX_DIM: usize = 3;
/// Random samples for `f_max` in higher dimensions.
pub const F_MAX_RANDOM_SAMPLES: usize = 100_000;
pub const F_MAX_SEED: u64 = 0x666d_6178;
/// Pattern-search halvings after the grid or random stage.
pub const F_MAX_REFINE_STEPS: usize = 40;

pub mod state {
    pub const DIM: usize = 4;
    /// Objective returned inside the fail region.
    pub const SENTINEL: f64 = 0.30;
    pub const NOISE_SD: f64 = 0.01;
    /// Score floor away from both bumps.
    pub const BASE: f64 = 0.35;
    /// Global bump, centered just inside the fail region so the maximum
    /// sits on its boundary.
    pub const GLOBAL_CENTER: [f64; 4] = [0.62, 0.62, 0.5, 0.4];
    pub const GLOBAL_HEIGHT: f64 = 0.55;
    pub const GLOBAL_WIDTH: f64 = 0.25;
    pub const LOCAL_CENTER: [f64; 4] = [0.15, 0.1, 0.9, 0.9];
    pub const LOCAL_HEIGHT: f64 = 0.35;
    pub const LOCAL_WIDTH: f64 = 0.15;
    /// Fail sub-box: the high-complexity end of the first axis.
    pub const FAIL_LOWER: [f64; 1] = [0.6];
}

pub mod multitask {
    /// Dimension of `x` without the task coordinate.
    pub const DIM: usize = 1;
    pub const LOWER: f64 = 0.0;
    pub const UPPER: f64 = 1.0;
    pub const ALPHA: [f64; 2] = [0.0, 1.0];
    pub const BETA: [f64; 2] = [1.0, 2.0];
    pub const NOISE_SD: f64 = 0.05;
    /// Latent `h(x) = sum_j sin(H_FREQ x_j) + H_QUAD x_j^2`.
    pub const H_FREQ: f64 = 6.0;
    pub const H_QUAD: f64 = 0.5;
}

pub mod basin {
    pub const LOWER: f64 = -2.0;
    pub const UPPER: f64 = 2.0;
    pub const MU: [f64; 2] = [0.4, -0.7];
    pub const A: [f64; 2] = [4.0, 2.0];
    pub const B: [f64; 2] = [2.0, 5.0];
    pub const C: f64 = 0.5;
    pub const SIGMA2: f64 = 0.01;
}

pub mod phase {
    pub const LOWER: f64 = 0.0;
    pub const UPPER: f64 = 10.0;
    pub const M: [f64; 2] = [-2.0, 1.5];
    pub const S: [f64; 2] = [3.0, 2.0];
    pub const MU: [f64; 2] = [3.0, 7.0];
    pub const B: [f64; 2] = [0.0, 0.0];
    pub const SIGMA2: f64 = 0.01;
}
