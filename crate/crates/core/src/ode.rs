//! Adaptive explicit Runge–Kutta integration for small dense ODE systems.
//!
//! The default method is the 12-stage Dormand–Prince 8(5,3) pair (8th-order
//! propagation with a blended 5th/3rd-order error estimate); a 7-stage
//! Dormand–Prince 5(4) pair is available for cheaper low-accuracy runs.
//! Solutions are sampled on a caller-supplied monotone grid by clamping the
//! adaptive step to land exactly on each requested point, which avoids a dense
//! interpolant while keeping the error control of the embedded pair.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("exceeded {0} integration steps")]
    TooManySteps(usize),
    #[error("output grid must be strictly monotone starting at the initial point")]
    BadGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RkMethod {
    /// Dormand–Prince 5(4), 7 stages.
    Order5,
    /// Dormand–Prince 8(5,3), 12 stages.
    Order8,
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub method: RkMethod,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Forced-acceptance step floor. Steps at or below this size are accepted
    /// even when the error estimate exceeds the tolerance, which lets the
    /// integrator hop over isolated non-smooth points (such as removable
    /// coordinate singularities whose regularized right-hand side has a
    /// sub-floor-width notch) instead of stalling. Zero disables the floor and
    /// restores strict tolerance control with underflow abort.
    pub min_step: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            method: RkMethod::Order8,
            rtol: 1e-9,
            atol: 1e-12,
            max_steps: 10_000_000,
            min_step: 0.0,
        }
    }
}

/// States sampled at the requested grid points. When the right-hand side
/// rejects a state mid-run, or the controlled step collapses while chasing a
/// blowing-up derivative, the solution is truncated and `aborted_at` records
/// where integration stopped; `states` then holds fewer entries than the grid.
#[derive(Debug, Clone)]
pub struct GridSolution {
    pub states: Vec<DVector<f64>>,
    pub aborted_at: Option<f64>,
}

/// Integrates `y' = f(t, y)` from `grid[0]` through the remaining grid points.
///
/// `f` writes the derivative into its third argument and may return `false` to
/// reject the state, which aborts integration at the current point. The grid
/// may run in either direction but must be strictly monotone.
pub fn integrate_grid<F>(
    mut f: F,
    y0: &DVector<f64>,
    grid: &[f64],
    opts: &OdeOptions,
) -> Result<GridSolution, OdeError>
where
    F: FnMut(f64, &DVector<f64>, &mut DVector<f64>) -> bool,
{
    if grid.len() < 2 {
        return Err(OdeError::BadGrid);
    }
    let dir = (grid[1] - grid[0]).signum();
    if dir == 0.0 || grid.windows(2).any(|w| (w[1] - w[0]) * dir <= 0.0) {
        return Err(OdeError::BadGrid);
    }

    let n = y0.len();
    let mut t = grid[0];
    let mut y = y0.clone();
    let mut dy = DVector::zeros(n);
    if !f(t, &y, &mut dy) {
        return Ok(GridSolution {
            states: Vec::new(),
            aborted_at: Some(t),
        });
    }

    let mut states = Vec::with_capacity(grid.len());
    states.push(y.clone());

    let span = (grid[grid.len() - 1] - grid[0]).abs();
    let mut h = dir * (span / (grid.len() as f64 - 1.0)).min(initial_step(&y, &dy, opts));
    let stages = match opts.method {
        RkMethod::Order5 => 7,
        RkMethod::Order8 => 12,
    };
    let mut k: Vec<DVector<f64>> = (0..stages).map(|_| DVector::zeros(n)).collect();
    k[0].copy_from(&dy);
    let mut ytmp = DVector::zeros(n);
    let mut steps = 0usize;
    let order_inv = match opts.method {
        RkMethod::Order5 => 1.0 / 5.0,
        RkMethod::Order8 => 1.0 / 8.0,
    };

    for &t_out in &grid[1..] {
        while (t_out - t) * dir > 1e-14 * span.max(1.0) {
            steps += 1;
            if steps > opts.max_steps {
                return Err(OdeError::TooManySteps(opts.max_steps));
            }
            if opts.min_step > 0.0 && h.abs() < opts.min_step {
                h = dir * opts.min_step;
            }
            if h.abs() < 1e-14 * t.abs().max(1.0) {
                return Ok(GridSolution {
                    states,
                    aborted_at: Some(t),
                });
            }
            let mut hs = h;
            let mut landing = false;
            if (t + hs - t_out) * dir >= 0.0 {
                hs = t_out - t;
                landing = true;
            }

            let ok = match opts.method {
                RkMethod::Order5 => stage_sweep(&mut f, t, &y, hs, &DOPRI5_A, &DOPRI5_C, &mut k, &mut ytmp),
                RkMethod::Order8 => stage_sweep(&mut f, t, &y, hs, &DOP853_A, &DOP853_C, &mut k, &mut ytmp),
            };
            if !ok {
                return Ok(GridSolution {
                    states,
                    aborted_at: Some(t),
                });
            }

            // 8th-order (resp. 5th-order) solution and scaled error norm.
            ytmp.copy_from(&y);
            let err = match opts.method {
                RkMethod::Order5 => {
                    for (i, ki) in k.iter().enumerate() {
                        if DOPRI5_B[i] != 0.0 {
                            ytmp.axpy(hs * DOPRI5_B[i], ki, 1.0);
                        }
                    }
                    let mut e = 0.0;
                    for c in 0..n {
                        let de: f64 = (0..7).map(|i| DOPRI5_E[i] * k[i][c]).sum();
                        let sc = opts.atol + opts.rtol * y[c].abs().max(ytmp[c].abs());
                        e += (hs * de / sc).powi(2);
                    }
                    (e / n as f64).sqrt()
                }
                RkMethod::Order8 => {
                    for (i, ki) in k.iter().enumerate() {
                        if DOP853_B[i] != 0.0 {
                            ytmp.axpy(hs * DOP853_B[i], ki, 1.0);
                        }
                    }
                    let mut err5 = 0.0;
                    let mut err3 = 0.0;
                    for c in 0..n {
                        let e5: f64 = (0..12).map(|i| DOP853_ER[i] * k[i][c]).sum();
                        let e3: f64 = (0..12).map(|i| DOP853_B[i] * k[i][c]).sum::<f64>()
                            - DOP853_BHH1 * k[0][c]
                            - DOP853_BHH2 * k[8][c]
                            - DOP853_BHH3 * k[11][c];
                        let sc = opts.atol + opts.rtol * y[c].abs().max(ytmp[c].abs());
                        err5 += (e5 / sc).powi(2);
                        err3 += (e3 / sc).powi(2);
                    }
                    let deno = (err5 + 0.01 * err3).max(1e-300);
                    hs.abs() * err5 * (1.0 / (n as f64 * deno)).sqrt()
                }
            };

            let forced = opts.min_step > 0.0 && hs.abs() <= opts.min_step * (1.0 + 1e-12);
            if err <= 1.0 || forced {
                t += hs;
                y.copy_from(&ytmp);
                if !f(t, &y, &mut dy) {
                    return Ok(GridSolution {
                        states,
                        aborted_at: Some(t),
                    });
                }
                k[0].copy_from(&dy);
                if landing {
                    // keep the pre-clamp step for the next segment
                } else {
                    h = hs * step_factor(err, order_inv);
                }
            } else {
                h = hs * step_factor(err, order_inv);
            }
        }
        states.push(y.clone());
    }

    Ok(GridSolution {
        states,
        aborted_at: None,
    })
}

fn step_factor(err: f64, order_inv: f64) -> f64 {
    (0.9 * err.powf(-order_inv)).clamp(0.2, 6.0)
}

fn initial_step(y: &DVector<f64>, dy: &DVector<f64>, opts: &OdeOptions) -> f64 {
    let d0 = y.norm();
    let d1 = dy.norm();
    if d1 < 1e-10 {
        1e-4
    } else {
        (0.01 * (d0.max(opts.atol) / d1)).clamp(1e-8, 0.1)
    }
}

/// Evaluates all intermediate stages into `k[1..]`; `k[0]` must already hold
/// the derivative at `(t, y)`. Returns false if the right-hand side rejects.
fn stage_sweep<F>(
    f: &mut F,
    t: f64,
    y: &DVector<f64>,
    h: f64,
    a: &[&[f64]],
    c: &[f64],
    k: &mut [DVector<f64>],
    ytmp: &mut DVector<f64>,
) -> bool
where
    F: FnMut(f64, &DVector<f64>, &mut DVector<f64>) -> bool,
{
    for s in 1..k.len() {
        ytmp.copy_from(y);
        for (i, &aij) in a[s - 1].iter().enumerate() {
            if aij != 0.0 {
                let ki = std::mem::take(&mut k[i]);
                ytmp.axpy(h * aij, &ki, 1.0);
                k[i] = ki;
            }
        }
        let mut ks = std::mem::take(&mut k[s]);
        let ok = f(t + c[s] * h, ytmp, &mut ks);
        k[s] = ks;
        if !ok {
            return false;
        }
    }
    true
}

// Dormand–Prince 5(4) tableau (Hairer–Nørsett–Wanner coefficients).
const DOPRI5_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DOPRI5_A: [&[f64]; 6] = [
    &[0.2],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DOPRI5_B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DOPRI5_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

// Dormand–Prince 8(5,3) tableau (the 12 propagation stages of DOP853).
const DOP853_C: [f64; 12] = [
    0.0,
    0.526001519587677318785587544488e-1,
    0.789002279381515978178381316732e-1,
    0.118350341907227396726757197510,
    0.281649658092772603273242802490,
    1.0 / 3.0,
    0.25,
    0.307692307692307692307692307692,
    0.651282051282051282051282051282,
    0.6,
    0.857142857142857142857142857142,
    1.0,
];
const DOP853_A: [&[f64]; 11] = [
    &[5.26001519587677318785587544488e-2],
    &[1.97250569845378994544595329183e-2, 5.91751709536136983633785987549e-2],
    &[2.95875854768068491816892993775e-2, 0.0, 8.87627564304205475450678981324e-2],
    &[
        2.41365134159266685502369798665e-1,
        0.0,
        -8.84549479328286085344864962717e-1,
        9.24834003261792003115737966543e-1,
    ],
    &[
        3.7037037037037037037037037037e-2,
        0.0,
        0.0,
        1.70828608729473871279604482173e-1,
        1.25467687566822425016691814123e-1,
    ],
    &[
        3.7109375e-2,
        0.0,
        0.0,
        1.70252211019544039314978060272e-1,
        6.02165389804559606850219397283e-2,
        -1.7578125e-2,
    ],
    &[
        3.70920001185047927108779319836e-2,
        0.0,
        0.0,
        1.70383925712239993810214054705e-1,
        1.07262030446373284651809199168e-1,
        -1.53194377486244017527936158236e-2,
        8.27378916381402288758473766002e-3,
    ],
    &[
        6.24110958716075717114429577812e-1,
        0.0,
        0.0,
        -3.36089262944694129406857109825,
        -8.68219346841726006818189891453e-1,
        2.75920996994467083049415600797e1,
        2.01540675504778934086186788979e1,
        -4.34898841810699588477366255144e1,
    ],
    &[
        4.77662536438264365890433908527e-1,
        0.0,
        0.0,
        -2.48811461997166764192642586468,
        -5.90290826836842996371446475743e-1,
        2.12300514481811942347288949897e1,
        1.52792336328824235832596922938e1,
        -3.32882109689848629194453265587e1,
        -2.03312017085086261358222928593e-2,
    ],
    &[
        -9.3714243008598732571704021658e-1,
        0.0,
        0.0,
        5.18637242884406370830023853209,
        1.09143734899672957818500254654,
        -8.14978701074692612513997267357,
        -1.85200656599969598641566180701e1,
        2.27394870993505042818970056734e1,
        2.49360555267965238987089396762,
        -3.0467644718982195003823669022,
    ],
    &[
        2.27331014751653820792359768449,
        0.0,
        0.0,
        -1.05344954667372501984066689879e1,
        -2.00087205822486249909675718444,
        -1.79589318631187989172765950534e1,
        2.79488845294199600508499808837e1,
        -2.85899827713502369474065508674,
        -8.87285693353062954433549289258,
        1.23605671757943030647266201528e1,
        6.43392746015763530355970484046e-1,
    ],
];
const DOP853_B: [f64; 12] = [
    5.42937341165687622380535766363e-2,
    0.0,
    0.0,
    0.0,
    0.0,
    4.45031289275240888144113950566,
    1.89151789931450038304281599044,
    -5.8012039600105847814672114227,
    3.1116436695781989440891606237e-1,
    -1.52160949662516078556178806805e-1,
    2.01365400804030348374776537501e-1,
    4.47106157277725905176885569043e-2,
];
const DOP853_BHH1: f64 = 0.244094488188976377952755905512;
const DOP853_BHH2: f64 = 0.733846688281611857341361741547;
const DOP853_BHH3: f64 = 0.220588235294117647058823529412e-1;
const DOP853_ER: [f64; 12] = [
    0.1312004499419488073250102996e-1,
    0.0,
    0.0,
    0.0,
    0.0,
    -0.1225156446376204440720569753e1,
    -0.4957589496572501915214079952,
    0.1664377182454986536961530415e1,
    -0.3503288487499736816886487290,
    0.3341791187130174790297318841,
    0.8192320648511571246570742613e-1,
    -0.2235530786388629525884427845e-1,
];
