//! Dormand-Prince 8(5,3) with seventh-order dense output.
//!
//! Stage layout: s[0] = f(t, y), s[1..=11] the explicit stages (s[11] at
//! t + h), s[12] = f(t + h, y_new), s[13..=15] the extra dense-output stages.

const NSTAGE: usize = 16;

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options { rtol: 1e-12, atol: 1e-14, max_steps: 200_000 }
    }
}

#[derive(Debug, Clone)]
struct DenseStep<const N: usize> {
    t0: f64,
    h: f64,
    cont: [[f64; N]; 8],
}

/// Accepted steps with their interpolants.
#[derive(Debug, Clone)]
pub struct Trajectory<const N: usize> {
    steps: Vec<DenseStep<N>>,
    t_start: f64,
    y_start: [f64; N],
    t_end: f64,
    y_end: [f64; N],
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntegrationError {
    MaxSteps,
    StepUnderflow,
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, coef: &[f64], s: &[[f64; N]; NSTAGE], upto: usize) -> [f64; N] {
    let mut out = *y;
    for (j, &c) in coef.iter().enumerate().take(upto) {
        if c != 0.0 {
            for i in 0..N {
                out[i] += h * c * s[j][i];
            }
        }
    }
    out
}

fn initial_step<const N: usize, F: FnMut(f64, &[f64; N]) -> [f64; N]>(
    f: &mut F,
    t: f64,
    y: &[f64; N],
    f0: &[f64; N],
    dir: f64,
    opts: &Options,
) -> f64 {
    let sk = |i: usize| opts.atol + opts.rtol * y[i].abs();
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..N {
        dnf += (f0[i] / sk(i)).powi(2);
        dny += (y[i] / sk(i)).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { 0.01 * (dny / dnf).sqrt() };
    h *= dir;
    let mut y1 = *y;
    for i in 0..N {
        y1[i] += h * f0[i];
    }
    let f1 = f(t + h, &y1);
    let mut der2 = 0.0;
    for i in 0..N {
        der2 += ((f1[i] - f0[i]) / sk(i)).powi(2);
    }
    let der2 = der2.sqrt() / h.abs();
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 { (h.abs() * 1e-3).max(1e-6) } else { (0.01 / der12).powf(1.0 / 8.0) };
    dir * (100.0 * h.abs()).min(h1)
}

/// Integrates y' = f(t, y) from t0 to t_end (either direction).
pub fn integrate<const N: usize, F: FnMut(f64, &[f64; N]) -> [f64; N]>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &Options,
) -> Result<Trajectory<N>, IntegrationError> {
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut traj = Trajectory { steps: Vec::new(), t_start: t0, y_start: y0, t_end: t0, y_end: y0, evaluations: 0 };
    if t_end == t0 {
        return Ok(traj);
    }
    let mut s = [[0.0; N]; NSTAGE];
    let mut t = t0;
    let mut y = y0;
    s[0] = f(t, &y);
    let mut h = initial_step(&mut f, t, &y, &s[0], dir, opts);
    let mut evals = 2;
    let mut last_rejected = false;
    let span = (t_end - t0).abs();
    for _ in 0..opts.max_steps {
        let mut last = false;
        if (t + 1.01 * h - t_end) * dir >= 0.0 {
            h = t_end - t;
            last = true;
        }
        if h.abs() <= 1e-15 * span.max(t.abs()) {
            return Err(IntegrationError::StepUnderflow);
        }
        for i in 1..12 {
            let yi = axpy(&y, h, &A[i], &s, i);
            s[i] = f(t + C[i] * h, &yi);
        }
        evals += 11;
        let y_new = axpy(&y, h, &B, &s, 12);
        // error estimates of orders 5 and 3
        let mut err = 0.0;
        let mut err2 = 0.0;
        for i in 0..N {
            let sk = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            let mut slope = 0.0;
            let mut e5 = 0.0;
            for j in 0..12 {
                slope += B[j] * s[j][i];
                e5 += ER[j] * s[j][i];
            }
            let e3 = slope - BHH[0] * s[0][i] - BHH[1] * s[8][i] - BHH[2] * s[11][i];
            err2 += (e3 / sk).powi(2);
            err += (e5 / sk).powi(2);
        }
        let mut deno = err + 0.01 * err2;
        if deno <= 0.0 {
            deno = 1.0;
        }
        let err = h.abs() * err * (1.0 / (deno * N as f64)).sqrt();
        let fac11 = err.powf(1.0 / 8.0);
        let fac = (1.0 / 6.0f64).max(3.0f64.min(fac11 / 0.9));
        let mut h_new = h / fac;
        if err <= 1.0 {
            s[12] = f(t + h, &y_new);
            evals += 1;
            let mut cont = [[0.0; N]; 8];
            for i in 0..N {
                let ydiff = y_new[i] - y[i];
                let bspl = h * s[0][i] - ydiff;
                cont[0][i] = y[i];
                cont[1][i] = ydiff;
                cont[2][i] = bspl;
                cont[3][i] = ydiff - h * s[12][i] - bspl;
            }
            for r in 0..3 {
                let yi = axpy(&y, h, &A_DENSE[r], &s, 13 + r);
                s[13 + r] = f(t + C_DENSE[r] * h, &yi);
            }
            evals += 3;
            for r in 0..4 {
                for i in 0..N {
                    let mut acc = 0.0;
                    for j in 0..NSTAGE {
                        acc += D[r][j] * s[j][i];
                    }
                    cont[4 + r][i] = h * acc;
                }
            }
            traj.steps.push(DenseStep { t0: t, h, cont });
            s[0] = s[12];
            y = y_new;
            t += h;
            if last_rejected {
                h_new = if dir > 0.0 { h_new.min(h) } else { h_new.max(h) };
            }
            last_rejected = false;
            if last {
                t = t_end;
                traj.t_end = t;
                traj.y_end = y;
                traj.evaluations = evals;
                return Ok(traj);
            }
        } else {
            h_new = h / 3.0f64.min(fac11 / 0.9);
            last_rejected = true;
        }
        h = h_new;
    }
    Err(IntegrationError::MaxSteps)
}

impl<const N: usize> Trajectory<N> {
    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn y_end(&self) -> [f64; N] {
        self.y_end
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Dense-output state at time t (clamped to the integrated span).
    pub fn eval(&self, t: f64) -> [f64; N] {
        if self.steps.is_empty() {
            return self.y_start;
        }
        let fwd = self.t_end >= self.t_start;
        let idx = if fwd {
            self.steps.partition_point(|st| st.t0 <= t)
        } else {
            self.steps.partition_point(|st| st.t0 >= t)
        };
        let st = &self.steps[idx.clamp(1, self.steps.len()) - 1];
        let sv = ((t - st.t0) / st.h).clamp(0.0, 1.0);
        let s1 = 1.0 - sv;
        let c = &st.cont;
        let mut out = [0.0; N];
        for i in 0..N {
            let conpar = c[4][i] + (c[5][i] + (c[6][i] + c[7][i] * sv) * s1) * sv;
            out[i] = c[0][i] + (c[1][i] + (c[2][i] + (c[3][i] + conpar * s1) * sv) * s1) * sv;
        }
        out
    }
}

const A: [[f64; 12]; 12] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.05260015195876773, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0197250569845379, 0.0591751709536137, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.02958758547680685, 0.0, 0.08876275643042054, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2413651341592667, 0.0, -0.8845494793282861, 0.924834003261792, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.037037037037037035, 0.0, 0.0, 0.17082860872947386, 0.12546768756682242, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.037109375, 0.0, 0.0, 0.17025221101954405, 0.06021653898045596, -0.017578125, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.03709200011850479, 0.0, 0.0, 0.17038392571223998, 0.10726203044637328, -0.015319437748624402, 0.008273789163814023, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.6241109587160757, 0.0, 0.0, -3.3608926294469414, -0.868219346841726, 27.59209969944671, 20.154067550477894, -43.48988418106996, 0.0, 0.0, 0.0, 0.0],
    [0.47766253643826434, 0.0, 0.0, -2.4881146199716677, -0.590290826836843, 21.230051448181193, 15.279233632882423, -33.28821096898486, -0.020331201708508627, 0.0, 0.0, 0.0],
    [-0.9371424300859873, 0.0, 0.0, 5.186372428844064, 1.0914373489967295, -8.149787010746927, -18.52006565999696, 22.739487099350505, 2.4936055526796523, -3.0467644718982196, 0.0, 0.0],
    [2.273310147516538, 0.0, 0.0, -10.53449546673725, -2.0008720582248625, -17.9589318631188, 27.94888452941996, -2.8589982771350235, -8.87285693353063, 12.360567175794303, 0.6433927460157636, 0.0],
];
const C: [f64; 12] = [0.0, 0.05260015195876773, 0.0789002279381516, 0.1183503419072274, 0.2816496580927726, 0.3333333333333333, 0.25, 0.3076923076923077, 0.6512820512820513, 0.6, 0.8571428571428571, 1.0];
const B: [f64; 12] = [0.054293734116568765, 0.0, 0.0, 0.0, 0.0, 4.450312892752409, 1.8915178993145003, -5.801203960010585, 0.3111643669578199, -0.1521609496625161, 0.20136540080403034, 0.04471061572777259];
const ER: [f64; 12] = [0.01312004499419488, 0.0, 0.0, 0.0, 0.0, -1.2251564463762044, -0.4957589496572502, 1.6643771824549864, -0.35032884874997366, 0.3341791187130175, 0.08192320648511571, -0.022355307863886294];
const BHH: [f64; 3] = [0.2440944881889764, 0.7338466882816118, 0.022058823529411766];
const A_DENSE: [[f64; 16]; 3] = [
    [0.056167502283047954, 0.0, 0.0, 0.0, 0.0, 0.0, 0.25350021021662483, -0.2462390374708025, -0.12419142326381637, 0.15329179827876568, 0.00820105229563469, 0.007567897660545699, -0.008298, 0.0, 0.0, 0.0],
    [0.03183464816350214, 0.0, 0.0, 0.0, 0.0, 0.028300909672366776, 0.053541988307438566, -0.05492374857139099, 0.0, 0.0, -0.00010834732869724932, 0.0003825710908356584, -0.00034046500868740456, 0.1413124436746325, 0.0, 0.0],
    [-0.42889630158379194, 0.0, 0.0, 0.0, 0.0, -4.697621415361164, 7.683421196062599, 4.06898981839711, 0.3567271874552811, 0.0, 0.0, 0.0, -0.0013990241651590145, 2.9475147891527724, -9.15095847217987, 0.0],
];
const C_DENSE: [f64; 3] = [0.1, 0.2, 0.7777777777777778];
const D: [[f64; 16]; 4] = [
    [-8.428938276109013, 0.0, 0.0, 0.0, 0.0, 0.5667149535193777, -3.0689499459498917, 2.38466765651207, 2.117034582445028, -0.871391583777973, 2.2404374302607883, 0.6315787787694688, -0.08899033645133331, 18.148505520854727, -9.194632392478356, -4.436036387594894],
    [10.427508642579134, 0.0, 0.0, 0.0, 0.0, 242.28349177525817, 165.20045171727028, -374.5467547226902, -22.113666853125306, 7.733432668472264, -30.674084731089398, -9.332130526430229, 15.697238121770845, -31.139403219565178, -9.35292435884448, 35.81684148639408],
    [19.985053242002433, 0.0, 0.0, 0.0, 0.0, -387.0373087493518, -189.17813819516758, 527.8081592054236, -11.57390253995963, 6.8812326946963, -1.0006050966910838, 0.7777137798053443, -2.778205752353508, -60.19669523126412, 84.32040550667716, 11.99229113618279],
    [-25.69393346270375, 0.0, 0.0, 0.0, 0.0, -154.18974869023643, -231.5293791760455, 357.6391179106141, 93.40532418362432, -37.45832313645163, 104.0996495089623, 29.8402934266605, -43.53345659001114, 96.32455395918828, -39.17726167561544, -149.72683625798564],
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_one_period() {
        let opts = Options::default();
        let tr = integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [1.0, 0.0], 2.0 * std::f64::consts::PI, &opts).unwrap();
        let y = tr.y_end();
        assert!((y[0] - 1.0).abs() < 1e-11 && y[1].abs() < 1e-11, "{y:?}");
        for k in 0..50 {
            let t = 0.1234 * k as f64;
            let v = tr.eval(t);
            assert!((v[0] - t.cos()).abs() < 1e-10, "t={t} {}", v[0] - t.cos());
            assert!((v[1] + t.sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_integration_retraces() {
        let opts = Options::default();
        let f = |_: f64, y: &[f64; 1]| [y[0]];
        let tr = integrate(f, 1.0, [1.0], -1.0, &opts).unwrap();
        assert!((tr.y_end()[0] - (-2.0f64).exp()).abs() < 1e-12);
        assert!((tr.eval(0.0)[0] - (-1.0f64).exp()).abs() < 1e-11);
    }
}
