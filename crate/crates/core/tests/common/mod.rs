//! Oracles shared by the integration tests.

/// Exact solution of the Riemann problem for an ideal gas, sampled at
/// `s = (x - x0) / t`. States are `[rho, u, p]`.
pub fn riemann(l: [f64; 3], r: [f64; 3], gamma: f64, s: f64) -> [f64; 3] {
    let g = gamma;
    let c = |q: [f64; 3]| (g * q[2] / q[0]).sqrt();
    let (cl, cr) = (c(l), c(r));
    // pressure function of one side and its derivative
    let f = |p: f64, q: [f64; 3], cq: f64| -> (f64, f64) {
        if p > q[2] {
            let a = 2.0 / ((g + 1.0) * q[0]);
            let b = (g - 1.0) / (g + 1.0) * q[2];
            let sq = (a / (p + b)).sqrt();
            ((p - q[2]) * sq, sq * (1.0 - 0.5 * (p - q[2]) / (p + b)))
        } else {
            let e = (g - 1.0) / (2.0 * g);
            let ratio = p / q[2];
            (2.0 * cq / (g - 1.0) * (ratio.powf(e) - 1.0), ratio.powf(-(g + 1.0) / (2.0 * g)) / (q[0] * cq))
        }
    };
    let mut p = 0.5 * (l[2] + r[2]);
    for _ in 0..100 {
        let (fl, dl) = f(p, l, cl);
        let (fr, dr) = f(p, r, cr);
        let next = (p - (fl + fr + r[1] - l[1]) / (dl + dr)).max(1e-12);
        let done = (next - p).abs() < 1e-14 * p;
        p = next;
        if done {
            break;
        }
    }
    let u = 0.5 * (l[1] + r[1]) + 0.5 * (f(p, r, cr).0 - f(p, l, cl).0);
    let gm = (g - 1.0) / (g + 1.0);
    if s <= u {
        let q = l;
        if p > q[2] {
            let shock = q[1] - cl * ((g + 1.0) / (2.0 * g) * p / q[2] + (g - 1.0) / (2.0 * g)).sqrt();
            if s < shock {
                q
            } else {
                [q[0] * (p / q[2] + gm) / (gm * p / q[2] + 1.0), u, p]
            }
        } else {
            let head = q[1] - cl;
            let cstar = cl * (p / q[2]).powf((g - 1.0) / (2.0 * g));
            if s < head {
                q
            } else if s > u - cstar {
                [q[0] * (p / q[2]).powf(1.0 / g), u, p]
            } else {
                let k = 2.0 / (g + 1.0) + gm / cl * (q[1] - s);
                [q[0] * k.powf(2.0 / (g - 1.0)), 2.0 / (g + 1.0) * (cl + (g - 1.0) / 2.0 * q[1] + s), q[2] * k.powf(2.0 * g / (g - 1.0))]
            }
        }
    } else {
        let q = r;
        if p > q[2] {
            let shock = q[1] + cr * ((g + 1.0) / (2.0 * g) * p / q[2] + (g - 1.0) / (2.0 * g)).sqrt();
            if s > shock {
                q
            } else {
                [q[0] * (p / q[2] + gm) / (gm * p / q[2] + 1.0), u, p]
            }
        } else {
            let head = q[1] + cr;
            let cstar = cr * (p / q[2]).powf((g - 1.0) / (2.0 * g));
            if s > head {
                q
            } else if s < u + cstar {
                [q[0] * (p / q[2]).powf(1.0 / g), u, p]
            } else {
                let k = 2.0 / (g + 1.0) - gm / cr * (q[1] - s);
                [q[0] * k.powf(2.0 / (g - 1.0)), 2.0 / (g + 1.0) * (-cr + (g - 1.0) / 2.0 * q[1] + s), q[2] * k.powf(2.0 * g / (g - 1.0))]
            }
        }
    }
}
