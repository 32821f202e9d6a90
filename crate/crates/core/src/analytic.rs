//! Closed-form solution of the linear driven damped oscillator
//! `x'' + delta x' + alpha x = gamma cos(omega t)`, `x(0) = x0`, `x'(0) = v0`.
//!
//! Used as an exact reference for the `beta = 0` Duffing case. Not defined at
//! undamped resonance (`delta = 0`, `alpha = omega^2`).

#[derive(Debug, Clone, Copy)]
enum Homogeneous {
    Under { mu: f64, nu: f64, c0: f64, k: f64 },
    Over { r1: f64, r2: f64, a: f64, b: f64 },
    Critical { mu: f64, c0: f64, k: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct LinearOscillator {
    delta: f64,
    alpha: f64,
    gamma: f64,
    omega: f64,
    // particular solution R cos(wt) + S sin(wt)
    r: f64,
    s: f64,
    hom: Homogeneous,
}

impl LinearOscillator {
    pub fn new(delta: f64, alpha: f64, gamma: f64, omega: f64, x0: f64, v0: f64) -> Self {
        let detune = alpha - omega * omega;
        let den = detune * detune + (delta * omega) * (delta * omega);
        let (r, s) = if gamma == 0.0 {
            (0.0, 0.0)
        } else {
            (gamma * detune / den, gamma * delta * omega / den)
        };
        let c0 = x0 - r;
        let c1 = v0 - s * omega;
        let mu = -0.5 * delta;
        let disc = 0.25 * delta * delta - alpha;
        let hom = if disc.abs() < 1e-12 * (1.0 + alpha.abs()) {
            Homogeneous::Critical {
                mu,
                c0,
                k: c1 - mu * c0,
            }
        } else if disc < 0.0 {
            let nu = (-disc).sqrt();
            Homogeneous::Under {
                mu,
                nu,
                c0,
                k: (c1 - mu * c0) / nu,
            }
        } else {
            let root = disc.sqrt();
            let (r1, r2) = (mu + root, mu - root);
            let a = (c1 - r2 * c0) / (r1 - r2);
            Homogeneous::Over {
                r1,
                r2,
                a,
                b: c0 - a,
            }
        };
        Self {
            delta,
            alpha,
            gamma,
            omega,
            r,
            s,
            hom,
        }
    }

    pub fn x(&self, t: f64) -> f64 {
        let (c, sn) = ((self.omega * t).cos(), (self.omega * t).sin());
        let xp = self.r * c + self.s * sn;
        let xh = match self.hom {
            Homogeneous::Under { mu, nu, c0, k } => (mu * t).exp() * (c0 * (nu * t).cos() + k * (nu * t).sin()),
            Homogeneous::Over { r1, r2, a, b } => a * (r1 * t).exp() + b * (r2 * t).exp(),
            Homogeneous::Critical { mu, c0, k } => (mu * t).exp() * (c0 + k * t),
        };
        xp + xh
    }

    pub fn xdot(&self, t: f64) -> f64 {
        let (c, sn) = ((self.omega * t).cos(), (self.omega * t).sin());
        let xp = self.omega * (-self.r * sn + self.s * c);
        let xh = match self.hom {
            Homogeneous::Under { mu, nu, c0, k } => {
                let e = (mu * t).exp();
                let (cn, sv) = ((nu * t).cos(), (nu * t).sin());
                mu * e * (c0 * cn + k * sv) + e * nu * (-c0 * sv + k * cn)
            }
            Homogeneous::Over { r1, r2, a, b } => a * r1 * (r1 * t).exp() + b * r2 * (r2 * t).exp(),
            Homogeneous::Critical { mu, c0, k } => {
                let e = (mu * t).exp();
                mu * e * (c0 + k * t) + e * k
            }
        };
        xp + xh
    }

    pub fn xddot(&self, t: f64) -> f64 {
        self.gamma * (self.omega * t).cos() - self.delta * self.xdot(t) - self.alpha * self.x(t)
    }
}
