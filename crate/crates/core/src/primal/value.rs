use std::io::{Read, Write};

use crate::bases::IntervalBasis;
use crate::error::{check_len, Error, Result};
use crate::market::{Payoff, PayoffKind};
use crate::tt::{read_f64, read_u64, TensorTrain};

/// `v(x) = Σ_α V_α Π_k B_{α_k}(x_k) + c_φ φ(x)`.
#[derive(Clone, Debug)]
pub struct ValueFunctional {
    pub(crate) tt: TensorTrain,
    pub(crate) payoff_coefficient: f64,
    pub(crate) basis: IntervalBasis,
    pub(crate) payoff: Payoff,
}

impl ValueFunctional {
    pub fn new(tt: TensorTrain, payoff_coefficient: f64, basis: IntervalBasis, payoff: Payoff) -> Result<Self> {
        check_len(payoff.dim(), tt.order())?;
        if tt.mode_dims().iter().any(|&p| p != basis.len()) {
            return Err(Error::InvalidShape("every mode must match the basis size".into()));
        }
        Ok(Self {
            tt,
            payoff_coefficient,
            basis,
            payoff,
        })
    }

    pub fn tt(&self) -> &TensorTrain {
        &self.tt
    }

    pub fn payoff_coefficient(&self) -> f64 {
        self.payoff_coefficient
    }

    pub fn basis(&self) -> &IntervalBasis {
        &self.basis
    }

    pub fn payoff(&self) -> &Payoff {
        &self.payoff
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let p = self.basis.len();
        let mut f = vec![0.0; p];
        let mut v = vec![1.0];
        for (core, &xk) in self.tt.cores().iter().zip(x) {
            self.basis.eval_into(xk, &mut f);
            v = core.push_left(&v, &f);
        }
        v[0] + self.payoff_coefficient * self.payoff.eval(x)
    }

    /// Header (`a`, `b`, `p`, `c_φ`, payoff kind, strike, weights) followed
    /// by the serialized train.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let (a, b) = self.basis.interval();
        w.write_all(&a.to_le_bytes())?;
        w.write_all(&b.to_le_bytes())?;
        w.write_all(&(self.basis.len() as u64).to_le_bytes())?;
        w.write_all(&self.payoff_coefficient.to_le_bytes())?;
        let kind: u64 = match self.payoff.kind {
            PayoffKind::BasketPut => 0,
            PayoffKind::MaxCall => 1,
        };
        w.write_all(&kind.to_le_bytes())?;
        w.write_all(&self.payoff.strike.to_le_bytes())?;
        w.write_all(&(self.payoff.weights.len() as u64).to_le_bytes())?;
        for v in &self.payoff.weights {
            w.write_all(&v.to_le_bytes())?;
        }
        self.tt.write_to(w)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let a = read_f64(&mut r)?;
        let b = read_f64(&mut r)?;
        let p = read_u64(&mut r)? as usize;
        if p == 0 || p > 64 {
            return Err(Error::Format(format!("implausible basis size {p}")));
        }
        let payoff_coefficient = read_f64(&mut r)?;
        let kind = match read_u64(&mut r)? {
            0 => PayoffKind::BasketPut,
            1 => PayoffKind::MaxCall,
            other => return Err(Error::Format(format!("unknown payoff kind {other}"))),
        };
        let strike = read_f64(&mut r)?;
        let d = read_u64(&mut r)? as usize;
        if d == 0 || d > 1 << 20 {
            return Err(Error::Format(format!("implausible asset count {d}")));
        }
        let weights = (0..d).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let tt = TensorTrain::read_from(r)?;
        let basis = IntervalBasis::new(a, b, p)?;
        Self::new(tt, payoff_coefficient, basis, Payoff::new(kind, strike, weights)?)
    }
}

/// Exercise decision at one date.
#[derive(Clone, Debug)]
pub enum ExerciseRule {
    /// No regression was possible; continue.
    Never,
    /// Exercise when in the money and the payoff reaches the continuation value.
    Fitted(ValueFunctional),
}

impl ExerciseRule {
    #[inline]
    pub fn exercise(&self, state: &[f64], discounted_payoff: f64) -> bool {
        match self {
            Self::Never => false,
            Self::Fitted(v) => discounted_payoff > 0.0 && discounted_payoff >= v.eval(state),
        }
    }
}
