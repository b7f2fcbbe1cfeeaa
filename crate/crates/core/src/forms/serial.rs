use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize, Serializer};

use super::{Basis, BigradedForm, FormsError, Poly};

/// JSON layout of a form: `{"n", "terms": [{"dx", "dy", "poly": [...]}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormDocument {
    pub n: usize,
    pub terms: Vec<TermDocument>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermDocument {
    pub dx: Vec<usize>,
    pub dy: Vec<usize>,
    pub poly: Vec<MonomialDocument>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonomialDocument {
    pub exps: Vec<u32>,
    pub num: i64,
    pub den: i64,
}

pub(super) fn to_document(form: &BigradedForm) -> Result<FormDocument, FormsError> {
    let mut terms = Vec::new();
    for (basis, poly) in form.terms() {
        let mut monomials = Vec::new();
        for (exps, c) in poly.terms() {
            let overflow = || FormsError::CoefficientOverflow(c.to_string());
            monomials.push(MonomialDocument {
                exps: exps.clone(),
                num: c.numer().to_i64().ok_or_else(overflow)?,
                den: c.denom().to_i64().ok_or_else(overflow)?,
            });
        }
        terms.push(TermDocument {
            dx: basis.dx.clone(),
            dy: basis.dy.clone(),
            poly: monomials,
        });
    }
    Ok(FormDocument {
        n: form.dim(),
        terms,
    })
}

pub(super) fn from_document(doc: &FormDocument) -> Result<BigradedForm, FormsError> {
    let n = doc.n;
    let mut form = BigradedForm::zero(n);
    for term in &doc.terms {
        let mut poly = Poly::zero(n);
        for m in &term.poly {
            if m.exps.len() != 2 * n {
                return Err(FormsError::InvalidBasis(format!(
                    "exponent vector of length {} for n = {n}",
                    m.exps.len()
                )));
            }
            if m.den == 0 {
                return Err(FormsError::InvalidBasis("zero denominator".into()));
            }
            let c = BigRational::new(BigInt::from(m.num), BigInt::from(m.den));
            if !c.is_zero() {
                poly = &poly + &Poly::monomial(n, m.exps.clone(), c);
            }
        }
        let basis = Basis {
            dx: term.dx.clone(),
            dy: term.dy.clone(),
        };
        form = form.add(&BigradedForm::term(n, basis, poly)?)?;
    }
    Ok(form)
}

pub(super) fn optional_rational<S: Serializer>(
    value: &Option<BigRational>,
    s: S,
) -> Result<S::Ok, S::Error> {
    match value {
        Some(c) => s.serialize_str(&c.to_string()),
        None => s.serialize_none(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;

    #[test]
    fn document_shape() {
        let p = Poly::from_expression(&Expression::parse("x1*y1/2", 1).unwrap()).unwrap();
        let form = BigradedForm::dx(1, 1).mul_poly(&p);
        let json = serde_json::to_string(&form.to_document().unwrap()).unwrap();
        assert_eq!(
            json,
            r#"{"n":1,"terms":[{"dx":[1],"dy":[],"poly":[{"exps":[1,1],"num":1,"den":2}]}]}"#
        );
        let back: FormDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(BigradedForm::from_document(&back).unwrap(), form);
    }

    #[test]
    fn rejects_malformed_documents() {
        let doc = FormDocument {
            n: 1,
            terms: vec![TermDocument {
                dx: vec![1],
                dy: vec![],
                poly: vec![MonomialDocument {
                    exps: vec![1],
                    num: 1,
                    den: 1,
                }],
            }],
        };
        assert!(BigradedForm::from_document(&doc).is_err());
    }
}
