//! Polynomial expressions such as `0.5*x1^2*x2 - 3*x2 + 1`. In one
//! dimension `x` may stand for `x1`.

use std::collections::BTreeMap;

use fpf_core::Polynomial;

struct Lexer<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Lexer<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Result<f64, String> {
        self.skip_ws();
        let start = self.pos;
        let s = self.s;
        let digits = |p: &mut usize| {
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
        };
        digits(&mut self.pos);
        if self.pos < s.len() && s[self.pos] == b'.' {
            self.pos += 1;
            digits(&mut self.pos);
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let mut p = self.pos + 1;
            if p < s.len() && (s[p] == b'+' || s[p] == b'-') {
                p += 1;
            }
            if p < s.len() && s[p].is_ascii_digit() {
                digits(&mut p);
                self.pos = p;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).expect("ascii slice");
        text.parse().map_err(|_| format!("bad number at column {}", start + 1))
    }

    fn integer(&mut self) -> Result<u32, String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.s[start..self.pos])
            .expect("ascii slice")
            .parse()
            .map_err(|_| format!("expected an integer at column {}", start + 1))
    }
}

/// Parses a sum of monomials in `x1..x{dim}`. Like terms are combined.
pub fn parse_polynomial(text: &str, dim: usize) -> Result<Polynomial<f64>, String> {
    let mut lx = Lexer { s: text.as_bytes(), pos: 0 };
    let mut terms: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    let mut first = true;
    loop {
        let mut sign = 1.0;
        if lx.eat(b'-') {
            sign = -1.0;
        } else if !lx.eat(b'+') && !first {
            return Err(format!("expected `+` or `-` at column {}", lx.pos + 1));
        }
        first = false;
        let mut coeff = sign;
        let mut exps = vec![0u32; dim];
        let mut factors = 0;
        loop {
            match lx.peek() {
                Some(c) if c.is_ascii_digit() || c == b'.' => coeff *= lx.number()?,
                Some(b'x') => {
                    lx.pos += 1;
                    let var = match lx.s.get(lx.pos) {
                        Some(c) if c.is_ascii_digit() => lx.integer()? as usize,
                        _ if dim == 1 => 1,
                        _ => return Err(format!("variable needs an index 1..{dim} at column {}", lx.pos + 1)),
                    };
                    if var == 0 || var > dim {
                        return Err(format!("variable x{var} out of range 1..{dim}"));
                    }
                    let power = if lx.eat(b'^') { lx.integer()? } else { 1 };
                    exps[var - 1] += power;
                }
                Some(c) => return Err(format!("unexpected `{}` at column {}", c as char, lx.pos + 1)),
                None => return Err("expression ends early".into()),
            }
            factors += 1;
            if !lx.eat(b'*') {
                break;
            }
        }
        debug_assert!(factors > 0);
        *terms.entry(exps).or_insert(0.0) += coeff;
        if lx.peek().is_none() {
            break;
        }
    }
    let terms = terms.into_iter().filter(|(_, c)| *c != 0.0).collect();
    Ok(Polynomial::from_terms(dim, terms))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn univariate() {
        let p = parse_polynomial("x^3", 1).unwrap();
        assert_eq!(p.eval(&[2.0]), 8.0);
        let p = parse_polynomial(" -x + 2.5 ", 1).unwrap();
        assert_eq!(p.eval(&[1.0]), 1.5);
    }

    #[test]
    fn multivariate_and_like_terms() {
        let p = parse_polynomial("0.5*x1^2*x2 - 3*x2 + 1 + x2*3", 2).unwrap();
        assert_eq!(p.eval(&[2.0, 3.0]), 0.5 * 4.0 * 3.0 + 1.0);
        assert_eq!(p.terms().len(), 2);
    }

    #[test]
    fn exponent_notation() {
        let p = parse_polynomial("1e-3*x1 + 2E+1", 1).unwrap();
        assert!((p.eval(&[1000.0]) - 21.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        for (s, d) in [("", 1), ("x3", 2), ("x", 2), ("2 x", 1), ("x^", 1), ("x +", 1), ("y", 1), ("x0", 1)] {
            assert!(parse_polynomial(s, d).is_err(), "{s}");
        }
    }
}
