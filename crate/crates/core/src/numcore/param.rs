use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{NumError, Tensor};
use crate::Scalar;

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

/// Named parameters, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: BTreeMap<String, ParamId>,
}

const HEADER: &str = "# physkit parameters v1";

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<ParamId, NumError> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(NumError::Contract(format!("invalid parameter name {name:?}")));
        }
        if self.by_name.contains_key(&name) {
            return Err(NumError::Contract(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.clone(),
            value,
            grad,
            trainable,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<(), NumError> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(NumError::shape("set_value", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_trainable_elements(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    /// Copies values by name from `other`. Every parameter of `self` must be
    /// present in `other` with the same shape.
    pub fn load_values_from(&mut self, other: &ParamStore<T>) -> Result<(), NumError> {
        for p in &mut self.params {
            let src = other
                .by_name(&p.name)
                .ok_or_else(|| NumError::Contract(format!("parameter {:?} missing from source", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(NumError::shape("load_values_from", p.value.shape(), src.value.shape()));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }

    /// One line per parameter: `name<TAB>trainable<TAB>d0xd1x..<TAB>v0 v1 ..`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for p in &self.params {
            let dims: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
            let _ = write!(out, "{}\t{}\t{}\t", p.name, u8::from(p.trainable), dims.join("x"));
            for (i, v) in p.value.data().iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, NumError> {
        let mut store = ParamStore::new();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            _ => {
                return Err(NumError::Parse {
                    line: 1,
                    msg: format!("expected header {HEADER:?}"),
                })
            }
        }
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| NumError::Parse { line: line_no, msg };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 tab-separated fields, found {}", fields.len())));
            }
            let trainable = match fields[1] {
                "1" => true,
                "0" => false,
                other => return Err(bad(format!("trainable flag must be 0 or 1, got {other:?}"))),
            };
            let shape = fields[2]
                .split('x')
                .map(|d| d.parse::<usize>().map_err(|e| bad(format!("bad dimension {d:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let data = fields[3]
                .split_ascii_whitespace()
                .map(|v| v.parse::<T>().map_err(|_| bad(format!("bad value {v:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let value = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
            store.add(fields[0], value, trainable).map_err(|e| bad(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_text(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::zeros(&[2]), true).unwrap();
        assert!(s.add("w", Tensor::zeros(&[3]), true).is_err());
        assert!(s.add("has space", Tensor::zeros(&[3]), true).is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = format!("{HEADER}\nw\t1\t2\t1 2\nv\t1\t2\t1 oops\n");
        match ParamStore::<f64>::from_text(&text) {
            Err(NumError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(ParamStore::<f64>::from_text("nope\n").is_err());
    }

    proptest! {
        #[test]
        fn text_roundtrip_is_exact(values in proptest::collection::vec(-1e6f64..1e6, 1..40), frozen in any::<bool>()) {
            let mut s = ParamStore::new();
            s.add("a.b", Tensor::vector(&values).unwrap(), true).unwrap();
            s.add("c", Tensor::new(vec![1, values.len()], values.iter().map(|v| v * 1e-9).collect()).unwrap(), !frozen).unwrap();
            let back = ParamStore::<f64>::from_text(&s.to_text()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
