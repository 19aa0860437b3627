//! Named parameter storage with section tags, origin flags and freeze modes.

use std::collections::HashMap;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Coarse network section a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SectionTag {
    Bottom,
    Middle,
    Top,
}

impl std::fmt::Display for SectionTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SectionTag::Bottom => "bottom",
            SectionTag::Middle => "middle",
            SectionTag::Top => "top",
        })
    }
}

/// Who owns a parameter: the pretrained base, an injected adapter, or the
/// policy head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Base,
    Adapter,
    Head,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Base => "base",
            Origin::Adapter => "adapter",
            Origin::Head => "head",
        }
    }

    pub fn parse(s: &str) -> Option<Origin> {
        match s {
            "base" => Some(Origin::Base),
            "adapter" => Some(Origin::Adapter),
            "head" => Some(Origin::Head),
            _ => None,
        }
    }
}

/// Which parameters a bundle save or count should cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OriginFilter {
    Only(Origin),
    All,
}

impl OriginFilter {
    pub fn matches(self, origin: Origin) -> bool {
        match self {
            OriginFilter::Only(o) => o == origin,
            OriginFilter::All => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OriginFilter::Only(o) => o.as_str(),
            OriginFilter::All => "all",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Parameter<E: Element> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Option<Tensor<E>>,
    pub trainable: bool,
    pub section: SectionTag,
    pub origin: Origin,
}

/// Ordered map of parameters. Iteration order is registration order, which
/// makes every downstream artifact (bundles, hashes, optimizer walks)
/// deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterRegistry<E: Element> {
    entries: Vec<Parameter<E>>,
    index: HashMap<String, usize>,
}

impl<E: Element> ParameterRegistry<E> {
    pub fn new() -> Self {
        ParameterRegistry {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(
        &mut self,
        name: &str,
        value: Tensor<E>,
        section: SectionTag,
        origin: Origin,
        trainable: bool,
    ) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Parameter {
            name: name.to_string(),
            value,
            grad: None,
            trainable,
            section,
            origin,
        });
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Result<Parameter<E>> {
        let pos = *self
            .index
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let removed = self.entries.remove(pos);
        self.index.remove(name);
        for (i, p) in self.entries.iter().enumerate().skip(pos) {
            self.index.insert(p.name.clone(), i);
        }
        Ok(removed)
    }

    pub fn get(&self, name: &str) -> Result<&Parameter<E>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter<E>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i]),
            None => Err(Error::UnknownParameter(name.to_string())),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<E>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<E>> {
        self.entries.iter_mut()
    }

    /// Names in registration order, optionally restricted by origin.
    pub fn names(&self, filter: OriginFilter) -> Vec<String> {
        self.entries
            .iter()
            .filter(|p| filter.matches(p.origin))
            .map(|p| p.name.clone())
            .collect()
    }

    /// Total scalar count of parameters matching the filter.
    pub fn count_params(&self, filter: OriginFilter) -> usize {
        self.entries
            .iter()
            .filter(|p| filter.matches(p.origin))
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn count_trainable_params(&self, filter: OriginFilter) -> usize {
        self.entries
            .iter()
            .filter(|p| filter.matches(p.origin) && p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Store gradients produced by a backward pass into the grad slots of
    /// trainable parameters. Gradients for unknown names are rejected.
    pub fn store_grads(&mut self, grads: &HashMap<String, Tensor<E>>) -> Result<()> {
        for (name, grad) in grads {
            let p = self.get_mut(name)?;
            if p.trainable {
                p.grad = Some(grad.clone());
            }
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.entries {
            p.grad = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> ParameterRegistry<f32> {
        let mut r = ParameterRegistry::new();
        r.register("stem.w", Tensor::zeros(&[4, 3]), SectionTag::Bottom, Origin::Base, true)
            .unwrap();
        r.register("head.w", Tensor::zeros(&[2, 4]), SectionTag::Top, Origin::Head, true)
            .unwrap();
        r
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut r = reg();
        let err = r
            .register("stem.w", Tensor::zeros(&[1]), SectionTag::Bottom, Origin::Base, true)
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateParameter(_)));
    }

    #[test]
    fn counts_respect_origin_filter() {
        let r = reg();
        assert_eq!(r.count_params(OriginFilter::Only(Origin::Base)), 12);
        assert_eq!(r.count_params(OriginFilter::Only(Origin::Head)), 8);
        assert_eq!(r.count_params(OriginFilter::Only(Origin::Adapter)), 0);
        assert_eq!(r.count_params(OriginFilter::All), 20);
    }

    #[test]
    fn removal_keeps_order_and_index() {
        let mut r = reg();
        r.register("a.b", Tensor::zeros(&[1]), SectionTag::Middle, Origin::Adapter, true)
            .unwrap();
        r.remove("head.w").unwrap();
        let names = r.names(OriginFilter::All);
        assert_eq!(names, vec!["stem.w".to_string(), "a.b".to_string()]);
        assert!(r.get("a.b").is_ok());
    }
}
