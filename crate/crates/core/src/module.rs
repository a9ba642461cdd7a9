//! Parameter ownership shared by every trainable model.

use crate::engine::{Tape, Tensor, Var};

/// One named parameter tensor.
#[derive(Debug)]
pub struct ParamInfo<'a> {
    pub name: String,
    pub value: &'a Tensor,
    pub trainable: bool,
}

/// Tape handles for a model's parameters.
#[derive(Debug)]
pub struct Bound<V> {
    pub vars: V,
    /// One leaf per entry of [`Module::params`], same order.
    pub leaves: Vec<Var>,
}

/// Pushes parameters onto a tape, recording the leaf order.
pub struct Binder<'t> {
    tape: &'t mut Tape,
    leaves: Vec<Var>,
}

impl<'t> Binder<'t> {
    pub fn new(tape: &'t mut Tape) -> Self {
        Binder { tape, leaves: Vec::new() }
    }

    /// Trainable tensors become gradient leaves; frozen ones are constants.
    pub fn bind(&mut self, value: &Tensor, trainable: bool) -> Var {
        let v = if trainable {
            self.tape.param(value.clone())
        } else {
            self.tape.constant(value.clone())
        };
        self.leaves.push(v);
        v
    }

    /// Binds a nested module and absorbs its leaves.
    pub fn nested<M: Module>(&mut self, module: &M) -> M::Vars {
        let bound = module.bind(self.tape);
        self.leaves.extend(bound.leaves);
        bound.vars
    }

    pub fn finish<V>(self, vars: V) -> Bound<V> {
        Bound { vars, leaves: self.leaves }
    }
}

/// A model whose parameters can be bound to a tape and updated in place.
pub trait Module {
    type Vars;

    /// Parameters in a fixed order.
    fn params(&self) -> Vec<ParamInfo<'_>>;

    /// Mutable views in the same order as [`Module::params`].
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn bind(&self, tape: &mut Tape) -> Bound<Self::Vars>;

    fn param_count(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }
}

/// Prefixes nested parameter names, e.g. `head.mu`.
pub(crate) fn prefixed<'a>(prefix: &str, inner: Vec<ParamInfo<'a>>) -> impl Iterator<Item = ParamInfo<'a>> + 'a {
    let prefix = prefix.to_string();
    inner.into_iter().map(move |p| ParamInfo {
        name: format!("{prefix}.{}", p.name),
        ..p
    })
}
