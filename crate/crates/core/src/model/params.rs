//! Parameter containers. Each struct is generic over its leaf type so the
//! same layout holds tensors, graph vars, gradients and optimizer moments.
//! Traversal order (`visit`, `try_map`) is the canonical parameter order used
//! by checkpoints and the optimizer.

use std::fmt::Debug;

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

macro_rules! leaf_struct {
    ($(#[$meta:meta])* $name:ident { $($field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<P> {
            $(pub $field: P,)+
        }

        impl<P> $name<P> {
            pub fn try_map<Q, E>(
                &self,
                prefix: &str,
                f: &mut dyn FnMut(&str, &P) -> Result<Q, E>,
            ) -> Result<$name<Q>, E> {
                Ok($name {
                    $($field: f(&join(prefix, stringify!($field)), &self.$field)?,)+
                })
            }

            pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
                $(f(join(prefix, stringify!($field)), &self.$field);)+
            }

            pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
                $(f(join(prefix, stringify!($field)), &mut self.$field);)+
            }
        }
    };
}

leaf_struct! {
    /// Weight and bias of a convolution or dense layer.
    Affine { weight, bias }
}

leaf_struct! {
    /// One LSTM direction. Gate matrices are `[hidden × (hidden + input)]`
    /// and act on `s_prev ⊕ v_t`.
    LstmParams { w_f, w_i, w_c, w_o, b_f, b_i, b_c, b_o }
}

leaf_struct! {
    /// Scores one word: `weight · h_t + bias`.
    AttentionParams { weight, bias }
}

leaf_struct! {
    /// Bottleneck residual block `relu(x + up(relu(down(x))))`.
    ResidualBlockParams { down_weight, down_bias, up_weight, up_bias }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams<P> {
    pub forward: LstmParams<P>,
    pub backward: LstmParams<P>,
}

impl<P> BiLstmParams<P> {
    pub fn try_map<Q, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &P) -> Result<Q, E>,
    ) -> Result<BiLstmParams<Q>, E> {
        Ok(BiLstmParams {
            forward: self.forward.try_map(&join(prefix, "forward"), f)?,
            backward: self.backward.try_map(&join(prefix, "backward"), f)?,
        })
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        self.forward.visit(&join(prefix, "forward"), f);
        self.backward.visit(&join(prefix, "backward"), f);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        self.forward.visit_mut(&join(prefix, "forward"), f);
        self.backward.visit_mut(&join(prefix, "backward"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<P> {
    pub blocks: Vec<ResidualBlockParams<P>>,
    pub out: Affine<P>,
}

impl<P> HeadParams<P> {
    pub fn try_map<Q, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &P) -> Result<Q, E>,
    ) -> Result<HeadParams<Q>, E> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (k, b) in self.blocks.iter().enumerate() {
            blocks.push(b.try_map(&join(prefix, &format!("block{k}")), f)?);
        }
        Ok(HeadParams {
            blocks,
            out: self.out.try_map(&join(prefix, "out"), f)?,
        })
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        for (k, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{k}")), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        for (k, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{k}")), f);
        }
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// Every learnable of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P> {
    /// Character embedding `[alphabet × embed_dim]`.
    pub embedding: P,
    pub fcn: Vec<Affine<P>>,
    pub bilstm: BiLstmParams<P>,
    pub attention: AttentionParams<P>,
    pub head: HeadParams<P>,
}

impl<P> ModelParams<P> {
    pub fn try_map<Q, E>(&self, f: &mut dyn FnMut(&str, &P) -> Result<Q, E>) -> Result<ModelParams<Q>, E> {
        let embedding = f("embedding", &self.embedding)?;
        let mut fcn = Vec::with_capacity(self.fcn.len());
        for (i, layer) in self.fcn.iter().enumerate() {
            fcn.push(layer.try_map(&format!("fcn.conv{}", i + 1), f)?);
        }
        Ok(ModelParams {
            embedding,
            fcn,
            bilstm: self.bilstm.try_map("bilstm", f)?,
            attention: self.attention.try_map("attention", f)?,
            head: self.head.try_map("head", f)?,
        })
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> ModelParams<Q> {
        self.try_map::<Q, std::convert::Infallible>(&mut |n, p| Ok(f(n, p)))
            .unwrap_or_else(|e| match e {})
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a P)) {
        f("embedding".to_string(), &self.embedding);
        for (i, layer) in self.fcn.iter().enumerate() {
            layer.visit(&format!("fcn.conv{}", i + 1), f);
        }
        self.bilstm.visit("bilstm", f);
        self.attention.visit("attention", f);
        self.head.visit("head", f);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut P)) {
        f("embedding".to_string(), &mut self.embedding);
        for (i, layer) in self.fcn.iter_mut().enumerate() {
            layer.visit_mut(&format!("fcn.conv{}", i + 1), f);
        }
        self.bilstm.visit_mut("bilstm", f);
        self.attention.visit_mut("attention", f);
        self.head.visit_mut("head", f);
    }

    /// Leaves with their dotted names, in canonical order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.visit(&mut |name, p| out.push((name, p)));
        out
    }

    pub fn leaves(&self) -> Vec<&P> {
        let mut out = Vec::new();
        self.visit(&mut |_, p| out.push(p));
        out
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut P> {
        let mut out = Vec::new();
        self.visit_mut(&mut |_, p| out.push(p));
        out
    }

    /// Rebuilds the same layout from leaves given in canonical order.
    pub fn from_leaves<Q: Debug, I>(template: &ModelParams<Q>, leaves: I) -> Option<ModelParams<P>>
    where
        I: IntoIterator<Item = P>,
    {
        let mut it = leaves.into_iter();
        let built = template.try_map(&mut |_, _| it.next().ok_or(())).ok()?;
        it.next().is_none().then_some(built)
    }
}
