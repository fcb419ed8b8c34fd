use super::Tensor;

/// A tensor-valued model parameter with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl ParamTensor {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        ParamTensor {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape))
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns named parameters.
///
/// Visiting order is fixed per type; optimizers, checkpoints and gradient
/// checks rely on it being stable.
pub trait Parameterized {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &ParamTensor));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ParamTensor));

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.visit_params_mut("", &mut |_, p| p.trainable = trainable);
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params("", &mut |n, _| names.push(n.to_string()));
        names
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
