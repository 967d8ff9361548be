use ndarray::ArrayD;

/// A named, trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    /// Frozen parameters are skipped by the optimizer and stay bitwise intact.
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Anything that owns parameters, in a stable traversal order.
pub trait ParamSource {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    fn trainable_param_count(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.numel())
            .sum()
    }
}

/// Copy of all parameter values, used for best-epoch snapshots.
pub fn snapshot_params<S: ParamSource + ?Sized>(src: &S) -> Vec<ArrayD<f32>> {
    src.params().iter().map(|p| p.value.clone()).collect()
}

/// Restore a snapshot taken from the same network structure.
pub fn restore_params<S: ParamSource + ?Sized>(src: &mut S, snapshot: &[ArrayD<f32>]) {
    let mut params = src.params_mut();
    assert_eq!(params.len(), snapshot.len(), "snapshot/network mismatch");
    for (p, s) in params.iter_mut().zip(snapshot) {
        assert_eq!(p.value.shape(), s.shape(), "snapshot shape mismatch");
        p.value.assign(s);
    }
}
