use super::params::{vector_shape, ParamId, ParamStore};
use crate::numerics::{conv2d, conv2d_backward, relu, relu_backward, ConvSpec, Element, Shape, Tensor};
use crate::rng::rng_from;
use crate::{Error, Result};

/// `(name, in, out, kernel)` of the three layers.
const LAYERS: [(&str, usize, usize, usize); 3] = [
    ("srcnn.conv1", 1, 64, 9),
    ("srcnn.conv2", 64, 32, 5),
    ("srcnn.conv3", 32, 1, 5),
];

/// Three-layer super-resolution CNN applied to the upsampled low-resolution
/// field: 9x9/64 and 5x5/32 ReLU layers and a linear 5x5 reconstruction.
#[derive(Debug, Clone)]
pub struct Srcnn<F> {
    params: ParamStore<F>,
    layers: Vec<(ParamId, ParamId, ConvSpec)>,
}

/// Layer inputs and pre-activations saved by [`Srcnn::forward`].
pub struct SrcnnTape<F> {
    inputs: Vec<Tensor<F>>,
    pre: Vec<Tensor<F>>,
}

impl<F: Element> Srcnn<F> {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng_from(seed, "srcnn-init");
        let mut params = ParamStore::default();
        let layers = LAYERS
            .iter()
            .map(|&(name, cin, cout, k)| {
                let w = params.add_he(
                    format!("{name}.weight"),
                    Shape::new(cout, cin, k, k),
                    cin * k * k,
                    &mut rng,
                );
                let b = params.add_const(format!("{name}.bias"), vector_shape(cout), F::zero());
                (w, b, ConvSpec::same(k))
            })
            .collect();
        Srcnn { params, layers }
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn forward(&self, input: &Tensor<F>) -> Result<(Tensor<F>, SrcnnTape<F>)> {
        if input.shape().channels != 1 {
            return Err(Error::Dimension {
                op: "srcnn",
                axis: "channels",
                expected: 1,
                actual: input.shape().channels,
            });
        }
        let mut tape = SrcnnTape {
            inputs: Vec::with_capacity(3),
            pre: Vec::with_capacity(2),
        };
        let mut h = input.clone();
        for (i, &(w, b, spec)) in self.layers.iter().enumerate() {
            let z = conv2d(&h, self.params.get(w), self.params.get(b).data(), spec)?;
            tape.inputs.push(h);
            if i + 1 < self.layers.len() {
                h = relu(&z);
                tape.pre.push(z);
            } else {
                h = z;
            }
        }
        Ok((h, tape))
    }

    pub fn predict(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.forward(input)?.0)
    }

    /// Accumulates parameter gradients for `d_out`.
    pub fn backward(&mut self, mut tape: SrcnnTape<F>, d_out: &Tensor<F>) -> Result<()> {
        let mut d = d_out.clone();
        for i in (0..self.layers.len()).rev() {
            let (w, b, spec) = self.layers[i];
            if i + 1 < self.layers.len() {
                let z = tape.pre.pop().expect("one pre-activation per hidden layer");
                d = relu_backward(&z, &d)?;
            }
            let x = tape.inputs.pop().expect("one input per layer");
            let g = conv2d_backward(&x, self.params.get(w), spec, &d)?;
            self.params.accumulate(w, g.d_weight.data());
            self.params.accumulate(b, &g.d_bias);
            d = g.d_input;
        }
        Ok(())
    }

    /// Mean squared error against `target`; accumulates its gradient.
    pub fn mse_step(&mut self, input: &Tensor<F>, target: &Tensor<F>) -> Result<f64> {
        let (out, tape) = self.forward(input)?;
        out.expect_shape("srcnn", target.shape())?;
        let n = out.len() as f64;
        let loss = out
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum::<f64>()
            / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("srcnn training loss".into()));
        }
        let scale = F::from_f64_lossy(2.0 / n);
        let d = out.zip_map(target, |a, b| scale * (a - b))?;
        self.backward(tape, &d)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::random_tensor;
    use crate::numerics::{bilinear_resize, AdamW};

    #[test]
    fn parameter_count() {
        // 64*81 + 64, 32*64*25 + 32, 32*25 + 1
        let net = Srcnn::<f32>::new(0);
        assert_eq!(net.params().scalar_count(), 5248 + 51232 + 801);
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut net = Srcnn::<f64>::new(0);
        for (_, t) in net.params_mut().iter_mut() {
            t.data_mut().fill(0.0);
        }
        let x = random_tensor(Shape::new(2, 1, 12, 12), &mut rng_from(1, "t"));
        assert!(net.predict(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preserves_shape() {
        let net = Srcnn::<f32>::new(0);
        let x = Tensor::zeros(Shape::new(3, 1, 16, 24));
        assert_eq!(net.predict(&x).unwrap().shape(), Shape::new(3, 1, 16, 24));
        assert!(net.predict(&Tensor::zeros(Shape::new(1, 2, 8, 8))).is_err());
    }

    #[test]
    fn training_halves_the_error() {
        // learn to sharpen a blurred random field
        let mut rng = rng_from(5, "srcnn-train");
        let target = random_tensor(Shape::new(4, 1, 8, 8), &mut rng).cast::<f32>();
        let coarse = bilinear_resize(&target, 2, 2).unwrap();
        let input = bilinear_resize(&coarse, 8, 8).unwrap();
        let mut net = Srcnn::<f32>::new(2);
        let hyper = AdamW {
            lr: 1e-3,
            ..AdamW::default()
        };
        let mut opt = net.params().optimizer(hyper);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..2000 {
            net.params_mut().zero_grads();
            last = net.mse_step(&input, &target).unwrap();
            first.get_or_insert(last);
            net.params_mut().adamw_step(&mut opt).unwrap();
        }
        let first = first.unwrap();
        assert!(last < 0.5 * first, "loss {first} -> {last}");
    }
}
