//! ResNet-50 (bottleneck blocks, stages [3, 4, 6, 3]) and the desk-scale CNN.

use rand::Rng;

use super::conv::Conv2d;
use super::layers::{BatchNorm, GlobalAvgPool, Layer, MaxPool2d, Param, Relu, Sequential, Tensor};
use crate::Result;

/// `relu(main(x) + shortcut(x))`, with an identity shortcut when `shortcut` is `None`.
#[derive(Clone)]
pub struct Residual {
    main: Sequential,
    shortcut: Option<Sequential>,
    output: Option<Tensor>,
}

impl Residual {
    pub fn bottleneck<R: Rng + ?Sized>(name: &str, inputs: usize, width: usize, stride: usize, rng: &mut R) -> Self {
        let outputs = width * 4;
        let main = Sequential::new()
            .with(Conv2d::new(&format!("{name}.conv1"), inputs, width, 1, 1, 0, false, rng))
            .with(BatchNorm::new(&format!("{name}.bn1"), width))
            .with(Relu::new())
            .with(Conv2d::new(&format!("{name}.conv2"), width, width, 3, stride, 1, false, rng))
            .with(BatchNorm::new(&format!("{name}.bn2"), width))
            .with(Relu::new())
            .with(Conv2d::new(&format!("{name}.conv3"), width, outputs, 1, 1, 0, false, rng))
            .with(BatchNorm::new(&format!("{name}.bn3"), outputs));
        let shortcut = (stride != 1 || inputs != outputs).then(|| {
            Sequential::new()
                .with(Conv2d::new(&format!("{name}.downsample.0"), inputs, outputs, 1, stride, 0, false, rng))
                .with(BatchNorm::new(&format!("{name}.downsample.1"), outputs))
        });
        Self { main, shortcut, output: None }
    }
}

impl Layer for Residual {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut y = self.main.forward(x, train)?;
        match &mut self.shortcut {
            Some(s) => y += &s.forward(x, train)?,
            None => y += x,
        }
        y.mapv_inplace(|v| v.max(0.0));
        if train {
            self.output = Some(y.clone());
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let y = self.output.as_ref().ok_or_else(|| super::layers::no_cache("residual"))?;
        let mut g = grad.clone();
        ndarray::Zip::from(&mut g).and(y).for_each(|g, &y| {
            if y <= 0.0 {
                *g = 0.0;
            }
        });
        let mut dx = self.main.backward(&g)?;
        match &mut self.shortcut {
            Some(s) => dx += &s.backward(&g)?,
            None => dx += &g,
        }
        Ok(dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.main.params_mut();
        if let Some(s) = &mut self.shortcut {
            v.extend(s.params_mut());
        }
        v
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.main.params();
        if let Some(s) = &self.shortcut {
            v.extend(s.params());
        }
        v
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = self.main.buffers_mut();
        if let Some(s) = &mut self.shortcut {
            v.extend(s.buffers_mut());
        }
        v
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.main.buffers();
        if let Some(s) = &self.shortcut {
            v.extend(s.buffers());
        }
        v
    }

    fn clear_cache(&mut self) {
        self.output = None;
        self.main.clear_cache();
        if let Some(s) = &mut self.shortcut {
            s.clear_cache();
        }
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// ResNet-50 trunk up to global pooling; output width 2048.
pub fn resnet50<R: Rng + ?Sized>(rng: &mut R) -> (Sequential, usize) {
    let mut net = Sequential::new()
        .with(Conv2d::new("backbone.conv1", 3, 64, 7, 2, 3, false, rng))
        .with(BatchNorm::new("backbone.bn1", 64))
        .with(Relu::new())
        .with(MaxPool2d::new(3, 2, 1));
    let mut inputs = 64;
    for (stage, (&blocks, &width)) in [3usize, 4, 6, 3].iter().zip(&[64usize, 128, 256, 512]).enumerate() {
        for b in 0..blocks {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            let name = format!("backbone.layer{}.{b}", stage + 1);
            net.push(Residual::bottleneck(&name, inputs, width, stride, rng));
            inputs = width * 4;
        }
    }
    net.push(GlobalAvgPool::new());
    (net, inputs)
}

/// Desk-scale backbone: four `conv3x3 → BN → ReLU` blocks with channel
/// widths `w, 2w, 4w, 4w`, 2×2 max pooling after the first three, then
/// global average pooling. Output width `4w`.
pub fn small_cnn<R: Rng + ?Sized>(base_width: usize, rng: &mut R) -> (Sequential, usize) {
    let widths = [base_width, base_width * 2, base_width * 4, base_width * 4];
    let mut net = Sequential::new();
    let mut inputs = 3;
    for (i, &w) in widths.iter().enumerate() {
        net.push(Conv2d::new(&format!("backbone.block{i}.conv"), inputs, w, 3, 1, 1, false, rng));
        net.push(BatchNorm::new(&format!("backbone.block{i}.bn"), w));
        net.push(Relu::new());
        if i < 3 {
            net.push(MaxPool2d::new(2, 2, 0));
        }
        inputs = w;
    }
    net.push(GlobalAvgPool::new());
    (net, inputs)
}
