//! Named parameter tensors with paired gradient and Adam moment buffers.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

/// Stable handle to a parameter; indices follow registration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

struct Entry<T> {
    name: String,
    group: String,
    value: Tensor<T>,
    grad: Tensor<T>,
    m: Tensor<T>,
    v: Tensor<T>,
}

/// Adam hyperparameters. Weight decay couples as L2 on the gradient
/// before the moment updates (the original Adam convention).
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub weight_decay: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            lr: T::cast(0.001),
            weight_decay: T::zero(),
            beta1: T::cast(0.9),
            beta2: T::cast(0.999),
            eps: T::cast(1e-8),
        }
    }
}

impl<T: Scalar> AdamConfig<T> {
    pub fn new(lr: T, weight_decay: T) -> Self {
        Self {
            lr,
            weight_decay,
            ..Self::default()
        }
    }
}

/// Copy of one group's parameter values, for candidate checkpointing.
#[derive(Debug, Clone)]
pub struct GroupSnapshot<T> {
    pub group: String,
    pub values: Vec<(String, Tensor<T>)>,
}

/// Named parameter store. Parameters are grouped (e.g. pricing policy vs
/// adversary) and each group has its own Adam step counter, so stepping
/// one group leaves the others bit-identical.
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    by_name: HashMap<String, usize>,
    steps: HashMap<String, u64>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
            steps: HashMap::new(),
        }
    }

    pub fn register(&mut self, group: &str, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter name '{name}'")));
        }
        let (r, c) = value.shape();
        let idx = self.entries.len();
        self.entries.push(Entry {
            name: name.to_string(),
            group: group.to_string(),
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
            value,
        });
        self.by_name.insert(name.to_string(), idx);
        Ok(ParamId(idx))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> &str {
        &self.entries[id.0].group
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn add_grad(&mut self, id: ParamId, g: &Tensor<T>) {
        self.entries[id.0].grad.add_assign(g);
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(T::zero());
        }
    }

    /// All parameter ids, registration order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Ids of one group, registration order.
    pub fn group_ids(&self, group: &str) -> Vec<ParamId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.group == group)
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    fn require_group(&self, group: &str) -> Result<Vec<ParamId>> {
        let ids = self.group_ids(group);
        if ids.is_empty() {
            return Err(Error::UnknownGroup(group.to_string()));
        }
        Ok(ids)
    }

    /// Bias-corrected Adam update for one group; gradients are zeroed
    /// after the update.
    pub fn adam_step(&mut self, group: &str, cfg: &AdamConfig<T>) -> Result<()> {
        let ids = self.require_group(group)?;
        let t = self.steps.entry(group.to_string()).or_insert(0);
        *t += 1;
        let t = *t;
        let bias1 = T::one() - cfg.beta1.powi(t as i32);
        let bias2 = T::one() - cfg.beta2.powi(t as i32);
        for id in ids {
            let e = &mut self.entries[id.0];
            let n = e.value.len();
            for k in 0..n {
                let g = e.grad.data()[k] + cfg.weight_decay * e.value.data()[k];
                let m = cfg.beta1 * e.m.data()[k] + (T::one() - cfg.beta1) * g;
                let v = cfg.beta2 * e.v.data()[k] + (T::one() - cfg.beta2) * g * g;
                e.m.data_mut()[k] = m;
                e.v.data_mut()[k] = v;
                let m_hat = m / bias1;
                let v_hat = v / bias2;
                e.value.data_mut()[k] =
                    e.value.data()[k] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            e.grad.data_mut().fill(T::zero());
        }
        Ok(())
    }

    pub fn snapshot_group(&self, group: &str) -> Result<GroupSnapshot<T>> {
        let ids = self.require_group(group)?;
        Ok(GroupSnapshot {
            group: group.to_string(),
            values: ids
                .into_iter()
                .map(|id| (self.name(id).to_string(), self.value(id).clone()))
                .collect(),
        })
    }

    /// Overwrite current values from a snapshot; names must match.
    pub fn restore_group(&mut self, snap: &GroupSnapshot<T>) -> Result<()> {
        for (name, value) in &snap.values {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Invalid(format!("snapshot parameter '{name}' not found")))?;
            if self.value(id).shape() != value.shape() {
                return Err(Error::Invalid(format!(
                    "snapshot parameter '{name}' shape mismatch"
                )));
            }
            *self.value_mut(id) = value.clone();
        }
        Ok(())
    }

    /// New store holding only one group's values (fresh moments and grads).
    pub fn extract_group(&self, group: &str) -> Result<ParamStore<T>> {
        let ids = self.require_group(group)?;
        let mut out = ParamStore::new();
        for id in ids {
            out.register(group, self.name(id), self.value(id).clone())?;
        }
        Ok(out)
    }

    /// Serialize parameter values as a version-tagged text container:
    /// one `param <name> <group> <rows> <cols>` line followed by one
    /// whitespace-separated line per row. Values are written in shortest
    /// round-trip decimal form, so load-after-save is bit-identical.
    pub fn write_text(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "netprice-params v1")?;
        writeln!(w, "count {}", self.entries.len())?;
        for e in &self.entries {
            let (r, c) = e.value.shape();
            writeln!(w, "param {} {} {} {}", e.name, e.group, r, c)?;
            for i in 0..r {
                let row: Vec<String> = e.value.row(i).iter().map(|v| format!("{}", v.as_f64())).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
        }
        Ok(())
    }

    pub fn read_text(r: &mut impl BufRead) -> Result<ParamStore<T>> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Checkpoint("unexpected end of parameter block".into()))
        };
        let header = next()?;
        if header.trim() != "netprice-params v1" {
            return Err(Error::Checkpoint(format!(
                "unsupported parameter container header '{header}'"
            )));
        }
        let count_line = next()?;
        let count: usize = count_line
            .strip_prefix("count ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("bad count line '{count_line}'")))?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let meta = next()?;
            let parts: Vec<&str> = meta.split_whitespace().collect();
            if parts.len() != 5 || parts[0] != "param" {
                return Err(Error::Checkpoint(format!("bad param line '{meta}'")));
            }
            let (name, group) = (parts[1], parts[2]);
            let rows: usize = parts[3]
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad rows in '{meta}'")))?;
            let cols: usize = parts[4]
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad cols in '{meta}'")))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let line = next()?;
                for tok in line.split_whitespace() {
                    let x: f64 = tok
                        .parse()
                        .map_err(|_| Error::Checkpoint(format!("bad value '{tok}' in '{name}'")))?;
                    data.push(T::cast(x));
                }
            }
            if data.len() != rows * cols {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has {} values, expected {}",
                    data.len(),
                    rows * cols
                )));
            }
            store.register(group, name, Tensor::from_vec(rows, cols, data)?)?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_matches_hand_expansion() {
        // theta = 1, g = 1, lr = 0.001: m_hat = v_hat = 1 exactly, so the
        // update is exactly lr / (1 + eps).
        let mut store = ParamStore::new();
        let id = store.register("g", "theta", Tensor::scalar(1.0f64)).unwrap();
        store.add_grad(id, &Tensor::scalar(1.0));
        let cfg = AdamConfig::default();
        store.adam_step("g", &cfg).unwrap();
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert_eq!(store.value(id).item(), expected);
        // gradients zeroed after the step
        assert_eq!(store.grad(id).item(), 0.0);
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_parameter_unchanged() {
        let mut store = ParamStore::new();
        let id = store.register("g", "theta", Tensor::scalar(2.5f64)).unwrap();
        store.adam_step("g", &AdamConfig::default()).unwrap();
        assert_eq!(store.value(id).item(), 2.5);
    }

    #[test]
    fn stepping_one_group_leaves_other_bit_identical() {
        let mut store = ParamStore::new();
        let a = store
            .register("policy", "w", Tensor::from_vec(1, 2, vec![1.0, -1.0]).unwrap())
            .unwrap();
        let b = store
            .register("adversary", "theta", Tensor::from_vec(1, 2, vec![0.5, 0.25]).unwrap())
            .unwrap();
        store.add_grad(a, &Tensor::filled(1, 2, 1.0));
        store.add_grad(b, &Tensor::filled(1, 2, 1.0));
        let before = store.value(b).clone();
        store.adam_step("policy", &AdamConfig::default()).unwrap();
        assert_eq!(store.value(b), &before);
        // adversary grad untouched by the policy step
        assert_eq!(store.grad(b).data(), &[1.0, 1.0]);
    }

    #[test]
    fn unknown_group_is_an_error() {
        let mut store = ParamStore::<f64>::new();
        store.register("g", "w", Tensor::scalar(1.0)).unwrap();
        assert!(store.adam_step("nope", &AdamConfig::default()).is_err());
    }

    #[test]
    fn text_roundtrip_is_bit_identical() {
        let mut store = ParamStore::new();
        store
            .register("policy", "w", Tensor::from_vec(2, 2, vec![0.1, -1.0 / 3.0, 1e-300, 42.0]).unwrap())
            .unwrap();
        store.register("policy", "b", Tensor::scalar(f64::MIN_POSITIVE)).unwrap();
        let mut buf = Vec::new();
        store.write_text(&mut buf).unwrap();
        let loaded = ParamStore::<f64>::read_text(&mut buf.as_slice()).unwrap();
        for id in store.ids() {
            let other = loaded.id(store.name(id)).unwrap();
            assert_eq!(store.value(id), loaded.value(other));
        }
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.register("g", "w", Tensor::scalar(1.0)).unwrap();
        assert!(store.register("g", "w", Tensor::scalar(2.0)).is_err());
    }
}
