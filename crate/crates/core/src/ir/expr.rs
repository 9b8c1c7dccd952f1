use std::fmt;

/// Elementwise expression tree evaluated per output element.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Input(u32),
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Tanh(Box<Expr>),
    Erf(Box<Expr>),
}

impl Expr {
    pub fn input(k: u32) -> Expr {
        Expr::Input(k)
    }

    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn max(a: Expr, b: Expr) -> Expr {
        Expr::Max(Box::new(a), Box::new(b))
    }

    pub fn tanh(a: Expr) -> Expr {
        Expr::Tanh(Box::new(a))
    }

    pub fn erf(a: Expr) -> Expr {
        Expr::Erf(Box::new(a))
    }

    fn children(&self) -> [Option<&Expr>; 2] {
        match self {
            Expr::Input(_) | Expr::Const(_) => [None, None],
            Expr::Tanh(a) | Expr::Erf(a) => [Some(a), None],
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Max(a, b) => [Some(a), Some(b)],
        }
    }

    pub fn node_count(&self) -> u64 {
        1 + self
            .children()
            .into_iter()
            .flatten()
            .map(Expr::node_count)
            .sum::<u64>()
    }

    /// Cost units per output element: every node (inputs count as loads)
    /// plus the final store.
    pub fn ops_per_element(&self) -> u64 {
        self.node_count() + 1
    }

    fn collect_inputs(&self, out: &mut Vec<u32>) {
        if let Expr::Input(k) = self {
            out.push(*k);
        }
        for c in self.children().into_iter().flatten() {
            c.collect_inputs(out);
        }
    }

    /// Sorted, deduplicated input indices referenced by the tree.
    pub fn input_indices(&self) -> Vec<u32> {
        let mut v = Vec::new();
        self.collect_inputs(&mut v);
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Number of inputs if indices are dense `0..n`, else `None`.
    pub fn dense_arity(&self) -> Option<usize> {
        let idx = self.input_indices();
        idx.iter()
            .enumerate()
            .all(|(i, &k)| i as u32 == k)
            .then_some(idx.len())
    }

    /// Evaluates one element in double precision.
    pub fn eval_scalar(&self, inputs: &[f64]) -> f64 {
        match self {
            Expr::Input(k) => inputs[*k as usize],
            Expr::Const(c) => *c,
            Expr::Add(a, b) => a.eval_scalar(inputs) + b.eval_scalar(inputs),
            Expr::Sub(a, b) => a.eval_scalar(inputs) - b.eval_scalar(inputs),
            Expr::Mul(a, b) => a.eval_scalar(inputs) * b.eval_scalar(inputs),
            Expr::Div(a, b) => a.eval_scalar(inputs) / b.eval_scalar(inputs),
            Expr::Max(a, b) => a.eval_scalar(inputs).max(b.eval_scalar(inputs)),
            Expr::Tanh(a) => libm::tanh(a.eval_scalar(inputs)),
            Expr::Erf(a) => libm::erf(a.eval_scalar(inputs)),
        }
    }

    /// Evaluates the tree over whole columns at once. Every column in
    /// `inputs` has the same length; the result has that length too.
    pub fn eval_columns(&self, inputs: &[Vec<f64>], len: usize) -> Vec<f64> {
        match self {
            Expr::Input(k) => inputs[*k as usize].clone(),
            Expr::Const(c) => vec![*c; len],
            Expr::Tanh(a) => {
                let mut v = a.eval_columns(inputs, len);
                v.iter_mut().for_each(|x| *x = libm::tanh(*x));
                v
            }
            Expr::Erf(a) => {
                let mut v = a.eval_columns(inputs, len);
                v.iter_mut().for_each(|x| *x = libm::erf(*x));
                v
            }
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Max(a, b) => {
                let mut lhs = a.eval_columns(inputs, len);
                let rhs = b.eval_columns(inputs, len);
                let f: fn(f64, f64) -> f64 = match self {
                    Expr::Add(..) => |x, y| x + y,
                    Expr::Sub(..) => |x, y| x - y,
                    Expr::Mul(..) => |x, y| x * y,
                    Expr::Div(..) => |x, y| x / y,
                    _ => f64::max,
                };
                lhs.iter_mut().zip(&rhs).for_each(|(x, y)| *x = f(*x, *y));
                lhs
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Input(k) => write!(f, "in{k}"),
            // `{:?}` prints the shortest round-tripping decimal.
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Add(a, b) => write!(f, "add({a}, {b})"),
            Expr::Sub(a, b) => write!(f, "sub({a}, {b})"),
            Expr::Mul(a, b) => write!(f, "mul({a}, {b})"),
            Expr::Div(a, b) => write!(f, "div({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Tanh(a) => write!(f, "tanh({a})"),
            Expr::Erf(a) => write!(f, "erf({a})"),
        }
    }
}
