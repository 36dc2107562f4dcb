use super::{BinOp, Func, Node};

// Constructors that fold the trivial identities so derivative trees stay small.

fn num(x: f64) -> Node {
    Node::Num(x)
}

fn is_num(n: &Node, v: f64) -> bool {
    matches!(n, Node::Num(x) if *x == v)
}

fn add(l: Node, r: Node) -> Node {
    match (&l, &r) {
        (Node::Num(a), Node::Num(b)) => num(a + b),
        _ if is_num(&l, 0.0) => r,
        _ if is_num(&r, 0.0) => l,
        _ => Node::Bin(BinOp::Add, Box::new(l), Box::new(r)),
    }
}

fn sub(l: Node, r: Node) -> Node {
    match (&l, &r) {
        (Node::Num(a), Node::Num(b)) => num(a - b),
        _ if is_num(&r, 0.0) => l,
        _ if is_num(&l, 0.0) => neg(r),
        _ => Node::Bin(BinOp::Sub, Box::new(l), Box::new(r)),
    }
}

fn mul(l: Node, r: Node) -> Node {
    match (&l, &r) {
        (Node::Num(a), Node::Num(b)) => num(a * b),
        _ if is_num(&l, 0.0) || is_num(&r, 0.0) => num(0.0),
        _ if is_num(&l, 1.0) => r,
        _ if is_num(&r, 1.0) => l,
        _ => Node::Bin(BinOp::Mul, Box::new(l), Box::new(r)),
    }
}

fn div(l: Node, r: Node) -> Node {
    if is_num(&l, 0.0) {
        return num(0.0);
    }
    if is_num(&r, 1.0) {
        return l;
    }
    Node::Bin(BinOp::Div, Box::new(l), Box::new(r))
}

fn neg(x: Node) -> Node {
    match x {
        Node::Num(a) => num(-a),
        Node::Neg(inner) => *inner,
        other => Node::Neg(Box::new(other)),
    }
}

fn pow(l: Node, r: Node) -> Node {
    if is_num(&r, 1.0) {
        return l;
    }
    Node::Bin(BinOp::Pow, Box::new(l), Box::new(r))
}

fn call(f: Func, x: Node) -> Node {
    Node::Call(f, Box::new(x))
}

pub(super) fn derivative(node: &Node, var: usize) -> Node {
    match node {
        Node::Num(_) | Node::Pi => num(0.0),
        Node::Var(i) => num(if *i == var { 1.0 } else { 0.0 }),
        Node::Neg(x) => neg(derivative(x, var)),
        Node::Bin(op, l, r) => {
            let (dl, dr) = (derivative(l, var), derivative(r, var));
            let (l, r) = ((**l).clone(), (**r).clone());
            match op {
                BinOp::Add => add(dl, dr),
                BinOp::Sub => sub(dl, dr),
                BinOp::Mul => add(mul(dl, r.clone()), mul(l, dr)),
                // (l/r)' = l'/r - l r' / r^2
                BinOp::Div => sub(
                    div(dl, r.clone()),
                    div(mul(l, dr), mul(r.clone(), r)),
                ),
                BinOp::Pow if !r.depends_on(var) => {
                    let lowered = pow(l, sub(r.clone(), num(1.0)));
                    mul(mul(r, lowered), dl)
                }
                // l^r (r' ln l + r l'/l)
                BinOp::Pow => {
                    let whole = Node::Bin(BinOp::Pow, Box::new(l.clone()), Box::new(r.clone()));
                    let inner = add(
                        mul(dr, call(Func::Ln, l.clone())),
                        div(mul(r, dl), l),
                    );
                    mul(whole, inner)
                }
            }
        }
        Node::Call(f, x) => {
            let dx = derivative(x, var);
            if is_num(&dx, 0.0) {
                return num(0.0);
            }
            let x = (**x).clone();
            let outer = match f {
                Func::Sin => call(Func::Cos, x),
                Func::Cos => neg(call(Func::Sin, x)),
                Func::Exp => call(Func::Exp, x),
                // x/|x|: undefined at the kink, so evaluation there fails
                Func::Abs => div(x.clone(), call(Func::Abs, x)),
                Func::Ln => div(num(1.0), x),
            };
            mul(outer, dx)
        }
    }
}
