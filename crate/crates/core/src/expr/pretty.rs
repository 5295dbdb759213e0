//! Human-readable infix rendering for reports.

use super::{BinaryOp, Expr, UnaryOp};

pub fn to_infix(e: &Expr) -> String {
    match e {
        Expr::Var(i) => format!("x{i}"),
        Expr::Const(v) => {
            if *v < 0.0 {
                format!("({v})")
            } else {
                format!("{v}")
            }
        }
        Expr::Unary(op, a) => match op {
            UnaryOp::Sq => format!("{}^2", atom(a)),
            UnaryOp::Cube => format!("{}^3", atom(a)),
            UnaryOp::Neg => format!("(-{})", to_infix(a)),
            UnaryOp::Sqrt => format!("sqrt({})", to_infix(a)),
            UnaryOp::Log => format!("log({})", to_infix(a)),
            UnaryOp::Exp => format!("exp({})", to_infix(a)),
            UnaryOp::Abs => format!("abs({})", to_infix(a)),
            UnaryOp::Sin => format!("sin({})", to_infix(a)),
            UnaryOp::Cos => format!("cos({})", to_infix(a)),
            UnaryOp::Tan => format!("tan({})", to_infix(a)),
            UnaryOp::Tanh => format!("tanh({})", to_infix(a)),
        },
        Expr::Binary(op, a, b) => {
            let sym = match op {
                BinaryOp::Add => "+",
                BinaryOp::Sub => "-",
                BinaryOp::Mul => "*",
                BinaryOp::Div => "/",
            };
            format!("({} {} {})", to_infix(a), sym, to_infix(b))
        }
    }
}

fn atom(e: &Expr) -> String {
    match e {
        Expr::Var(_) | Expr::Const(_) => to_infix(e),
        _ => format!("({})", to_infix(e)),
    }
}
