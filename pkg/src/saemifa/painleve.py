"""Generator for the Tracy-Widom (beta=1) CDF table.

Solves the Painleve II equation q'' = x q + 2 q^3 for the Hastings-McLeod
solution -- q(x) ~ Ai(x) as x -> +inf, q(x) ~ sqrt(-x/2) as x -> -inf -- as a
boundary-value problem (the solution is a separatrix, so a plain initial-value
march diverges).  The integral states

    u(x) = int_x^inf q,   v(x) = int_x^inf q^2,   w(x) = int_x^inf x q^2

are carried along so that F1(s) = exp{-1/2 [u(s) + w(s) - s v(s)]}, i.e.
F1(s) = exp{-1/2 int_s^inf [q(x) + (x - s) q(x)^2] dx}.

Run as a script to (re)build the packaged table:

    python3 -m saemifa.painleve [step] [outfile]
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import quad, solve_bvp
from scipy.special import airy

X_RIGHT = 8.0
X_LEFT = -12.0
S_MIN = -10.0
S_MAX = 6.0


def _rhs(x, y):
    q, qp, _, _, _ = y
    return np.vstack([qp, x * q + 2.0 * q ** 3, -q, -q * q, -x * q * q])


def _tail_constants(x0: float):
    """Integrals of the Airy tail from x0 to infinity."""
    u0 = quad(lambda t: airy(t)[0], x0, np.inf)[0]
    v0 = quad(lambda t: airy(t)[0] ** 2, x0, np.inf)[0]
    w0 = quad(lambda t: t * airy(t)[0] ** 2, x0, np.inf)[0]
    return u0, v0, w0


def solve_hastings_mcleod(x_left: float = X_LEFT, x_right: float = X_RIGHT,
                          tol: float = 1e-11):
    """Solve for [q, q', u, v, w] on [x_left, x_right]; returns the bvp solution."""
    ai_r = airy(x_right)[0]
    # left asymptote q ~ sqrt(-x/2) (1 + 1/(8 x^3) + ...)
    q_left = np.sqrt(-x_left / 2.0) * (1.0 + 1.0 / (8.0 * x_left ** 3))
    u0, v0, w0 = _tail_constants(x_right)

    def bc(ya, yb):
        return np.array([
            ya[0] - q_left,
            yb[0] - ai_r,
            yb[2] - u0,
            yb[3] - v0,
            yb[4] - w0,
        ])

    x = np.linspace(x_left, x_right, 2001)
    guess = np.zeros((5, x.size))
    guess[0] = np.where(x < 0, np.sqrt(np.clip(-x, 1e-12, None) / 2.0), airy(np.clip(x, 0, None))[0])
    guess[1] = np.gradient(guess[0], x)
    guess[2] = u0 + np.clip(-x, 0, None)  # crude monotone guesses
    guess[3] = v0 + np.clip(-x, 0, None)
    guess[4] = w0 + np.clip(x ** 2 / 2, 0, None)
    sol = solve_bvp(_rhs, bc, x, guess, tol=tol, max_nodes=400_000)
    if not sol.success:
        raise RuntimeError(f"Painleve II boundary-value solve failed: {sol.message}")
    return sol


def build_table(step: float = 0.01, s_min: float = S_MIN, s_max: float = S_MAX,
                tol: float = 1e-11):
    """Dense (s, F1(s)) table on [s_min, s_max] with the given spacing."""
    sol = solve_hastings_mcleod(tol=tol)
    n = int(round((s_max - s_min) / step)) + 1
    s = np.linspace(s_min, s_max, n)
    q, _, u, v, w = sol.sol(s)
    f1 = np.exp(-0.5 * (u + w - s * v))
    return s, np.clip(f1, 0.0, 1.0)


def main(argv=None):
    import sys
    from pathlib import Path

    args = list(sys.argv[1:] if argv is None else argv)
    step = float(args[0]) if args else 0.01
    out = Path(args[1]) if len(args) > 1 else (
        Path(__file__).parent / "data" / "tw_f1.npz")
    s, f1 = build_table(step=step)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out, s=s, f1=f1)
    print(f"wrote {out} ({s.size} points, F1 range [{f1[0]:.3e}, {f1[-1]:.10f}])")


if __name__ == "__main__":
    main()
