#!/usr/bin/env python3
"""Reference values for the conic layer tests, computed with cvxpy.

Run once; paste the printed numbers into tests/test_conic.cpp. Keeping this
script in-repo makes the frozen constants reproducible.
"""
import numpy as np
import cvxpy as cp

np.set_printoptions(precision=16)


def exp_cone_projection(p):
    # CLARABEL at default settings is only good to ~1e-4 on some of these;
    # for the point (10,1,2) the frozen value was refined with a brentq
    # root solve of the boundary stationarity condition (agrees with SLSQP
    # to 2e-7).
    u = cp.Variable(3)
    con = [cp.constraints.ExpCone(u[0], u[1], u[2])]
    prob = cp.Problem(cp.Minimize(cp.sum_squares(u - p)), con)
    prob.solve(solver=cp.CLARABEL, verbose=False)
    return u.value


def main():
    print("== exp cone projections ==")
    pts = [
        (1.0, 2.0, 3.0),      # strictly inside? y e^{x/y} = 2 e^0.5 = 3.297 > 3 -> outside
        (0.5, 0.5, 2.0),      # inside: 0.5 e = 1.359 <= 2
        (-1.0, -1.0, -1.0),   # x<=0, y<=0 face
        (-5.0, 2.0, -3.0),
        (3.0, -2.0, 1.0),
        (0.0, 0.0, -1.0),     # polar-ish
        (10.0, 1.0, 2.0),
        (-0.7, 0.3, -0.1),
        (2.0, 2.0, 2.0),
        (0.1, -0.2, 0.3),
    ]
    for p in pts:
        u = exp_cone_projection(np.array(p))
        print(f"p={p} -> u=({u[0]:.12f}, {u[1]:.12f}, {u[2]:.12f})")

    print("== mixed sdp/logdet problem ==")
    # max logdet(E) s.t. E <= diag(2,3), trace(E) <= 4, E psd(implied)
    E = cp.Variable((2, 2), symmetric=True)
    cons = [np.diag([2.0, 3.0]) - E >> 0, cp.trace(E) <= 4]
    prob = cp.Problem(cp.Maximize(cp.log_det(E)), cons)
    prob.solve(solver=cp.CLARABEL, verbose=False)
    print("obj =", prob.value)
    print("E =", E.value)

    print("== small sdp: max t, [[1,t],[t,1]] psd ==")
    t = cp.Variable()
    X = cp.bmat([[np.array([[1.0]]), cp.reshape(t, (1, 1), order="F")],
                 [cp.reshape(t, (1, 1), order="F"), np.array([[1.0]])]])
    prob = cp.Problem(cp.Maximize(t), [X >> 0])
    prob.solve(solver=cp.CLARABEL, verbose=False)
    print("t =", t.value)

    print("== soc + lp mix ==")
    # min c'x s.t. ||x - a|| <= r, x >= 0 with known geometry
    a = np.array([1.0, 2.0])
    x = cp.Variable(2)
    prob = cp.Problem(cp.Minimize(x[0] + x[1]), [cp.norm(x - a) <= 1.0, x >= 0])
    prob.solve(solver=cp.CLARABEL, verbose=False)
    print("obj =", prob.value, " x =", x.value)

    print("== quad cost ==")
    # min (x0-1)^2 + 2*(x1+2)^2 + 0.5*x0 s.t. x0 + x1 == 0
    x = cp.Variable(2)
    prob = cp.Problem(
        cp.Minimize(cp.square(x[0] - 1) + 2 * cp.square(x[1] + 2) + 0.5 * x[0]),
        [x[0] + x[1] == 0])
    prob.solve(solver=cp.CLARABEL, verbose=False)
    print("obj =", prob.value, " x =", x.value)


if __name__ == "__main__":
    main()
