#!/usr/bin/env python3
"""Reference values for the covariance propagation module.

Freezes one nontrivial 2-neighbor instance: the direct propagation matrix,
the minimum-trace successor covariance through the 4-block LMI (must equal
the direct value), and the mixed-degenerate variant where the second
neighbor block is pinned to zero and dropped from the LMI.
"""
import numpy as np
import cvxpy as cp

np.set_printoptions(precision=17)

# subsystem: n=2, m=1, neighborhood = {self, one neighbor of dim 2} -> d=4
A = np.array([[1.0, 0.3, 0.1, 0.0],
              [0.0, 0.9, 0.05, 0.1]])
B = np.array([[0.0], [1.0]])
C = np.array([[0.02, 0.01, 0.003, 0.0],
              [0.01, 0.03, 0.0, 0.004]])
D = np.array([[0.0], [0.002]])
K = np.array([[-0.4, -0.8, -0.05, -0.02]])

z = np.array([1.0, -0.5, 0.8, 0.2])
v = np.array([0.3])

S_self = np.array([[0.04, 0.01], [0.01, 0.03]])
S_nbr = np.array([[0.02, -0.005], [-0.005, 0.05]])
S_hat = np.block([[S_self, np.zeros((2, 2))], [np.zeros((2, 2)), S_nbr]])

AK = A + B @ K
CK = C + D @ K
g = (C @ z + D @ v).reshape(-1, 1)


def direct(S):
    return AK @ S @ AK.T + CK @ S @ CK.T + g @ g.T


print("direct Sigma+ (both blocks):")
print(direct(S_hat))

# min trace through the full LMI; optimum must equal the direct matrix
Sp = cp.Variable((2, 2), symmetric=True)
top = cp.bmat([[Sp, A @ S_hat + B @ (K @ S_hat), C @ S_hat + D @ (K @ S_hat), g]])
mid1 = np.hstack([(A @ S_hat + B @ K @ S_hat).T, S_hat, np.zeros((4, 4)), np.zeros((4, 1))])
mid2 = np.hstack([(C @ S_hat + D @ K @ S_hat).T, np.zeros((4, 4)), S_hat, np.zeros((4, 1))])
bot = np.hstack([g.T, np.zeros((1, 4)), np.zeros((1, 4)), np.ones((1, 1))])
lmi = cp.bmat([
    [Sp, A @ S_hat + B @ K @ S_hat, C @ S_hat + D @ K @ S_hat, g],
    [(A @ S_hat + B @ K @ S_hat).T, S_hat, np.zeros((4, 4)), np.zeros((4, 1))],
    [(C @ S_hat + D @ K @ S_hat).T, np.zeros((4, 4)), S_hat, np.zeros((4, 1))],
    [g.T, np.zeros((1, 4)), np.zeros((1, 4)), np.ones((1, 1))],
])
prob = cp.Problem(cp.Minimize(cp.trace(Sp)), [lmi >> 0])
prob.solve(solver=cp.CLARABEL)
print("min-trace through full LMI:", prob.value)
print("direct trace:             ", np.trace(direct(S_hat)))
print(Sp.value)

# mixed degenerate: neighbor block zero, dropped from the LMI
S_deg = np.block([[S_self, np.zeros((2, 2))], [np.zeros((2, 2)), np.zeros((2, 2))]])
print("direct Sigma+ (neighbor block zero):")
print(direct(S_deg))

keep = [0, 1]  # retained coordinates of the neighborhood
Ak_r = AK[:, keep]
Ck_r = CK[:, keep]
S_r = S_self
Sp2 = cp.Variable((2, 2), symmetric=True)
lmi2 = cp.bmat([
    [Sp2, Ak_r @ S_r, Ck_r @ S_r, g],
    [(Ak_r @ S_r).T, S_r, np.zeros((2, 2)), np.zeros((2, 1))],
    [(Ck_r @ S_r).T, np.zeros((2, 2)), S_r, np.zeros((2, 1))],
    [g.T, np.zeros((1, 2)), np.zeros((1, 2)), np.ones((1, 1))],
])
prob2 = cp.Problem(cp.Minimize(cp.trace(Sp2)), [lmi2 >> 0])
prob2.solve(solver=cp.CLARABEL)
print("min-trace through reduced LMI:", prob2.value)
print("direct trace (degenerate):    ", np.trace(direct(S_deg)))
print(Sp2.value)

# fully degenerate: Sigma_hat = 0 -> [[Sp, g],[g', 1]] >= 0, min trace = g g'
print("g g.T:")
print(g @ g.T)
