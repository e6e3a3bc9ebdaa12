"""Independent derivation of the frozen expected values used by the C++ tests.

Everything here is written against numpy/mpmath only, without the library.
Run: python3 tests/oracles/derive_expected.py
"""

import mpmath as mp
import numpy as np

mp.mp.dps = 40


def show(name, value):
    if isinstance(value, (list, tuple, np.ndarray)):
        print(f"{name} = [{', '.join(repr(float(v)) for v in value)}]")
    else:
        print(f"{name} = {float(value)!r}")


# Closed-form scalar examples.
X = np.eye(2)
y = np.array([1.0, 1.0])
show("ridge_loss_at_zero", 0.5 * np.sum((X @ np.zeros(2) - y) ** 2) / 2)
show("ridge_grad_at_zero", X.T @ (X @ np.zeros(2) - y) / 2)
show("ridge_gd_step", np.zeros(2) - 1.0 * X.T @ (X @ np.zeros(2) - y) / 2)
eig = np.linalg.eigvalsh(X.T @ X / 2 + 0.1 * np.eye(2))
show("ridge_beta_identity", eig.max())
show("ridge_mu_identity", eig.min())
show("renormalized_remove_0", np.array([0.0, 0.3, 0.2]) / (1 - 0.5))
show("contraction_sc_1_1_1", 1 - 1 * 1 * 1 / (1 + 1))
show("contraction_smooth_2_01", 1 + 0.1 * 2)
show("direct_increment_two_clients", np.linalg.norm(np.array([0.5, 0.5]) - np.array([0.0, 1.0])))
show("psi_b05_k1", 0.5**1 * 1 + 0.5**0 * 1)
show("noise_std_1_1_005", mp.sqrt(2 * (mp.log(1.25) - mp.log(0.05))) / 1)
show("noise_std_closed_form", mp.sqrt(2 * mp.log(25)))
cum = np.cumsum([0.0, 0.4, 0.4, 0.4])
show("rollback_cumsum_0p9", max(n for n in range(4) if cum[n] <= 0.9))


# Three-client ridge federation with hand-built data.
def client_data(c, n=4, d=2):
    xs = np.array([[np.sin(1.0 + 3 * c + 2 * i + j) for j in range(d)] for i in range(n)])
    ys = np.array([np.cos(0.5 + c + i) for i in range(n)])
    return xs, ys


lam, eta, K, rounds = 0.1, 0.5, 2, 8
clients = [client_data(c) for c in range(3)]
hess = [xs.T @ xs / len(ys) + lam * np.eye(2) for xs, ys in clients]
beta = max(np.linalg.eigvalsh(h).max() for h in hess)
mu = min(np.linalg.eigvalsh(h).min() for h in hess)
assert eta <= 2 / (beta + mu)
B = 1 - eta * beta * mu / (beta + mu)
p = np.full(3, 1 / 3)


def local(theta, xs, ys):
    for _ in range(K):
        theta = theta - eta * (xs.T @ (xs @ theta - ys) / len(ys) + lam * theta)
    return theta


theta = np.zeros(2)
deltas = []
for n in range(rounds):
    locals_ = [local(theta, xs, ys) for xs, ys in clients]
    new = sum(p[c] * locals_[c] for c in range(3))
    deltas.append([p[c] / (1 - p[c]) * np.linalg.norm(locals_[c] - new) for c in range(3)])
    theta = new
deltas = np.array(deltas)
psi = np.zeros((rounds + 1, 3))
for n in range(1, rounds + 1):
    for c in range(3):
        psi[n, c] = sum(B ** ((n - s - 1) * K) * deltas[s, c] for s in range(n))
show("fed3_beta", beta)
show("fed3_mu", mu)
show("fed3_contraction", B)
show("fed3_final_model", theta)
for c in range(3):
    show(f"fed3_psi_client{c}", psi[:, c])
psi_star = 0.5 * (psi[3, 1] + psi[4, 1])
show("fed3_psi_star_cut", psi_star)
show("fed3_rollback_client1", max(n for n in range(rounds + 1) if psi[n, 1] <= psi_star))
