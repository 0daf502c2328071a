"""Regenerate the fixture files and their pinned reference values.

Every pinned number is computed here with numpy by brute-force path
enumeration or plain matrix recursions, independently of the Rust crate.

    python3 crates/core/fixtures/pin_values.py
"""

import itertools
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent

BASE_M = np.array([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.25, 0.25, 0.5]])
ALT_M = np.array([[0.3, 0.3, 0.4], [0.45, 0.35, 0.2], [0.1, 0.6, 0.3]])
BASE_G = np.array([1.0, 0.6, 0.3])
ETA0 = np.array([0.5, 0.3, 0.2])


class Model:
    def __init__(self, eta0, transitions, potentials, values=None, reversing=None, homogeneous=False):
        self.eta0 = np.asarray(eta0, float)
        self.M = [np.asarray(m, float) for m in transitions]  # M[k] is M_{k+1}
        self.G = [np.asarray(g, float) for g in potentials]  # G[k] is G_k
        self.d = len(self.eta0)
        self.values = np.arange(self.d, dtype=float) if values is None else np.asarray(values, float)
        self.reversing = reversing
        self.homogeneous = homogeneous

    @property
    def horizon(self):
        return len(self.M)

    def masses(self, n):
        """Unnormalized path masses over {0..d-1}^{n+1}, x_0 most significant."""
        paths = np.array(list(itertools.product(range(self.d), repeat=n + 1)))
        w = self.eta0[paths[:, 0]].copy()
        for p in range(1, n + 1):
            w *= self.G[p - 1][paths[:, p - 1]] * self.M[p - 1][paths[:, p - 1], paths[:, p]]
        return paths, w


def three_state(horizon=10):
    return Model(ETA0, [BASE_M] * horizon, [BASE_G] * (horizon + 1), homogeneous=True)


def three_state_inhomogeneous(horizon=10):
    ms = [BASE_M if n % 2 == 1 else ALT_M for n in range(1, horizon + 1)]
    gs = [np.array([BASE_G[(x + n) % 3] for x in range(3)]) for n in range(horizon + 1)]
    return Model(ETA0, ms, gs)


def two_state_reversible(horizon=200):
    m = np.array([[0.7, 0.3], [0.2, 0.8]])
    g = np.array([1.0, 0.7])
    return Model([0.5, 0.5], [m] * horizon, [g] * (horizon + 1), reversing=np.array([0.4, 0.6]), homogeneous=True)


def additive_values(paths, f):
    return f[paths].sum(axis=1)


def jump_count(paths):
    return (paths[:, 1:] != paths[:, :-1]).sum(axis=1).astype(float)


def enumerated(model, n, functional):
    paths, w = model.masses(n)
    vals = functional(paths)
    total = w.sum()
    return total, (w * vals).sum(), (w * vals).sum() / total


def clt_variance(model, n, f):
    """sum_p eta_p[(D_{p,n}(F - c) / eta_p Q_{p,n} 1)^2] by enumeration of D_{p,n}."""
    paths, w = model.masses(n)
    vals = additive_values(paths, f)
    c = (w * vals).sum() / w.sum()
    # flow
    eta = [model.eta0]
    for p in range(1, n + 1):
        u = eta[-1] * model.G[p - 1]
        eta.append(u @ model.M[p - 1] / u.sum())
    # backward kernels B_q[x_q, x_{q-1}] ∝ eta_{q-1}(x_{q-1}) G_{q-1}(x_{q-1}) M_q(x_{q-1}, x_q)
    back = []
    for q in range(1, n + 1):
        a = (eta[q - 1] * model.G[q - 1])[:, None] * model.M[q - 1]
        back.append((a / a.sum(axis=0, keepdims=True)).T)
    total = 0.0
    for p in range(n + 1):
        weight = np.ones(len(paths))
        for q in range(1, p + 1):
            weight *= back[q - 1][paths[:, q], paths[:, q - 1]]
        for q in range(p + 1, n + 1):
            weight *= model.G[q - 1][paths[:, q - 1]] * model.M[q - 1][paths[:, q - 1], paths[:, q]]
        d_op = np.zeros(model.d)
        q_one = np.zeros(model.d)
        np.add.at(d_op, paths[:, p], weight * (vals - c))
        np.add.at(q_one, paths[:, p], weight)
        q_one_norm = eta[p] @ q_one
        total += eta[p] @ ((d_op / q_one_norm) ** 2)
    return total


def smoothed_by_recursion(model, n, f, normalized):
    """Q_n(F) by forward filtering and backward kernel sums (no enumeration)."""
    eta = [model.eta0]
    for p in range(1, n + 1):
        u = eta[-1] * model.G[p - 1]
        eta.append(u @ model.M[p - 1] / u.sum())
    acc = f.copy()  # E[sum_{q<=p} f(X_q) | X_p = x] under the backward law
    for p in range(1, n + 1):
        a = (eta[p - 1] * model.G[p - 1])[:, None] * model.M[p - 1]
        b = a / a.sum(axis=0, keepdims=True)
        acc = f + b.T @ acc
    value = eta[n] @ acc
    return value / (n + 1) if normalized else value


def h_process_limit(model, f):
    g, m = model.G[0], model.M[0]
    q = g[:, None] * m
    vals, vecs = np.linalg.eig(q)
    k = np.argmax(vals.real)
    h = np.abs(vecs[:, k].real)
    mu = model.reversing
    mh = m @ h
    mu_h = h * mh * mu
    mu_h /= mu_h.sum()
    return mu_h, mu_h @ f, vals[k].real


def fmt(v):
    return repr(float(v))


def write_fixture(path, model, header, pinned):
    lines = [f"# {line}" for line in header]
    lines += [f"states {model.d}", f"horizon {model.horizon}", f"homogeneous {str(model.homogeneous).lower()}"]
    lines += ["initial", " ".join(fmt(v) for v in model.eta0)]
    lines += ["values", " ".join(fmt(v) for v in model.values)]
    if model.reversing is not None:
        lines += ["reversing", " ".join(fmt(v) for v in model.reversing)]
    if model.homogeneous:
        lines += ["potential", " ".join(fmt(v) for v in model.G[0])]
        lines += ["transition"] + [" ".join(fmt(v) for v in row) for row in model.M[0]]
    else:
        for n, g in enumerate(model.G):
            lines += [f"potential {n}", " ".join(fmt(v) for v in g)]
        for n, m in enumerate(model.M, start=1):
            lines += [f"transition {n}"] + [" ".join(fmt(v) for v in row) for row in m]
    for name, vals in pinned.items():
        lines.append(f"pinned {name} " + " ".join(fmt(v) for v in np.atleast_1d(vals)))
    path.write_text("\n".join(lines) + "\n")


def pin_three_state(model, name, extra_header):
    f = model.values
    n_max = model.horizon
    normalizers, smoothed, unnormalized, jumps = [], [], [], []
    for n in range(n_max + 1):
        total, raw, norm = enumerated(model, n, lambda p: additive_values(p, f))
        normalizers.append(total)
        smoothed.append(norm)
        unnormalized.append(raw)
        jumps.append(enumerated(model, n, jump_count)[2])
    pinned = {
        "normalizers": normalizers,
        "smoothed_value": smoothed,
        "unnormalized_value": unnormalized,
        "smoothed_jumps": jumps,
        "clt_variance_5": clt_variance(model, 5, f),
    }
    write_fixture(HERE / name, model, extra_header, pinned)


def main():
    pin_three_state(
        three_state(),
        "three_state.fkm",
        [
            "Homogeneous 3-state model. Pinned values by numpy path enumeration:",
            "normalizers[n] = gamma_n(1), smoothed_value[n] = Q_n(sum_p x_p),",
            "unnormalized_value[n] = gamma_n(1) Q_n(sum_p x_p), smoothed_jumps[n] = Q_n(#jumps),",
            "clt_variance_5 = asymptotic variance of N^(1/2) Q_5^N(sum_p x_p) at epsilon = 0.",
        ],
    )
    pin_three_state(
        three_state_inhomogeneous(),
        "three_state_inhomogeneous.fkm",
        [
            "Alternating transitions, rotating potentials. Pinned values as in three_state.fkm.",
        ],
    )
    model = two_state_reversible()
    mu_h, limit, eigenvalue = h_process_limit(model, model.values)
    smoothed = [smoothed_by_recursion(model, n, model.values, True) for n in (10, 50, 100, 200)]
    write_fixture(
        HERE / "two_state_reversible.fkm",
        model,
        [
            "2-state model, M reversible with respect to (0.4, 0.6). Pinned by numpy eig and",
            "forward-backward recursion: mu_h, mu_h(values), top eigenvalue of diag(G) M,",
            "smoothed_normalized[k] = Q_n(mean of x_p) for n in 10, 50, 100, 200.",
        ],
        {
            "mu_h": mu_h,
            "mu_h_value": limit,
            "eigenvalue": eigenvalue,
            "smoothed_normalized": smoothed,
        },
    )
    corrupted = HERE / "corrupted_row_sum.fkm"
    corrupted.write_text(
        "# Transition row 1 sums to 1.1; loading must fail.\n"
        "states 2\nhorizon 3\nhomogeneous true\n"
        "initial\n0.5 0.5\npotential\n1.0 0.5\ntransition\n0.5 0.5\n0.6 0.5\n"
    )


if __name__ == "__main__":
    main()
