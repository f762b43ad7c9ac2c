"""Jitted numerical core for the shooting-based planner.

Everything here operates on plain float64 arrays; the public dataclass API
lives in mpc.py.  The step formulas must stay textually in sync with
dynamics.step_dynamics so simulator and planner propagate identically.
"""

import numpy as np
from numba import njit

# solver status codes
CONVERGED = 0
MAX_ITERATIONS = 1


@njit(cache=True)
def _step(x, u, dt, m, lf, lr, kf, kr, iz, lk, out):
    px, py, phi, vx, vy, om = x[0], x[1], x[2], x[3], x[4], x[5]
    a, de = u[0], u[1]
    c = np.cos(phi)
    s = np.sin(phi)
    den_vy = m * vx - (kf + kr) * dt
    den_om = iz * vx - (lf * lf * kf + lr * lr * kr) * dt
    out[0] = px + (vx * c - vy * s) * dt
    out[1] = py + (vx * s + vy * c) * dt
    out[2] = phi + om * dt
    out[3] = vx + a * dt
    out[4] = (m * vx * vy + lk * om * dt - kf * de * vx * dt
              - m * vx * vx * om * dt) / den_vy
    out[5] = (iz * vx * om + lk * vy * dt - lf * kf * de * vx * dt) / den_om


@njit(cache=True)
def rollout_into(x0, U, dt, m, lf, lr, kf, kr, iz, lk, X):
    N = U.shape[0]
    X[0] = x0
    for k in range(N):
        _step(X[k], U[k], dt, m, lf, lr, kf, kr, iz, lk, X[k + 1])


@njit(cache=True)
def rollout_kernel(x0, U, dt, m, lf, lr, kf, kr, iz, lk):
    X = np.empty((U.shape[0] + 1, 6))
    rollout_into(x0, U, dt, m, lf, lr, kf, kr, iz, lk, X)
    return X


@njit(cache=True)
def _penalty(py_val, py_min, py_max):
    if py_val > py_max:
        d = py_val - py_max
        return d * d
    if py_val < py_min:
        d = py_min - py_val
        return d * d
    return 0.0


@njit(cache=True)
def _penalty_grad(py_val, py_min, py_max):
    if py_val > py_max:
        return 2.0 * (py_val - py_max)
    if py_val < py_min:
        return -2.0 * (py_min - py_val)
    return 0.0


@njit(cache=True)
def cost_kernel(X, U, u_prev, x_g, x_tra, q_tra, q_x, q_u, q_du,
                py_min, py_max, w_py):
    """Objective of the reduced problem for states X already rolled out."""
    N = U.shape[0]
    J = 0.0
    for k in range(N):
        for i in range(6):
            dg = X[k, i] - x_g[i]
            dtr = X[k, i] - x_tra[i]
            J += q_x[i] * dg * dg + q_tra[k, i] * dtr * dtr
        ua = U[k, 0]
        ud = U[k, 1]
        if k == 0:
            da = ua - u_prev[0]
            dd = ud - u_prev[1]
        else:
            da = ua - U[k - 1, 0]
            dd = ud - U[k - 1, 1]
        J += q_u[0] * ua * ua + q_u[1] * ud * ud
        J += q_du[0] * da * da + q_du[1] * dd * dd
    for i in range(6):
        dg = X[N, i] - x_g[i]
        J += q_x[i] * dg * dg
    for k in range(1, N + 1):
        J += w_py * _penalty(X[k, 1], py_min, py_max)
    return J


@njit(cache=True)
def _fill_jacobian(xk, uk, dt, m, lf, lr, kf, kr, iz, lk, A, B):
    """State/control Jacobian of one discrete step (6x6 and 6x2)."""
    phi, vx, vy, om = xk[2], xk[3], xk[4], xk[5]
    de = uk[1]
    c = np.cos(phi)
    s = np.sin(phi)
    den_vy = m * vx - (kf + kr) * dt
    den_om = iz * vx - (lf * lf * kf + lr * lr * kr) * dt
    num_vy = (m * vx * vy + lk * om * dt - kf * de * vx * dt
              - m * vx * vx * om * dt)
    num_om = iz * vx * om + lk * vy * dt - lf * kf * de * vx * dt

    A[:, :] = 0.0
    A[0, 0] = 1.0
    A[0, 2] = (-vx * s - vy * c) * dt
    A[0, 3] = c * dt
    A[0, 4] = -s * dt
    A[1, 1] = 1.0
    A[1, 2] = (vx * c - vy * s) * dt
    A[1, 3] = s * dt
    A[1, 4] = c * dt
    A[2, 2] = 1.0
    A[2, 5] = dt
    A[3, 3] = 1.0
    dnum_dvx = m * vy + (-kf * de - 2.0 * m * vx * om) * dt
    A[4, 3] = (dnum_dvx * den_vy - num_vy * m) / (den_vy * den_vy)
    A[4, 4] = m * vx / den_vy
    A[4, 5] = (lk - m * vx * vx) * dt / den_vy
    dnum_om_dvx = iz * om - lf * kf * de * dt
    A[5, 3] = (dnum_om_dvx * den_om - num_om * iz) / (den_om * den_om)
    A[5, 4] = lk * dt / den_om
    A[5, 5] = iz * vx / den_om

    B[:, :] = 0.0
    B[3, 0] = dt
    B[4, 1] = -kf * vx * dt / den_vy
    B[5, 1] = -lf * kf * vx * dt / den_om


@njit(cache=True)
def grad_kernel(X, U, u_prev, x_g, x_tra, q_tra, q_x, q_u, q_du,
                py_min, py_max, w_py,
                dt, m, lf, lr, kf, kr, iz, lk):
    """Exact objective gradient w.r.t. the control sequence, given its rollout.

    Single backward (adjoint) sweep; the per-step state Jacobian is assembled
    analytically from the discrete model.
    """
    N = U.shape[0]
    G = np.zeros((N, 2))
    lam = np.zeros(6)
    # terminal adjoint
    for i in range(6):
        lam[i] = 2.0 * q_x[i] * (X[N, i] - x_g[i])
    lam[1] += w_py * _penalty_grad(X[N, 1], py_min, py_max)

    A = np.empty((6, 6))
    B = np.empty((6, 2))
    lam_new = np.empty(6)
    for k in range(N - 1, -1, -1):
        _fill_jacobian(X[k], U[k], dt, m, lf, lr, kf, kr, iz, lk, A, B)
        a, de = U[k, 0], U[k, 1]

        # direct control gradient
        if k == 0:
            da = a - u_prev[0]
            dd = de - u_prev[1]
        else:
            da = a - U[k - 1, 0]
            dd = de - U[k - 1, 1]
        ga = 2.0 * q_u[0] * a + 2.0 * q_du[0] * da
        gd = 2.0 * q_u[1] * de + 2.0 * q_du[1] * dd
        if k + 1 <= N - 1:
            ga -= 2.0 * q_du[0] * (U[k + 1, 0] - a)
            gd -= 2.0 * q_du[1] * (U[k + 1, 1] - de)
        G[k, 0] = ga + B[3, 0] * lam[3]
        G[k, 1] = gd + B[4, 1] * lam[4] + B[5, 1] * lam[5]

        # adjoint recursion: lam_k = dl_k/dx_k + A^T lam_{k+1}
        for i in range(6):
            acc = 2.0 * q_x[i] * (X[k, i] - x_g[i]) \
                + 2.0 * q_tra[k, i] * (X[k, i] - x_tra[i])
            for j in range(6):
                acc += A[j, i] * lam[j]
            lam_new[i] = acc
        if k >= 1:
            lam_new[1] += w_py * _penalty_grad(X[k, 1], py_min, py_max)
        lam[:] = lam_new

    return G


@njit(cache=True)
def cost_grad_kernel(x0, U, u_prev, x_g, x_tra, q_tra, q_x, q_u, q_du,
                     py_min, py_max, w_py,
                     dt, m, lf, lr, kf, kr, iz, lk):
    X = rollout_kernel(x0, U, dt, m, lf, lr, kf, kr, iz, lk)
    J = cost_kernel(X, U, u_prev, x_g, x_tra, q_tra, q_x, q_u, q_du,
                    py_min, py_max, w_py)
    G = grad_kernel(X, U, u_prev, x_g, x_tra, q_tra, q_x, q_u, q_du,
                    py_min, py_max, w_py, dt, m, lf, lr, kf, kr, iz, lk)
    return J, G, X


@njit(cache=True)
def _clip_box(U, a_min, a_max, d_max, out):
    N = U.shape[0]
    for k in range(N):
        out[k, 0] = min(max(U[k, 0], a_min), a_max)
        out[k, 1] = min(max(U[k, 1], -d_max), d_max)


@njit(cache=True)
def _pg_residual(U, G, a_min, a_max, d_max):
    """max-norm distance between U and its projected full gradient step."""
    r = 0.0
    N = U.shape[0]
    for k in range(N):
        ta = min(max(U[k, 0] - G[k, 0], a_min), a_max)
        td = min(max(U[k, 1] - G[k, 1], -d_max), d_max)
        r = max(r, abs(U[k, 0] - ta))
        r = max(r, abs(U[k, 1] - td))
    return r


@njit(cache=True)
def _backward_pass(X, U, u_prev, x_g, x_tra, q_tra, q_x, q_u, q_du,
                   py_min, py_max, w_py, mu,
                   dt, m, lf, lr, kf, kr, iz, lk, kff, K):
    """Stagewise Gauss-Newton factorization on the control-augmented state.

    The augmented state is [x (6); previous control (2)], which makes the
    control-rate cost a plain stage cost.  Returns False when the damped
    control Hessian loses positive definiteness (caller raises mu).
    """
    N = U.shape[0]
    A = np.empty((6, 6))
    B = np.empty((6, 2))
    At = np.zeros((8, 8))
    Bt = np.zeros((8, 2))
    Vx = np.zeros(8)
    Vxx = np.zeros((8, 8))
    tmp = np.empty((8, 8))

    for i in range(6):
        Vx[i] = 2.0 * q_x[i] * (X[N, i] - x_g[i])
        Vxx[i, i] = 2.0 * q_x[i]
    Vx[1] += w_py * _penalty_grad(X[N, 1], py_min, py_max)
    if X[N, 1] > py_max or X[N, 1] < py_min:
        Vxx[1, 1] += 2.0 * w_py

    lx = np.empty(8)
    lu = np.empty(2)
    Qx_ = np.empty(8)
    Qu_ = np.empty(2)
    Qxx = np.empty((8, 8))
    Qux = np.empty((2, 8))

    for k in range(N - 1, -1, -1):
        _fill_jacobian(X[k], U[k], dt, m, lf, lr, kf, kr, iz, lk, A, B)
        At[:, :] = 0.0
        for i in range(6):
            for j in range(6):
                At[i, j] = A[i, j]
        Bt[:, :] = 0.0
        for i in range(6):
            Bt[i, 0] = B[i, 0]
            Bt[i, 1] = B[i, 1]
        Bt[6, 0] = 1.0
        Bt[7, 1] = 1.0

        if k == 0:
            up0, up1 = u_prev[0], u_prev[1]
        else:
            up0, up1 = U[k - 1, 0], U[k - 1, 1]
        du0 = U[k, 0] - up0
        du1 = U[k, 1] - up1

        for i in range(6):
            lx[i] = (2.0 * q_x[i] * (X[k, i] - x_g[i])
                     + 2.0 * q_tra[k, i] * (X[k, i] - x_tra[i]))
        lx[6] = -2.0 * q_du[0] * du0
        lx[7] = -2.0 * q_du[1] * du1
        pen_active = 0.0
        if k >= 1:
            lx[1] += w_py * _penalty_grad(X[k, 1], py_min, py_max)
            if X[k, 1] > py_max or X[k, 1] < py_min:
                pen_active = 1.0
        lu[0] = 2.0 * q_u[0] * U[k, 0] + 2.0 * q_du[0] * du0
        lu[1] = 2.0 * q_u[1] * U[k, 1] + 2.0 * q_du[1] * du1

        # Qx = lx + At^T Vx ; Qu = lu + Bt^T Vx
        for i in range(8):
            acc = lx[i]
            for j in range(8):
                acc += At[j, i] * Vx[j]
            Qx_[i] = acc
        for i in range(2):
            acc = lu[i]
            for j in range(8):
                acc += Bt[j, i] * Vx[j]
            Qu_[i] = acc

        # Qxx = lxx + At^T Vxx At
        for i in range(8):
            for j in range(8):
                acc = 0.0
                for r in range(8):
                    acc += Vxx[i, r] * At[r, j]
                tmp[i, j] = acc
        for i in range(8):
            for j in range(8):
                acc = 0.0
                for r in range(8):
                    acc += At[r, i] * tmp[r, j]
                Qxx[i, j] = acc
        for i in range(6):
            Qxx[i, i] += 2.0 * (q_x[i] + q_tra[k, i])
        Qxx[1, 1] += 2.0 * w_py * pen_active
        Qxx[6, 6] += 2.0 * q_du[0]
        Qxx[7, 7] += 2.0 * q_du[1]

        # Qux = lux + Bt^T Vxx At   (lux couples u with stored prev control)
        for i in range(2):
            for j in range(8):
                acc = 0.0
                for r in range(8):
                    acc += Bt[r, i] * tmp[r, j]
                Qux[i, j] = acc
        Qux[0, 6] += -2.0 * q_du[0]
        Qux[1, 7] += -2.0 * q_du[1]

        # Quu = luu + Bt^T Vxx Bt + mu I
        q00 = 2.0 * q_u[0] + 2.0 * q_du[0] + mu
        q01 = 0.0
        q11 = 2.0 * q_u[1] + 2.0 * q_du[1] + mu
        for i in range(8):
            bvi0 = 0.0
            bvi1 = 0.0
            for r in range(8):
                bvi0 += Bt[r, 0] * Vxx[r, i]
                bvi1 += Bt[r, 1] * Vxx[r, i]
            q00 += bvi0 * Bt[i, 0]
            q01 += bvi0 * Bt[i, 1]
            q11 += bvi1 * Bt[i, 1]

        det = q00 * q11 - q01 * q01
        if q00 <= 0.0 or det <= 0.0:
            return False
        i00 = q11 / det
        i01 = -q01 / det
        i11 = q00 / det

        kff[k, 0] = -(i00 * Qu_[0] + i01 * Qu_[1])
        kff[k, 1] = -(i01 * Qu_[0] + i11 * Qu_[1])
        for j in range(8):
            K[k, 0, j] = -(i00 * Qux[0, j] + i01 * Qux[1, j])
            K[k, 1, j] = -(i01 * Qux[0, j] + i11 * Qux[1, j])

        # Vx = Qx + K^T (Quu kff + Qu) + Qux^T kff
        qk0 = q00 * kff[k, 0] + q01 * kff[k, 1]
        qk1 = q01 * kff[k, 0] + q11 * kff[k, 1]
        for i in range(8):
            Vx[i] = (Qx_[i]
                     + K[k, 0, i] * (qk0 + Qu_[0])
                     + K[k, 1, i] * (qk1 + Qu_[1])
                     + Qux[0, i] * kff[k, 0] + Qux[1, i] * kff[k, 1])
        # Vxx = Qxx + K^T Quu K + K^T Qux + Qux^T K  (then symmetrized)
        for i in range(8):
            kq0 = K[k, 0, i] * q00 + K[k, 1, i] * q01
            kq1 = K[k, 0, i] * q01 + K[k, 1, i] * q11
            for j in range(8):
                Vxx[i, j] = (Qxx[i, j]
                             + kq0 * K[k, 0, j] + kq1 * K[k, 1, j]
                             + K[k, 0, i] * Qux[0, j] + K[k, 1, i] * Qux[1, j]
                             + Qux[0, i] * K[k, 0, j] + Qux[1, i] * K[k, 1, j])
        for i in range(8):
            for j in range(i + 1, 8):
                v = 0.5 * (Vxx[i, j] + Vxx[j, i])
                Vxx[i, j] = v
                Vxx[j, i] = v
    return True


@njit(cache=True)
def _forward_pass(x0, X, U, u_prev, kff, K, alpha,
                  a_min, a_max, d_max,
                  dt, m, lf, lr, kf, kr, iz, lk, Un, Xn):
    """Closed-loop rollout of the candidate policy with clamped controls."""
    N = U.shape[0]
    Xn[0] = x0
    dxa = np.empty(8)
    for k in range(N):
        for i in range(6):
            dxa[i] = Xn[k, i] - X[k, i]
        if k == 0:
            dxa[6] = 0.0
            dxa[7] = 0.0
        else:
            dxa[6] = Un[k - 1, 0] - U[k - 1, 0]
            dxa[7] = Un[k - 1, 1] - U[k - 1, 1]
        fa = alpha * kff[k, 0]
        fd = alpha * kff[k, 1]
        for j in range(8):
            fa += K[k, 0, j] * dxa[j]
            fd += K[k, 1, j] * dxa[j]
        Un[k, 0] = min(max(U[k, 0] + fa, a_min), a_max)
        Un[k, 1] = min(max(U[k, 1] + fd, -d_max), d_max)
        _step(Xn[k], Un[k], dt, m, lf, lr, kf, kr, iz, lk, Xn[k + 1])


@njit(cache=True)
def solve_kernel(x0, U0, u_prev, x_g, x_tra, q_tra, q_x, q_u, q_du,
                 py_min, py_max, w_py, a_min, a_max, d_max,
                 dt, m, lf, lr, kf, kr, iz, lk,
                 max_iter, tol, trace):
    """Damped stagewise Gauss-Newton with backtracking line search.

    Control boxes are enforced by clamping inside the line search; the
    Levenberg-Marquardt parameter keeps the control Hessian positive
    definite.  The accepted objective sequence is strictly decreasing, and
    iteration stops once the projected-gradient residual meets tol.

    Returns (U, J, iterations, residual, status).
    """
    N = U0.shape[0]
    U = np.empty((N, 2))
    _clip_box(U0, a_min, a_max, d_max, U)
    X = rollout_kernel(x0, U, dt, m, lf, lr, kf, kr, iz, lk)
    J = cost_kernel(X, U, u_prev, x_g, x_tra, q_tra, q_x, q_u, q_du,
                    py_min, py_max, w_py)
    trace[0] = J
    if not np.isfinite(J):
        return U, J, 0, np.inf, MAX_ITERATIONS
    G = grad_kernel(X, U, u_prev, x_g, x_tra, q_tra, q_x, q_u, q_du,
                    py_min, py_max, w_py, dt, m, lf, lr, kf, kr, iz, lk)
    resid = _pg_residual(U, G, a_min, a_max, d_max)

    kff = np.zeros((N, 2))
    K = np.zeros((N, 2, 8))
    Un = np.empty((N, 2))
    Xn = np.empty((N + 1, 6))
    mu = 0.0
    it = 0
    while it < max_iter:
        if resid <= tol:
            return U, J, it, resid, CONVERGED
        it += 1
        ok = _backward_pass(X, U, u_prev, x_g, x_tra, q_tra, q_x, q_u, q_du,
                            py_min, py_max, w_py, mu,
                            dt, m, lf, lr, kf, kr, iz, lk, kff, K)
        accepted = False
        if ok:
            alpha = 1.0
            for _ls in range(10):
                _forward_pass(x0, X, U, u_prev, kff, K, alpha,
                              a_min, a_max, d_max,
                              dt, m, lf, lr, kf, kr, iz, lk, Un, Xn)
                Jn = cost_kernel(Xn, Un, u_prev, x_g, x_tra, q_tra,
                                 q_x, q_u, q_du, py_min, py_max, w_py)
                if np.isfinite(Jn) and Jn < J:
                    accepted = True
                    break
                alpha *= 0.5
        if accepted:
            U[:, :] = Un
            X[:, :] = Xn
            J = Jn
            G = grad_kernel(X, U, u_prev, x_g, x_tra, q_tra, q_x, q_u, q_du,
                            py_min, py_max, w_py,
                            dt, m, lf, lr, kf, kr, iz, lk)
            resid = _pg_residual(U, G, a_min, a_max, d_max)
            mu = mu * 0.5 if mu > 1e-12 else 0.0
        else:
            mu = max(mu * 10.0, 1e-6)
            if mu > 1e10:
                trace[it] = J
                return U, J, it, resid, MAX_ITERATIONS
        trace[it] = J
    status = CONVERGED if resid <= tol else MAX_ITERATIONS
    return U, J, it, resid, status
