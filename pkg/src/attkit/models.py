"""Parametric learners: weighted OLS with robust errors, damped-Newton logit,
and a cross-validated coordinate-descent elastic net."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError, SingularDesignError

_RANK_TOL = 1e-9


def add_intercept(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(X.shape[0]), X])


def _collinear_columns(X: np.ndarray) -> list[int]:
    """Greedy scan for columns that do not increase the design rank."""
    bad = []
    kept: list[int] = []
    for j in range(X.shape[1]):
        cand = X[:, kept + [j]]
        s = np.linalg.svd(cand, compute_uv=False)
        rank = int(np.sum(s > _RANK_TOL * max(cand.shape) * s[0])) if s[0] > 0 else 0
        if rank == len(kept) + 1:
            kept.append(j)
        else:
            bad.append(j)
    return bad


@dataclass(frozen=True)
class LinearFit:
    """Weighted least squares fit with an HC1 robust coefficient covariance."""

    coef: np.ndarray          # intercept first
    cov: np.ndarray           # robust covariance of coef
    residuals: np.ndarray
    column_names: tuple[str, ...] = ()

    def predict(self, X: np.ndarray) -> np.ndarray:
        return add_intercept(X) @ self.coef


def fit_ols(X, y, weights=None, column_names: tuple[str, ...] = ()) -> LinearFit:
    """OLS (or WLS) of y on [1, X].

    Raises SingularDesignError naming the collinear columns when the design is
    rank deficient.  The reported covariance is the HC1 sandwich.
    """
    D = add_intercept(X)
    y = np.asarray(y, dtype=np.float64)
    n, k = D.shape
    if n <= k:
        raise DomainError(f"need more rows ({n}) than design columns ({k})")
    if weights is None:
        wgt = np.ones(n)
    else:
        wgt = np.asarray(weights, dtype=np.float64)
        if np.any(wgt < 0) or not np.any(wgt > 0):
            raise DomainError("weights must be nonnegative and not all zero")
    sw = np.sqrt(wgt)
    Dw = D * sw[:, None]
    s = np.linalg.svd(Dw, compute_uv=False)
    rank = int(np.sum(s > _RANK_TOL * max(Dw.shape) * s[0])) if s[0] > 0 else 0
    if rank < k:
        bad = _collinear_columns(Dw)
        names = [column_names[j - 1] if column_names and j >= 1 else f"col{j}" for j in bad]
        raise SingularDesignError(f"singular design; collinear columns: {names}", names)
    coef, *_ = np.linalg.lstsq(Dw, y * sw, rcond=None)
    resid = y - D @ coef
    bread = np.linalg.inv(Dw.T @ Dw)
    return _finish_ols(D, coef, resid, wgt, bread, n, k, column_names)


def _finish_ols(D, coef, resid, wgt, bread, n, k, column_names):
    u = D * (wgt * resid)[:, None]
    meat = u.T @ u
    cov = bread @ meat @ bread * (n / (n - k))
    return LinearFit(coef=coef, cov=cov, residuals=resid, column_names=tuple(column_names))


@dataclass(frozen=True)
class LogitFit:
    """Maximum-likelihood logistic regression on the log-odds scale."""

    coef: np.ndarray          # intercept first
    converged: bool
    iterations: int
    separation_suspected: bool = False

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        eta = add_intercept(X) @ self.coef
        return _sigmoid(eta)


def _sigmoid(eta):
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ez = np.exp(eta[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log_likelihood(eta, w):
    # sum w*eta - log(1+exp(eta)), numerically stable
    return float(np.sum(w * eta - np.logaddexp(0.0, eta)))


def fit_logit(X, w, max_iter: int = 100, tol: float = 1e-8) -> LogitFit:
    """Damped Newton logistic regression of binary w on [1, X].

    The step is halved until the log-likelihood improves.  Perfect separation
    is reported through ``separation_suspected`` with finite coefficients
    returned at the iteration cap, never as a failure.
    """
    D = add_intercept(X)
    w = np.asarray(w, dtype=np.float64)
    if not np.all((w == 0) | (w == 1)):
        raise DomainError("labels must be binary")
    if w.min() == w.max():
        raise DomainError("both classes must be present")
    n, k = D.shape
    beta = np.zeros(k)
    eta = D @ beta
    ll = _log_likelihood(eta, w)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = _sigmoid(eta)
        grad = D.T @ (w - p)
        if np.max(np.abs(grad)) <= tol:
            converged = True
            break
        h = np.clip(p * (1.0 - p), 1e-12, None)
        H = D.T @ (D * h[:, None])
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(H + 1e-8 * np.eye(k), grad)
        # monotone up to float representation of the log-likelihood
        slack = 16.0 * np.finfo(np.float64).eps * max(1.0, abs(ll))
        scale = 1.0
        for _ in range(50):
            cand = beta + scale * step
            eta_c = D @ cand
            ll_c = _log_likelihood(eta_c, w)
            if ll_c >= ll - slack:
                beta, eta, ll = cand, eta_c, ll_c
                break
            scale *= 0.5
        else:
            break  # no acceptable step in this direction
    p = _sigmoid(D @ beta)
    # saturated perfect classification: the MLE does not exist
    separated = bool(np.all(np.abs(w - p) < 1e-4))
    if separated:
        converged = False
    return LogitFit(coef=beta, converged=converged, iterations=it,
                    separation_suspected=separated)


@dataclass(frozen=True)
class NetFit:
    """Elastic net solution at the cross-validation-selected penalty."""

    coef: np.ndarray              # intercept first, original scale
    alpha: float
    lambda_: float
    lambda_grid: np.ndarray
    cv_loss: np.ndarray           # mean held-out loss per grid point
    family: str                   # "gaussian" | "binomial"

    def predict(self, X: np.ndarray) -> np.ndarray:
        eta = add_intercept(X) @ self.coef
        return _sigmoid(eta) if self.family == "binomial" else eta


def _soft_threshold(z, g):
    return np.sign(z) * max(abs(z) - g, 0.0)


def _cd_gaussian(Xs, y, obs_w, alpha, lam, beta, b0, tol=1e-9, max_sweeps=2000):
    """Weighted coordinate descent on standardized columns; updates in place."""
    n, p = Xs.shape
    wsum = obs_w.sum()
    # residual r = y - b0 - Xs @ beta
    r = y - b0 - Xs @ beta
    zj = (obs_w[:, None] * Xs * Xs).sum(axis=0) / wsum
    for _ in range(max_sweeps):
        delta = 0.0
        # intercept (unpenalized)
        db0 = (obs_w * r).sum() / wsum
        b0 += db0
        r -= db0
        delta = max(delta, abs(db0))
        for j in range(p):
            bj = beta[j]
            rho = (obs_w * Xs[:, j] * r).sum() / wsum + zj[j] * bj
            new = _soft_threshold(rho, lam * alpha) / (zj[j] + lam * (1.0 - alpha))
            if new != bj:
                r += Xs[:, j] * (bj - new)
                beta[j] = new
                delta = max(delta, abs(new - bj))
        if delta < tol:
            break
    return beta, b0, r


def _gaussian_objective(r, beta, obs_w, alpha, lam):
    wsum = obs_w.sum()
    return float((obs_w * r * r).sum() / (2 * wsum)
                 + lam * (alpha * np.abs(beta).sum() + 0.5 * (1 - alpha) * (beta * beta).sum()))


def _net_path_gaussian(Xs, y, obs_w, alpha, lambdas):
    p = Xs.shape[1]
    beta = np.zeros(p)
    b0 = 0.0
    out = np.empty((len(lambdas), p + 1))
    for i, lam in enumerate(lambdas):
        beta, b0, _ = _cd_gaussian(Xs, y, obs_w, alpha, lam, beta, b0)
        out[i, 0] = b0
        out[i, 1:] = beta
    return out


def _net_path_binomial(Xs, w, alpha, lambdas, irls_iter=40, irls_tol=1e-8):
    n, p = Xs.shape
    beta = np.zeros(p)
    b0 = float(np.log(np.clip(w.mean(), 1e-12, 1 - 1e-12) / (1 - np.clip(w.mean(), 1e-12, 1 - 1e-12))))
    out = np.empty((len(lambdas), p + 1))
    ones = np.ones(n)
    for i, lam in enumerate(lambdas):
        for _ in range(irls_iter):
            eta = b0 + Xs @ beta
            mu = _sigmoid(eta)
            wls = np.clip(mu * (1 - mu), 1e-5, None)
            z = eta + (w - mu) / wls
            beta_new = beta.copy()
            b0_new, = (b0,)
            beta_new, b0_new, _ = _cd_gaussian(Xs, z, wls, alpha, lam, beta_new, b0_new)
            move = max(abs(b0_new - b0), float(np.max(np.abs(beta_new - beta))) if p else 0.0)
            beta, b0 = beta_new, b0_new
            if move < irls_tol:
                break
        out[i, 0] = b0
        out[i, 1:] = beta
    return out


def _binomial_deviance(w, prob):
    prob = np.clip(prob, 1e-12, 1 - 1e-12)
    return float(-2.0 * np.mean(w * np.log(prob) + (1 - w) * np.log(1 - prob)))


def default_lambda_grid(Xs, y, alpha, n_points: int = 100, decades: float = 4.0):
    """Log-spaced grid from the smallest penalty that zeroes every slope."""
    n = Xs.shape[0]
    resid = y - y.mean()
    lam_max = float(np.max(np.abs(Xs.T @ resid)) / (n * max(alpha, 1e-3)))
    lam_max = max(lam_max, 1e-10)
    return np.geomspace(lam_max, lam_max * 10.0 ** (-decades), n_points)


def fit_elastic_net(X, y, alpha: float = 0.5, lambda_grid=None, folds: int = 5,
                    family: str | None = None, seed: int = 0) -> NetFit:
    """Coordinate-descent elastic net with K-fold CV choice of the penalty.

    Columns are standardized internally and coefficients destandardized on
    output.  Continuous outcomes use squared error; binary outcomes use
    binomial deviance with an IRLS outer loop.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64)
    if folds < 2:
        raise DomainError("need at least 2 folds")
    if not 0.0 <= alpha <= 1.0:
        raise DomainError("alpha must lie in [0, 1]")
    if family is None:
        family = "binomial" if set(np.unique(y)) <= {0.0, 1.0} else "gaussian"
    n, p = X.shape
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Xs = (X - mu) / sd

    if lambda_grid is None:
        lambda_grid = default_lambda_grid(Xs, y, alpha)
    lambda_grid = np.asarray(lambda_grid, dtype=np.float64)
    if lambda_grid.size == 0:
        raise DomainError("lambda grid is empty")
    if np.any(np.diff(lambda_grid) > 0):
        raise DomainError("lambda grid must be descending")

    rng = np.random.default_rng(np.random.SeedSequence([seed, n, p]))
    fold_of = np.repeat(np.arange(folds), int(np.ceil(n / folds)))[:n]
    rng.shuffle(fold_of)

    cv_loss = np.zeros(len(lambda_grid))
    for f in range(folds):
        tr = fold_of != f
        te = ~tr
        if family == "gaussian":
            path = _net_path_gaussian(Xs[tr], y[tr], np.ones(int(tr.sum())), alpha, lambda_grid)
            pred = path[:, 0][:, None] + path[:, 1:] @ Xs[te].T
            cv_loss += np.mean((y[te][None, :] - pred) ** 2, axis=1)
        else:
            path = _net_path_binomial(Xs[tr], y[tr], alpha, lambda_grid)
            eta = path[:, 0][:, None] + path[:, 1:] @ Xs[te].T
            probs = _sigmoid(eta)
            cv_loss += np.array([_binomial_deviance(y[te], probs[i]) for i in range(len(lambda_grid))])
    cv_loss /= folds
    best = int(np.argmin(cv_loss))

    if family == "gaussian":
        path = _net_path_gaussian(Xs, y, np.ones(n), alpha, lambda_grid[: best + 1])
    else:
        path = _net_path_binomial(Xs, y, alpha, lambda_grid[: best + 1])
    b0_s = path[-1, 0]
    beta_s = path[-1, 1:]
    beta = beta_s / sd
    b0 = b0_s - float(np.dot(beta, mu))
    coef = np.concatenate([[b0], beta])
    return NetFit(coef=coef, alpha=alpha, lambda_=float(lambda_grid[best]),
                  lambda_grid=lambda_grid, cv_loss=cv_loss, family=family)


def kkt_violation(Xs, y, coef_std, alpha, lam) -> float:
    """Max KKT residual of the standardized gaussian elastic-net solution."""
    b0, beta = coef_std[0], coef_std[1:]
    n = Xs.shape[0]
    r = y - b0 - Xs @ beta
    g = Xs.T @ r / n - lam * (1 - alpha) * beta
    viol = np.where(beta != 0,
                    np.abs(g - lam * alpha * np.sign(beta)),
                    np.clip(np.abs(g) - lam * alpha, 0.0, None))
    viol = np.append(viol, abs(r.mean()))
    return float(np.max(viol))
