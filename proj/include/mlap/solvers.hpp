#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlap/functionals.hpp"
#include "mlap/lattice.hpp"
#include "mlap/operators.hpp"

namespace mlap {

enum class SolutionKind { minimizer, mountain_pass, eigenpair, iterate_limit };

inline const char* to_string(SolutionKind k) {
    switch (k) {
        case SolutionKind::minimizer: return "minimizer";
        case SolutionKind::mountain_pass: return "mountain-pass";
        case SolutionKind::eigenpair: return "eigenpair";
        default: return "iterate-limit";
    }
}

struct SolveReport {
    Field field;
    EnergyBreakdown energy;
    double residual_norm = 0.0;
    double tolerance = 0.0;
    int iterations = 0;
    bool converged = false;
    SolutionKind kind = SolutionKind::minimizer;
    std::string status;  // converged, iterate-limit, stalled, boundary-stuck, monotonicity-breach, blowup, ...
};

struct BranchPoint {
    double lambda = 0.0;
    double sup_norm = 0.0;
    double energy_total = 0.0;
    bool converged = false;
};

/// Thrown when a monotone sequence loses its ordering beyond the slack.
struct OrderingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Preconditioned L-BFGS with backtracking.

struct DescentOptions {
    double tol = 1e-8;  // on the L^2 residual norm
    int max_iter = 5000;
    int memory = 8;
    bool newton = true;     // finish with dense Newton on small grids when p >= 2
    std::function<bool(Field&)> project;           // returns true when it moved x
    std::function<bool(const Field&)> stop;        // early exit
};

struct DescentResult {
    Field x, grad;
    double value = 0.0;
    double residual = 0.0;
    int iterations = 0;
    bool converged = false;
    bool stopped = false;
    bool stalled = false;
};

/// f(x, grad) returns the objective and writes its volume-weighted gradient.
template <class Objective>
DescentResult lbfgs_minimize(const Operator& op, Objective&& f, Field x, const DescentOptions& opt) {
    auto P = [&op](const Field& v) { return op.precondition(v); };
    const double vol = op.vol();
    const std::size_t n = x.size();
    DescentResult out;
    if (opt.project) opt.project(x);
    Field g;
    double fx = f(x, g);
    std::deque<Field> S, Y;
    std::deque<double> R;
    double gamma = 1.0;
    Field d(n), xn(n), gn;
    std::vector<double> alpha;
    int it = 0;
    for (; it < opt.max_iter; ++it) {
        out.residual = residual_norm_of(g, vol);
        if (out.residual <= opt.tol) {
            out.converged = true;
            break;
        }
        if (opt.stop && opt.stop(x)) {
            out.stopped = true;
            break;
        }
        bool fresh = S.empty(), stepped = false;
        for (int attempt = 0; attempt < 2 && !stepped; ++attempt) {
            // two-loop recursion with H0 = γ P^{-1}
            Field qv(g);
            alpha.assign(S.size(), 0.0);
            for (std::size_t k = S.size(); k-- > 0;) {
                alpha[k] = R[k] * dot(S[k], qv);
                for (std::size_t i = 0; i < n; ++i) qv[i] -= alpha[k] * Y[k][i];
            }
            Field r = P(qv);
            for (auto& v : r) v *= gamma;
            for (std::size_t k = 0; k < S.size(); ++k) {
                const double b = R[k] * dot(Y[k], r);
                for (std::size_t i = 0; i < n; ++i) r[i] += S[k][i] * (alpha[k] - b);
            }
            for (std::size_t i = 0; i < n; ++i) d[i] = -r[i];
            double gd = dot(g, d);
            if (!(gd < 0.0)) {
                S.clear();
                Y.clear();
                R.clear();
                fresh = true;
                continue;
            }
            // backtracking with Armijo, or approximate Wolfe once f is at roundoff level
            double step = 1.0;
            bool accepted = false;
            double fn = 0.0;
            for (int ls = 0; ls < 60; ++ls) {
                for (std::size_t i = 0; i < n; ++i) xn[i] = x[i] + step * d[i];
                fn = f(xn, gn);
                if (std::isfinite(fn)) {
                    if (fn <= fx + 1e-4 * step * gd) {
                        accepted = true;
                        break;
                    }
                    const double gnd = dot(gn, d);
                    if (fn <= fx + 1e-11 * std::abs(fx) && gnd >= 0.9 * gd && gnd <= -0.8 * gd) {
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if (!accepted) {
                if (!fresh) {
                    S.clear();
                    Y.clear();
                    R.clear();
                    fresh = true;
                    continue;
                }
                break;
            }
            bool moved = false;
            if (opt.project) {
                moved = opt.project(xn);
                if (moved) fn = f(xn, gn);
            }
            if (moved) {
                S.clear();
                Y.clear();
                R.clear();
            } else {
                Field s(n), y(n);
                for (std::size_t i = 0; i < n; ++i) {
                    s[i] = xn[i] - x[i];
                    y[i] = gn[i] - g[i];
                }
                const double sy = dot(s, y);
                if (sy > 1e-300) {
                    const Field Py = P(y);
                    gamma = sy / dot(y, Py);
                    S.push_back(std::move(s));
                    Y.push_back(std::move(y));
                    R.push_back(1.0 / sy);
                    if (static_cast<int>(S.size()) > opt.memory) {
                        S.pop_front();
                        Y.pop_front();
                        R.pop_front();
                    }
                }
            }
            x.swap(xn);
            g.swap(gn);
            fx = fn;
            stepped = true;
        }
        if (!stepped) {
            out.stalled = true;
            break;
        }
    }
    out.iterations = it;
    out.residual = residual_norm_of(g, vol);
    if (out.residual <= opt.tol) out.converged = true;
    out.x = std::move(x);
    out.grad = std::move(g);
    out.value = fx;
    return out;
}

namespace detail {

inline SolveReport finish(const Operator& op, const DescentResult& dr, double tol, const EnergyMode& mode,
                          SolutionKind kind) {
    SolveReport rep;
    rep.field = dr.x;
    rep.energy = energy(op, rep.field, mode);
    rep.residual_norm = dr.residual;
    rep.tolerance = tol;
    rep.iterations = dr.iterations;
    rep.converged = dr.converged;
    rep.kind = dr.converged ? kind : SolutionKind::iterate_limit;
    rep.status = dr.converged ? "converged" : (dr.stalled ? "stalled" : (dr.stopped ? "stopped" : "iterate-limit"));
    return rep;
}

inline auto objective(const Operator& op, EnergyMode mode) {
    return [&op, mode](const Field& x, Field& g) { return energy(op, x, mode, &g).total; };
}

}  // namespace detail

/// Damped Newton on the energy of a mode with the dense Hessian. Where the
/// Hessian is not positive definite the nonlinear curvature is dropped, which
/// leaves the convex operator part as a model.
inline DescentResult newton_minimize(const Operator& op, const EnergyMode& mode, Field x, double tol,
                                     int max_iter = 60) {
    const double vol = op.vol();
    const auto n = static_cast<Eigen::Index>(x.size());
    DescentResult out;
    Field g;
    double fx = energy(op, x, mode, &g).total;
    double res = residual_norm_of(g, vol);
    int it = 0;
    for (; it < max_iter && res > tol; ++it) {
        Eigen::MatrixXd H = op.hessian(x);
        const Field c = nonlinear_curvature(op, x, mode);
        Eigen::MatrixXd Hf = H;
        for (Eigen::Index i = 0; i < n; ++i) Hf(i, i) -= c[static_cast<std::size_t>(i)];
        Eigen::Map<const Eigen::VectorXd> gv(g.data(), n);
        Eigen::VectorXd d;
        Eigen::LLT<Eigen::MatrixXd> llt(Hf);
        if (llt.info() == Eigen::Success) d = -llt.solve(gv);
        if (d.size() == 0 || !(d.dot(gv) < 0.0) || !d.allFinite()) {
            llt.compute(H);
            if (llt.info() != Eigen::Success) break;
            d = -llt.solve(gv);
        }
        const double gd = d.dot(gv);
        double step = 1.0;
        bool ok = false;
        Field xn(x.size()), gn;
        for (int ls = 0; ls < 50; ++ls) {
            for (std::size_t i = 0; i < x.size(); ++i) xn[i] = x[i] + step * d[static_cast<Eigen::Index>(i)];
            const double fn = energy(op, xn, mode, &gn).total;
            const double rn = residual_norm_of(gn, vol);
            if (std::isfinite(fn) && (fn <= fx + 1e-4 * step * gd ||
                                      (fn <= fx + 1e-12 * std::abs(fx) && rn < res))) {
                x.swap(xn);
                g.swap(gn);
                fx = fn;
                res = rn;
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if (!ok) {
            out.stalled = true;
            break;
        }
    }
    out.iterations = it;
    out.residual = res;
    out.converged = res <= tol;
    out.value = fx;
    out.x = std::move(x);
    out.grad = std::move(g);
    return out;
}

/// Minimizes the energy of the given mode from x0.
inline SolveReport descend(const Operator& op, const EnergyMode& mode, Field x0, const DescentOptions& opt,
                           SolutionKind kind = SolutionKind::minimizer) {
    // below p = 2 the energy is only C^{1,p-1} at tied differences and Newton
    // oscillates there, so the dense finish is kept to p >= 2
    const bool dense = opt.newton && op.params().p >= 2.0 && !opt.project && !opt.stop &&
                       op.size() <= Operator::dense_hessian_limit;
    if (!dense) return detail::finish(op, lbfgs_minimize(op, detail::objective(op, mode), std::move(x0), opt), opt.tol, mode, kind);
    // a short quasi-Newton run brings the start into the Newton basin
    DescentOptions warm = opt;
    warm.max_iter = std::min(opt.max_iter, 200);
    auto dr = lbfgs_minimize(op, detail::objective(op, mode), std::move(x0), warm);
    if (!dr.converged) {
        const int used = dr.iterations;
        dr = newton_minimize(op, mode, std::move(dr.x), opt.tol);
        dr.iterations += used;
    }
    return detail::finish(op, dr, opt.tol, mode, kind);
}

/// Solves -Δ_p u + ε(-Δ_p)^s u = rhs (rhs volume-weighted) by minimizing the
/// strictly convex functional (1/p)ρ^p - <rhs, u>.
inline SolveReport solve_inner(const Field& rhs, const Operator& op, double tol, std::optional<Field> warm = {},
                               int max_iter = 5000) {
    if (!(tol > 0.0)) throw std::invalid_argument("solve_inner: tol must be positive");
    if (rhs.size() != op.size()) throw std::invalid_argument("solve_inner: right side size mismatch");
    for (double v : rhs)
        if (!std::isfinite(v)) throw std::invalid_argument("solve_inner: right side must be finite");
    DescentOptions opt;
    opt.tol = tol;
    opt.max_iter = max_iter;
    Field x0 = warm ? *warm : op.grid().zeros();
    return descend(op, ModeLinear{&rhs}, std::move(x0), opt);
}

/// Positive minimizer of the purely sublinear functional J.
inline SolveReport solve_sublinear(const Operator& op, double tol, std::optional<Field> init = {}, int max_iter = 5000) {
    if (!(op.params().lambda > 0.0)) throw std::invalid_argument("solve_sublinear: lambda must be positive");
    Field x0 = init ? *init : Field(op.size(), 0.0);
    if (!init) {
        // positive start at the scale of the exact sublinear balance
        const Grid& g = op.grid();
        const auto lo = g.geom.bbox_lo(), hi = g.geom.bbox_hi();
        x0 = sample(g, [&](const auto& x) {
            double v = 1.0;
            for (int a = 0; a < g.dim; ++a) v *= std::sin(std::numbers::pi * (x[a] - lo[a]) / (hi[a] - lo[a]));
            return std::max(v, 0.05);
        });
    }
    DescentOptions opt;
    opt.tol = tol;
    opt.max_iter = max_iter;
    return descend(op, ModeJ{}, std::move(x0), opt);
}

struct EigenPair {
    double lambda1 = 0.0;
    Field e1;
    int iterations = 0;
    bool converged = false;
};

/// First eigenpair of ρ^p/‖u‖_p^p by inverse power iteration: each step solves
/// A(u_{k+1}) = vol·|u_k|^{p-2}u_k and renormalizes to ‖u‖_p = 1.
inline EigenPair principal_eigenpair(const Operator& op, double tol, int max_iter = 500) {
    if (!(tol > 0.0)) throw std::invalid_argument("principal_eigenpair: tol must be positive");
    const Grid& g = op.grid();
    const double p = op.params().p, vol = op.vol();
    Field u = sample(g, [](const auto&) { return 1.0; });
    auto normalize = [&](Field& v) {
        const double nrm = lt_norm(v, g, p);
        for (auto& x : v) x /= nrm;
    };
    normalize(u);
    EigenPair ep;
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 0; k < max_iter; ++k) {
        Field rhs(u.size());
        for (std::size_t i = 0; i < u.size(); ++i) rhs[i] = vol * std::copysign(std::pow(std::abs(u[i]), p - 1.0), u[i]);
        const auto inner = solve_inner(rhs, op, 1e-3 * tol * std::max(1.0, residual_norm_of(rhs, vol)), u);
        u = inner.field;
        normalize(u);
        ep.lambda1 = op.rho_pp(u);
        ep.iterations = k + 1;
        if (std::abs(prev - ep.lambda1) <= tol * ep.lambda1) {
            ep.converged = true;
            break;
        }
        prev = ep.lambda1;
    }
    double s = 0.0;
    for (double v : u) s += v;
    if (s < 0.0)
        for (auto& v : u) v = -v;
    ep.e1 = std::move(u);
    return ep;
}

// ---------------------------------------------------------------------------

/// Projected L-BFGS on the full functional inside {ρ(u) <= radius - margin}.
/// The start is the local minimum of the fibering map along e1 (negative energy
/// for λ > 0) clipped into the ball.
inline SolveReport minimize_in_ball(const Operator& op, double radius, double tol, std::optional<Field> init = {},
                                    int max_iter = 5000) {
    if (!(radius > 0.0)) throw std::invalid_argument("minimize_in_ball: radius must be positive");
    const double margin = 1e-3 * radius, cap = radius - margin;
    Field x0;
    if (init) {
        x0 = *init;
    } else {
        const auto ep = principal_eigenpair(op, 1e-6, 100);
        x0 = ep.e1;
        const double rho = op.rho(x0);
        double t = 0.25 * cap;
        if (op.params().lambda > 0.0) {
            const auto fp = fibering_profile(op, x0);
            if (fp.t1) t = std::min(*fp.t1, 0.5 * cap);
        }
        for (auto& v : x0) v *= t / rho;
    }
    bool hit = false;
    DescentOptions opt;
    opt.tol = tol;
    opt.max_iter = max_iter;
    opt.project = [&](Field& x) {
        const double rho = op.rho(x);
        if (rho <= cap) return false;
        for (auto& v : x) v *= cap / rho;
        hit = true;
        return true;
    };
    auto rep = descend(op, ModeI{}, std::move(x0), opt);
    const double rho = op.rho(rep.field);
    if (rep.converged && rho >= cap * (1.0 - 1e-9)) {
        rep.converged = false;
        rep.status = "boundary-stuck";
    }
    (void)hit;
    return rep;
}

struct MonotoneOptions {
    double tol = 1e-9;          // sup-norm change between iterates, relative to the sup norm
    int max_outer = 500;
    double inner_tol = 1e-11;   // relative to the right side's residual scale
    double slack = 1e-10;       // ordering slack, relative to max(1, sup)
    std::optional<double> cap;  // sup-norm blowup cap
};

struct MonotoneTrace {
    std::vector<double> sup_norms;
    double worst_order_violation = 0.0;  // max over n, i of u_n - u_{n+1}
    double worst_super_violation = 0.0;  // max over n, i of u_n - super
};

/// u_{n+1} solves A(u) = vol·f_λ(u_n) starting from u_0 = sub. With a
/// supersolution the iterates are checked to stay below it.
inline SolveReport monotone_iterate(const Field& sub, const std::optional<Field>& super, const Operator& op,
                                    const MonotoneOptions& mo = {}, MonotoneTrace* trace = nullptr) {
    const ModelParams& mp = op.params();
    const double vol = op.vol();
    const std::size_t n = op.size();
    if (sub.size() != n || (super && super->size() != n)) throw std::invalid_argument("monotone_iterate: size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        if (sub[i] < 0.0) throw std::invalid_argument("monotone_iterate: subsolution must be nonnegative");
        if (super && (*super)[i] < sub[i]) throw std::invalid_argument("monotone_iterate: need sub <= super");
    }
    MonotoneTrace local;
    MonotoneTrace& tr = trace ? *trace : local;
    SolveReport rep;
    rep.tolerance = mo.tol;
    Field u = sub, rhs(n);
    const double scale = std::max(1.0, super ? sup_norm(*super) : sup_norm(sub));
    const double slack = mo.slack * scale;
    tr.sup_norms.push_back(sup_norm(u));
    int k = 0;
    for (; k < mo.max_outer; ++k) {
        for (std::size_t i = 0; i < n; ++i) rhs[i] = vol * f_lambda(u[i], mp);
        const double tol = mo.inner_tol * std::max(1e-300, residual_norm_of(rhs, vol));
        const auto inner = solve_inner(rhs, op, tol, u);
        const Field& next = inner.field;
        double change = 0.0, back = 0.0, over = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            change = std::max(change, std::abs(next[i] - u[i]));
            back = std::max(back, u[i] - next[i]);
            if (super) over = std::max(over, next[i] - (*super)[i]);
        }
        tr.worst_order_violation = std::max(tr.worst_order_violation, back);
        tr.worst_super_violation = std::max(tr.worst_super_violation, over);
        u = next;
        tr.sup_norms.push_back(sup_norm(u));
        if (back > slack || over > slack) {
            rep.status = "monotonicity-breach";
            rep.field = u;
            rep.iterations = k + 1;
            rep.kind = SolutionKind::iterate_limit;
            rep.energy = energy(op, u);
            rep.residual_norm = residual_dual_norm(op, u).norm;
            char msg[96];
            std::snprintf(msg, sizeof msg, "monotone_iterate: ordering violated by %.3e at step %d", std::max(back, over), k + 1);
            throw OrderingError(msg);
        }
        if (mo.cap && tr.sup_norms.back() > *mo.cap) {
            rep.status = "blowup";
            break;
        }
        if (change <= mo.tol * tr.sup_norms.back()) {
            rep.converged = true;
            rep.status = "converged";
            ++k;
            break;
        }
    }
    if (rep.status.empty()) rep.status = "iterate-limit";
    rep.iterations = k;
    rep.field = std::move(u);
    rep.energy = energy(op, rep.field);
    rep.residual_norm = residual_dual_norm(op, rep.field).norm;
    rep.kind = rep.converged ? SolutionKind::minimizer : SolutionKind::iterate_limit;
    return rep;
}

/// Global minimizer of the truncated functional between lower and upper.
/// Converged only when the result stays pinched inside [lower, upper].
inline SolveReport minimize_truncated(const Field& lower, const Field& upper, const Operator& op, double tol,
                                      double slack = 1e-8, int max_iter = 5000) {
    const std::size_t n = op.size();
    if (lower.size() != n || upper.size() != n) throw std::invalid_argument("minimize_truncated: size mismatch");
    for (std::size_t i = 0; i < n; ++i)
        if (!(lower[i] > 0.0 && lower[i] <= upper[i]))
            throw std::invalid_argument("minimize_truncated: need 0 < lower <= upper");
    Field x0(lower);
    DescentOptions opt;
    opt.tol = tol;
    opt.max_iter = max_iter;
    auto rep = descend(op, ModeIhat{&lower, &upper}, std::move(x0), opt);
    double esc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        esc = std::max({esc, lower[i] - rep.field[i], rep.field[i] - upper[i]});
    if (esc > slack * std::max(1.0, sup_norm(upper))) {
        rep.converged = false;
        rep.status = "pinching-failure";
    }
    rep.energy = energy(op, rep.field, ModeI{});
    return rep;
}

// ---------------------------------------------------------------------------
// Newton refinement for p = 2, where the Hessian is the linear operator minus
// the diagonal derivative of the nonlinearity.

/// Preconditioned MINRES for the symmetric (possibly indefinite) system A x = b,
/// M^{-1} given by op.precondition.
template <class MatVec>
Field minres(const Operator& op, MatVec&& A, const Field& b, double rtol, int max_iter, int* iters = nullptr) {
    const std::size_t n = b.size();
    Field x(n, 0.0), r1(b), r2(b), y = op.precondition(b), w(n, 0.0), w1(n), w2(n, 0.0), v(n);
    const double beta1 = std::sqrt(std::max(0.0, dot(r1, y)));
    if (beta1 == 0.0) return x;
    double beta = beta1, oldb = 0.0, dbar = 0.0, epsln = 0.0, phibar = beta1, cs = -1.0, sn = 0.0;
    int it = 0;
    for (; it < max_iter; ++it) {
        const double s = 1.0 / beta;
        for (std::size_t i = 0; i < n; ++i) v[i] = s * y[i];
        y = A(v);
        if (it >= 1)
            for (std::size_t i = 0; i < n; ++i) y[i] -= (beta / oldb) * r1[i];
        const double alfa = dot(v, y);
        for (std::size_t i = 0; i < n; ++i) y[i] -= (alfa / beta) * r2[i];
        r1.swap(r2);
        r2 = y;
        y = op.precondition(r2);
        oldb = beta;
        beta = std::sqrt(std::max(0.0, dot(r2, y)));
        const double oldeps = epsln;
        const double delta = cs * dbar + sn * alfa;
        const double gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        const double gamma = std::max(std::hypot(gbar, beta), 1e-300);
        cs = gbar / gamma;
        sn = beta / gamma;
        const double phi = cs * phibar;
        phibar = sn * phibar;
        w1.swap(w2);
        w2.swap(w);
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma;
            x[i] += phi * w[i];
        }
        if (phibar <= rtol * beta1 || beta == 0.0) {
            ++it;
            break;
        }
    }
    if (iters) *iters = it;
    return x;
}

/// Damped Newton on the full functional at p = 2. Returns the refined field and
/// whether the residual reached tol.
inline DescentResult newton_refine(const Operator& op, Field u, double tol, int max_iter = 40) {
    const ModelParams& mp = op.params();
    if (mp.p != 2.0) throw std::invalid_argument("newton_refine: only available for p = 2");
    const double vol = op.vol(), q = mp.q, r = mp.growth(), lam = mp.lambda;
    DescentResult out;
    Field g;
    energy(op, u, ModeI{}, &g);
    double res = residual_norm_of(g, vol);
    int it = 0;
    for (; it < max_iter && res > tol; ++it) {
        Field diag(u.size());
        for (std::size_t i = 0; i < u.size(); ++i)
            diag[i] = u[i] > 0.0 ? vol * (lam * (q - 1.0) * std::pow(u[i], q - 2.0) + (r - 1.0) * std::pow(u[i], r - 2.0))
                                 : 0.0;
        auto H = [&](const Field& v) {
            Field a = op.apply(v, OperatorMode::mixed);
            for (std::size_t i = 0; i < v.size(); ++i) a[i] -= diag[i] * v[i];
            return a;
        };
        Field mg(g);
        for (auto& v : mg) v = -v;
        const Field d = minres(op, H, mg, 1e-8, 400);
        double step = 1.0;
        bool ok = false;
        for (int ls = 0; ls < 30; ++ls) {
            Field un(u);
            for (std::size_t i = 0; i < u.size(); ++i) un[i] += step * d[i];
            Field gn;
            energy(op, un, ModeI{}, &gn);
            const double rn = residual_norm_of(gn, vol);
            if (std::isfinite(rn) && rn < (1.0 - 1e-4 * step) * res) {
                u.swap(un);
                g.swap(gn);
                res = rn;
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if (!ok) {
            out.stalled = true;
            break;
        }
    }
    out.iterations = it;
    out.residual = res;
    out.converged = res <= tol;
    out.value = energy(op, u).total;
    out.x = std::move(u);
    out.grad = std::move(g);
    return out;
}

// ---------------------------------------------------------------------------
// Mountain pass by a discretized path: the highest node climbs (its gradient
// component along the path is reversed), the rest of the path is re-spaced by
// ρ-arc length on each side of it every 10 steps.

struct MountainPassOptions {
    int path_nodes = 16;
    double tol = 1e-6;
    int max_steps = 4000;
    double step = 0.5;
    double newton_switch = 1e-2;  // relative residual at which p = 2 runs switch to Newton
    int reparam_every = 10;
};

struct MountainPassTrace {
    std::vector<double> initial_energies;
    std::vector<double> max_energy;  // per step
    int newton_iterations = 0;
};

namespace detail {

inline void respace(const Operator& op, std::vector<Field>& path, std::size_t from, std::size_t to) {
    if (to <= from + 1) return;
    std::vector<double> s(to - from + 1, 0.0);
    for (std::size_t k = from + 1; k <= to; ++k) {
        Field d(path[k]);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= path[k - 1][i];
        s[k - from] = s[k - from - 1] + op.rho(d);
    }
    const double L = s.back();
    if (!(L > 0.0)) return;
    std::vector<Field> old(path.begin() + static_cast<std::ptrdiff_t>(from), path.begin() + static_cast<std::ptrdiff_t>(to) + 1);
    std::size_t seg = 0;
    for (std::size_t k = from + 1; k < to; ++k) {
        const double target = L * static_cast<double>(k - from) / static_cast<double>(to - from);
        while (seg + 1 < s.size() - 1 && s[seg + 1] < target) ++seg;
        const double w = (target - s[seg]) / std::max(s[seg + 1] - s[seg], 1e-300);
        for (std::size_t i = 0; i < path[k].size(); ++i) path[k][i] = (1.0 - w) * old[seg][i] + w * old[seg + 1][i];
    }
}

}  // namespace detail

inline SolveReport mountain_pass(const SolveReport& base, const Field& top, const Operator& op,
                                 const MountainPassOptions& mo = {}, MountainPassTrace* trace = nullptr) {
    if (mo.path_nodes < 16) throw std::invalid_argument("mountain_pass: need at least 16 path nodes");
    const double e_base = energy(op, base.field).total;
    if (!(energy(op, top).total < e_base)) throw std::invalid_argument("mountain_pass: top must lie below the base energy");
    const std::size_t M = static_cast<std::size_t>(mo.path_nodes), n = op.size();
    const double vol = op.vol();
    std::vector<Field> path(M, Field(n));
    for (std::size_t k = 0; k < M; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(M - 1);
        for (std::size_t i = 0; i < n; ++i) path[k][i] = (1.0 - t) * base.field[i] + t * top[i];
    }
    std::vector<double> E(M);
    auto eval_all = [&] {
        for (std::size_t k = 0; k < M; ++k) E[k] = energy(op, path[k]).total;
    };
    eval_all();
    MountainPassTrace local;
    MountainPassTrace& tr = trace ? *trace : local;
    tr.initial_energies = E;

    std::size_t kmax = 1;
    Field g;
    double res = std::numeric_limits<double>::infinity(), res0 = -1.0, step = mo.step;
    int it = 0;
    const bool newton = op.params().p == 2.0;
    for (; it < mo.max_steps; ++it) {
        kmax = static_cast<std::size_t>(std::max_element(E.begin() + 1, E.end() - 1) - E.begin());
        tr.max_energy.push_back(E[kmax]);
        energy(op, path[kmax], ModeI{}, &g);
        const double r = residual_norm_of(g, vol);
        if (res0 < 0.0) res0 = r;
        if (r <= mo.tol || (newton && r <= mo.newton_switch * res0)) {
            res = r;
            break;
        }
        step = r < res ? std::min(1.0, step * 1.1) : std::max(1e-3, step * 0.5);
        res = r;
        // tangent in the preconditioner metric
        Field tau(n);
        for (std::size_t i = 0; i < n; ++i) tau[i] = path[kmax + 1][i] - path[kmax - 1][i];
        const Field Ptau = [&] {
            Eigen::Map<const Eigen::VectorXd> t(tau.data(), static_cast<Eigen::Index>(n));
            Eigen::VectorXd pt = op.stiffness() * t;
            return Field(pt.data(), pt.data() + pt.size());
        }();
        const double tn = std::sqrt(std::max(dot(tau, Ptau), 1e-300));
        const double gt = dot(g, tau) / tn;
        const Field G = op.precondition(g);
        for (std::size_t i = 0; i < n; ++i) path[kmax][i] += step * (-G[i] + 2.0 * gt * tau[i] / tn);
        E[kmax] = energy(op, path[kmax]).total;
        if ((it + 1) % mo.reparam_every == 0) {
            detail::respace(op, path, 0, kmax);
            detail::respace(op, path, kmax, M - 1);
            eval_all();
        }
    }
    Field u = path[kmax];
    SolveReport rep;
    rep.tolerance = mo.tol;
    rep.iterations = it;
    if (newton && res > mo.tol) {
        const auto nr = newton_refine(op, u, mo.tol);
        tr.newton_iterations = nr.iterations;
        u = nr.x;
        res = nr.residual;
    }
    rep.field = std::move(u);
    rep.energy = energy(op, rep.field);
    rep.residual_norm = residual_dual_norm(op, rep.field).norm;
    rep.converged = rep.residual_norm <= mo.tol;
    rep.kind = rep.converged ? SolutionKind::mountain_pass : SolutionKind::iterate_limit;
    rep.status = rep.converged ? "converged" : "iterate-limit";
    return rep;
}

// ---------------------------------------------------------------------------
// Extremal parameter bracket.

struct LambdaProbe {
    double lambda = 0.0;
    bool solvable = false;
    double sup_norm = 0.0;
    int outer_iterations = 0;
    std::string status;
};

struct LambdaBracket {
    double lo = 0.0, hi = 0.0;
    double cap = 0.0;
    std::vector<LambdaProbe> probes;
};

struct LambdaOptions {
    double sub_tol = 1e-10;
    MonotoneOptions monotone{1e-9, 3000, 1e-11, 1e-10, std::nullopt};
    double cap_factor = 1e3;
    // 1e3·sup(z at λ#) alone can sit below genuine branch points when p - q is small
    double cap_floor = 1e3;
};

/// λ is solvable when the monotone iteration from the sublinear solution
/// converges with sup-norm under the cap.
inline LambdaProbe probe_lambda(const Operator& base, double lambda, double cap, const LambdaOptions& lo_opt,
                                Field* minimal = nullptr) {
    const Operator op = base.with_lambda(lambda);
    LambdaProbe pr;
    pr.lambda = lambda;
    const auto w = solve_sublinear(op, lo_opt.sub_tol);
    MonotoneOptions mo = lo_opt.monotone;
    mo.cap = cap;
    try {
        const auto z = monotone_iterate(positive_part(w.field), std::nullopt, op, mo);
        pr.solvable = z.converged && sup_norm(z.field) <= cap;
        pr.sup_norm = sup_norm(z.field);
        pr.outer_iterations = z.iterations;
        pr.status = z.status;
        if (minimal) *minimal = z.field;
    } catch (const OrderingError& e) {
        pr.status = "monotonicity-breach";
    }
    return pr;
}

inline LambdaBracket estimate_Lambda(const Operator& op, double lambda_sharp, double lambda_hi, double tol_lambda,
                                     const LambdaOptions& lo_opt = {}) {
    if (!(lambda_sharp > 0.0 && lambda_hi > lambda_sharp))
        throw std::invalid_argument("estimate_Lambda: need 0 < lambda_sharp < lambda_hi");
    if (!(tol_lambda > 0.0)) throw std::invalid_argument("estimate_Lambda: tol must be positive");
    LambdaBracket br;
    // cap from the minimal solution at λ#
    {
        LambdaOptions first = lo_opt;
        const auto pr = probe_lambda(op, lambda_sharp, std::numeric_limits<double>::infinity(), first);
        br.probes.push_back(pr);
        if (!pr.solvable) throw std::runtime_error("estimate_Lambda: not solvable at lambda_sharp (" + pr.status + ")");
        br.cap = std::max(lo_opt.cap_factor * pr.sup_norm, lo_opt.cap_floor);
    }
    const auto top = probe_lambda(op, lambda_hi, br.cap, lo_opt);
    br.probes.push_back(top);
    if (top.solvable) throw std::runtime_error("estimate_Lambda: lambda_hi still solvable; raise it");
    br.lo = lambda_sharp;
    br.hi = lambda_hi;
    while (br.hi - br.lo > tol_lambda) {
        const double mid = 0.5 * (br.lo + br.hi);
        const auto pr = probe_lambda(op, mid, br.cap, lo_opt);
        br.probes.push_back(pr);
        (pr.solvable ? br.lo : br.hi) = mid;
    }
    return br;
}

// ---------------------------------------------------------------------------
// Embedding constants of the energy lower bound (1/p)ρ^p - C1 ρ^r - λ C2 ρ^q.

struct EmbeddingConstants {
    double C1 = 0.0;
    double C2 = 0.0;
    double C1_trial = 0.0;   // best ratio seen on trial fields
    double C1_sobolev = 0.0; // 1/(r S0^{r/p}), only when r = p*
};

/// C2 = (1/q) sup (‖u‖_q/ρ)^q is attained by the sublinear minimizer, where
/// ρ^p = λ‖w‖_q^q. C1 combines trial fields with the Sobolev bound.
inline EmbeddingConstants estimate_embedding_constants(const Operator& op, double S0, double tol = 1e-10) {
    const ModelParams& mp = op.params();
    const double p = mp.p, q = mp.q, r = mp.growth();
    EmbeddingConstants ec;
    const Operator unit = op.with_lambda(1.0);
    const auto w = solve_sublinear(unit, tol);
    const double ratio_q = lt_norm(w.field, op.grid(), q) / op.rho(w.field);
    ec.C2 = std::pow(ratio_q, q) / q;
    auto c1_of = [&](const Field& u) { return std::pow(lt_norm(u, op.grid(), r) / op.rho(u), r) / r; };
    const auto ep = principal_eigenpair(op, 1e-8, 200);
    ec.C1_trial = std::max(c1_of(w.field), c1_of(ep.e1));
    if (!mp.r || std::abs(r - mp.critical_exponent()) < 1e-12) ec.C1_sobolev = 1.0 / (r * std::pow(S0, r / p));
    ec.C1 = std::max(ec.C1_trial, ec.C1_sobolev);
    return ec;
}

}  // namespace mlap
