#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "mlap/lattice.hpp"
#include "mlap/operators.hpp"

namespace mlap {

/// Pointwise nonlinearity λ|t|^{q-2}t + |t|^{r-2}t.
inline double f_lambda(double t, double lambda, double q, double r) {
    if (t == 0.0) return 0.0;
    const double a = std::abs(t);
    return std::copysign(lambda * std::pow(a, q - 1.0) + std::pow(a, r - 1.0), t);
}

inline double f_lambda(double t, const ModelParams& mp) { return f_lambda(t, mp.lambda, mp.q, mp.growth()); }

/// Truncated nonlinearity: t is clamped into [lower_i, upper_i] first.
inline double f_lambda(double t, const ModelParams& mp, const Field& lower, const Field& upper, std::size_t i) {
    return f_lambda(std::clamp(t, lower[i], upper[i]), mp);
}

struct EnergyBreakdown {
    double local_term = 0.0;     // (1/p)‖∇u‖_p^p
    double nonlocal_term = 0.0;  // (ε/p)[u]^p
    double concave_term = 0.0;   // λ part of the primitive
    double critical_term = 0.0;  // r part of the primitive
    double total = 0.0;

    void close() { total = local_term + nonlocal_term - concave_term - critical_term; }
};

/// The full functional with positive parts in both nonlinear terms.
struct ModeI {};
/// Purely sublinear functional (no critical term).
struct ModeJ {};
/// Convex functional of the auxiliary problem with frozen right side f_λ(v).
struct ModeK {
    const Field* v;
};
/// Functional of the nonlinearity clamped between two ordered fields.
struct ModeIhat {
    const Field* lower;
    const Field* upper;
};
/// (1/p)ρ^p - <rhs, u> with rhs already volume-weighted.
struct ModeLinear {
    const Field* rhs;
};
using EnergyMode = std::variant<ModeI, ModeJ, ModeK, ModeIhat, ModeLinear>;

namespace detail {

/// Primitive and derivative of c·t^e/e on t >= 0 clamped into [l, u] as in the
/// three-branch truncation; linear continuation outside the band.
struct ClampedPower {
    double value, slope;
};
inline ClampedPower clamped_power(double t, double e, double l, double u) {
    auto F = [e](double x) { return std::pow(x, e) / e; };
    auto f = [e](double x) { return std::pow(x, e - 1.0); };
    if (t <= l) return {f(l) * t, f(l)};
    const double base = f(l) * l - F(l);
    if (t <= u) return {base + F(t), f(t)};
    return {base + F(u) + f(u) * (t - u), f(u)};
}

}  // namespace detail

/// Energy of u in the given mode. When grad is non-null it receives the
/// volume-weighted gradient, i.e. apply(u) - vol·(derivative of the primitive).
inline EnergyBreakdown energy(const Operator& op, const Field& u, const EnergyMode& mode = ModeI{},
                              Field* grad = nullptr) {
    const ModelParams& mp = op.params();
    const double p = mp.p, q = mp.q, r = mp.growth(), lam = mp.lambda, vol = op.vol();
    const std::size_t n = op.size();
    if (u.size() != n) throw std::invalid_argument("energy: field size mismatch");

    Field loc = op.apply(u, OperatorMode::local);
    EnergyBreakdown e;
    e.local_term = dot(loc, u) / p;
    if (mp.eps != 0.0) {
        const Field nl = op.apply(u, OperatorMode::nonlocal);
        e.nonlocal_term = mp.eps * dot(nl, u) / p;
        for (std::size_t i = 0; i < n; ++i) loc[i] += mp.eps * nl[i];
    }
    Field& g = loc;
    double conc = 0.0, crit = 0.0;

    if (std::holds_alternative<ModeI>(mode) || std::holds_alternative<ModeJ>(mode)) {
        const bool with_crit = std::holds_alternative<ModeI>(mode);
        for (std::size_t i = 0; i < n; ++i) {
            const double t = u[i];
            if (t <= 0.0) continue;
            const double tq = std::pow(t, q - 1.0);
            conc += tq * t;
            g[i] -= vol * lam * tq;
            if (with_crit) {
                const double tr = std::pow(t, r - 1.0);
                crit += tr * t;
                g[i] -= vol * tr;
            }
        }
        conc *= lam * vol / q;
        crit *= vol / r;
    } else if (const auto* k = std::get_if<ModeK>(&mode)) {
        const Field& v = *k->v;
        if (v.size() != n) throw std::invalid_argument("energy: frozen field size mismatch");
        for (std::size_t i = 0; i < n; ++i) {
            if (!(v[i] > 0.0)) throw std::invalid_argument("energy: frozen field must be positive");
            const double a = lam * std::pow(v[i], q - 1.0), b = std::pow(v[i], r - 1.0);
            conc += a * u[i];
            crit += b * u[i];
            g[i] -= vol * (a + b);
        }
        conc *= vol;
        crit *= vol;
    } else if (const auto* t = std::get_if<ModeIhat>(&mode)) {
        const Field& lo = *t->lower;
        const Field& hi = *t->upper;
        if (lo.size() != n || hi.size() != n) throw std::invalid_argument("energy: truncation size mismatch");
        for (std::size_t i = 0; i < n; ++i) {
            const auto a = detail::clamped_power(u[i], q, lo[i], hi[i]);
            const auto b = detail::clamped_power(u[i], r, lo[i], hi[i]);
            conc += lam * a.value;
            crit += b.value;
            g[i] -= vol * (lam * a.slope + b.slope);
        }
        conc *= vol;
        crit *= vol;
    } else {
        const Field& rhs = *std::get<ModeLinear>(mode).rhs;
        if (rhs.size() != n) throw std::invalid_argument("energy: right side size mismatch");
        conc = dot(rhs, u);
        for (std::size_t i = 0; i < n; ++i) g[i] -= rhs[i];
    }
    e.concave_term = conc;
    e.critical_term = crit;
    e.close();
    if (grad) *grad = std::move(g);
    return e;
}

/// Residual of the weak equation and its discrete L^2 norm
/// sqrt(Σ (r_i/vol)^2 vol), the pointwise residual measured in L^2(Ω).
/// vol·f'(u_i), the diagonal curvature of the nonlinear part of a mode; the
/// Hessian of the energy is op.hessian(u) minus this diagonal.
inline Field nonlinear_curvature(const Operator& op, const Field& u, const EnergyMode& mode = ModeI{}) {
    const ModelParams& mp = op.params();
    const double q = mp.q, r = mp.growth(), lam = mp.lambda, vol = op.vol();
    Field c(u.size(), 0.0);
    if (std::holds_alternative<ModeI>(mode) || std::holds_alternative<ModeJ>(mode)) {
        const bool with_crit = std::holds_alternative<ModeI>(mode);
        for (std::size_t i = 0; i < u.size(); ++i) {
            if (u[i] <= 0.0) continue;
            c[i] = vol * lam * (q - 1.0) * std::pow(u[i], q - 2.0);
            if (with_crit) c[i] += vol * (r - 1.0) * std::pow(u[i], r - 2.0);
        }
    } else if (const auto* t = std::get_if<ModeIhat>(&mode)) {
        for (std::size_t i = 0; i < u.size(); ++i) {
            const double lo = (*t->lower)[i], hi = (*t->upper)[i];
            if (u[i] <= lo || u[i] >= hi) continue;
            c[i] = vol * (lam * (q - 1.0) * std::pow(u[i], q - 2.0) + (r - 1.0) * std::pow(u[i], r - 2.0));
        }
    }
    return c;
}

struct Residual {
    Field values;
    double norm = 0.0;
};

inline double residual_norm_of(const Field& r, double vol) {
    double acc = 0.0;
    for (double v : r) acc += v * v;
    return std::sqrt(acc / vol);
}

inline Residual residual_dual_norm(const Operator& op, const Field& u, const EnergyMode& mode = ModeI{}) {
    Residual res;
    energy(op, u, mode, &res.values);
    res.norm = residual_norm_of(res.values, op.vol());
    return res;
}

// ---------------------------------------------------------------------------
// Fibering map g(t) = I(t u / ρ(u)).

struct FiberingProfile {
    std::vector<std::pair<double, double>> samples;
    std::optional<double> t1;  // local minimum
    std::optional<double> t2;  // local maximum
    int critical_points = 0;
    bool nonpositive_peak = false;  // two critical points but g(t2) <= 0
    double rho = 0.0;
    double g_at(double t) const { return a_p * std::pow(t, p) / p - a_q * std::pow(t, q) - a_r * std::pow(t, r); }
    double dg_at(double t) const {
        return a_p * std::pow(t, p - 1.0) - q * a_q * std::pow(t, q - 1.0) - r * a_r * std::pow(t, r - 1.0);
    }

    double p = 2.0, q = 1.5, r = 4.0;
    double a_p = 1.0, a_q = 0.0, a_r = 0.0;  // g = a_p t^p/p - a_q t^q - a_r t^r
};

inline FiberingProfile fibering_profile(const Operator& op, const Field& u, int samples = 512) {
    const ModelParams& mp = op.params();
    FiberingProfile fp;
    fp.p = mp.p;
    fp.q = mp.q;
    fp.r = mp.growth();
    fp.rho = op.rho(u);
    if (!(fp.rho > 0.0)) throw std::invalid_argument("fibering_profile: u must be nonzero");
    const Field up = positive_part(u);
    const double nq = std::pow(lt_norm(up, op.grid(), fp.q), fp.q);
    const double nr = std::pow(lt_norm(up, op.grid(), fp.r), fp.r);
    fp.a_q = mp.lambda * nq * std::pow(fp.rho, -fp.q) / fp.q;
    fp.a_r = nr * std::pow(fp.rho, -fp.r) / fp.r;

    const double lo = std::log(1e-4), hi = std::log(1e2);
    std::vector<double> ts(samples), dg(samples);
    for (int k = 0; k < samples; ++k) {
        ts[k] = std::exp(lo + (hi - lo) * k / (samples - 1));
        fp.samples.emplace_back(ts[k], fp.g_at(ts[k]));
        dg[k] = fp.dg_at(ts[k]);
    }
    // g' is compared to a floor relative to the size of its terms
    auto sign = [&](int k) {
        const double t = ts[k];
        const double scale = std::pow(t, fp.p - 1.0) + std::abs(fp.q * fp.a_q * std::pow(t, fp.q - 1.0)) +
                             fp.r * fp.a_r * std::pow(t, fp.r - 1.0);
        if (std::abs(dg[k]) <= 1e-12 * scale) return 0;
        return dg[k] > 0.0 ? 1 : -1;
    };
    std::vector<double> roots;
    int prev = sign(0);
    int prev_k = 0;
    for (int k = 1; k < samples; ++k) {
        const int s = sign(k);
        if (s == 0) continue;
        if (prev != 0 && s != prev) {
            auto f = [&](double t) { return fp.dg_at(t); };
            boost::uintmax_t it = 200;
            const auto br = boost::math::tools::bisect(
                f, ts[prev_k], ts[k], [](double a, double b) { return std::abs(b - a) <= 1e-10 * std::abs(b); }, it);
            roots.push_back(0.5 * (br.first + br.second));
        }
        prev = s;
        prev_k = k;
    }
    fp.critical_points = static_cast<int>(roots.size());
    if (roots.size() == 1) {
        fp.t2 = roots[0];
    } else if (roots.size() >= 2) {
        fp.t1 = roots[0];
        fp.t2 = roots[1];
        fp.nonpositive_peak = fp.g_at(*fp.t2) <= 0.0;
    }
    return fp;
}

// ---------------------------------------------------------------------------
// Thresholds.

/// Exponent range in which the second solution is sought: 2 <= p < 3 with
/// 1 < q < p, or p >= 3 with p* - 2/(p-1) < q < p.
inline bool apq_ok(double p, double q, int N) {
    if (p >= 2.0 && p < 3.0) return q > 1.0 && q < p;
    if (p >= 3.0) {
        if (static_cast<double>(N) <= p) return false;
        const double ps = N * p / (N - p);
        return q > ps - 2.0 / (p - 1.0) && q < p;
    }
    return false;
}

struct Thresholds {
    double lambda_star = 0.0;
    double r0 = 0.0;
    double delta0 = 0.0;
    double lambda_star_star = 0.0;
    double lambda_sharp = 0.0;
    bool apq_ok = false;
};

/// λ* from the best Sobolev constant S0 and |Ω|; r0, δ0 and λ** from the lower
/// bound (1/p)ρ^p - C1 ρ^r - λ C2 ρ^q of the energy on spheres.
inline Thresholds thresholds(const ModelParams& mp, double S0, double omega_measure, double C1, double C2) {
    if (!(S0 > 0.0 && omega_measure > 0.0 && C1 > 0.0 && C2 > 0.0))
        throw std::invalid_argument("thresholds: constants must be positive");
    const double p = mp.p, q = mp.q, r = mp.growth(), N = mp.N;
    if (!(q < p && p < r)) throw std::invalid_argument("thresholds: need q < p < r");
    Thresholds th;
    const double base = std::pow(S0, N / p) / (N * omega_measure);
    th.lambda_star = std::pow(base, (r - q) / r) * std::pow(1.0 / p - 1.0 / r, q / r) / (1.0 / q - 1.0 / p);

    // φ(ρ) = ρ^p/p - C1 ρ^r peaks at ρm = (1/(r C1))^{1/(r-p)}
    auto phi = [&](double rho) { return std::pow(rho, p) / p - C1 * std::pow(rho, r); };
    const double rm = std::pow(1.0 / (r * C1), 1.0 / (r - p));
    const double pmax = phi(rm);
    th.delta0 = 0.25 * pmax;
    // largest ρ with φ(ρ) >= 2δ0; φ decreases past ρm and is negative at ρ0 below
    const double rzero = std::pow(1.0 / (p * C1), 1.0 / (r - p));
    auto g = [&](double rho) { return phi(rho) - 2.0 * th.delta0; };
    boost::uintmax_t it = 300;
    const auto br =
        boost::math::tools::bisect(g, rm, rzero, [](double a, double b) { return std::abs(b - a) <= 1e-15 * b; }, it);
    th.r0 = br.first;
    th.lambda_star_star = th.delta0 / (C2 * std::pow(th.r0, q));
    th.lambda_sharp = std::min(th.lambda_star, th.lambda_star_star);
    th.apq_ok = apq_ok(p, q, mp.N);
    return th;
}

// ---------------------------------------------------------------------------
// Moser truncation φ(t): |t|^β on [-T, T], tangent lines outside.

struct MoserValue {
    double phi, dphi;
};

inline MoserValue moser_truncation(double t, double beta, double T) {
    if (!(beta > 1.0 && T > 1.0)) throw std::invalid_argument("moser_truncation: need beta > 1 and T > 1");
    const double Tb = std::pow(T, beta), slope = beta * std::pow(T, beta - 1.0);
    if (t >= T) return {slope * (t - T) + Tb, slope};
    if (t <= -T) return {-slope * (t + T) + Tb, -slope};
    const double a = std::abs(t);
    return {std::pow(a, beta), std::copysign(beta * std::pow(a, beta - 1.0), t)};
}

// ---------------------------------------------------------------------------
// Elementary inequalities with fitted constants.

struct InequalityCheck {
    std::string name;
    double exponent = 0.0;
    double constant = 0.0;          // fitted on n samples
    double constant_doubled = 0.0;  // fitted on 2n samples
    double drift = 0.0;             // relative change under doubling
    bool holds = false;             // inequality itself never violated
    bool pass = false;
};

struct InequalityReport {
    std::vector<InequalityCheck> checks;
    bool all_pass() const {
        return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
    }
};

namespace detail {

/// Running minimum or maximum of a ratio over n and 2n samples.
template <class Sample>
InequalityCheck fit_constant(std::string name, double t, std::size_t n, std::uint64_t seed, bool minimum,
                             Sample&& sample) {
    std::mt19937_64 rng(seed);
    InequalityCheck c;
    c.name = std::move(name);
    c.exponent = t;
    c.holds = true;
    double best = minimum ? std::numeric_limits<double>::infinity() : 0.0;
    for (std::size_t k = 0; k < 2 * n; ++k) {
        const auto [ratio, ok] = sample(rng);
        if (!ok) c.holds = false;
        if (std::isfinite(ratio)) best = minimum ? std::min(best, ratio) : std::max(best, ratio);
        if (k + 1 == n) c.constant = best;
    }
    c.constant_doubled = best;
    c.drift = std::abs(c.constant_doubled - c.constant) / std::max(std::abs(c.constant_doubled), 1e-300);
    c.pass = c.holds && std::isfinite(best) && best > 0.0 && c.drift < 0.05;
    return c;
}

}  // namespace detail

/// Checks the six elementary inequalities used by the compactness and energy
/// estimates. Exponents follow p where p lies in the admissible range and a
/// fixed representative otherwise.
inline InequalityReport inequality_suite(std::size_t sample_count, const ModelParams& mp, std::uint64_t seed = 20240601) {
    if (sample_count < 1000) throw std::invalid_argument("inequality_suite: need at least 1000 samples");
    const double p = mp.p;
    const int dim = std::max(1, std::min(mp.N, 3));
    InequalityReport rep;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto log_uniform = [&](std::mt19937_64& g, double lo, double hi) {
        return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * unit(g));
    };
    const double tol = 1e-12;

    {  // (i) strong monotonicity of |ξ|^{t-2}ξ, homogeneous: fix |ξ|+|η| scale by sampling directions
        const double t = p;
        rep.checks.push_back(detail::fit_constant("monotonicity", t, sample_count, seed + 1, true, [&](auto& g) {
            double xi[3] = {0, 0, 0}, eta[3] = {0, 0, 0};
            const double mx = log_uniform(g, 1e-3, 1e3), me = log_uniform(g, 1e-3, 1e3);
            double nx = 0.0, ne = 0.0;
            for (int a = 0; a < dim; ++a) {
                xi[a] = gauss(g);
                eta[a] = gauss(g);
                nx += xi[a] * xi[a];
                ne += eta[a] * eta[a];
            }
            nx = std::sqrt(nx);
            ne = std::sqrt(ne);
            double lhs = 0.0, d2 = 0.0;
            for (int a = 0; a < dim; ++a) {
                xi[a] *= mx / nx;
                eta[a] *= me / ne;
            }
            const double ax = std::pow(mx, t - 2.0), ae = std::pow(me, t - 2.0);
            for (int a = 0; a < dim; ++a) {
                lhs += (ax * xi[a] - ae * eta[a]) * (xi[a] - eta[a]);
                d2 += (xi[a] - eta[a]) * (xi[a] - eta[a]);
            }
            const double rhs = std::pow(mx + me, t - 2.0) * d2;
            return std::pair{lhs / rhs, lhs >= -tol * rhs};
        }));
    }
    {  // (ii) expansion remainder of (a+b)^t for 1 <= t <= 3; degree-t homogeneous, so a = 1 >= b
        const double t = std::clamp(p, 1.0, 3.0);
        rep.checks.push_back(detail::fit_constant("binomial_remainder", t, sample_count, seed + 2, false, [&](auto& g) {
            const double a = 1.0, b = log_uniform(g, 1e-8, 1.0);
            const double lhs = std::abs(std::pow(a + b, t) - std::pow(a, t) - std::pow(b, t) -
                                        t * a * b * (std::pow(a, t - 2.0) + std::pow(b, t - 2.0)));
            const double rhs = a * std::pow(b, t - 1.0);
            return std::pair{lhs / rhs, std::isfinite(lhs / rhs)};
        }));
    }
    {  // (iii) (1+a)^t >= 1 + a^t + t a + t a^{t-1} for t >= 3
        const double t = p >= 3.0 ? p : 3.5;
        rep.checks.push_back(detail::fit_constant("cubic_binomial_lower", t, sample_count, seed + 3, true, [&](auto& g) {
            const double a = log_uniform(g, 1e-6, 1e6);
            const double lhs = std::pow(1.0 + a, t), rhs = 1.0 + std::pow(a, t) + t * a + t * std::pow(a, t - 1.0);
            return std::pair{lhs / rhs, lhs >= rhs * (1.0 - tol)};
        }));
    }
    {  // (iv) (1+a)^t >= 1 + a^t + t a for t >= 2
        const double t = p >= 2.0 ? p : 2.5;
        rep.checks.push_back(detail::fit_constant("quadratic_binomial_lower", t, sample_count, seed + 4, true, [&](auto& g) {
            const double a = log_uniform(g, 1e-6, 1e6);
            const double lhs = std::pow(1.0 + a, t), rhs = 1.0 + std::pow(a, t) + t * a;
            return std::pair{lhs / rhs, lhs >= rhs * (1.0 - tol)};
        }));
    }
    {  // (v) cosine expansion, 2 <= t < 3, remainder C a^{ζ1} with ζ1 in [t-1, 2]
        const double t = (p >= 2.0 && p < 3.0) ? p : 2.5;
        const double zeta1 = 0.5 * (t - 1.0 + 2.0);
        rep.checks.push_back(detail::fit_constant("cosine_upper_low", t, sample_count, seed + 5, false, [&](auto& g) {
            const double a = log_uniform(g, 1e-4, 1e4), th = 2.0 * std::numbers::pi * unit(g);
            const double c = std::cos(th);
            const double lhs = std::pow(std::max(0.0, 1.0 + a * a + 2.0 * a * c), 0.5 * t) - 1.0 - std::pow(a, t) -
                               t * a * c;
            const double rhs = std::pow(a, zeta1);
            return std::pair{std::max(lhs, 0.0) / rhs, true};
        }));
    }
    {  // (vi) cosine expansion, t >= 3, remainder C(a^2 + a^{t-1})
        const double t = p >= 3.0 ? p : 3.5;
        rep.checks.push_back(detail::fit_constant("cosine_upper_high", t, sample_count, seed + 6, false, [&](auto& g) {
            const double a = log_uniform(g, 1e-4, 1e4), th = 2.0 * std::numbers::pi * unit(g);
            const double c = std::cos(th);
            const double lhs = std::pow(std::max(0.0, 1.0 + a * a + 2.0 * a * c), 0.5 * t) - 1.0 - std::pow(a, t) -
                               t * a * c;
            const double rhs = a * a + std::pow(a, t - 1.0);
            return std::pair{std::max(lhs, 0.0) / rhs, true};
        }));
    }
    return rep;
}

// ---------------------------------------------------------------------------

/// Largest β0 (to bisection accuracy) with f_λ(β0 t) <= f_λ'(t) on a
/// 10^4-point log grid over (0, M].
inline double find_beta0(double lambda, double lambda_prime, double M, const ModelParams& mp) {
    if (!(lambda > 0.0 && lambda < lambda_prime)) throw std::invalid_argument("find_beta0: need 0 < lambda < lambda'");
    if (!(M > 0.0)) throw std::invalid_argument("find_beta0: M must be positive");
    const double q = mp.q, r = mp.growth();
    std::vector<double> ts(10000);
    for (std::size_t k = 0; k < ts.size(); ++k)
        ts[k] = M * std::pow(10.0, -8.0 + 8.0 * static_cast<double>(k) / static_cast<double>(ts.size() - 1));
    auto ok = [&](double beta) {
        for (double t : ts)
            if (f_lambda(beta * t, lambda, q, r) > f_lambda(t, lambda_prime, q, r)) return false;
        return true;
    };
    // near t = 0 only the concave term matters
    double lo = 1.0, hi = std::pow(lambda_prime / lambda, 1.0 / (q - 1.0));
    if (ok(hi)) return hi;
    for (int k = 0; k < 80; ++k) {
        const double mid = 0.5 * (lo + hi);
        (ok(mid) ? lo : hi) = mid;
    }
    return lo;
}

}  // namespace mlap
