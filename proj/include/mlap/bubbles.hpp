#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>

#include "mlap/lattice.hpp"
#include "mlap/operators.hpp"

namespace mlap {

struct BubbleParams {
    std::array<double, 3> center{0.0, 0.0, 0.0};
    double alpha = 1.0;
    double eps_b = 0.1;
    double cutoff_inner = 0.25;  // r: the bubble is cut off between r and 2r
    double K = 1.0;
};

/// α = min(1, (p-1)/(2(N-p)), 1/(2p(1-s))).
inline double default_alpha(const ModelParams& mp) {
    if (!(mp.N > mp.p)) throw std::invalid_argument("default_alpha: need N > p");
    return std::min({1.0, (mp.p - 1.0) / (2.0 * (mp.N - mp.p)), 1.0 / (2.0 * mp.p * (1.0 - mp.s))});
}

/// Width of the bubble core, eps_b^α.
inline double bubble_width(const BubbleParams& bp) { return std::pow(bp.eps_b, bp.alpha); }

/// Cubic smoothstep: 1 on [0, r], 0 beyond 2r.
inline double bubble_cutoff(double dist, double r) {
    if (dist <= r) return 1.0;
    if (dist >= 2.0 * r) return 0.0;
    const double z = (dist - r) / r;
    return 1.0 - z * z * (3.0 - 2.0 * z);
}

/// Uncut profile V at distance dist from the centre, written through the core
/// width δ = eps_b^α: K δ^{(N-p)/(p(p-1))} / (δ^{p/(p-1)} + dist^{p/(p-1)})^{(N-p)/p},
/// which equals K δ^{-(N-p)/p} (1 + z^{p/(p-1)})^{-(N-p)/p} with z = dist/δ.
inline double bubble_profile(double dist, const BubbleParams& bp, const ModelParams& mp) {
    const double N = mp.N, p = mp.p;
    const double d = bubble_width(bp), e = p / (p - 1.0), b = (N - p) / p, z = dist / d;
    const double lead = bp.K * std::pow(d, -b);
    if (z <= 1.0) return lead * std::pow(1.0 + std::pow(z, e), -b);
    return lead * std::pow(z, -e * b) * std::pow(1.0 + std::pow(z, -e), -b);
}

/// |V'| at distance dist.
inline double bubble_profile_slope(double dist, const BubbleParams& bp, const ModelParams& mp) {
    const double N = mp.N, p = mp.p;
    const double d = bubble_width(bp), e = p / (p - 1.0), b = (N - p) / p, z = dist / d;
    const double lead = bp.K * std::pow(d, -b - 1.0) * b * e;
    if (z <= 1.0) return lead * std::pow(z, e - 1.0) * std::pow(1.0 + std::pow(z, e), -b - 1.0);
    return lead * std::pow(z, -1.0 - e * b) * std::pow(1.0 + std::pow(z, -e), -b - 1.0);
}

namespace detail {

inline double distance(const std::array<double, 3>& x, const std::array<double, 3>& y, int d) {
    double s = 0.0;
    for (int a = 0; a < d; ++a) s += (x[a] - y[a]) * (x[a] - y[a]);
    return std::sqrt(s);
}

inline void check_bubble(const BubbleParams& bp, const Grid& g, const ModelParams& mp) {
    if (!(mp.N > mp.p)) throw std::invalid_argument("talenti_bubble: need N > p");
    if (!(bp.alpha > 0.0)) throw std::invalid_argument("talenti_bubble: alpha must be positive");
    if (!(bp.cutoff_inner > 0.0)) throw std::invalid_argument("talenti_bubble: cutoff radius must be positive");
    if (!(bp.eps_b > 0.0 && bp.eps_b < std::pow(bp.cutoff_inner, 1.0 / bp.alpha)))
        throw std::invalid_argument("talenti_bubble: eps_b must lie in (0, r^{1/alpha})");
    const Geometry& G = g.geom;
    const double R = 2.0 * bp.cutoff_inner;
    bool inside = true;
    if (G.shape == Shape::box) {
        for (int a = 0; a < g.dim; ++a) inside = inside && bp.center[a] - R >= G.lo[a] && bp.center[a] + R <= G.hi[a];
    } else {
        inside = detail::distance(bp.center, G.center, g.dim) + R <= G.radius;
    }
    if (!inside) throw std::invalid_argument("talenti_bubble: the 2r ball around the centre leaves the domain");
}

}  // namespace detail

/// Nodal values of U = V·φ.
inline Field talenti_bubble(const BubbleParams& bp, const Grid& g, const ModelParams& mp) {
    detail::check_bubble(bp, g, mp);
    Field u(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double r = detail::distance(g.x[i], bp.center, g.dim);
        u[i] = bubble_cutoff(r, bp.cutoff_inner) == 0.0 ? 0.0 : bubble_profile(r, bp, mp) * bubble_cutoff(r, bp.cutoff_inner);
    }
    return u;
}

/// Fraction of the unit sphere in R^d lying in the cube max|θ_i| <= c.
inline double sphere_fraction_in_cube(int d, double c) {
    if (c >= 1.0) return 1.0;
    if (d == 1) return 0.0;
    if (d == 2) return c <= std::sqrt(0.5) ? 0.0 : 1.0 - 4.0 / std::numbers::pi * std::acos(c);
    // θ_3 is uniform on [-1, 1] and the remaining circle has radius sqrt(1 - z²);
    // that circle lies inside the square for z >= sqrt(1 - c²) and misses its
    // corners entirely for z <= sqrt(1 - 2c²)
    const double full = std::sqrt(1.0 - c * c);
    const double none = 2.0 * c * c < 1.0 ? std::sqrt(1.0 - 2.0 * c * c) : 0.0;
    const double hi = std::min(c, full);
    double acc = std::max(0.0, c - full);
    if (hi > none) {
        // z = hi - w² takes out the square root at the upper end
        using boost::math::quadrature::gauss_kronrod;
        auto f = [&](double w) {
            const double z = hi - w * w;
            return 2.0 * w * sphere_fraction_in_cube(2, std::min(1.0, c / std::sqrt(1.0 - z * z)));
        };
        acc += gauss_kronrod<double, 31>::integrate(f, 0.0, std::sqrt(hi - none), 8, 1e-13);
    }
    return acc;
}

/// ∫ over the outside of the cube [-a, a]^d of a radial function f.
template <class F>
double outside_cube_integral(int d, double a, F&& f) {
    const double S = sphere_area(d);
    auto shell = [&](double rho) { return S * std::pow(rho, d - 1) * (1.0 - sphere_fraction_in_cube(d, a / rho)) * f(rho); };
    const double corner = a * std::sqrt(static_cast<double>(d));
    double acc = 0.0;
    // the shell fraction has kinks where the sphere passes edges and corners and
    // a square root just past each; rho = lo + w² takes the root out
    using boost::math::quadrature::gauss_kronrod;
    for (int k = 1; k < d; ++k) {
        const double lo = a * std::sqrt(static_cast<double>(k)), hi = a * std::sqrt(static_cast<double>(k + 1));
        acc += gauss_kronrod<double, 31>::integrate([&](double w) { return 2.0 * w * shell(lo + w * w); }, 0.0,
                                                    std::sqrt(hi - lo), 8, 1e-13);
    }
    boost::math::quadrature::exp_sinh<double> es;
    acc += es.integrate([&](double t) { return shell(corner + t); }, 1e-12);
    return acc;
}

/// One bubble on one lattice. Deficits compare U with the uncut V on the whole
/// space: V is summed on the lattice inside the box and integrated beyond it.
struct BubbleSample {
    double eps_b = 0.0;
    double h = 0.0;
    double kappa = 0.0;        // lattice points per core width
    double grad_pp = 0.0;      // ‖∇U‖_p^p
    double crit_pp = 0.0;      // ‖U‖_{p*}^{p*}
    double grad_excess = 0.0;  // ‖∇U‖_p^p - ‖∇V‖_p^p
    double crit_deficit = 0.0; // ‖V‖_{p*}^{p*} - ‖U‖_{p*}^{p*}
    double seminorm_pp = 0.0;  // [U]_{s,p}^p, 0 when not computed
    double core_integral = 0.0;  // ∫_{B_r} V^t
    double K1 = 0.0, K2 = 0.0;   // lattice ‖∇V‖_p^p and ‖V‖_{p*}^{p*}
    double quotient = 0.0;       // ‖∇U‖_p^p / ‖U‖_{p*}^p
};

/// Cube of half-side (m + 1/2) h around the centre, with m chosen so that it
/// contains the 2r ball with a 10% margin. The centre is a lattice node.
inline Grid bubble_grid(const BubbleParams& bp, int dim, double h) {
    const int m = static_cast<int>(std::ceil(2.2 * bp.cutoff_inner / h));
    const double a = (m + 0.5) * h;
    std::array<double, 3> lo{0.0, 0.0, 0.0}, hi{0.0, 0.0, 0.0};
    for (int k = 0; k < dim; ++k) {
        lo[k] = bp.center[k] - a;
        hi[k] = bp.center[k] + a;
    }
    return make_grid(Geometry::box(dim, lo, hi), 2 * m + 1);
}

inline BubbleSample measure_bubble(const BubbleParams& bp, const Grid& g, const ModelParams& mp, double t,
                                   bool with_seminorm) {
    const Field U = talenti_bubble(bp, g, mp);
    const double p = mp.p, ps = mp.critical_exponent(), vol = g.vol;
    const int d = g.dim;
    BubbleSample s;
    s.eps_b = bp.eps_b;
    s.h = g.h[0];
    s.kappa = bubble_width(bp) / g.h[0];
    Field V(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double r = detail::distance(g.x[i], bp.center, d);
        V[i] = bubble_profile(r, bp, mp);
        if (r < bp.cutoff_inner) s.core_integral += std::pow(V[i], t) * vol;
    }
    // squared gradients as in Operator::grad_pp, with both profiles evaluated at
    // the lattice neighbours directly so that V needs no boundary closure
    auto squared_gradient = [&](const std::array<double, 3>& x, auto&& f) {
        const double c = f(x);
        double G = 0.0;
        for (int k = 0; k < d; ++k)
            for (double dir : {-1.0, 1.0}) {
                auto y = x;
                y[k] += dir * g.h[k];
                const double q = (f(y) - c) / g.h[k];
                G += 0.5 * q * q;
            }
        return G;
    };
    auto fV = [&](const std::array<double, 3>& x) { return bubble_profile(detail::distance(x, bp.center, d), bp, mp); };
    auto fU = [&](const std::array<double, 3>& x) {
        const double r = detail::distance(x, bp.center, d);
        const double c = bubble_cutoff(r, bp.cutoff_inner);
        return c == 0.0 ? 0.0 : c * bubble_profile(r, bp, mp);
    };
    double gU = 0.0, gV = 0.0, ge = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double eV = std::pow(squared_gradient(g.x[i], fV), 0.5 * p);
        const double r = detail::distance(g.x[i], bp.center, d);
        // U = V on the whole stencil when the node sits a spacing inside B_r
        const double eU = r + g.h[0] * 1.000001 <= bp.cutoff_inner ? eV : std::pow(squared_gradient(g.x[i], fU), 0.5 * p);
        gV += eV * vol;
        gU += eU * vol;
        if (eU != eV) ge += (eU - eV) * vol;
    }
    double cU = 0.0, cV = 0.0, cd = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        cU += std::pow(U[i], ps) * vol;
        cV += std::pow(V[i], ps) * vol;
        if (U[i] != V[i]) cd += (std::pow(V[i], ps) - std::pow(U[i], ps)) * vol;
    }
    const double a = 0.5 * (g.geom.hi[0] - g.geom.lo[0]);
    const double tail_g = outside_cube_integral(d, a, [&](double r) { return std::pow(bubble_profile_slope(r, bp, mp), p); });
    const double tail_c = outside_cube_integral(d, a, [&](double r) { return std::pow(bubble_profile(r, bp, mp), ps); });
    s.grad_pp = gU;
    s.crit_pp = cU;
    s.K1 = gV + tail_g;
    s.K2 = cV + tail_c;
    // differences are summed term by term so that tiny deficits keep their digits
    s.grad_excess = ge - tail_g;
    s.crit_deficit = cd + tail_c;
    s.quotient = gU / std::pow(cU, p / ps);
    if (with_seminorm) {
        ModelParams m1 = mp;
        m1.eps = 1.0;
        s.seminorm_pp = Operator(g, m1).gagliardo_pp(U);
    }
    return s;
}

struct BubbleConstants {
    double K1 = 0.0;
    double K2 = 0.0;
    double S0_est = 0.0;
};

struct SlopeFit {
    std::string quantity;
    double fitted = 0.0;
    double theory = 0.0;
    double relative_error() const { return std::abs(fitted - theory) / std::abs(theory); }
};

struct BubbleRow {
    double eps_b, h;
    std::string quantity;
    double value, fitted_slope, theory_slope;
};

struct BubbleReport {
    BubbleConstants constants;
    std::vector<double> S0_by_kappa;  // one per lattice ratio, coarse to fine
    double extrapolation_order = 1.0;
    std::vector<BubbleSample> samples;
    std::vector<SlopeFit> slopes;
    std::vector<BubbleRow> rows;
};

/// Least-squares slope of log|y| against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need matching samples");
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double a = std::log(x[i]), b = std::log(std::abs(y[i]));
        sx += a;
        sy += b;
        sxx += a * a;
        sxy += a * b;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace detail {

/// Convergence order in h read off the last three values of a lattice-ratio
/// ladder; first order unless the ladder is geometric and the differences
/// keep their sign.
inline double observed_order(const std::vector<double>& kappa, const std::vector<double>& v) {
    const std::size_t f = kappa.size() - 1;
    if (f < 2 || std::abs(kappa[f] / kappa[f - 1] - kappa[f - 1] / kappa[f - 2]) > 1e-12) return 1.0;
    if (!((v[f] - v[f - 1]) * (v[f - 1] - v[f - 2]) > 0.0)) return 1.0;
    const double o = std::log((v[f - 1] - v[f - 2]) / (v[f] - v[f - 1])) / std::log(kappa[f] / kappa[f - 1]);
    return std::clamp(o, 0.5, 4.0);
}

}  // namespace detail

/// Measures the bubble family over eps_b (decreasing) and lattice ratios κ =
/// core width / h (increasing). K1, K2 are extrapolated in h with the order
/// read off the last three ratios when they form a geometric ladder and
/// first order otherwise (the G^{p/2} kink at the bubble centre limits the
/// lattice sums to about that); the lattice sums of V do not depend on eps_b because h scales with
/// the core, so they are averaged over eps_b first. Slopes are fitted on the
/// finest κ. t is the exponent of the core integral.
inline BubbleReport bubble_constants(const BubbleParams& base, const std::vector<double>& eps_b,
                                     const std::vector<double>& kappa, const ModelParams& mp, double t,
                                     bool with_seminorm = true) {
    if (eps_b.size() < 3) throw std::invalid_argument("bubble_constants: need at least 3 eps_b values");
    if (kappa.size() < 2) throw std::invalid_argument("bubble_constants: need at least 2 lattice ratios");
    for (std::size_t k = 1; k < eps_b.size(); ++k)
        if (!(eps_b[k] < eps_b[k - 1])) throw std::invalid_argument("bubble_constants: eps_b must decrease");
    for (std::size_t k = 1; k < kappa.size(); ++k)
        if (!(kappa[k] > kappa[k - 1])) throw std::invalid_argument("bubble_constants: lattice ratios must increase");
    const int d = mp.N <= 3 ? mp.N : 3;
    BubbleReport rep;
    std::vector<double> K1k, K2k;
    for (double kap : kappa) {
        double k1 = 0.0, k2 = 0.0;
        for (double e : eps_b) {
            BubbleParams bp = base;
            bp.eps_b = e;
            const Grid g = bubble_grid(bp, d, bubble_width(bp) / kap);
            const bool semi = with_seminorm && kap == kappa.back();
            rep.samples.push_back(measure_bubble(bp, g, mp, t, semi));
            k1 += rep.samples.back().K1;
            k2 += rep.samples.back().K2;
        }
        K1k.push_back(k1 / static_cast<double>(eps_b.size()));
        K2k.push_back(k2 / static_cast<double>(eps_b.size()));
        const double ps = mp.critical_exponent();
        rep.S0_by_kappa.push_back(K1k.back() / std::pow(K2k.back(), mp.p / ps));
    }
    const std::size_t f = kappa.size() - 1;
    const double order = detail::observed_order(kappa, rep.S0_by_kappa);
    rep.extrapolation_order = order;
    const double ratio = std::pow(kappa[f] / kappa[f - 1], order) - 1.0;
    auto extrapolate = [&](const std::vector<double>& v) { return v[f] + (v[f] - v[f - 1]) / ratio; };
    rep.constants.K1 = extrapolate(K1k);
    rep.constants.K2 = extrapolate(K2k);
    rep.constants.S0_est = rep.constants.K1 / std::pow(rep.constants.K2, mp.p / mp.critical_exponent());

    const double N = mp.N, p = mp.p, s = mp.s, al = base.alpha;
    std::vector<double> x, gx, cx, sx, ix;
    const std::size_t first = f * eps_b.size();
    for (std::size_t k = 0; k < eps_b.size(); ++k) {
        const auto& smp = rep.samples[first + k];
        x.push_back(smp.eps_b);
        gx.push_back(smp.grad_excess);
        cx.push_back(smp.crit_deficit);
        sx.push_back(smp.seminorm_pp);
        ix.push_back(smp.core_integral);
    }
    rep.slopes.push_back({"grad_excess", loglog_slope(x, gx), al * (N - p) / (p - 1.0)});
    rep.slopes.push_back({"crit_deficit", loglog_slope(x, cx), al * N / (p - 1.0)});
    if (with_seminorm)
        rep.slopes.push_back({"seminorm", loglog_slope(x, sx), std::min(al * (N - p) / (p - 1.0), al * p * (1.0 - s))});
    rep.slopes.push_back({"core_integral", loglog_slope(x, ix), al * (N - t * (N - p) / p)});

    for (const auto& smp : rep.samples) {
        auto slope_of = [&](const std::string& q) -> std::pair<double, double> {
            for (const auto& sf : rep.slopes)
                if (sf.quantity == q) return {sf.fitted, sf.theory};
            return {std::nan(""), std::nan("")};
        };
        const bool fine = smp.kappa == rep.samples[first].kappa;
        auto add = [&](const std::string& q, double v) {
            const auto [fs, ts] = fine ? slope_of(q) : std::pair<double, double>{std::nan(""), std::nan("")};
            rep.rows.push_back({smp.eps_b, smp.h, q, v, fs, ts});
        };
        add("grad_pp", smp.grad_pp);
        add("crit_pp", smp.crit_pp);
        add("grad_excess", smp.grad_excess);
        add("crit_deficit", smp.crit_deficit);
        if (smp.seminorm_pp > 0.0) add("seminorm", smp.seminorm_pp);
        add("core_integral", smp.core_integral);
        add("quotient", smp.quotient);
    }
    return rep;
}

/// Lattice Sobolev quotient of one bubble of core width delta (centre on a
/// node, r = 1) over lattice ratios κ, extrapolated in h. The quotient does
/// not depend on the width, so one width is enough.
struct QuotientEstimate {
    std::vector<double> by_kappa;
    double order = 1.0;
    double S0 = 0.0;
};

inline QuotientEstimate sobolev_quotient(const ModelParams& mp, const std::vector<double>& kappa, double delta = 0.2) {
    if (kappa.size() < 2) throw std::invalid_argument("sobolev_quotient: need at least 2 lattice ratios");
    if (mp.N > 3) throw std::invalid_argument("sobolev_quotient: lattices exist for N <= 3 only");
    BubbleParams bp;
    bp.alpha = 1.0;
    bp.eps_b = delta;
    bp.cutoff_inner = 1.0;
    QuotientEstimate qe;
    for (double kap : kappa) {
        const auto s = measure_bubble(bp, bubble_grid(bp, mp.N, delta / kap), mp, 1.0, false);
        qe.by_kappa.push_back(s.K1 / std::pow(s.K2, mp.p / mp.critical_exponent()));
    }
    const std::size_t f = kappa.size() - 1;
    qe.order = detail::observed_order(kappa, qe.by_kappa);
    qe.S0 = qe.by_kappa[f] + (qe.by_kappa[f] - qe.by_kappa[f - 1]) / (std::pow(kappa[f] / kappa[f - 1], qe.order) - 1.0);
    return qe;
}

}  // namespace mlap
