#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>

namespace mlap {

/// Values on interior nodes, implicitly zero everywhere else.
using Field = std::vector<double>;

/// Exponents and coefficients of
///   -Δ_p u + ε(-Δ_p)^s u = λ|u|^{q-2}u + |u|^{r-2}u  in Ω,  u = 0 outside Ω.
struct ModelParams {
    int N = 2;
    double p = 2.0;
    double q = 1.5;
    double s = 0.5;
    double eps = 1.0;
    double lambda = 0.0;
    std::optional<double> r;  // defaults to the critical exponent N p / (N - p)

    double critical_exponent() const {
        if (static_cast<double>(N) <= p) return std::numeric_limits<double>::infinity();
        return N * p / (N - p);
    }
    double growth() const { return r ? *r : critical_exponent(); }

    void validate() const {
        if (N < 1) throw std::invalid_argument("N must be positive");
        if (!(p > 1.0)) throw std::invalid_argument("p must exceed 1");
        if (!(q > 1.0 && q < p)) throw std::invalid_argument("q must lie in (1, p)");
        if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("s must lie in (0, 1)");
        if (!(eps >= 0.0 && eps <= 1.0)) throw std::invalid_argument("eps must lie in [0, 1]");
        if (!std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite");
        if (!r && !(static_cast<double>(N) > p))
            throw std::invalid_argument("critical exponent undefined for N <= p; set r explicitly");
        const double g = growth();
        if (!(g > p) || !std::isfinite(g)) throw std::invalid_argument("r must be finite and exceed p");
    }
};

enum class Shape { box, ball };

struct Geometry {
    Shape shape = Shape::box;
    int dim = 2;
    std::array<double, 3> lo{0.0, 0.0, 0.0};
    std::array<double, 3> hi{1.0, 1.0, 1.0};
    std::array<double, 3> center{0.0, 0.0, 0.0};
    double radius = 1.0;

    static Geometry box(int d, double side = 1.0) {
        Geometry g;
        g.shape = Shape::box;
        g.dim = d;
        for (int a = 0; a < 3; ++a) {
            g.lo[a] = 0.0;
            g.hi[a] = a < d ? side : 0.0;
        }
        return g;
    }
    static Geometry box(int d, std::array<double, 3> lo, std::array<double, 3> hi) {
        Geometry g;
        g.shape = Shape::box;
        g.dim = d;
        g.lo = lo;
        g.hi = hi;
        return g;
    }
    static Geometry ball(int d, double radius = 1.0, std::array<double, 3> center = {0.0, 0.0, 0.0}) {
        Geometry g;
        g.shape = Shape::ball;
        g.dim = d;
        g.radius = radius;
        g.center = center;
        return g;
    }

    void validate() const {
        if (dim < 1 || dim > 3) throw std::invalid_argument("geometry dimension must be 1, 2 or 3");
        if (shape == Shape::box) {
            for (int a = 0; a < dim; ++a)
                if (!(hi[a] > lo[a]) || !std::isfinite(hi[a] - lo[a]))
                    throw std::invalid_argument("degenerate box");
        } else if (!(radius > 0.0) || !std::isfinite(radius)) {
            throw std::invalid_argument("degenerate ball");
        }
    }

    std::array<double, 3> bbox_lo() const {
        if (shape == Shape::box) return lo;
        std::array<double, 3> b{0.0, 0.0, 0.0};
        for (int a = 0; a < dim; ++a) b[a] = center[a] - radius;
        return b;
    }
    std::array<double, 3> bbox_hi() const {
        if (shape == Shape::box) return hi;
        std::array<double, 3> b{0.0, 0.0, 0.0};
        for (int a = 0; a < dim; ++a) b[a] = center[a] + radius;
        return b;
    }

    double measure() const {
        if (shape == Shape::box) {
            double m = 1.0;
            for (int a = 0; a < dim; ++a) m *= hi[a] - lo[a];
            return m;
        }
        const double pi = std::numbers::pi;
        if (dim == 1) return 2.0 * radius;
        if (dim == 2) return pi * radius * radius;
        return 4.0 / 3.0 * pi * radius * radius * radius;
    }

    double diameter() const {
        if (shape == Shape::ball) return 2.0 * radius;
        double d2 = 0.0;
        for (int a = 0; a < dim; ++a) d2 += (hi[a] - lo[a]) * (hi[a] - lo[a]);
        return std::sqrt(d2);
    }

    bool contains(const std::array<double, 3>& x) const {
        if (shape == Shape::box) {
            for (int a = 0; a < dim; ++a)
                if (!(x[a] > lo[a] && x[a] < hi[a])) return false;
            return true;
        }
        double d2 = 0.0;
        for (int a = 0; a < dim; ++a) d2 += (x[a] - center[a]) * (x[a] - center[a]);
        return d2 < radius * radius;
    }
};

inline double sphere_area(int d) {
    const double pi = std::numbers::pi;
    switch (d) {
        case 1: return 2.0;
        case 2: return 2.0 * pi;
        case 3: return 4.0 * pi;
        default: throw std::invalid_argument("sphere_area: dimension must be 1, 2 or 3");
    }
}

/// Cell-centred lattice over the bounding box of a geometry. Interior nodes are
/// the cell centres strictly inside the geometry; fields live on them only.
struct Grid {
    int dim = 1;
    Geometry geom;
    std::array<int, 3> n{1, 1, 1};
    std::array<double, 3> h{1.0, 1.0, 1.0};
    std::array<double, 3> origin{0.0, 0.0, 0.0};
    double vol = 1.0;

    std::vector<unsigned char> mask;            // per lattice node
    std::vector<std::int64_t> node_to_interior;  // -1 when outside
    std::vector<std::size_t> interior;           // lattice node ids
    std::vector<std::array<double, 3>> x;        // coordinates of interior nodes
    std::vector<std::array<int, 3>> cell;        // lattice indices of interior nodes

    std::size_t size() const { return interior.size(); }
    std::size_t node_count() const {
        return static_cast<std::size_t>(n[0]) * static_cast<std::size_t>(n[1]) * static_cast<std::size_t>(n[2]);
    }
    std::array<int, 3> unflatten(std::size_t id) const {
        std::array<int, 3> c{0, 0, 0};
        c[0] = static_cast<int>(id % static_cast<std::size_t>(n[0]));
        id /= static_cast<std::size_t>(n[0]);
        c[1] = static_cast<int>(id % static_cast<std::size_t>(n[1]));
        c[2] = static_cast<int>(id / static_cast<std::size_t>(n[1]));
        return c;
    }
    std::size_t flatten(const std::array<int, 3>& c) const {
        return static_cast<std::size_t>(c[0]) +
               static_cast<std::size_t>(n[0]) *
                   (static_cast<std::size_t>(c[1]) + static_cast<std::size_t>(n[1]) * static_cast<std::size_t>(c[2]));
    }
    std::array<double, 3> coord(const std::array<int, 3>& c) const {
        std::array<double, 3> p{0.0, 0.0, 0.0};
        for (int a = 0; a < dim; ++a) p[a] = origin[a] + (c[a] + 0.5) * h[a];
        return p;
    }
    bool uniform_spacing() const {
        for (int a = 1; a < dim; ++a)
            if (std::abs(h[a] - h[0]) > 1e-12 * h[0]) return false;
        return true;
    }
    Field zeros() const { return Field(size(), 0.0); }
};

inline Grid make_grid(const Geometry& geom, int resolution) {
    geom.validate();
    if (resolution < 3) throw std::invalid_argument("resolution must be at least 3");
    Grid g;
    g.dim = geom.dim;
    g.geom = geom;
    const auto lo = geom.bbox_lo();
    const auto hi = geom.bbox_hi();
    g.vol = 1.0;
    for (int a = 0; a < 3; ++a) {
        if (a < g.dim) {
            g.n[a] = resolution;
            g.h[a] = (hi[a] - lo[a]) / resolution;
            g.origin[a] = lo[a];
            g.vol *= g.h[a];
        } else {
            g.n[a] = 1;
            g.h[a] = 1.0;
            g.origin[a] = 0.0;
        }
    }
    const std::size_t total = g.node_count();
    g.mask.assign(total, 0);
    g.node_to_interior.assign(total, -1);
    for (std::size_t id = 0; id < total; ++id) {
        const auto c = g.unflatten(id);
        const auto p = g.coord(c);
        if (!geom.contains(p)) continue;
        g.mask[id] = 1;
        g.node_to_interior[id] = static_cast<std::int64_t>(g.interior.size());
        g.interior.push_back(id);
        g.x.push_back(p);
        g.cell.push_back(c);
    }
    if (g.interior.empty()) throw std::invalid_argument("geometry has no interior nodes at this resolution");
    return g;
}

namespace detail {

// ∫_0^A d (d² + t²)^{-(2+a)/2} dt
inline double segment_piece(double d, double A, double a) {
    if (A <= 0.0) return 0.0;
    const double x = A * A / (A * A + d * d);
    return std::pow(d, -a) * 0.5 * boost::math::beta(0.5, 0.5 * (a + 1.0), x);
}

// ∫_{[0,A]×[0,B]} d (d² + |z|²)^{-(3+a)/2} dz, radial part integrated in closed form
inline double rectangle_piece(double d, double A, double B, double a) {
    if (A <= 0.0 || B <= 0.0) return 0.0;
    using boost::math::quadrature::gauss;
    const double e = -0.5 * (1.0 + a);
    const double psi_d = std::atan2(B, A);
    auto f1 = [&](double psi) {
        const double rho = A / std::cos(psi);
        return std::pow(1.0 + (rho / d) * (rho / d), e);
    };
    auto f2 = [&](double psi) {
        const double rho = B / std::sin(psi);
        return std::pow(1.0 + (rho / d) * (rho / d), e);
    };
    const double sub = gauss<double, 30>::integrate(f1, 0.0, psi_d) +
                       gauss<double, 30>::integrate(f2, psi_d, 0.5 * std::numbers::pi);
    return std::pow(d, -a) / (1.0 + a) * (0.5 * std::numbers::pi - sub);
}

// distance from x (|x| = rx from the centre) to the sphere of radius R along a
// direction making angle psi with x
inline double ball_ray(double rx, double R, double psi) {
    const double c = rx * std::cos(psi);
    return -c + std::sqrt(c * c + R * R - rx * rx);
}

}  // namespace detail

/// ∫_{Ω^c} |x_i - y|^{-(N+sp)} dy for every interior node.
struct ExteriorTail {
    std::vector<double> values;
    double truncation_radius = 0.0;
    double far_field = 0.0;  // contribution of |x_i - y| > truncation_radius, identical for all nodes

    std::vector<double> near_part() const {
        std::vector<double> out(values);
        for (auto& v : out) v -= far_field;
        return out;
    }
};

/// The integral is reduced to the boundary by polar coordinates around x_i:
/// T_i = (1/a) ∫_{S^{d-1}} ρ(θ)^{-a} dθ with a = N + sp - d and ρ(θ) the exit distance.
inline ExteriorTail exterior_tail(const Grid& grid, int N, double sp, std::optional<double> truncation_radius = {}) {
    if (!(sp > 0.0)) throw std::invalid_argument("exterior_tail: s*p must be positive");
    const int d = grid.dim;
    const double a = N + sp - d;
    if (!(a > 0.0)) throw std::invalid_argument("exterior_tail: kernel exponent must exceed the lattice dimension");
    const Geometry& G = grid.geom;
    const double diam = G.diameter();
    const double Rt = truncation_radius ? *truncation_radius : 2.0 * diam;
    if (!(Rt >= diam)) throw std::invalid_argument("exterior_tail: truncation radius must cover the domain");

    ExteriorTail out;
    out.truncation_radius = Rt;
    out.far_field = sphere_area(d) * std::pow(Rt, -a) / a;
    out.values.resize(grid.size());

    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto& x = grid.x[i];
        double acc = 0.0;
        if (G.shape == Shape::box) {
            for (int ax = 0; ax < d; ++ax) {
                for (int side = 0; side < 2; ++side) {
                    const double dist = side == 0 ? x[ax] - G.lo[ax] : G.hi[ax] - x[ax];
                    if (d == 1) {
                        acc += std::pow(dist, -a);
                    } else if (d == 2) {
                        const int b = 1 - ax;
                        acc += detail::segment_piece(dist, x[b] - G.lo[b], a) +
                               detail::segment_piece(dist, G.hi[b] - x[b], a);
                    } else {
                        const int b = (ax + 1) % 3;
                        const int c = (ax + 2) % 3;
                        const double Al = x[b] - G.lo[b], Ah = G.hi[b] - x[b];
                        const double Bl = x[c] - G.lo[c], Bh = G.hi[c] - x[c];
                        acc += detail::rectangle_piece(dist, Al, Bl, a) + detail::rectangle_piece(dist, Al, Bh, a) +
                               detail::rectangle_piece(dist, Ah, Bl, a) + detail::rectangle_piece(dist, Ah, Bh, a);
                    }
                }
            }
        } else {
            double r2 = 0.0;
            for (int ax = 0; ax < d; ++ax) r2 += (x[ax] - G.center[ax]) * (x[ax] - G.center[ax]);
            const double rx = std::sqrt(r2);
            const double R = G.radius;
            if (d == 1) {
                acc = std::pow(R - rx, -a) + std::pow(R + rx, -a);
            } else {
                using boost::math::quadrature::gauss_kronrod;
                auto f = [&](double psi) {
                    const double rho = detail::ball_ray(rx, R, psi);
                    const double w = d == 3 ? std::sin(psi) : 1.0;
                    return std::pow(rho, -a) * w;
                };
                const double I = gauss_kronrod<double, 31>::integrate(f, 0.0, std::numbers::pi, 20, 1e-13);
                acc = d == 2 ? 2.0 * I : 2.0 * std::numbers::pi * I;
            }
        }
        out.values[i] = acc / a;
    }
    return out;
}

inline ExteriorTail exterior_tail(const Grid& grid, const ModelParams& mp, std::optional<double> truncation_radius = {}) {
    return exterior_tail(grid, mp.N, mp.s * mp.p, truncation_radius);
}

/// (Σ |u_i|^t vol)^{1/t}
inline double lt_norm(const Field& u, const Grid& grid, double t) {
    if (!(t > 0.0)) throw std::invalid_argument("lt_norm: exponent must be positive");
    if (u.size() != grid.size()) throw std::invalid_argument("lt_norm: field size mismatch");
    double acc = 0.0;
    for (double v : u) acc += std::pow(std::abs(v), t);
    return std::pow(acc * grid.vol, 1.0 / t);
}

inline double sup_norm(const Field& u) {
    double m = 0.0;
    for (double v : u) m = std::max(m, std::abs(v));
    return m;
}

inline double dot(const Field& a, const Field& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline Field positive_part(const Field& u) {
    Field out(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) out[i] = u[i] > 0.0 ? u[i] : 0.0;
    return out;
}

template <class F>
Field sample(const Grid& grid, F&& f) {
    Field out(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] = f(grid.x[i]);
    return out;
}

}  // namespace mlap
